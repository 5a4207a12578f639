//! State-feedback decoupling: the substitution `u = Phi x + Gamma v` turns a
//! square plant without feedthrough into independent channels, where output
//! `i` responds to input `i` alone after its relative-degree delay. Includes
//! the loop-gain certificate used to argue closed-loop stability when the
//! feedback runs around a governed plant.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sys::{l1_impulse_norm_tol, LinearSystem};

/// A Markov parameter row counts as nonzero above this; the relative-degree
/// index is discrete, so the cliff needs a stated threshold.
pub const MARKOV_TOL: f64 = 1e-10;

/// A state-feedback decoupling pair together with the structure matrices it
/// was built from.
#[derive(Clone, Debug)]
pub struct SsDecoupling {
    /// State-feedback gain (`m x n`).
    pub phi: DMatrix<f64>,
    /// Input mixing matrix (`m x m`), always the inverse of `b_star`.
    pub gamma: DMatrix<f64>,
    /// Per-output relative-degree indices.
    pub d: Vec<usize>,
    /// Rows `C_i A^{d_i + 1}`.
    pub a_star: DMatrix<f64>,
    /// Rows `C_i A^{d_i} B`; nonsingularity of this matrix is equivalent to
    /// the existence of a decoupling pair.
    pub b_star: DMatrix<f64>,
}

impl SsDecoupling {
    /// Closed-loop state matrix `A + B Phi`.
    pub fn a_bar(&self, sys: &LinearSystem) -> DMatrix<f64> {
        &sys.a + &sys.b * &self.phi
    }

    /// Closed-loop input matrix `B Gamma`.
    pub fn b_bar(&self, sys: &LinearSystem) -> DMatrix<f64> {
        &sys.b * &self.gamma
    }

    /// The decoupled closed-loop system `(A + B Phi, B Gamma, C, 0)`.
    pub fn closed_loop(&self, sys: &LinearSystem) -> Result<LinearSystem> {
        LinearSystem::new(
            self.a_bar(sys),
            self.b_bar(sys),
            sys.c.clone(),
            DMatrix::zeros(sys.n_outputs(), sys.n_inputs()),
        )
    }
}

fn validate_feedback_plant(sys: &LinearSystem) -> Result<()> {
    if sys.n_inputs() != sys.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "state-feedback decoupling needs a square plant, got {} inputs and {} outputs",
            sys.n_inputs(),
            sys.n_outputs()
        )));
    }
    if sys.n_states() == 0 {
        return Err(Error::Validation(
            "state-feedback decoupling needs at least one state".into(),
        ));
    }
    if sys.d.iter().any(|v| v.abs() > 0.0) {
        return Err(Error::Validation(
            "state-feedback decoupling requires zero feedthrough (D = 0)".into(),
        ));
    }
    Ok(())
}

/// Relative-degree indices and structure matrices:
/// `d_i = min { j <= n-1 : C_i A^j B != 0 }` (falling back to `n-1` when all
/// vanish), `A*` stacking `C_i A^{d_i+1}`, `B*` stacking `C_i A^{d_i} B`.
pub fn fw_indices(sys: &LinearSystem) -> Result<(Vec<usize>, DMatrix<f64>, DMatrix<f64>)> {
    validate_feedback_plant(sys)?;
    let n = sys.n_states();
    let m = sys.n_outputs();
    let mut d = vec![n - 1; m];
    let mut a_star = DMatrix::zeros(m, n);
    let mut b_star = DMatrix::zeros(m, m);
    for i in 0..m {
        // row_j = C_i A^j, advanced in place.
        let mut row = sys.c.row(i).into_owned();
        let mut found = false;
        for j in 0..n {
            let markov = &row * &sys.b;
            if markov.iter().any(|v| v.abs() > MARKOV_TOL) {
                d[i] = j;
                found = true;
                break;
            }
            row *= &sys.a;
        }
        if !found {
            // Fallback: d_i = n-1; recompute the row for that power.
            row = sys.c.row(i).into_owned();
            for _ in 0..n - 1 {
                row *= &sys.a;
            }
        }
        b_star.row_mut(i).copy_from(&(&row * &sys.b));
        a_star.row_mut(i).copy_from(&(row * &sys.a));
    }
    Ok((d, a_star, b_star))
}

fn invert_b_star(b_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = b_star.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if min_sv <= 1e-12 * max_sv.max(1.0) {
        return Err(Error::SingularBStar(min_sv));
    }
    b_star
        .clone()
        .try_inverse()
        .ok_or(Error::SingularBStar(min_sv))
}

/// The pair `Phi = -B*^{-1} A*`, `Gamma = B*^{-1}`, which makes each output
/// track its own input with a pure delay: `y_i(t + d_i + 1) = v_i(t)`.
pub fn fw_identity_pair(sys: &LinearSystem) -> Result<SsDecoupling> {
    let (d, a_star, b_star) = fw_indices(sys)?;
    let gamma = invert_b_star(&b_star)?;
    let phi = -(&gamma * &a_star);
    Ok(SsDecoupling {
        phi,
        gamma,
        d,
        a_star,
        b_star,
    })
}

/// The pair `Phi = B*^{-1} [ sum_k M_k C A^k - A* ]`, `Gamma = B*^{-1}`,
/// which decouples while placing channel poles through the diagonal
/// matrices `M_0..M_delta` (`delta = max d_i`; matrices not provided are
/// taken as zero).
pub fn fw_pole_assignment_pair(
    sys: &LinearSystem,
    m_seq: &[DMatrix<f64>],
) -> Result<SsDecoupling> {
    let (d, a_star, b_star) = fw_indices(sys)?;
    let m = sys.n_outputs();
    let delta = d.iter().copied().max().unwrap_or(0);
    if m_seq.len() > delta + 1 {
        return Err(Error::Validation(format!(
            "{} pole-assignment matrices provided but the index sum stops at delta = {}",
            m_seq.len(),
            delta
        )));
    }
    for (k, mk) in m_seq.iter().enumerate() {
        if mk.nrows() != m || mk.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "pole-assignment matrix {k} is {}x{}, expected {m}x{m}",
                mk.nrows(),
                mk.ncols()
            )));
        }
        for i in 0..m {
            for j in 0..m {
                if i != j && mk[(i, j)] != 0.0 {
                    return Err(Error::Validation(format!(
                        "pole-assignment matrix {k} must be diagonal (entry ({i},{j}) nonzero)"
                    )));
                }
            }
        }
    }
    let gamma = invert_b_star(&b_star)?;
    let n = sys.n_states();
    let mut sum = DMatrix::<f64>::zeros(m, n);
    let mut c_ak = sys.c.clone();
    for k in 0..=delta {
        if let Some(mk) = m_seq.get(k) {
            sum += mk * &c_ak;
        }
        if k < delta {
            c_ak *= &sys.a;
        }
    }
    let phi = &gamma * (sum - &a_star);
    Ok(SsDecoupling {
        phi,
        gamma,
        d,
        a_star,
        b_star,
    })
}

/// Worst-case gain of the feedback path the decoupling introduces around the
/// governed loop: the L1 impulse norm of
/// `Q(z) = Gamma^{-1} Phi (zI - A - B Phi)^{-1} B Gamma`.
/// A value below one certifies closed-loop stability (sufficient only).
pub fn small_gain_certificate(
    sys: &LinearSystem,
    dec: &SsDecoupling,
    tail_tol: f64,
) -> Result<f64> {
    let a_bar = dec.a_bar(sys);
    let m = dec.gamma.nrows();
    let loop_sys = LinearSystem::new(
        a_bar,
        dec.b_bar(sys),
        // Gamma^{-1} is b_star by construction.
        &dec.b_star * &dec.phi,
        DMatrix::zeros(m, m),
    )?;
    let rho = loop_sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::UnstableLoop(rho));
    }
    l1_impulse_norm_tol(&loop_sys, tail_tol)
}

/// The three-state, two-channel benchmark plant used for the state-feedback
/// examples.
#[cfg(test)]
pub(crate) fn feedback_benchmark_plant() -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_row_slice(3, 3, &[0.1, 1.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.1]),
        DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 3, &[1.0, 1.0, -1.0, 0.0, 1.0, 0.0]),
        DMatrix::zeros(2, 2),
    )
    .unwrap()
}
