//! Step-wise reference governor kernels.
//!
//! Each step admits the input `v_new = v_prev + kappa (r - v_prev)` with the
//! largest feasible blend factor, so the admitted input inherits
//! admissibility from the previous one (recursive feasibility). Three paths
//! are provided: a closed-form scalar update, the equivalent one-variable
//! linear program (kept as the implicit baseline for benchmarking), and a
//! vector update that optimizes one blend factor per input channel through a
//! quadratic program.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mas::Mas;
use crate::polytope::{lp_max, qp_min};

/// Rows whose input coefficient is at or below this are treated as
/// independent of the blend factor.
pub(crate) const DIRECTION_TOL: f64 = 1e-12;
/// Largest tolerated relative row violation of the starting pair before the
/// step fails loudly instead of clamping silently.
pub(crate) const START_TOL: f64 = 1e-7;

/// Result of one scalar governor step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaResult {
    /// Blend factor in `[0, 1]`.
    pub kappa: f64,
    /// Admitted input `v_prev + kappa (r - v_prev)`.
    pub v_new: f64,
    /// Constraint row that capped the blend factor, when one did.
    pub binding_row: Option<usize>,
}

/// Result of one vector governor step.
#[derive(Clone, Debug, PartialEq)]
pub struct VrgResult {
    /// Admitted input vector.
    pub u_new: DVector<f64>,
    /// Per-channel blend factors (diagonal of the mixing matrix).
    pub kappas: DVector<f64>,
}

/// Fails with [`Error::InfeasibleStart`] when the stacked pair violates any
/// row by more than the start tolerance.
pub(crate) fn check_start(mas: &Mas, x: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    let mut z = DVector::zeros(x.len() + v.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), v.len()).copy_from(v);
    let h = mas.polytope().h_mat();
    let b = mas.polytope().h_vec();
    let vals = h * z;
    let mut worst = 0.0;
    let mut worst_row = None;
    for i in 0..b.len() {
        let viol = (vals[i] - b[i]) / (1.0 + b[i].abs());
        if viol > worst {
            worst = viol;
            worst_row = Some(i);
        }
    }
    if let Some(row) = worst_row {
        if worst > START_TOL {
            return Err(Error::InfeasibleStart {
                row,
                violation: worst,
            });
        }
    }
    Ok(())
}

fn check_scalar_dims(mas: &Mas, x: &DVector<f64>) -> Result<()> {
    if mas.n_inputs() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "scalar governor needs a single-input set, got {} inputs",
            mas.n_inputs()
        )));
    }
    if x.len() != mas.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, set expects {}",
            x.len(),
            mas.n_states()
        )));
    }
    Ok(())
}

/// Row data for the scalar update: `a = H_v (r - v_prev)` and
/// `b = h - H_x x - H_v v_prev`, so feasibility of the blend factor reads
/// `a kappa <= b` row-wise.
fn scalar_rows(mas: &Mas, x: &DVector<f64>, v_prev: f64, r: f64) -> (DVector<f64>, DVector<f64>) {
    let h_x = mas.h_x();
    let h_u = mas.h_u();
    let a = &h_u * DVector::from_element(1, r - v_prev);
    let b = mas.h_vec() - h_x * x - h_u * DVector::from_element(1, v_prev);
    (a, b)
}

/// Scalar governor step in closed form: the blend factor is the clamped
/// minimum of `b(i)/a(i)` over rows that tighten as the input moves toward
/// the reference.
pub fn srg_step_explicit(
    mas: &Mas,
    x: &DVector<f64>,
    v_prev: f64,
    r: f64,
) -> Result<KappaResult> {
    check_scalar_dims(mas, x)?;
    check_start(mas, x, &DVector::from_element(1, v_prev))?;
    let (a, b) = scalar_rows(mas, x, v_prev, r);
    let mut ratio = f64::INFINITY;
    let mut row = None;
    for i in 0..a.len() {
        if a[i] > DIRECTION_TOL {
            let q = b[i] / a[i];
            if q < ratio {
                ratio = q;
                row = Some(i);
            }
        }
    }
    let kappa = ratio.min(1.0).max(0.0);
    let binding_row = if ratio < 1.0 { row } else { None };
    Ok(KappaResult {
        kappa,
        v_new: v_prev + kappa * (r - v_prev),
        binding_row,
    })
}

/// Scalar governor step through the generic one-variable linear program
/// `max kappa` subject to the same rows plus `0 <= kappa <= 1`. Kept as the
/// implicit baseline the benchmarks compare against; agrees with the
/// closed form to solver precision.
pub fn srg_step_lp(mas: &Mas, x: &DVector<f64>, v_prev: f64, r: f64) -> Result<KappaResult> {
    check_scalar_dims(mas, x)?;
    check_start(mas, x, &DVector::from_element(1, v_prev))?;
    let (a, b) = scalar_rows(mas, x, v_prev, r);
    // Rows that do not involve the blend factor are covered by the start
    // check above; keeping them would make tolerated microscopic start
    // violations read as LP infeasibility.
    let mut rows: Vec<f64> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..a.len() {
        if a[i].abs() > DIRECTION_TOL {
            rows.push(a[i]);
            rhs.push(b[i]);
        }
    }
    let kept: Vec<usize> = (0..a.len()).filter(|&i| a[i].abs() > DIRECTION_TOL).collect();
    let n_set_rows = rows.len();
    rows.push(1.0);
    rhs.push(1.0);
    rows.push(-1.0);
    rhs.push(0.0);
    let sol = lp_max(
        &DVector::from_element(1, 1.0),
        &DMatrix::from_row_slice(rows.len(), 1, &rows),
        &DVector::from_row_slice(&rhs),
    )?;
    let kappa = sol.value.clamp(0.0, 1.0);
    // Identify a binding set row (not the box rows) at the optimum.
    let mut binding_row = None;
    if kappa < 1.0 {
        let mut best_slack = f64::INFINITY;
        for k in 0..n_set_rows {
            if rows[k] > DIRECTION_TOL {
                let slack = rhs[k] - rows[k] * kappa;
                if slack < best_slack {
                    best_slack = slack;
                    binding_row = Some(kept[k]);
                }
            }
        }
    }
    Ok(KappaResult {
        kappa,
        v_new: v_prev + kappa * (r - v_prev),
        binding_row,
    })
}

/// Vector governor step: minimizes the distance to the reference over one
/// blend factor per channel,
/// `min ||u - r||^2` with `u = u_prev + K (r - u_prev)`, `K = diag(kappa)`,
/// `kappa in [0,1]^m`, subject to `(x, u)` staying in the admissible set.
///
/// Channels already at their reference contribute nothing to the objective
/// and are fixed at a blend factor of one before the quadratic program runs,
/// keeping it strictly convex.
pub fn vrg_step(mas: &Mas, x: &DVector<f64>, u_prev: &DVector<f64>, r: &DVector<f64>) -> Result<VrgResult> {
    let m = mas.n_inputs();
    if u_prev.len() != m || r.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "input vectors have lengths {} and {}, set expects {}",
            u_prev.len(),
            r.len(),
            m
        )));
    }
    if x.len() != mas.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, set expects {}",
            x.len(),
            mas.n_states()
        )));
    }
    check_start(mas, x, u_prev)?;
    let d = r - u_prev;
    let active: Vec<usize> = (0..m).filter(|&i| d[i].abs() > DIRECTION_TOL).collect();
    if active.is_empty() {
        return Ok(VrgResult {
            u_new: u_prev.clone(),
            kappas: DVector::from_element(m, 1.0),
        });
    }
    let ma = active.len();
    let h_u = mas.h_u();
    let n_rows = mas.polytope().n_rows();
    // Constraint rows over the active blend factors:
    // H_u D_d kappa <= h - H_x x - H_u u_prev, then the unit box.
    let mut a_mat = DMatrix::<f64>::zeros(n_rows + 2 * ma, ma);
    let mut b_vec = DVector::<f64>::zeros(n_rows + 2 * ma);
    let resid = mas.h_vec() - mas.h_x() * x - &h_u * u_prev;
    for row in 0..n_rows {
        for (j, &i) in active.iter().enumerate() {
            a_mat[(row, j)] = h_u[(row, i)] * d[i];
        }
        b_vec[row] = resid[row];
    }
    for (j, _) in active.iter().enumerate() {
        a_mat[(n_rows + 2 * j, j)] = 1.0;
        b_vec[n_rows + 2 * j] = 1.0;
        a_mat[(n_rows + 2 * j + 1, j)] = -1.0;
        b_vec[n_rows + 2 * j + 1] = 0.0;
    }
    // Objective sum_i w_i (1 - kappa_i)^2 with w_i = d_i^2, dropping the
    // constant term: Q = 2 diag(w), q = -2 w.
    let mut q_mat = DMatrix::<f64>::zeros(ma, ma);
    let mut q_vec = DVector::<f64>::zeros(ma);
    for (j, &i) in active.iter().enumerate() {
        let w = d[i] * d[i];
        q_mat[(j, j)] = 2.0 * w;
        q_vec[j] = -2.0 * w;
    }
    let k_active = qp_min(&q_mat, &q_vec, &a_mat, &b_vec, &DVector::zeros(ma))?;
    let mut kappas = DVector::from_element(m, 1.0);
    let mut u_new = u_prev.clone();
    for (j, &i) in active.iter().enumerate() {
        let k = k_active[j].clamp(0.0, 1.0);
        kappas[i] = k;
        u_new[i] += k * d[i];
    }
    Ok(VrgResult { u_new, kappas })
}

/// Applies the scalar step channel-wise: channel `i` uses its own admissible
/// set and state view. Errors carry the channel index.
pub fn srg_bank_step(
    mas_list: &[Mas],
    x_list: &[DVector<f64>],
    v_prev: &DVector<f64>,
    r_prime: &DVector<f64>,
) -> Result<Vec<KappaResult>> {
    let m = mas_list.len();
    if x_list.len() != m || v_prev.len() != m || r_prime.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "bank of {} sets got {} states, {} previous inputs, {} references",
            m,
            x_list.len(),
            v_prev.len(),
            r_prime.len()
        )));
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let res = srg_step_explicit(&mas_list[i], &x_list[i], v_prev[i], r_prime[i]).map_err(
            |e| Error::Channel {
                index: i,
                source: Box::new(e),
            },
        )?;
        out.push(res);
    }
    Ok(out)
}
