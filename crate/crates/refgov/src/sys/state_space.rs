//! Discrete-time state-space models, realization, and simulation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::polynomial::Polynomial;
use super::rational::{RationalMatrix, RationalTf};
use crate::error::{Error, Result};

/// Relative singular-value threshold used for rank decisions during
/// minimal realization.
const RANK_REL_TOL: f64 = 1e-9;

/// A discrete-time LTI system
/// `x(t+1) = A x(t) + B u(t) + Bw w(t)`, `y(t) = C x(t) + D u(t) + Dw w(t)`.
///
/// The disturbance channel `(Bw, Dw)` is optional; systems built without one
/// treat `w` as absent.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub b_w: Option<DMatrix<f64>>,
    pub d_w: Option<DMatrix<f64>>,
}

/// Trajectory produced by [`LinearSystem::simulate`]: `states[t]` is `x(t)`
/// for `t = 0..=T` and `outputs[t]` is `y(t)` for `t = 0..T`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("A must be square".into()));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {}",
                b.nrows(),
                n
            )));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C has {} columns, expected {}",
                c.ncols(),
                n
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(LinearSystem {
            a,
            b,
            c,
            d,
            b_w: None,
            d_w: None,
        })
    }

    /// Attaches a disturbance input channel.
    pub fn with_disturbance(mut self, b_w: DMatrix<f64>, d_w: DMatrix<f64>) -> Result<Self> {
        if b_w.nrows() != self.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "Bw has {} rows, expected {}",
                b_w.nrows(),
                self.n_states()
            )));
        }
        if d_w.nrows() != self.n_outputs() || d_w.ncols() != b_w.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "Dw is {}x{}, expected {}x{}",
                d_w.nrows(),
                d_w.ncols(),
                self.n_outputs(),
                b_w.ncols()
            )));
        }
        self.b_w = Some(b_w);
        self.d_w = Some(d_w);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_disturbances(&self) -> usize {
        self.b_w.as_ref().map_or(0, |m| m.ncols())
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        if self.n_states() == 0 {
            return 0.0;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }

    /// Schur stability (all eigenvalues strictly inside the unit circle).
    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Steady-state gain `C (I - A)^{-1} B + D`.
    ///
    /// Errors with [`Error::PoleAtOne`] when `I - A` is numerically singular.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let n = self.n_states();
        if n == 0 {
            return Ok(self.d.clone());
        }
        let m = DMatrix::identity(n, n) - &self.a;
        let svd = m.clone().svd(false, false);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        if s_min <= 1e-9 * s_max.max(1.0) {
            return Err(Error::PoleAtOne);
        }
        let inv = m
            .lu()
            .try_inverse()
            .ok_or(Error::PoleAtOne)?;
        Ok(&self.c * inv * &self.b + &self.d)
    }

    /// Markov parameter `h(t)`: `D` for `t = 0`, `C A^{t-1} B` for `t >= 1`.
    pub fn markov(&self, t: usize) -> DMatrix<f64> {
        if t == 0 {
            return self.d.clone();
        }
        let mut ak = DMatrix::<f64>::identity(self.n_states(), self.n_states());
        for _ in 0..t - 1 {
            ak = &self.a * ak;
        }
        &self.c * ak * &self.b
    }

    /// Single-step state update.
    pub fn next_state(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let mut xn = &self.a * x + &self.b * u;
        if let (Some(bw), Some(wv)) = (&self.b_w, w) {
            xn += bw * wv;
        }
        xn
    }

    /// Single-step output map.
    pub fn output(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let mut y = &self.c * x + &self.d * u;
        if let (Some(dw), Some(wv)) = (&self.d_w, w) {
            y += dw * wv;
        }
        y
    }

    /// Simulates the system over the input sequence, optionally with a
    /// disturbance sequence of the same length.
    pub fn simulate(
        &self,
        x0: &DVector<f64>,
        inputs: &[DVector<f64>],
        disturbances: Option<&[DVector<f64>]>,
    ) -> Result<Trajectory> {
        if x0.len() != self.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, expected {}",
                x0.len(),
                self.n_states()
            )));
        }
        if let Some(ws) = disturbances {
            if ws.len() != inputs.len() {
                return Err(Error::DimensionMismatch(
                    "disturbance sequence length must match input sequence".into(),
                ));
            }
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut x = x0.clone();
        for (t, u) in inputs.iter().enumerate() {
            let w = disturbances.map(|ws| &ws[t]);
            outputs.push(self.output(&x, u, w));
            let xn = self.next_state(&x, u, w);
            states.push(x);
            x = xn;
        }
        states.push(x);
        Ok(Trajectory { states, outputs })
    }

    /// Exact transfer matrix `C (zI - A)^{-1} B + D` as rational functions,
    /// computed with the Faddeev–LeVerrier recursion.
    pub fn transfer_function(&self) -> Result<RationalMatrix> {
        let n = self.n_states();
        let p = self.n_outputs();
        let m = self.n_inputs();
        if n == 0 {
            let mut out = RationalMatrix::zeros(p, m);
            for i in 0..p {
                for j in 0..m {
                    *out.get_mut(i, j) = RationalTf::constant(self.d[(i, j)]);
                }
            }
            return Ok(out);
        }
        // (zI - A)^{-1} = (M_1 z^{n-1} + ... + M_n) / charpoly(z)
        let mut char_coeffs = vec![0.0; n + 1];
        char_coeffs[n] = 1.0;
        let mut mats: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut mk = DMatrix::<f64>::identity(n, n);
        for k in 1..=n {
            mats.push(mk.clone());
            let am = &self.a * &mk;
            let ck = -am.trace() / k as f64;
            char_coeffs[n - k] = ck;
            mk = am + DMatrix::identity(n, n) * ck;
        }
        let den = Polynomial::new(char_coeffs);
        // Numerator of C (zI-A)^{-1} B: coefficient of z^{n-k} is C M_k B.
        let terms: Vec<DMatrix<f64>> = mats.iter().map(|mk| &self.c * mk * &self.b).collect();
        let mut out = RationalMatrix::zeros(p, m);
        for i in 0..p {
            for j in 0..m {
                let mut coeffs = vec![0.0; n];
                for (k, t) in terms.iter().enumerate() {
                    // term k (0-based) multiplies z^{n-1-k}
                    coeffs[n - 1 - k] = t[(i, j)];
                }
                let mut num = Polynomial::new(coeffs);
                num = num.add(&den.scale(self.d[(i, j)]));
                *out.get_mut(i, j) = RationalTf::new(num, den.clone())?;
            }
        }
        Ok(out)
    }
}

/// Builds a minimal state-space realization of a proper rational matrix.
///
/// Each column is realized in controllable canonical form over the column's
/// common denominator; the block-diagonal composite is then reduced to a
/// minimal realization by projecting onto its controllable and observable
/// subspaces.
///
/// Errors with [`Error::ImproperEntry`] when any entry has more zeros than
/// poles.
pub fn realize(m: &RationalMatrix) -> Result<LinearSystem> {
    let p = m.rows();
    let ncols = m.cols();
    for i in 0..p {
        for j in 0..ncols {
            let rd = m.get(i, j).relative_degree();
            if rd < 0 {
                return Err(Error::ImproperEntry {
                    row: i,
                    col: j,
                    excess: (-rd) as usize,
                });
            }
        }
    }

    // Per-column controllable canonical blocks.
    let mut blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = Vec::new(); // (A_j, C_j)
    let mut d = DMatrix::<f64>::zeros(p, ncols);
    for j in 0..ncols {
        // Common denominator of the column (product of entry denominators).
        let mut den = Polynomial::constant(1.0);
        for i in 0..p {
            if !m.get(i, j).is_zero() {
                den = den.mul(m.get(i, j).den());
            }
        }
        let lead = den.leading();
        den = den.scale(1.0 / lead);
        let nj = den.degree();
        if nj == 0 {
            for i in 0..p {
                d[(i, j)] = m.get(i, j).eval(Complex64::new(0.0, 0.0)).re;
                if m.get(i, j).is_zero() {
                    d[(i, j)] = 0.0;
                }
            }
            blocks.push((DMatrix::zeros(0, 0), DMatrix::zeros(p, 0)));
            continue;
        }
        // Companion matrix for den(z) = z^nj + a_{nj-1} z^{nj-1} + ... + a_0.
        let mut a_blk = DMatrix::<f64>::zeros(nj, nj);
        for k in 0..nj - 1 {
            a_blk[(k, k + 1)] = 1.0;
        }
        for k in 0..nj {
            a_blk[(nj - 1, k)] = -den.coeff(k);
        }
        let mut c_blk = DMatrix::<f64>::zeros(p, nj);
        for i in 0..p {
            let e = m.get(i, j);
            if e.is_zero() {
                continue;
            }
            // Numerator over the common denominator.
            let (cof, rem) = den.div_rem(e.den());
            debug_assert!(rem.is_zero() || rem.degree() == 0);
            let num = e.num().mul(&cof);
            let (q, r) = num.div_rem(&den);
            // Proper entry: quotient is a constant (the feedthrough).
            d[(i, j)] = if q.is_zero() { 0.0 } else { q.coeff(0) };
            for k in 0..nj {
                c_blk[(i, k)] = r.coeff(k);
            }
        }
        blocks.push((a_blk, c_blk));
    }

    let n_total: usize = blocks.iter().map(|(a, _)| a.nrows()).sum();
    let mut a = DMatrix::<f64>::zeros(n_total, n_total);
    let mut b = DMatrix::<f64>::zeros(n_total, ncols);
    let mut c = DMatrix::<f64>::zeros(p, n_total);
    let mut off = 0usize;
    for (j, (a_blk, c_blk)) in blocks.iter().enumerate() {
        let nj = a_blk.nrows();
        if nj == 0 {
            continue;
        }
        a.view_mut((off, off), (nj, nj)).copy_from(a_blk);
        b[(off + nj - 1, j)] = 1.0;
        c.view_mut((0, off), (p, nj)).copy_from(c_blk);
        off += nj;
    }

    let sys = LinearSystem::new(a, b, c, d)?;
    Ok(minimal(sys))
}

/// Orthonormal basis of the column space of `m`, with a relative
/// singular-value cutoff.
fn column_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("svd requested u");
    let s_max = svd.singular_values.max();
    if s_max == 0.0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_REL_TOL * s_max)
        .count();
    u.columns(0, rank).into_owned()
}

/// Projects a system onto its controllable subspace, then onto the observable
/// subspace of the result. The transfer function is preserved exactly (up to
/// roundoff) and the state dimension becomes minimal.
pub fn minimal(sys: LinearSystem) -> LinearSystem {
    let reduced = reduce_controllable(sys);
    // Observability of (A, C) is controllability of (A^T, C^T).
    let dualized = LinearSystem {
        a: reduced.a.transpose(),
        b: reduced.c.transpose(),
        c: reduced.b.transpose(),
        d: reduced.d.transpose(),
        b_w: None,
        d_w: None,
    };
    let dual_reduced = reduce_controllable(dualized);
    LinearSystem {
        a: dual_reduced.a.transpose(),
        b: dual_reduced.c.transpose(),
        c: dual_reduced.b.transpose(),
        d: dual_reduced.d.transpose(),
        b_w: reduced.b_w,
        d_w: reduced.d_w,
    }
}

fn reduce_controllable(sys: LinearSystem) -> LinearSystem {
    let n = sys.n_states();
    if n == 0 {
        return sys;
    }
    // Krylov matrix [B, AB, ..., A^{n-1}B].
    let m = sys.n_inputs();
    let mut krylov = DMatrix::<f64>::zeros(n, n * m);
    let mut blk = sys.b.clone();
    // Normalize block scale so rank decisions are uniform across powers.
    for k in 0..n {
        let norm = blk.norm();
        let scaled = if norm > 0.0 { &blk / norm } else { blk.clone() };
        krylov.view_mut((0, k * m), (n, m)).copy_from(&scaled);
        blk = &sys.a * blk;
    }
    let basis = column_space_basis(&krylov);
    let r = basis.ncols();
    if r == n {
        return sys;
    }
    let bt = basis.transpose();
    LinearSystem {
        a: &bt * &sys.a * &basis,
        b: &bt * &sys.b,
        c: &sys.c * &basis,
        d: sys.d,
        b_w: None,
        d_w: None,
    }
}
