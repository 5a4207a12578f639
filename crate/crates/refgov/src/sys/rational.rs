//! Scalar rational transfer functions and matrices of them.
//!
//! Every [`RationalTf`] is kept in reduced canonical form: common roots of
//! numerator and denominator are cancelled (up to a relative root-distance
//! tolerance, validated by pointwise evaluation) and the denominator is made
//! monic.

use num_complex::Complex64;

use super::polynomial::Polynomial;
use crate::error::{Error, Result};

/// Relative root-distance tolerance for primary common-factor cancellation.
const CANCEL_REL: f64 = 1e-8;
/// Looser secondary tolerance for clustered (multiple) roots, only accepted
/// when pointwise validation confirms the function is unchanged.
const CANCEL_REL_CLUSTER: f64 = 1e-6;
/// Maximum relative pointwise deviation tolerated when validating a
/// candidate cancellation.
const VALUE_TOL: f64 = 1e-8;

/// A proper-or-improper scalar rational function `num(z) / den(z)`.
#[derive(Clone, Debug)]
pub struct RationalTf {
    num: Polynomial,
    den: Polynomial,
}

impl RationalTf {
    /// Builds `num/den` in reduced canonical form.
    ///
    /// Returns [`Error::Validation`] when the denominator is identically zero.
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::Validation(
                "rational function has a zero denominator".into(),
            ));
        }
        Ok(Self::reduced(num, den))
    }

    /// Convenience constructor from ascending-power coefficient slices.
    pub fn from_coeffs(num: &[f64], den: &[f64]) -> Result<Self> {
        RationalTf::new(Polynomial::new(num.to_vec()), Polynomial::new(den.to_vec()))
    }

    pub fn zero() -> Self {
        RationalTf {
            num: Polynomial::zero(),
            den: Polynomial::constant(1.0),
        }
    }

    pub fn one() -> Self {
        RationalTf {
            num: Polynomial::constant(1.0),
            den: Polynomial::constant(1.0),
        }
    }

    pub fn constant(c: f64) -> Self {
        RationalTf {
            num: Polynomial::constant(c),
            den: Polynomial::constant(1.0),
        }
    }

    /// `1 / z^k`.
    pub fn delay(k: usize) -> Self {
        RationalTf {
            num: Polynomial::constant(1.0),
            den: Polynomial::monomial(k),
        }
    }

    fn reduced(num: Polynomial, den: Polynomial) -> Self {
        if num.is_zero() {
            return RationalTf::zero();
        }
        let orig = RationalTf {
            num: num.clone(),
            den: den.clone(),
        };
        let nr = num.roots();
        let dr = den.roots();
        let pairs = match_roots(&nr, &dr, CANCEL_REL_CLUSTER);
        if pairs.is_empty() {
            return orig.monic();
        }
        // Candidate 1/2: deflate both polynomials by the common factor built
        // from the matched roots (taking the numerator's then the
        // denominator's estimates), which keeps the surviving coefficients
        // exact up to division roundoff.
        // Candidate 3: rebuild both polynomials from their surviving roots.
        let n_matched: Vec<Complex64> = pairs.iter().map(|&(i, _)| nr[i]).collect();
        let d_matched: Vec<Complex64> = pairs.iter().map(|&(_, j)| dr[j]).collect();
        for matched in [&n_matched, &d_matched] {
            let factor = Polynomial::from_roots(1.0, matched);
            let (qn, _) = num.div_rem(&factor);
            let (qd, _) = den.div_rem(&factor);
            if qd.is_zero() {
                continue;
            }
            let cand = RationalTf { num: qn, den: qd };
            if values_agree(&orig, &cand) {
                return cand.monic();
            }
        }
        let kept_n: Vec<Complex64> = (0..nr.len())
            .filter(|i| !pairs.iter().any(|&(pi, _)| pi == *i))
            .map(|i| nr[i])
            .collect();
        let kept_d: Vec<Complex64> = (0..dr.len())
            .filter(|j| !pairs.iter().any(|&(_, pj)| pj == *j))
            .map(|j| dr[j])
            .collect();
        let cand = RationalTf {
            num: Polynomial::from_roots(num.leading(), &kept_n),
            den: Polynomial::from_roots(den.leading(), &kept_d),
        };
        if values_agree(&orig, &cand) {
            return cand.monic();
        }
        // The aggressive matching altered the function; retry strictly.
        strict_reduce(&num, &den).unwrap_or(orig).monic()
    }

    fn monic(self) -> Self {
        let lead = self.den.leading();
        RationalTf {
            num: self.num.scale(1.0 / lead),
            den: self.den.scale(1.0 / lead),
        }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// `deg den - deg num`; negative for improper entries.
    pub fn relative_degree(&self) -> isize {
        if self.is_zero() {
            return 0;
        }
        self.den.degree() as isize - self.num.degree() as isize
    }

    pub fn is_proper(&self) -> bool {
        self.relative_degree() >= 0
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.num.eval(z) / self.den.eval(z)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        if self.is_zero() {
            return Vec::new();
        }
        self.den.roots()
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        self.num.roots()
    }

    pub fn add(&self, other: &RationalTf) -> RationalTf {
        let num = self
            .num
            .mul(&other.den)
            .add(&other.num.mul(&self.den));
        RationalTf::reduced(num, self.den.mul(&other.den))
    }

    pub fn sub(&self, other: &RationalTf) -> RationalTf {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> RationalTf {
        RationalTf {
            num: self.num.scale(-1.0),
            den: self.den.clone(),
        }
    }

    pub fn mul(&self, other: &RationalTf) -> RationalTf {
        RationalTf::reduced(self.num.mul(&other.num), self.den.mul(&other.den))
    }

    pub fn scale(&self, s: f64) -> RationalTf {
        RationalTf {
            num: self.num.scale(s),
            den: self.den.clone(),
        }
    }

    /// Reciprocal; errors when the function is identically zero.
    pub fn inv(&self) -> Result<RationalTf> {
        if self.is_zero() {
            return Err(Error::SingularTransferMatrix);
        }
        Ok(RationalTf {
            num: self.den.clone(),
            den: self.num.clone(),
        }
        .monic())
    }

    pub fn div(&self, other: &RationalTf) -> Result<RationalTf> {
        Ok(self.mul(&other.inv()?))
    }

    /// Divides by `z^k` (adds `k` steps of delay).
    pub fn delayed(&self, k: usize) -> RationalTf {
        if self.is_zero() {
            return RationalTf::zero();
        }
        RationalTf::reduced(self.num.clone(), self.den.shift_up(k))
    }
}

/// Greedy one-to-one matching of numerator roots to denominator roots within
/// a relative distance tolerance; returns `(num_index, den_index)` pairs.
fn match_roots(nr: &[Complex64], dr: &[Complex64], rel_tol: f64) -> Vec<(usize, usize)> {
    let mut used = vec![false; nr.len()];
    let mut pairs = Vec::new();
    for (j, d) in dr.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_dist = f64::INFINITY;
        for (i, n) in nr.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist = (n - d).norm();
            if dist < best_dist {
                best_dist = dist;
                best = Some(i);
            }
        }
        if let Some(i) = best {
            if best_dist <= rel_tol * d.norm().max(1.0) {
                used[i] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn strict_reduce(num: &Polynomial, den: &Polynomial) -> Option<RationalTf> {
    let nr = num.roots();
    let dr = den.roots();
    let pairs = match_roots(&nr, &dr, CANCEL_REL);
    if pairs.is_empty() {
        return None;
    }
    let orig = RationalTf {
        num: num.clone(),
        den: den.clone(),
    };
    let matched: Vec<Complex64> = pairs.iter().map(|&(i, _)| nr[i]).collect();
    let factor = Polynomial::from_roots(1.0, &matched);
    let (qn, _) = num.div_rem(&factor);
    let (qd, _) = den.div_rem(&factor);
    if !qd.is_zero() {
        let cand = RationalTf { num: qn, den: qd };
        if values_agree(&orig, &cand) {
            return Some(cand);
        }
    }
    None
}

/// Compares two rational functions at fixed off-axis probe points away from
/// typical pole locations.
fn values_agree(a: &RationalTf, b: &RationalTf) -> bool {
    const PROBES: [(f64, f64); 6] = [
        (2.31, 0.77),
        (-1.94, 1.13),
        (0.42, -2.61),
        (3.57, 1.91),
        (-2.73, -1.37),
        (1.19, 2.83),
    ];
    for &(re, im) in &PROBES {
        let z = Complex64::new(re, im);
        let va = a.eval(z);
        let vb = b.eval(z);
        let scale = va.norm().max(vb.norm()).max(1.0);
        if (va - vb).norm() > VALUE_TOL * scale {
            return false;
        }
    }
    true
}

/// A dense matrix of rational functions (row-major storage).
#[derive(Clone, Debug)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<RationalTf>,
}

impl RationalMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<RationalTf>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                entries.len()
            )));
        }
        Ok(RationalMatrix { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RationalMatrix {
            rows,
            cols,
            entries: vec![RationalTf::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RationalMatrix::zeros(n, n);
        for i in 0..n {
            *m.get_mut(i, i) = RationalTf::one();
        }
        m
    }

    pub fn from_diag(diag: &[RationalTf]) -> Self {
        let mut m = RationalMatrix::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            *m.get_mut(i, i) = d.clone();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &RationalTf {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut RationalTf {
        &mut self.entries[i * self.cols + j]
    }

    /// Extracts the sub-matrix of the given row and column index lists.
    pub fn submatrix(&self, row_idx: &[usize], col_idx: &[usize]) -> RationalMatrix {
        let mut entries = Vec::with_capacity(row_idx.len() * col_idx.len());
        for &i in row_idx {
            for &j in col_idx {
                entries.push(self.get(i, j).clone());
            }
        }
        RationalMatrix {
            rows: row_idx.len(),
            cols: col_idx.len(),
            entries,
        }
    }

    /// Horizontal concatenation `[self | right]`; the row counts must match.
    pub fn hcat(&self, right: &RationalMatrix) -> Result<RationalMatrix> {
        if self.rows != right.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, right.rows
            )));
        }
        let mut entries = Vec::with_capacity(self.rows * (self.cols + right.cols));
        for i in 0..self.rows {
            for j in 0..self.cols {
                entries.push(self.get(i, j).clone());
            }
            for j in 0..right.cols {
                entries.push(right.get(i, j).clone());
            }
        }
        RationalMatrix::new(self.rows, self.cols + right.cols, entries)
    }

    pub fn matmul(&self, other: &RationalMatrix) -> Result<RationalMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = RationalMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = RationalTf::zero();
                for k in 0..self.cols {
                    let term = self.get(i, k).mul(other.get(k, j));
                    acc = acc.add(&term);
                }
                *out.get_mut(i, j) = acc;
            }
        }
        Ok(out)
    }

    /// Evaluates every entry at the complex point `z`.
    pub fn eval(&self, z: Complex64) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(z))
    }

    /// Determinant by cofactor expansion (intended for the small square
    /// matrices that arise in decoupling design).
    pub fn determinant(&self) -> Result<RationalTf> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch(
                "determinant of a non-square matrix".into(),
            ));
        }
        Ok(self.det_rec(&(0..self.rows).collect::<Vec<_>>(), &(0..self.cols).collect::<Vec<_>>()))
    }

    fn det_rec(&self, rows: &[usize], cols: &[usize]) -> RationalTf {
        if rows.len() == 1 {
            return self.get(rows[0], cols[0]).clone();
        }
        let mut acc = RationalTf::zero();
        let sub_rows = &rows[1..];
        for (k, &j) in cols.iter().enumerate() {
            let e = self.get(rows[0], j);
            if e.is_zero() {
                continue;
            }
            let sub_cols: Vec<usize> = cols
                .iter()
                .copied()
                .filter(|&c| c != j)
                .collect();
            let minor = self.det_rec(sub_rows, &sub_cols);
            let term = e.mul(&minor);
            acc = if k % 2 == 0 {
                acc.add(&term)
            } else {
                acc.sub(&term)
            };
        }
        acc
    }

    /// Rational inverse via the adjugate and determinant, with common-factor
    /// cancellation applied entrywise.
    ///
    /// Errors with [`Error::SingularTransferMatrix`] when the determinant
    /// vanishes identically.
    pub fn rational_inverse(&self) -> Result<RationalMatrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch(
                "inverse of a non-square matrix".into(),
            ));
        }
        let n = self.rows;
        let det = self.determinant()?;
        if det.is_zero() {
            return Err(Error::SingularTransferMatrix);
        }
        let det_inv = det.inv()?;
        let mut out = RationalMatrix::zeros(n, n);
        let all: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..n {
                // Cofactor C_ji for the (i,j) entry of the inverse.
                let rows: Vec<usize> = all.iter().copied().filter(|&r| r != j).collect();
                let cols: Vec<usize> = all.iter().copied().filter(|&c| c != i).collect();
                let minor = if n == 1 {
                    RationalTf::one()
                } else {
                    self.det_rec(&rows, &cols)
                };
                let signed = if (i + j) % 2 == 0 {
                    minor
                } else {
                    minor.neg()
                };
                *out.get_mut(i, j) = signed.mul(&det_inv);
            }
        }
        Ok(out)
    }

    /// The largest properness deficit over all entries: the smallest `beta`
    /// such that every entry of `self / z^beta` is proper.
    pub fn properness_deficit(&self) -> usize {
        let mut beta = 0isize;
        for e in &self.entries {
            beta = beta.max(-e.relative_degree());
        }
        beta.max(0) as usize
    }

    /// Divides the whole matrix by `z^beta` with `beta` the properness
    /// deficit, returning the proper matrix and `beta`.
    pub fn make_proper(&self) -> (RationalMatrix, usize) {
        let beta = self.properness_deficit();
        if beta == 0 {
            return (self.clone(), 0);
        }
        let mut out = self.clone();
        for e in &mut out.entries {
            *e = e.delayed(beta);
        }
        (out, beta)
    }

    /// Divides every entry by `z^k` regardless of properness.
    pub fn delayed(&self, k: usize) -> RationalMatrix {
        let mut out = self.clone();
        for e in &mut out.entries {
            *e = e.delayed(k);
        }
        out
    }

    /// The largest pole modulus across all entries (0 for a constant matrix).
    pub fn max_pole_modulus(&self) -> f64 {
        let mut m = 0.0f64;
        for e in &self.entries {
            for p in e.poles() {
                m = m.max(p.norm());
            }
        }
        m
    }
}
