//! Real polynomials in the forward-shift variable `z`, stored by ascending
//! power: `coeffs[k]` multiplies `z^k`.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Relative threshold below which a trailing coefficient is treated as zero
/// when normalizing.
const TRIM_REL: f64 = 1e-12;

/// A real polynomial `c0 + c1 z + ... + cn z^n`.
///
/// Invariant: the stored coefficient of the highest power is nonzero, except
/// for the zero polynomial which is canonically `[0.0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from ascending-power coefficients, trimming
    /// trailing near-zero terms (relative to the largest coefficient).
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Polynomial { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// `z^k`.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Polynomial { coeffs }
    }

    fn trim(&mut self) {
        let scale = self
            .coeffs
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
            .max(1.0);
        while self.coeffs.len() > 1 {
            let last = *self.coeffs.last().unwrap();
            if last.abs() <= TRIM_REL * scale {
                self.coeffs.pop();
            } else {
                break;
            }
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
        if self.coeffs.len() == 1 && self.coeffs[0].abs() <= TRIM_REL {
            self.coeffs[0] = 0.0;
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `z^k` (zero beyond the stored degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Coefficient of the highest stored power.
    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.coeff(k) + other.coeff(k);
        }
        Polynomial::new(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    /// Multiplies by `z^k`.
    pub fn shift_up(&self, k: usize) -> Polynomial {
        if self.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; k];
        out.extend_from_slice(&self.coeffs);
        Polynomial { coeffs: out }
    }

    /// Euclidean division: `self = q * div + r` with `deg r < deg div`.
    ///
    /// Panics if `div` is the zero polynomial.
    pub fn div_rem(&self, div: &Polynomial) -> (Polynomial, Polynomial) {
        assert!(!div.is_zero(), "division by the zero polynomial");
        let dd = div.degree();
        if self.degree() < dd || self.is_zero() {
            return (Polynomial::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let mut quo = vec![0.0; self.degree() - dd + 1];
        let lead = div.leading();
        for k in (dd..rem.len()).rev() {
            let q = rem[k] / lead;
            quo[k - dd] = q;
            for j in 0..=dd {
                rem[k - dd + j] -= q * div.coeffs[j];
            }
        }
        rem.truncate(dd.max(1));
        (Polynomial::new(quo), Polynomial::new(rem))
    }

    pub fn derivative(&self) -> Polynomial {
        if self.degree() == 0 {
            return Polynomial::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        Polynomial::new(coeffs)
    }

    /// All complex roots, computed as eigenvalues of the companion matrix and
    /// polished by two Newton steps. Roots at the origin are deflated first
    /// for accuracy.
    pub fn roots(&self) -> Vec<Complex64> {
        if self.is_zero() || self.degree() == 0 {
            return Vec::new();
        }
        // Deflate exact zero roots (leading ascending coefficients).
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mut k0 = 0;
        while k0 < self.coeffs.len() - 1 && self.coeffs[k0].abs() <= TRIM_REL * scale {
            k0 += 1;
        }
        let mut roots = vec![Complex64::new(0.0, 0.0); k0];
        let body = &self.coeffs[k0..];
        let n = body.len() - 1;
        if n > 0 {
            let lead = body[n];
            let mut comp = DMatrix::<f64>::zeros(n, n);
            for i in 1..n {
                comp[(i, i - 1)] = 1.0;
            }
            for i in 0..n {
                comp[(i, n - 1)] = -body[i] / lead;
            }
            let eig = comp.complex_eigenvalues();
            for lam in eig.iter() {
                roots.push(self.polish(*lam));
            }
        }
        roots
    }

    fn polish(&self, mut x: Complex64) -> Complex64 {
        let dp = self.derivative();
        for _ in 0..2 {
            let d = dp.eval(x);
            if d.norm() < 1e-300 {
                break;
            }
            let step = self.eval(x) / d;
            if !step.re.is_finite() || !step.im.is_finite() || step.norm() > 1.0 {
                break;
            }
            x -= step;
        }
        x
    }

    /// Reconstructs a real polynomial `leading * prod (z - r_i)` from a root
    /// multiset that is (numerically) closed under conjugation.
    pub fn from_roots(leading: f64, roots: &[Complex64]) -> Polynomial {
        let mut used = vec![false; roots.len()];
        let mut poly = Polynomial::constant(1.0);
        for i in 0..roots.len() {
            if used[i] {
                continue;
            }
            let r = roots[i];
            if r.im.abs() <= 1e-9 * (1.0 + r.re.abs()) {
                used[i] = true;
                poly = poly.mul(&Polynomial::new(vec![-r.re, 1.0]));
                continue;
            }
            // Find the best conjugate partner among the unused roots.
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for (j, cand) in roots.iter().enumerate() {
                if j == i || used[j] {
                    continue;
                }
                let d = (cand - r.conj()).norm();
                if d < best_d {
                    best_d = d;
                    best = Some(j);
                }
            }
            used[i] = true;
            match best {
                Some(j) => {
                    used[j] = true;
                    let s = roots[j];
                    // (z - r)(z - s) with s ~ conj(r): keep real coefficients.
                    let sum = r.re + s.re;
                    let prod = (r * s).re;
                    poly = poly.mul(&Polynomial::new(vec![prod, -sum, 1.0]));
                }
                None => {
                    // Lone complex root (shouldn't happen for real input);
                    // fall back to its real part.
                    poly = poly.mul(&Polynomial::new(vec![-r.re, 1.0]));
                }
            }
        }
        poly.scale(leading)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trims_trailing_zeros() {
        let p = Polynomial::new(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 1);
        assert_eq!(p.coeffs(), &[1.0, 2.0]);
        assert!(Polynomial::new(vec![0.0, 0.0]).is_zero());
    }

    #[test]
    fn evaluates_by_horner() {
        // (z - 2)(z + 3) = z^2 + z - 6
        let p = Polynomial::new(vec![-6.0, 1.0, 1.0]);
        assert_abs_diff_eq!(p.eval_real(2.0), 0.0);
        assert_abs_diff_eq!(p.eval_real(-3.0), 0.0);
        assert_abs_diff_eq!(p.eval_real(1.0), -4.0);
    }

    #[test]
    fn multiplies_by_convolution() {
        let a = Polynomial::new(vec![1.0, 1.0]); // 1 + z
        let b = Polynomial::new(vec![-1.0, 1.0]); // -1 + z
        assert_eq!(a.mul(&b).coeffs(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn division_recovers_quotient_and_remainder() {
        // (z^2 + z - 6) / (z - 2) = (z + 3), remainder 0
        let p = Polynomial::new(vec![-6.0, 1.0, 1.0]);
        let d = Polynomial::new(vec![-2.0, 1.0]);
        let (q, r) = p.div_rem(&d);
        assert_eq!(q.coeffs(), &[3.0, 1.0]);
        assert!(r.is_zero());

        // x^3 / (x^2 + 1) = x, remainder -x
        let p = Polynomial::monomial(3);
        let d = Polynomial::new(vec![1.0, 0.0, 1.0]);
        let (q, r) = p.div_rem(&d);
        assert_eq!(q.coeffs(), &[0.0, 1.0]);
        assert_eq!(r.coeffs(), &[0.0, -1.0]);
    }

    #[test]
    fn roots_of_known_polynomials() {
        // z^2 - 0.4 z + 0.04 = (z - 0.2)^2
        let p = Polynomial::new(vec![0.04, -0.4, 1.0]);
        let mut r: Vec<f64> = p.roots().iter().map(|c| c.re).collect();
        r.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(r[0], 0.2, epsilon = 1e-6);
        assert_abs_diff_eq!(r[1], 0.2, epsilon = 1e-6);

        // z(z - 0.6): deflated origin root is exact
        let p = Polynomial::new(vec![0.0, -0.6, 1.0]);
        let roots = p.roots();
        assert!(roots.iter().any(|c| c.norm() == 0.0));
        assert!(roots.iter().any(|c| (c - Complex64::new(0.6, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn from_roots_round_trips() {
        // z^2 - 1.85 z + 0.9 has a complex pair
        let p = Polynomial::new(vec![0.9, -1.85, 1.0]);
        let q = Polynomial::from_roots(1.0, &p.roots());
        for (a, b) in p.coeffs().iter().zip(q.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}
