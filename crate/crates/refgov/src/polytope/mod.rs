//! H-representation polytopes, axis-aligned boxes (with optional infinite
//! sides), and the operations on them used by the admissible-set machinery:
//! membership, redundancy elimination, support functions, Pontryagin
//! difference against mapped boxes, bounding boxes, and Monte Carlo volume.

pub mod lp;
pub mod qp;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use lp::{feasible_point, lp_max, LpSolution};
pub use qp::qp_min;

/// Default membership tolerance, relative to the row right-hand side.
pub const CONTAINS_TOL: f64 = 1e-9;

/// Axis-aligned box `{x : lo <= x <= hi}`; entries of `lo`/`hi` may be
/// `-inf`/`+inf` for one-sided or missing bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxSet {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch(
                "box bounds have different lengths".into(),
            ));
        }
        for i in 0..lo.len() {
            if lo[i].is_nan() || hi[i].is_nan() {
                return Err(Error::Validation("box bound is NaN".into()));
            }
            if lo[i] > hi[i] {
                return Err(Error::Validation(format!(
                    "box lower bound {} exceeds upper bound {} in coordinate {}",
                    lo[i], hi[i], i
                )));
            }
        }
        Ok(BoxSet { lo, hi })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let lo = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0));
        let hi = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.1));
        BoxSet::new(lo, hi)
    }

    /// The symmetric box `[-r, r]^n`.
    pub fn symmetric(radii: &[f64]) -> Result<Self> {
        let lo = DVector::from_iterator(radii.len(), radii.iter().map(|&r| -r));
        let hi = DVector::from_row_slice(radii);
        BoxSet::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().all(|v| v.is_finite()) && self.hi.iter().all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| {
            let s = 1.0 + self.lo[i].abs().min(self.hi[i].abs().min(f64::MAX));
            x[i] >= self.lo[i] - tol * s && x[i] <= self.hi[i] + tol * s
        })
    }

    /// Support function `max_{x in box} a'x`; `+inf` when the box is
    /// unbounded in the direction `a`.
    pub fn support(&self, a: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            if a[i] > 0.0 {
                s += a[i] * self.hi[i];
            } else if a[i] < 0.0 {
                s += a[i] * self.lo[i];
            }
        }
        s
    }

    /// Scales the box about the origin by `factor` in `[0, 1]`; infinite
    /// sides stay infinite.
    pub fn scale(&self, factor: f64) -> BoxSet {
        BoxSet {
            lo: self.lo.map(|v| v * factor),
            hi: self.hi.map(|v| v * factor),
        }
    }

    /// Pontryagin difference `self - m * w` computed side by side; requires
    /// `w` bounded. Errors with [`Error::EmptyPolytope`] when a side pair
    /// crosses.
    pub fn p_subtract(&self, m: &DMatrix<f64>, w: &BoxSet) -> Result<BoxSet> {
        if !w.is_bounded() {
            return Err(Error::Validation(
                "Pontryagin difference needs a bounded subtrahend".into(),
            ));
        }
        if m.nrows() != self.dim() || m.ncols() != w.dim() {
            return Err(Error::DimensionMismatch(
                "map dimensions do not match the boxes".into(),
            ));
        }
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for i in 0..self.dim() {
            let row = m.row(i).transpose();
            let up = w.support(&row);
            let down = w.support(&(-&row));
            if hi[i].is_finite() {
                hi[i] -= up;
            }
            if lo[i].is_finite() {
                lo[i] += down;
            }
            if lo[i] > hi[i] {
                return Err(Error::EmptyPolytope);
            }
        }
        Ok(BoxSet { lo, hi })
    }

    /// All corner points; requires a bounded box.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        if !self.is_bounded() {
            return Err(Error::Validation("vertices of an unbounded box".into()));
        }
        let d = self.dim();
        let mut out = Vec::with_capacity(1 << d);
        for mask in 0..(1usize << d) {
            let v = DVector::from_fn(d, |i, _| {
                if mask & (1 << i) != 0 {
                    self.hi[i]
                } else {
                    self.lo[i]
                }
            });
            out.push(v);
        }
        Ok(out)
    }

    /// H-representation with rows only for the finite sides.
    pub fn to_polytope(&self) -> Polytope {
        let d = self.dim();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for i in 0..d {
            if self.hi[i].is_finite() {
                let mut r = DVector::zeros(d);
                r[i] = 1.0;
                rows.push(r);
                rhs.push(self.hi[i]);
            }
            if self.lo[i].is_finite() {
                let mut r = DVector::zeros(d);
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-self.lo[i]);
            }
        }
        let mut h_mat = DMatrix::zeros(rows.len(), d);
        for (k, r) in rows.iter().enumerate() {
            h_mat.set_row(k, &r.transpose());
        }
        Polytope {
            h_mat,
            h_vec: DVector::from_vec(rhs),
        }
    }
}

/// Convex polyhedron in H-representation `{z : H z <= h}`. Not necessarily
/// bounded.
#[derive(Clone, Debug)]
pub struct Polytope {
    h_mat: DMatrix<f64>,
    h_vec: DVector<f64>,
}

impl Polytope {
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self> {
        if h_mat.nrows() != h_vec.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix has {} rows but rhs has {}",
                h_mat.nrows(),
                h_vec.len()
            )));
        }
        if h_mat.iter().any(|v| !v.is_finite()) || h_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "polytope data must be finite (drop rows instead of using infinities)".into(),
            ));
        }
        Ok(Polytope { h_mat, h_vec })
    }

    pub fn n_dims(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn h_mat(&self) -> &DMatrix<f64> {
        &self.h_mat
    }

    pub fn h_vec(&self) -> &DVector<f64> {
        &self.h_vec
    }

    /// Largest relative row violation at `z` (non-positive inside).
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        let vals = &self.h_mat * z;
        for i in 0..self.n_rows() {
            let scale = 1.0 + self.h_vec[i].abs();
            worst = worst.max((vals[i] - self.h_vec[i]) / scale);
        }
        if self.n_rows() == 0 {
            0.0
        } else {
            worst
        }
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.violation(z) <= tol
    }

    /// Stacks the rows of both polytopes (set intersection).
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        if self.n_dims() != other.n_dims() {
            return Err(Error::DimensionMismatch(
                "intersecting polytopes of different dimension".into(),
            ));
        }
        let mut h_mat = DMatrix::zeros(self.n_rows() + other.n_rows(), self.n_dims());
        h_mat
            .view_mut((0, 0), (self.n_rows(), self.n_dims()))
            .copy_from(&self.h_mat);
        h_mat
            .view_mut((self.n_rows(), 0), (other.n_rows(), self.n_dims()))
            .copy_from(&other.h_mat);
        let mut h_vec = DVector::zeros(self.n_rows() + other.n_rows());
        h_vec.rows_mut(0, self.n_rows()).copy_from(&self.h_vec);
        h_vec
            .rows_mut(self.n_rows(), other.n_rows())
            .copy_from(&other.h_vec);
        Ok(Polytope { h_mat, h_vec })
    }

    /// `max c'z` over the polytope.
    pub fn maximize(&self, c: &DVector<f64>) -> Result<LpSolution> {
        lp_max(c, &self.h_mat, &self.h_vec)
    }

    /// Support function value in direction `c` (`+inf` when unbounded).
    pub fn support(&self, c: &DVector<f64>) -> Result<f64> {
        match self.maximize(c) {
            Ok(sol) => Ok(sol.value),
            Err(Error::Unbounded) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Any point of the polytope; [`Error::Infeasible`] when empty.
    pub fn feasible_point(&self) -> Result<DVector<f64>> {
        feasible_point(&self.h_mat, &self.h_vec)
    }

    /// Pontryagin difference `self - m * w` for a bounded box `w`: every
    /// row rhs is tightened by the support of the mapped box.
    pub fn p_subtract(&self, m: &DMatrix<f64>, w: &BoxSet) -> Result<Polytope> {
        if !w.is_bounded() {
            return Err(Error::Validation(
                "Pontryagin difference needs a bounded subtrahend".into(),
            ));
        }
        if m.nrows() != self.n_dims() || m.ncols() != w.dim() {
            return Err(Error::DimensionMismatch(
                "map dimensions do not match the sets".into(),
            ));
        }
        let hm = &self.h_mat * m;
        let mut h_vec = self.h_vec.clone();
        for i in 0..self.n_rows() {
            h_vec[i] -= w.support(&hm.row(i).transpose());
        }
        Polytope::new(self.h_mat.clone(), h_vec)
    }

    /// Removes rows that do not change the set. Exact (per-row LP); errors
    /// with [`Error::EmptyPolytope`] when the set is empty.
    pub fn remove_redundant(&self) -> Result<Polytope> {
        if self.feasible_point().is_err() {
            return Err(Error::EmptyPolytope);
        }
        let mut keep: Vec<usize> = (0..self.n_rows()).collect();
        let mut k = 0usize;
        while k < keep.len() {
            let row_idx = keep[k];
            let others: Vec<usize> = keep
                .iter()
                .copied()
                .filter(|&r| r != row_idx)
                .collect();
            let sub_h = self.h_mat.select_rows(others.iter());
            let sub_b = DVector::from_iterator(others.len(), others.iter().map(|&r| self.h_vec[r]));
            let c = self.h_mat.row(row_idx).transpose();
            let redundant = match lp_max(&c, &sub_h, &sub_b) {
                Ok(sol) => sol.value <= self.h_vec[row_idx] + 1e-9 * (1.0 + self.h_vec[row_idx].abs()),
                Err(Error::Unbounded) => false,
                Err(Error::Infeasible) => return Err(Error::EmptyPolytope),
                Err(e) => return Err(e),
            };
            if redundant {
                keep.remove(k);
            } else {
                k += 1;
            }
        }
        let h_mat = self.h_mat.select_rows(keep.iter());
        let h_vec = DVector::from_iterator(keep.len(), keep.iter().map(|&r| self.h_vec[r]));
        Ok(Polytope { h_mat, h_vec })
    }

    /// Per-coordinate extent computed by LPs; infinite entries mark
    /// unbounded directions. Errors with [`Error::EmptyPolytope`] when the
    /// set is empty.
    pub fn bounding_box(&self) -> Result<BoxSet> {
        if self.feasible_point().is_err() {
            return Err(Error::EmptyPolytope);
        }
        let d = self.n_dims();
        let mut lo = DVector::from_element(d, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(d, f64::INFINITY);
        for i in 0..d {
            let mut c = DVector::zeros(d);
            c[i] = 1.0;
            match self.maximize(&c) {
                Ok(sol) => hi[i] = sol.value,
                Err(Error::Unbounded) => {}
                Err(e) => return Err(e),
            }
            c[i] = -1.0;
            match self.maximize(&c) {
                Ok(sol) => lo[i] = -sol.value,
                Err(Error::Unbounded) => {}
                Err(e) => return Err(e),
            }
        }
        BoxSet::new(lo, hi)
    }

    /// Monte Carlo volume estimate: uniform samples over the given bounding
    /// box (which must contain the set), seeded for reproducibility.
    pub fn volume_mc(&self, bounding: &BoxSet, samples: usize, seed: u64) -> Result<f64> {
        if bounding.dim() != self.n_dims() {
            return Err(Error::DimensionMismatch(
                "bounding box dimension does not match the polytope".into(),
            ));
        }
        if !bounding.is_bounded() {
            return Err(Error::Unbounded);
        }
        let d = self.n_dims();
        let mut box_vol = 1.0f64;
        for i in 0..d {
            box_vol *= bounding.hi[i] - bounding.lo[i];
        }
        if box_vol == 0.0 {
            return Ok(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        let mut z = DVector::zeros(d);
        for _ in 0..samples {
            for i in 0..d {
                z[i] = rng.gen_range(bounding.lo[i]..=bounding.hi[i]);
            }
            if self.contains(&z, 0.0) {
                hits += 1;
            }
        }
        Ok(box_vol * hits as f64 / samples as f64)
    }

    /// [`Polytope::volume_mc`] over the set's own bounding box. Errors when
    /// the set is empty or unbounded.
    pub fn volume_mc_auto(&self, samples: usize, seed: u64) -> Result<f64> {
        let bbox = self.bounding_box()?;
        self.volume_mc(&bbox, samples, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square() -> Polytope {
        BoxSet::symmetric(&[1.0, 1.0]).unwrap().to_polytope()
    }

    #[test]
    fn membership_and_violation() {
        let p = unit_square();
        assert!(p.contains(&DVector::from_row_slice(&[0.5, -0.5]), 0.0));
        assert!(!p.contains(&DVector::from_row_slice(&[1.5, 0.0]), 1e-9));
        assert_abs_diff_eq!(
            p.violation(&DVector::from_row_slice(&[1.5, 0.0])),
            0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn redundant_rows_are_removed() {
        let p = unit_square();
        let loose = Polytope::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
            DVector::from_row_slice(&[5.0, 10.0]),
        )
        .unwrap();
        let both = p.intersect(&loose).unwrap();
        let reduced = both.remove_redundant().unwrap();
        assert_eq!(reduced.n_rows(), 4);
        // Set unchanged.
        for &(x, y) in &[(0.99, 0.99), (-0.99, 0.99), (0.0, -1.01)] {
            let z = DVector::from_row_slice(&[x, y]);
            assert_eq!(both.contains(&z, 0.0), reduced.contains(&z, 0.0));
        }
    }

    #[test]
    fn empty_set_is_reported() {
        let p = Polytope::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_row_slice(&[-1.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(p.remove_redundant(), Err(Error::EmptyPolytope)));
        assert!(matches!(p.bounding_box(), Err(Error::EmptyPolytope)));
    }

    #[test]
    fn bounding_box_of_triangle() {
        // x >= 0, y >= 0, x + y <= 2.
        let p = Polytope::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[0.0, 0.0, 2.0]),
        )
        .unwrap();
        let b = p.bounding_box().unwrap();
        assert_abs_diff_eq!(b.lo()[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.hi()[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.hi()[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn monte_carlo_volume_of_triangle() {
        let p = Polytope::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[0.0, 0.0, 2.0]),
        )
        .unwrap();
        let v = p.volume_mc_auto(200_000, 7).unwrap();
        assert!((v - 2.0).abs() < 0.05, "volume estimate {v}");
        // Deterministic under the same seed.
        assert_eq!(v, p.volume_mc_auto(200_000, 7).unwrap());
        // An explicit (larger) bounding box gives the same set measure.
        let wide = BoxSet::from_bounds(&[(-1.0, 3.0), (-1.0, 3.0)]).unwrap();
        let v2 = p.volume_mc(&wide, 400_000, 11).unwrap();
        assert!((v2 - 2.0).abs() < 0.05, "volume estimate {v2}");
    }

    #[test]
    fn unbounded_direction_is_flagged() {
        // Half-plane x <= 1.
        let p = Polytope::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_row_slice(&[1.0]),
        )
        .unwrap();
        let b = p.bounding_box().unwrap();
        assert_eq!(b.hi()[0], 1.0);
        assert_eq!(b.hi()[1], f64::INFINITY);
        assert_eq!(b.lo()[0], f64::NEG_INFINITY);
        assert!(matches!(p.volume_mc_auto(100, 0), Err(Error::Unbounded)));
    }

    #[test]
    fn pontryagin_difference_tightens_rows() {
        let p = unit_square();
        let w = BoxSet::symmetric(&[0.2, 0.1]).unwrap();
        let shrunk = p
            .p_subtract(&DMatrix::identity(2, 2), &w)
            .unwrap();
        // x rows tightened by 0.2, y rows by 0.1.
        assert!(shrunk.contains(&DVector::from_row_slice(&[0.79, 0.89]), 0.0));
        assert!(!shrunk.contains(&DVector::from_row_slice(&[0.81, 0.0]), 1e-9));
        assert!(!shrunk.contains(&DVector::from_row_slice(&[0.0, 0.91]), 1e-9));
    }

    #[test]
    fn box_support_handles_infinite_sides() {
        let b = BoxSet::from_bounds(&[(-1.0, f64::INFINITY), (-2.0, 3.0)]).unwrap();
        let up = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(b.support(&up), f64::INFINITY);
        let down = DVector::from_row_slice(&[-1.0, 1.0]);
        assert_abs_diff_eq!(b.support(&down), 1.0 + 3.0, epsilon = 1e-12);
        // Zero coefficient must not poison the sum with 0 * inf.
        let none = DVector::from_row_slice(&[0.0, -1.0]);
        assert_abs_diff_eq!(b.support(&none), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn box_difference_keeps_infinite_sides() {
        let b = BoxSet::from_bounds(&[(f64::NEG_INFINITY, 2.0)]).unwrap();
        let w = BoxSet::symmetric(&[0.5]).unwrap();
        let out = b.p_subtract(&DMatrix::identity(1, 1), &w).unwrap();
        assert_eq!(out.lo()[0], f64::NEG_INFINITY);
        assert_abs_diff_eq!(out.hi()[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn box_vertices_enumerate_corners() {
        let b = BoxSet::from_bounds(&[(0.0, 1.0), (2.0, 3.0)]).unwrap();
        let vs = b.vertices().unwrap();
        assert_eq!(vs.len(), 4);
        assert!(vs
            .iter()
            .any(|v| (v - DVector::from_row_slice(&[1.0, 2.0])).norm() < 1e-12));
    }

    #[test]
    fn one_sided_box_to_polytope_skips_infinite_rows() {
        let b = BoxSet::from_bounds(&[(f64::NEG_INFINITY, 2.0), (-1.0, 1.0)]).unwrap();
        let p = b.to_polytope();
        assert_eq!(p.n_rows(), 3);
        assert!(p.contains(&DVector::from_row_slice(&[-1e9, 0.0]), 0.0));
    }
}
