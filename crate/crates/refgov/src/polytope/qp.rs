//! Small dense convex quadratic programming by a primal active-set method.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-8;
const MULT_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-11;

/// Minimizes `0.5 x'Qx + q'x` subject to `A x <= b`, starting from the
/// feasible point `x0`.
///
/// `Q` must be symmetric positive definite. The method walks between
/// equality-constrained subproblems, adding blocking rows and dropping rows
/// with negative multipliers (smallest index first, so the path is
/// deterministic).
pub fn qp_min(
    q_mat: &DMatrix<f64>,
    q_vec: &DVector<f64>,
    a_mat: &DMatrix<f64>,
    b_vec: &DVector<f64>,
    x0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let nv = q_vec.len();
    let m = a_mat.nrows();
    if q_mat.nrows() != nv || q_mat.ncols() != nv {
        return Err(Error::DimensionMismatch("Q must be n x n".into()));
    }
    if a_mat.ncols() != nv || b_vec.len() != m || x0.len() != nv {
        return Err(Error::DimensionMismatch(
            "QP constraint dimensions do not match".into(),
        ));
    }
    let scale = 1.0 + b_vec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let slack0 = b_vec - a_mat * x0;
    if slack0.iter().any(|&s| s < -FEAS_TOL * scale) {
        return Err(Error::Validation(
            "QP starting point violates the constraints".into(),
        ));
    }

    let mut x = x0.clone();
    let mut working: Vec<usize> = Vec::new();
    let max_iters = 100 * (m + nv) + 200;
    for _ in 0..max_iters {
        let (x_eq, mu) = match solve_eqp(q_mat, q_vec, a_mat, b_vec, &working) {
            Some(sol) => sol,
            None => {
                // Dependent working set (degenerate vertex); discard the most
                // recently added row and retry.
                working.pop();
                continue;
            }
        };
        let step = &x_eq - &x;
        if step.norm() <= STEP_TOL * (1.0 + x.norm()) {
            // Stationary on the working set: check multiplier signs.
            let mut drop_pos: Option<usize> = None;
            let mut most_negative = -MULT_TOL;
            for (pos, &mu_i) in mu.iter().enumerate() {
                if mu_i < most_negative {
                    most_negative = mu_i;
                    drop_pos = Some(pos);
                }
            }
            match drop_pos {
                None => return Ok(x_eq),
                Some(pos) => {
                    working.remove(pos);
                }
            }
            continue;
        }
        // Longest feasible step toward the subproblem solution.
        let mut alpha = 1.0f64;
        let mut blocker: Option<usize> = None;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let denom = a_mat.row(i).transpose().dot(&step);
            if denom > STEP_TOL {
                let room = b_vec[i] - a_mat.row(i).transpose().dot(&x);
                let limit = (room / denom).max(0.0);
                if limit < alpha - 1e-12 {
                    alpha = limit;
                    blocker = Some(i);
                }
            }
        }
        x += step * alpha;
        if let Some(i) = blocker {
            working.push(i);
        } else {
            x = x_eq;
        }
    }
    Err(Error::Validation("QP iteration limit exceeded".into()))
}

/// Solves the equality-constrained subproblem
/// `min 0.5 x'Qx + q'x  s.t.  A_W x = b_W` via its KKT system, returning the
/// minimizer and the multipliers of the working rows. `None` when the KKT
/// matrix is singular (dependent working set).
fn solve_eqp(
    q_mat: &DMatrix<f64>,
    q_vec: &DVector<f64>,
    a_mat: &DMatrix<f64>,
    b_vec: &DVector<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let nv = q_vec.len();
    let nw = working.len();
    let mut kkt = DMatrix::<f64>::zeros(nv + nw, nv + nw);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(q_mat);
    for (k, &i) in working.iter().enumerate() {
        for j in 0..nv {
            kkt[(nv + k, j)] = a_mat[(i, j)];
            kkt[(j, nv + k)] = a_mat[(i, j)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(nv + nw);
    for j in 0..nv {
        rhs[j] = -q_vec[j];
    }
    for (k, &i) in working.iter().enumerate() {
        rhs[nv + k] = b_vec[i];
    }
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    let x = sol.rows(0, nv).into_owned();
    let mu = sol.rows(nv, nw).into_owned();
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((x, mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: usize, cols: usize, d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, d)
    }

    fn vec(d: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(d)
    }

    #[test]
    fn unconstrained_minimum_inside_region() {
        // min (x-1)^2 + (y+2)^2 inside a huge box.
        let q = mat(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let lin = vec(&[-2.0, 4.0]);
        let a = mat(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = vec(&[10.0, 10.0, 10.0, 10.0]);
        let x = qp_min(&q, &lin, &a, &b, &vec(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], -2.0, epsilon = 1e-9);
    }

    #[test]
    fn equal_weights_split_the_budget() {
        // min (u1-1)^2 + (u2-1)^2 s.t. u1+u2 <= 1, u >= 0 -> (0.5, 0.5).
        let q = mat(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let lin = vec(&[-2.0, -2.0]);
        let a = mat(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = vec(&[1.0, 0.0, 0.0]);
        let x = qp_min(&q, &lin, &a, &b, &vec(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn unequal_weights_favor_the_heavier_term() {
        // min 4(x-1)^2 + (y-1)^2 s.t. x+y <= 1 -> (0.8, 0.2).
        let q = mat(2, 2, &[8.0, 0.0, 0.0, 2.0]);
        let lin = vec(&[-8.0, -2.0]);
        let a = mat(1, 2, &[1.0, 1.0]);
        let b = vec(&[1.0]);
        let x = qp_min(&q, &lin, &a, &b, &vec(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(x[0], 0.8, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 0.2, epsilon = 1e-9);
    }

    #[test]
    fn active_bound_is_respected() {
        // min (x-2)^2 s.t. x <= 1 -> x = 1.
        let q = mat(1, 1, &[2.0]);
        let lin = vec(&[-4.0]);
        let a = mat(1, 1, &[1.0]);
        let b = vec(&[1.0]);
        let x = qp_min(&q, &lin, &a, &b, &vec(&[0.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_infeasible_start() {
        let q = mat(1, 1, &[2.0]);
        let lin = vec(&[0.0]);
        let a = mat(1, 1, &[1.0]);
        let b = vec(&[-1.0]);
        assert!(qp_min(&q, &lin, &a, &b, &vec(&[0.0])).is_err());
    }

    #[test]
    fn walks_around_a_degenerate_corner() {
        // Redundant constraints meeting at (1,1); minimum pushed into the
        // corner.
        let q = mat(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let lin = vec(&[-6.0, -6.0]); // pulls toward (3,3)
        let a = mat(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = vec(&[1.0, 1.0, 2.0]);
        let x = qp_min(&q, &lin, &a, &b, &vec(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-8);
    }
}
