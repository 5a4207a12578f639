//! Dense linear programming via a revised simplex method on the dual.
//!
//! All LPs in this crate have the shape `max c'z  s.t.  H z <= h` with few
//! variables and possibly many rows. The dual, `min h'lam  s.t.
//! H' lam = c, lam >= 0`, has a basis of size equal to the primal dimension,
//! so the simplex method runs on small basis matrices regardless of the row
//! count. The primal maximizer is recovered from the final simplex
//! multipliers, which are primal feasible and complementary by construction.
//!
//! Bland's pivoting rule is used throughout, making the solver deterministic
//! and cycle-free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivot magnitude below which a direction entry is treated as zero.
const PIVOT_TOL: f64 = 1e-11;
/// Relative reduced-cost threshold for entering-column selection.
const RC_TOL: f64 = 1e-9;
/// Phase-1 residual above which the dual is declared infeasible.
const FEAS_TOL: f64 = 1e-7;

/// Optimal value and a maximizer of `max c'z s.t. Hz <= h`.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub value: f64,
    pub argmax: DVector<f64>,
}

/// Solves `max c'z  s.t.  h_mat * z <= h_vec`.
///
/// Errors with [`Error::Infeasible`] when no feasible point exists and
/// [`Error::Unbounded`] when the objective is unbounded above.
pub fn lp_max(c: &DVector<f64>, h_mat: &DMatrix<f64>, h_vec: &DVector<f64>) -> Result<LpSolution> {
    if h_mat.ncols() != c.len() {
        return Err(Error::DimensionMismatch(format!(
            "LP has {} columns but objective has length {}",
            h_mat.ncols(),
            c.len()
        )));
    }
    if h_mat.nrows() != h_vec.len() {
        return Err(Error::DimensionMismatch(format!(
            "LP has {} rows but rhs has length {}",
            h_mat.nrows(),
            h_vec.len()
        )));
    }
    let (h_s, b_s) = equilibrate(h_mat, h_vec);
    solve_robust(c, &h_s, &b_s, true)
}

/// Returns a point satisfying `h_mat * z <= h_vec`, or
/// [`Error::Infeasible`] when the system has no solution.
pub fn feasible_point(h_mat: &DMatrix<f64>, h_vec: &DVector<f64>) -> Result<DVector<f64>> {
    // Every set this crate builds is anchored at the origin, so check it
    // before spending a simplex run on the question.
    if h_vec.iter().all(|&v| v >= 0.0) {
        return Ok(DVector::zeros(h_mat.ncols()));
    }
    let (h_s, b_s) = equilibrate(h_mat, h_vec);
    let (c_aux, h_aux, b_aux) = auxiliary_problem(&h_s, &b_s);
    let sol = solve_robust(&c_aux, &h_aux, &b_aux, false)?;
    let scale = 1.0 + b_s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if sol.value < -FEAS_TOL * scale {
        return Err(Error::Infeasible);
    }
    Ok(sol.argmax.rows(0, h_mat.ncols()).into_owned())
}

/// Runs the simplex and, when it fails for a numerical reason (singular
/// basis, stalled phase), retries with a deterministic hair of perturbation
/// on the rows and their bounds. Exactly collinear rows (every two-sided
/// constraint contributes a `+/-` pair) make degenerate vertices where the
/// dual basis can become exactly singular; the perturbation breaks that
/// degeneracy while staying orders of magnitude below every tolerance used
/// by the callers. Clean solves are untouched.
fn solve_robust(
    c: &DVector<f64>,
    h_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
    disambiguate: bool,
) -> Result<LpSolution> {
    let mut last = match solve(c, h_mat, h_vec, disambiguate) {
        Err(Error::Validation(e)) => Error::Validation(e),
        other => return other,
    };
    for eps in [1e-12, 1e-11, 1e-10] {
        let mut h_j = h_mat.clone();
        let mut b_j = h_vec.clone();
        // Index-dependent factors in [0.5, 1.5) so no two entries move by
        // the same amount.
        let frac = |k: usize| 0.5 + (k as f64 * 0.618_033_988_749_894_9).fract();
        for i in 0..h_j.nrows() {
            for j in 0..h_j.ncols() {
                h_j[(i, j)] += eps * frac(i * h_j.ncols() + j + 1);
            }
            // Relax the bound so strictly feasible points stay feasible.
            b_j[i] += 10.0 * eps * (1.0 + h_vec[i].abs()) * frac(i + 1);
        }
        match solve(c, &h_j, &b_j, disambiguate) {
            Err(Error::Validation(e)) => last = Error::Validation(e),
            other => return other,
        }
    }
    Err(last)
}

/// Scales each row to unit infinity norm. The feasible set is unchanged,
/// and so is the recovered maximizer: the simplex multipliers solve
/// `a_j' y = h_j` row by row, which is invariant under row scaling. Without
/// this, rows of widely different magnitude (the set recursions produce
/// geometrically decaying rows) make the dual bases arbitrarily
/// ill-conditioned.
fn equilibrate(h_mat: &DMatrix<f64>, h_vec: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = h_mat.clone();
    let mut b = h_vec.clone();
    for i in 0..h.nrows() {
        let s = h.row(i).amax();
        if s > 0.0 && s.is_finite() {
            for j in 0..h.ncols() {
                h[(i, j)] /= s;
            }
            b[i] /= s;
        }
    }
    (h, b)
}

/// Feasibility LP: `max -t  s.t.  Hz - t <= h, -t <= 0`; optimum 0 iff the
/// original system is feasible.
fn auxiliary_problem(
    h_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let m = h_mat.nrows();
    let n = h_mat.ncols();
    let mut h_aux = DMatrix::<f64>::zeros(m + 1, n + 1);
    h_aux.view_mut((0, 0), (m, n)).copy_from(h_mat);
    for i in 0..m {
        h_aux[(i, n)] = -1.0;
    }
    h_aux[(m, n)] = -1.0;
    let mut b_aux = DVector::<f64>::zeros(m + 1);
    b_aux.rows_mut(0, m).copy_from(h_vec);
    let mut c_aux = DVector::<f64>::zeros(n + 1);
    c_aux[n] = -1.0;
    (c_aux, h_aux, b_aux)
}

fn solve(
    c: &DVector<f64>,
    h_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
    disambiguate: bool,
) -> Result<LpSolution> {
    let m = h_mat.nrows();
    let n = h_mat.ncols();
    if n == 0 {
        return Err(Error::Validation("LP with no variables".into()));
    }
    if m == 0 {
        if c.iter().all(|v| v.abs() == 0.0) {
            return Ok(LpSolution {
                value: 0.0,
                argmax: DVector::zeros(n),
            });
        }
        return Err(Error::Unbounded);
    }

    let mut tab = Tableau {
        h_mat,
        signs: c.map(|v| if v >= 0.0 { 1.0 } else { -1.0 }),
    };

    // Phase 1: artificial basis, drive the artificials to zero.
    let mut basis: Vec<usize> = (m..m + n).collect();
    let mut lambda = c.map(f64::abs);
    let phase1_costs: Vec<f64> = (0..m + n).map(|j| if j < m { 0.0 } else { 1.0 }).collect();
    match run_phase(&tab, &phase1_costs, m + n, &mut basis, &mut lambda)? {
        PhaseOutcome::Optimal => {}
        PhaseOutcome::Unbounded => {
            // Phase-1 objective is bounded below by zero; cannot happen.
            return Err(Error::Validation("phase-1 simplex reported unbounded".into()));
        }
    }
    let residual: f64 = basis
        .iter()
        .zip(lambda.iter())
        .filter(|(&j, _)| j >= m)
        .map(|(_, &v)| v)
        .sum();
    let c_scale = 1.0 + c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if residual > FEAS_TOL * c_scale {
        // Dual infeasible: the primal is unbounded or infeasible.
        if !disambiguate {
            return Err(Error::Infeasible);
        }
        let (c_aux, h_aux, b_aux) = auxiliary_problem(h_mat, h_vec);
        let aux = solve(&c_aux, &h_aux, &b_aux, false)?;
        let scale = 1.0 + h_vec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        return if aux.value >= -FEAS_TOL * scale {
            Err(Error::Unbounded)
        } else {
            Err(Error::Infeasible)
        };
    }

    // Pivot any remaining (zero-valued) artificials out of the basis;
    // equations whose artificial cannot leave are redundant and get dropped.
    let mut stuck_eqs: Vec<usize> = Vec::new();
    for pos in 0..n {
        if basis[pos] < m {
            continue;
        }
        let b_mat = tab.basis_matrix(&basis);
        let lu = b_mat.lu();
        let mut replaced = false;
        for j in 0..m {
            if basis.contains(&j) {
                continue;
            }
            if let Some(d) = lu.solve(&tab.column(j)) {
                if d[pos].abs() > 1e-8 {
                    basis[pos] = j;
                    lambda[pos] = 0.0;
                    replaced = true;
                    break;
                }
            }
        }
        if !replaced {
            stuck_eqs.push(basis[pos] - m);
        }
    }
    if !stuck_eqs.is_empty() {
        return solve_reduced(c, h_mat, h_vec, &stuck_eqs, disambiguate);
    }

    // Phase 2 over the original columns only.
    let phase2_costs: Vec<f64> = (0..m).map(|j| h_vec[j]).collect();
    match run_phase(&tab, &phase2_costs, m, &mut basis, &mut lambda)? {
        PhaseOutcome::Optimal => {}
        PhaseOutcome::Unbounded => return Err(Error::Infeasible),
    }

    // Simplex multipliers of the optimal dual basis = primal maximizer.
    tab.signs = DVector::zeros(0); // artificials are gone
    let b_mat = tab.basis_matrix(&basis);
    let cost_b = DVector::from_iterator(n, basis.iter().map(|&j| phase2_costs[j]));
    let y = b_mat
        .transpose()
        .lu()
        .solve(&cost_b)
        .ok_or_else(|| Error::Validation("singular optimal basis".into()))?;
    Ok(LpSolution {
        value: c.dot(&y),
        argmax: y,
    })
}

/// Re-solves with the listed equations (primal variables) removed; the
/// dropped variables are provably irrelevant and are reported as zero.
fn solve_reduced(
    c: &DVector<f64>,
    h_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
    dropped: &[usize],
    disambiguate: bool,
) -> Result<LpSolution> {
    let n = h_mat.ncols();
    let keep: Vec<usize> = (0..n).filter(|k| !dropped.contains(k)).collect();
    if keep.is_empty() {
        // Constraints do not involve any variable: feasibility is h >= 0
        // (taking z = 0); the objective is identically c'z with free z only
        // through dropped columns, which are known to be zero directions.
        let feasible = h_vec.iter().all(|&v| v >= -FEAS_TOL);
        return if feasible {
            Ok(LpSolution {
                value: 0.0,
                argmax: DVector::zeros(n),
            })
        } else {
            Err(Error::Infeasible)
        };
    }
    let sub_h = h_mat.select_columns(keep.iter());
    let sub_c = DVector::from_iterator(keep.len(), keep.iter().map(|&k| c[k]));
    let sub = solve(&sub_c, &sub_h, h_vec, disambiguate)?;
    let mut argmax = DVector::zeros(n);
    for (i, &k) in keep.iter().enumerate() {
        argmax[k] = sub.argmax[i];
    }
    Ok(LpSolution {
        value: sub.value,
        argmax,
    })
}

struct Tableau<'a> {
    h_mat: &'a DMatrix<f64>,
    /// Signs of the artificial columns (empty once artificials are retired).
    signs: DVector<f64>,
}

impl Tableau<'_> {
    /// Column `j` of the dual constraint matrix `[H' | S]`.
    fn column(&self, j: usize) -> DVector<f64> {
        let m = self.h_mat.nrows();
        let n = self.h_mat.ncols();
        if j < m {
            self.h_mat.row(j).transpose()
        } else {
            let mut e = DVector::zeros(n);
            e[j - m] = self.signs[j - m];
            e
        }
    }

    fn basis_matrix(&self, basis: &[usize]) -> DMatrix<f64> {
        let n = basis.len();
        let mut b = DMatrix::zeros(n, n);
        for (i, &j) in basis.iter().enumerate() {
            b.set_column(i, &self.column(j));
        }
        b
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

fn run_phase(
    tab: &Tableau,
    costs: &[f64],
    n_cols: usize,
    basis: &mut [usize],
    lambda: &mut DVector<f64>,
) -> Result<PhaseOutcome> {
    let n = basis.len();
    let max_iters = 200 * (n_cols + n) + 1000;
    let mut in_basis = vec![false; n_cols + n];
    for &j in basis.iter() {
        in_basis[j] = true;
    }
    for _ in 0..max_iters {
        let b_mat = tab.basis_matrix(basis);
        let lu_t = b_mat.transpose().lu();
        let cost_b = DVector::from_iterator(n, basis.iter().map(|&j| costs[j]));
        let y = lu_t
            .solve(&cost_b)
            .ok_or_else(|| Error::Validation("singular basis in simplex".into()))?;

        // Bland's rule: smallest-index column with negative reduced cost.
        let mut entering = None;
        for j in 0..n_cols {
            if in_basis[j] {
                continue;
            }
            let rc = costs[j] - tab.column(j).dot(&y);
            if rc < -RC_TOL * costs[j].abs().max(1.0) {
                entering = Some(j);
                break;
            }
        }
        let Some(j_in) = entering else {
            return Ok(PhaseOutcome::Optimal);
        };

        let lu = b_mat.lu();
        let d = lu
            .solve(&tab.column(j_in))
            .ok_or_else(|| Error::Validation("singular basis in simplex".into()))?;

        // Ratio test. Among near-tied ratios prefer the largest pivot (the
        // recursion feeding these LPs produces nearly collinear rows, and a
        // noise-level pivot would wreck the basis conditioning); fall back
        // to smallest basic column index so degenerate ties stay
        // deterministic.
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for i in 0..n {
            if d[i] > PIVOT_TOL {
                let ratio = lambda[i].max(0.0) / d[i];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < theta - 1e-12
                            || (ratio < theta + 1e-12
                                && (d[i] > 10.0 * d[l]
                                    || (d[i] > 0.1 * d[l] && basis[i] < basis[l])))
                    }
                };
                if better {
                    theta = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(i_out) = leave else {
            return Ok(PhaseOutcome::Unbounded);
        };
        let theta = theta.max(0.0);
        for i in 0..n {
            lambda[i] = (lambda[i] - theta * d[i]).max(0.0);
        }
        lambda[i_out] = theta;
        in_basis[basis[i_out]] = false;
        in_basis[j_in] = true;
        basis[i_out] = j_in;
    }
    Err(Error::Validation("simplex iteration limit exceeded".into()))
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
    fn maximizes_over_a_box() {
        // max x + 2y over [-1,1]^2 -> 3 at (1, 1).
        let h = mat(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = vec(&[1.0, 1.0, 1.0, 1.0]);
        let sol = lp_max(&vec(&[1.0, 2.0]), &h, &b).unwrap();
        assert_abs_diff_eq!(sol.value, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.argmax[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.argmax[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn maximizes_over_a_simplex() {
        // max 3x + y over {x,y >= 0, x + y <= 1} -> 3 at (1, 0).
        let h = mat(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let b = vec(&[0.0, 0.0, 1.0]);
        let sol = lp_max(&vec(&[3.0, 1.0]), &h, &b).unwrap();
        assert_abs_diff_eq!(sol.value, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.argmax[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.argmax[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn detects_unbounded() {
        // max x s.t. -x <= 0 (x >= 0, unbounded above).
        let h = mat(1, 1, &[-1.0]);
        let b = vec(&[0.0]);
        assert!(matches!(
            lp_max(&vec(&[1.0]), &h, &b),
            Err(Error::Unbounded)
        ));
    }

    #[test]
    fn detects_infeasible() {
        // x <= -1 and -x <= 0: empty.
        let h = mat(2, 1, &[1.0, -1.0]);
        let b = vec(&[-1.0, 0.0]);
        assert!(matches!(
            lp_max(&vec(&[1.0]), &h, &b),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn handles_variables_missing_from_constraints() {
        // y is unconstrained but has zero cost: optimum in x alone.
        let h = mat(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let b = vec(&[2.0, 2.0]);
        let sol = lp_max(&vec(&[1.0, 0.0]), &h, &b).unwrap();
        assert_abs_diff_eq!(sol.value, 2.0, epsilon = 1e-9);
        // Unconstrained free variable with positive cost: unbounded.
        assert!(matches!(
            lp_max(&vec(&[0.0, 1.0]), &h, &b),
            Err(Error::Unbounded)
        ));
    }

    #[test]
    fn degenerate_vertices_do_not_cycle() {
        // Four redundant rows meeting at the same vertex (1,1).
        let h = mat(
            6,
            2,
            &[
                1.0, 0.0, //
                0.0, 1.0, //
                1.0, 1.0, //
                2.0, 2.0, //
                1.0, 2.0, //
                2.0, 1.0,
            ],
        );
        let b = vec(&[1.0, 1.0, 2.0, 4.0, 3.0, 3.0]);
        let sol = lp_max(&vec(&[1.0, 1.0]), &h, &b).unwrap();
        assert_abs_diff_eq!(sol.value, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn feasible_point_satisfies_constraints() {
        let h = mat(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let b = vec(&[-0.2, -0.2, 1.0]);
        let z = feasible_point(&h, &b).unwrap();
        let residual = &h * &z - &b;
        assert!(residual.iter().all(|&v| v <= 1e-7));
    }

    #[test]
    fn feasible_point_rejects_empty_system() {
        let h = mat(2, 1, &[1.0, -1.0]);
        let b = vec(&[-1.0, 0.0]);
        assert!(matches!(feasible_point(&h, &b), Err(Error::Infeasible)));
    }

    #[test]
    fn shifted_box_with_negative_rhs() {
        // Box [2,3] x [-3,-2]: max x - y = 3 - (-3) = 6.
        let h = mat(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = vec(&[3.0, -2.0, -2.0, 3.0]);
        let sol = lp_max(&vec(&[1.0, -1.0]), &h, &b).unwrap();
        assert_abs_diff_eq!(sol.value, 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.argmax[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.argmax[1], -3.0, epsilon = 1e-9);
    }
}
