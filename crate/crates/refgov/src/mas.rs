//! Maximal admissible sets: all `(x0, u0)` pairs whose output trajectory
//! under the constant input `u0` stays inside the constraint set forever.
//!
//! The nominal construction collects the halfspaces `y(t) in Y` for
//! `t = 0..t*` together with the tightened steady-state rows
//! `G0 u0 in (1-eps) Y`; the tightening makes the set finitely determined, and
//! `t*` is detected by per-row redundancy LPs. The robust variant shrinks the
//! constraint set ahead of time against a bounded disturbance box, and the
//! pure-delay variant produces the state-free set used by identity-method
//! decoupling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polytope::{BoxSet, Polytope};
use crate::sys::LinearSystem;

/// Default steady-state tightening factor.
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Default horizon cap for finite-determination detection.
pub const DEFAULT_T_MAX: usize = 500;

/// Slack under which a generated row counts as redundant.
const REDUNDANT_TOL: f64 = 1e-9;

/// A maximal admissible set over stacked `(x0, u0)` coordinates, with the
/// construction metadata needed to interpret it.
#[derive(Clone, Debug)]
pub struct Mas {
    poly: Polytope,
    n_x: usize,
    n_u: usize,
    t_star: usize,
    epsilon: f64,
    /// Index of the decoupled channel this set belongs to, when built
    /// per-channel.
    channel: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct MasHeader {
    epsilon: f64,
    t_star: usize,
    n_x: usize,
    n_u: usize,
    channel: Option<usize>,
}

impl Mas {
    /// Wraps an already-built polytope over stacked `(x0, u0)` coordinates.
    pub fn from_parts(
        poly: Polytope,
        n_x: usize,
        n_u: usize,
        t_star: usize,
        epsilon: f64,
    ) -> Result<Mas> {
        if poly.n_dims() != n_x + n_u {
            return Err(Error::DimensionMismatch(format!(
                "polytope dimension {} does not match n_x + n_u = {}",
                poly.n_dims(),
                n_x + n_u
            )));
        }
        Ok(Mas {
            poly,
            n_x,
            n_u,
            t_star,
            epsilon,
            channel: None,
        })
    }

    pub fn polytope(&self) -> &Polytope {
        &self.poly
    }

    pub fn n_states(&self) -> usize {
        self.n_x
    }

    pub fn n_inputs(&self) -> usize {
        self.n_u
    }

    /// Horizon at which newly generated rows all became redundant.
    pub fn t_star(&self) -> usize {
        self.t_star
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn channel(&self) -> Option<usize> {
        self.channel
    }

    pub fn with_channel(mut self, channel: usize) -> Self {
        self.channel = Some(channel);
        self
    }

    /// State-coefficient block of the constraint matrix.
    pub fn h_x(&self) -> DMatrix<f64> {
        self.poly.h_mat().columns(0, self.n_x).into_owned()
    }

    /// Input-coefficient block of the constraint matrix.
    pub fn h_u(&self) -> DMatrix<f64> {
        self.poly.h_mat().columns(self.n_x, self.n_u).into_owned()
    }

    pub fn h_vec(&self) -> &DVector<f64> {
        self.poly.h_vec()
    }

    /// Membership of the stacked pair.
    pub fn contains(&self, x: &DVector<f64>, u: &DVector<f64>, tol: f64) -> bool {
        self.poly.contains(&stack(x, u), tol)
    }

    /// Largest relative row violation of the stacked pair.
    pub fn violation(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.poly.violation(&stack(x, u))
    }

    /// True when no row involves the state coordinates (e.g. the pure-delay
    /// set), so admissibility depends on `u0` alone.
    pub fn is_state_free(&self) -> bool {
        self.poly
            .h_mat()
            .columns(0, self.n_x)
            .iter()
            .all(|v| v.abs() <= 1e-14)
    }

    /// Text form: a JSON metadata header line followed by one `H | h` row
    /// per line. Numbers use the shortest round-trippable decimal form.
    pub fn to_text(&self) -> String {
        let header = MasHeader {
            epsilon: self.epsilon,
            t_star: self.t_star,
            n_x: self.n_x,
            n_u: self.n_u,
            channel: self.channel,
        };
        let mut out = format!(
            "# {}\n",
            serde_json::to_string(&header).expect("header serializes")
        );
        for i in 0..self.poly.n_rows() {
            let row: Vec<String> = self
                .poly
                .h_mat()
                .row(i)
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            out.push_str(&row.join(" "));
            out.push_str(&format!(" | {}\n", self.poly.h_vec()[i]));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Mas> {
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::Parse("empty admissible-set file".into()))?;
        let head = head
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("missing metadata header line".into()))?
            .trim();
        let header: MasHeader =
            serde_json::from_str(head).map_err(|e| Error::Parse(format!("bad header: {e}")))?;
        let dim = header.n_x + header.n_u;
        let mut coeffs: Vec<f64> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, r) = line
                .split_once('|')
                .ok_or_else(|| Error::Parse(format!("row {} missing '|'", ln + 2)))?;
            let vals: Vec<f64> = lhs
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?;
            if vals.len() != dim {
                return Err(Error::Parse(format!(
                    "row {} has {} coefficients, expected {}",
                    ln + 2,
                    vals.len(),
                    dim
                )));
            }
            coeffs.extend_from_slice(&vals);
            rhs.push(
                r.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?,
            );
        }
        let n_rows = rhs.len();
        let poly = Polytope::new(
            DMatrix::from_row_slice(n_rows, dim, &coeffs),
            DVector::from_vec(rhs),
        )?;
        Ok(Mas {
            poly,
            n_x: header.n_x,
            n_u: header.n_u,
            t_star: header.t_star,
            epsilon: header.epsilon,
            channel: header.channel,
        })
    }
}

fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Shrinking constraint-set sequence `Y_0 = Y - Dw W`,
/// `Y_{t+1} = Y_t - C A^t Bw W` used by the robust construction.
#[derive(Clone, Debug)]
pub struct YtSequence {
    sets: Vec<BoxSet>,
}

impl YtSequence {
    /// Runs the recursion for `t = 0..=t_max`. When the system has no
    /// disturbance channel, every set equals `Y`.
    ///
    /// Errors with [`Error::EmptyRobustMas`] when a set collapses.
    pub fn build(sys: &LinearSystem, y: &BoxSet, w: &BoxSet, t_max: usize) -> Result<Self> {
        let mut sets = Vec::with_capacity(t_max + 1);
        let empty = |e| match e {
            Error::EmptyPolytope => Error::EmptyRobustMas,
            other => other,
        };
        let y0 = match &sys.d_w {
            Some(dw) => y.p_subtract(dw, w).map_err(empty)?,
            None => y.clone(),
        };
        sets.push(y0);
        if let Some(bw) = &sys.b_w {
            let n = sys.n_states();
            let mut at = DMatrix::<f64>::identity(n, n);
            for _ in 0..t_max {
                let gain = &sys.c * &at * bw;
                let next = sets
                    .last()
                    .unwrap()
                    .p_subtract(&gain, w)
                    .map_err(empty)?;
                sets.push(next);
                at = &sys.a * at;
            }
        } else {
            for _ in 0..t_max {
                sets.push(sets.last().unwrap().clone());
            }
        }
        Ok(YtSequence { sets })
    }

    pub fn get(&self, t: usize) -> &BoxSet {
        &self.sets[t.min(self.sets.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Rows `g'x0 + s'u0 <= rhs` for `y(t) in Y_t` at a fixed `t`, given the
/// output predictor pair `(C A^t, C P_t B + D)`.
fn time_rows(
    c_at: &DMatrix<f64>,
    s_t: &DMatrix<f64>,
    y_t: &BoxSet,
    rows: &mut Vec<f64>,
    rhs: &mut Vec<f64>,
) {
    let p = c_at.nrows();
    let n_x = c_at.ncols();
    let n_u = s_t.ncols();
    for i in 0..p {
        if y_t.hi()[i].is_finite() {
            for j in 0..n_x {
                rows.push(c_at[(i, j)]);
            }
            for j in 0..n_u {
                rows.push(s_t[(i, j)]);
            }
            rhs.push(y_t.hi()[i]);
        }
        if y_t.lo()[i].is_finite() {
            for j in 0..n_x {
                rows.push(-c_at[(i, j)]);
            }
            for j in 0..n_u {
                rows.push(-s_t[(i, j)]);
            }
            rhs.push(-y_t.lo()[i]);
        }
    }
}

/// Steady-state rows `G0 u0 in (1-eps) Y_term`, zero-padded over the state.
fn steady_rows(g0: &DMatrix<f64>, y_term: &BoxSet, epsilon: f64, n_x: usize) -> (Vec<f64>, Vec<f64>) {
    let tight = y_term.scale(1.0 - epsilon);
    let p = g0.nrows();
    let n_u = g0.ncols();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..p {
        if tight.hi()[i].is_finite() {
            rows.extend(std::iter::repeat(0.0).take(n_x));
            for j in 0..n_u {
                rows.push(g0[(i, j)]);
            }
            rhs.push(tight.hi()[i]);
        }
        if tight.lo()[i].is_finite() {
            rows.extend(std::iter::repeat(0.0).take(n_x));
            for j in 0..n_u {
                rows.push(-g0[(i, j)]);
            }
            rhs.push(-tight.lo()[i]);
        }
    }
    (rows, rhs)
}

fn validate_constraints(sys: &LinearSystem, y: &BoxSet) -> Result<()> {
    if y.dim() != sys.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "constraint set has dimension {}, system has {} outputs",
            y.dim(),
            sys.n_outputs()
        )));
    }
    for i in 0..y.dim() {
        if !(y.lo()[i] < 0.0 && y.hi()[i] > 0.0) {
            return Err(Error::Validation(format!(
                "constraint set must contain the origin in its interior \
                 (output {} has bounds [{}, {}])",
                i,
                y.lo()[i],
                y.hi()[i]
            )));
        }
    }
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::UnstableSystem(rho));
    }
    Ok(())
}

/// Builds the maximal admissible set of a stable system for the constraint
/// box `Y`:
/// rows `G0 u0 in (1-epsilon) Y` plus `y(t) in Y` for `t = 0..=t*`, where
/// `t*` is the first step at which every new row is redundant. The result is
/// passed through redundancy removal.
pub fn build_mas(sys: &LinearSystem, y: &BoxSet, epsilon: f64, t_max: usize) -> Result<Mas> {
    let yt = YtSequence {
        sets: vec![y.clone()],
    };
    build_core(sys, &yt, y, epsilon, t_max, false)
}

/// Robust variant: constraint sets shrink by the worst-case effect of the
/// bounded disturbance box `w` before the rows are generated (`Y_t`
/// recursion), and the steady-state rows use the tightened set at the
/// detected horizon.
pub fn build_robust_mas(
    sys: &LinearSystem,
    y: &BoxSet,
    w: &BoxSet,
    epsilon: f64,
    t_max: usize,
) -> Result<Mas> {
    if !w.is_bounded() {
        return Err(Error::Validation("disturbance box must be bounded".into()));
    }
    validate_constraints(sys, y)?;
    let yt = YtSequence::build(sys, y, w, t_max)?;
    build_core(sys, &yt, y, epsilon, t_max, true)
}

fn build_core(
    sys: &LinearSystem,
    yt: &YtSequence,
    y: &BoxSet,
    epsilon: f64,
    t_max: usize,
    robust: bool,
) -> Result<Mas> {
    validate_constraints(sys, y)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Validation(format!(
            "tightening factor must be in (0, 1), got {epsilon}"
        )));
    }
    let n_x = sys.n_states();
    let n_u = sys.n_inputs();
    let dim = n_x + n_u;
    let g0 = sys.dc_gain()?;

    // Accumulated time rows (flat, row-major) and their bounds.
    let mut acc_rows: Vec<f64> = Vec::new();
    let mut acc_rhs: Vec<f64> = Vec::new();
    // A^t and P_t = sum_{k<t} A^k, advanced incrementally.
    let mut at = DMatrix::<f64>::identity(n_x, n_x);
    let mut pt = DMatrix::<f64>::zeros(n_x, n_x);

    let mut t_star = None;
    for t in 0..=t_max {
        let y_t = yt.get(t);
        for i in 0..y_t.dim() {
            if y_t.lo()[i] > y_t.hi()[i] {
                return Err(Error::EmptyRobustMas);
            }
        }
        let c_at = &sys.c * &at;
        let s_t = &sys.c * &pt * &sys.b + &sys.d;
        let mut new_rows: Vec<f64> = Vec::new();
        let mut new_rhs: Vec<f64> = Vec::new();
        time_rows(&c_at, &s_t, y_t, &mut new_rows, &mut new_rhs);

        // Redundancy of the whole new batch against accumulated time rows
        // plus the current steady-state rows.
        let (ss_rows, ss_rhs) = steady_rows(&g0, yt.get(t), epsilon, n_x);
        let mut ref_rows = acc_rows.clone();
        ref_rows.extend_from_slice(&ss_rows);
        let mut ref_rhs = acc_rhs.clone();
        ref_rhs.extend_from_slice(&ss_rhs);
        let ref_poly = Polytope::new(
            DMatrix::from_row_slice(ref_rhs.len(), dim, &ref_rows),
            DVector::from_vec(ref_rhs),
        )?;
        let n_new = new_rhs.len();
        // No generated rows at all (fully unbounded constraints) terminates
        // immediately; otherwise a batch can only be redundant against a
        // nonempty reference set. Rows already implied are dropped on the
        // spot: they stay implied as the set only shrinks, and keeping them
        // would pile up near-duplicate rows (the time rows converge
        // geometrically) that degrade the later pruning LPs.
        let mut all_redundant = n_new == 0 || !ref_poly.h_vec().is_empty();
        for k in 0..n_new {
            let c_dir = DVector::from_row_slice(&new_rows[k * dim..(k + 1) * dim]);
            let redundant = match ref_poly.maximize(&c_dir) {
                Ok(sol) => sol.value <= new_rhs[k] + REDUNDANT_TOL * (1.0 + new_rhs[k].abs()),
                Err(Error::Unbounded) => false,
                Err(Error::Infeasible) => {
                    return Err(if robust {
                        Error::EmptyRobustMas
                    } else {
                        Error::EmptyPolytope
                    })
                }
                Err(e) => return Err(e),
            };
            if !redundant {
                all_redundant = false;
                acc_rows.extend_from_slice(&new_rows[k * dim..(k + 1) * dim]);
                acc_rhs.push(new_rhs[k]);
            }
        }
        if all_redundant {
            t_star = Some(t);
            break;
        }
        pt += &at;
        at = &sys.a * at;
    }
    let Some(t_star) = t_star else {
        return Err(Error::NotFinitelyDetermined(t_max));
    };

    // Final assembly: steady-state rows at the detected horizon, then all
    // time rows, then prune.
    let (ss_rows, ss_rhs) = steady_rows(&g0, yt.get(t_star), epsilon, n_x);
    let mut rows = ss_rows;
    rows.extend_from_slice(&acc_rows);
    let mut rhs = ss_rhs;
    rhs.extend_from_slice(&acc_rhs);
    let poly = Polytope::new(
        DMatrix::from_row_slice(rhs.len(), dim, &rows),
        DVector::from_vec(rhs),
    )?;
    let poly = poly.remove_redundant().map_err(|e| {
        if robust && matches!(e, Error::EmptyPolytope) {
            Error::EmptyRobustMas
        } else {
            e
        }
    })?;
    Ok(Mas {
        poly,
        n_x,
        n_u,
        t_star,
        epsilon,
        channel: None,
    })
}

/// Admissible set of a pure-delay channel: the state does not appear and the
/// constraint on the held input needs no tightening.
pub fn delay_mas(y_lo: f64, y_hi: f64, n_states: usize) -> Mas {
    let mut rows: Vec<f64> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let dim = n_states + 1;
    if y_hi.is_finite() {
        rows.extend(std::iter::repeat(0.0).take(n_states));
        rows.push(1.0);
        rhs.push(y_hi);
    }
    if y_lo.is_finite() {
        rows.extend(std::iter::repeat(0.0).take(n_states));
        rows.push(-1.0);
        rhs.push(-y_lo);
    }
    let poly = Polytope::new(
        DMatrix::from_row_slice(rhs.len(), dim, &rows),
        DVector::from_vec(rhs),
    )
    .expect("delay rows are consistent");
    Mas {
        poly,
        n_x: n_states,
        n_u: 1,
        t_star: 0,
        epsilon: 0.0,
        channel: None,
    }
}

/// Brute-force ground truth: simulate `horizon` steps under the constant
/// input `u0` and check every output against `Y`.
pub fn admissible_oracle(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    y: &BoxSet,
    horizon: usize,
) -> bool {
    let mut x = x0.clone();
    for _ in 0..horizon {
        let out = sys.output(&x, u0, None);
        if !y.contains(&out, 1e-12) {
            return false;
        }
        x = sys.next_state(&x, u0, None);
    }
    true
}

/// The exact input-space slice of the admissible set at steady state:
/// `{u0 : G0 u0 in (1-epsilon) Y}`. Coincides with the projection of the
/// full set onto the input coordinates (pair any admissible `u0` with its
/// steady state `x_ss = (I-A)^{-1} B u0`).
pub fn steady_input_polytope(sys: &LinearSystem, y: &BoxSet, epsilon: f64) -> Result<Polytope> {
    let g0 = sys.dc_gain()?;
    let (rows, rhs) = steady_rows(&g0, y, epsilon, 0);
    Polytope::new(
        DMatrix::from_row_slice(rhs.len(), sys.n_inputs(), &rows),
        DVector::from_vec(rhs),
    )
}
