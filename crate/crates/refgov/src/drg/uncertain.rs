//! Per-channel admissible sets that stay valid over a polytopic model
//! family: the plant matrices `(A, B)` lie in the convex hull of a list of
//! vertex systems, the nominal feedback pair is applied unchanged, and the
//! other channels' held inputs are treated as a bounded disturbance whose
//! box is derived from their own steady-state admissibility at every vertex.
//!
//! Construction is a pruned row tree: each kept constraint row spawns one
//! successor per vertex (state coefficients advanced by that vertex's loop
//! matrix, the bound eroded by the worst other-channel contribution), and a
//! successor is dropped when the accumulated polytope already implies it.
//! Because every future output is multi-affine in the per-step convex
//! weights, enforcing the rows along all vertex sequences covers every
//! time-varying model in the hull.

use super::observer::spectral_radius;
use crate::decouple::SsDecoupling;
use crate::error::{Error, Result};
use crate::mas::Mas;
use crate::polytope::{BoxSet, Polytope};
use crate::sys::LinearSystem;
use nalgebra::{DMatrix, DVector, RowDVector};

const REDUNDANT_TOL: f64 = 1e-9;
/// Closed-loop gains below this (relative) size are treated as exact zeros
/// so that decoupled channels do not pick up spurious erosion from rounding
/// noise multiplied into unbounded ranges.
const SNAP_TOL: f64 = 1e-12;

/// Steady-state range of channel `channel`'s held input that keeps its
/// output inside the tightened constraint interval at every vertex: the
/// intersection over vertices of `{ v : W_cc(1) v in (1 - eps) Y_c }`, where
/// `W_cc(1)` is the vertex's closed-loop DC gain under the nominal pair.
///
/// One-sided output intervals give a range unbounded on one side; that is a
/// valid answer here, but [`param_uncertain_build`] then only succeeds when
/// the unbounded channel does not couple into the one being built.
pub fn vbar_bounds(
    vertices: &[LinearSystem],
    dec: &SsDecoupling,
    channel: usize,
    y: &BoxSet,
    epsilon: f64,
) -> Result<(f64, f64)> {
    validate_family(vertices, dec, y, epsilon)?;
    if channel >= vertices[0].n_outputs() {
        return Err(Error::Validation(format!(
            "channel {channel} does not exist: the plant has {} outputs",
            vertices[0].n_outputs()
        )));
    }
    let tight = y.scale(1.0 - epsilon);
    let (t_lo, t_hi) = (tight.lo()[channel], tight.hi()[channel]);
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (j, sys) in vertices.iter().enumerate() {
        let loop_dc = vertex_dc(sys, dec, j)?;
        let gain = loop_dc[(channel, channel)];
        let (v_lo, v_hi) = if gain > SNAP_TOL {
            (t_lo / gain, t_hi / gain)
        } else if gain < -SNAP_TOL {
            (t_hi / gain, t_lo / gain)
        } else if t_lo <= 0.0 && t_hi >= 0.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            return Err(Error::EmptyRobustMas);
        };
        lo = lo.max(v_lo);
        hi = hi.min(v_hi);
    }
    if lo > hi {
        return Err(Error::EmptyRobustMas);
    }
    Ok((lo, hi))
}

/// Builds the admissible set of channel `channel` over the stacked
/// `(x0, v0)` coordinates that is positively invariant for every plant in
/// the convex hull of `vertices` under the nominal feedback pair `dec`, with
/// the other channels' inputs ranging over their [`vbar_bounds`] boxes.
///
/// Requirements beyond the nominal construction: every vertex loop must be
/// stable (otherwise [`Error::UnstableVertexLoop`]), the plants must have no
/// direct feedthrough, and wherever the channel actually couples into
/// another channel's input, that channel's steady range must be bounded —
/// in practice, two-sided output constraints.
pub fn param_uncertain_build(
    vertices: &[LinearSystem],
    dec: &SsDecoupling,
    channel: usize,
    y: &BoxSet,
    epsilon: f64,
    t_max: usize,
) -> Result<Mas> {
    validate_family(vertices, dec, y, epsilon)?;
    let n = vertices[0].n_states();
    let m = vertices[0].n_inputs();
    let p = vertices[0].n_outputs();
    if channel >= p {
        return Err(Error::Validation(format!(
            "channel {channel} does not exist: the plant has {p} outputs"
        )));
    }
    let (y_lo, y_hi) = (y.lo()[channel], y.hi()[channel]);
    if !y_lo.is_finite() && !y_hi.is_finite() {
        return Err(Error::Validation(format!(
            "channel {channel} has no finite output bounds, so no set is needed"
        )));
    }

    // Closed-loop data per vertex, with stability screened first.
    let mut a_bars = Vec::with_capacity(vertices.len());
    let mut b_own = Vec::with_capacity(vertices.len());
    let mut b_other = Vec::with_capacity(vertices.len());
    let mut dc = Vec::with_capacity(vertices.len());
    let others: Vec<usize> = (0..m).filter(|&k| k != channel).collect();
    for (j, sys) in vertices.iter().enumerate() {
        let a_bar = dec.a_bar(sys);
        let rho = spectral_radius(&a_bar);
        if rho >= 1.0 {
            return Err(Error::UnstableVertexLoop { vertex: j, rho });
        }
        let b_bar = dec.b_bar(sys);
        b_own.push(b_bar.column(channel).into_owned());
        let mut rest = DMatrix::zeros(n, others.len());
        for (col, &k) in others.iter().enumerate() {
            rest.set_column(col, &b_bar.column(k));
        }
        b_other.push(rest);
        dc.push(vertex_dc(sys, dec, j)?);
        a_bars.push(a_bar);
    }

    // Box for the other channels' held inputs. Sides may be infinite; that
    // only matters where an erosion direction actually touches them.
    let vbar = if others.is_empty() {
        None
    } else {
        let mut bounds = Vec::with_capacity(others.len());
        for &k in &others {
            bounds.push(vbar_bounds(vertices, dec, k, y, epsilon)?);
        }
        Some(BoxSet::from_bounds(&bounds)?)
    };
    let erode = |dir: &DVector<f64>| -> Result<f64> {
        let e = vbar.as_ref().map_or(0.0, |b| b.support(dir));
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::Validation(format!(
                "channel {channel} couples into a channel whose steady range \
                 is unbounded; two-sided output constraints are required \
                 for the uncertain construction"
            )))
        }
    };

    let dim = n + 1;
    // Steady rows: the channel DC response must sit in the tightened
    // interval at every vertex, net of the worst cross-channel DC offset.
    let mut acc_rows: Vec<f64> = Vec::new();
    let mut acc_rhs: Vec<f64> = Vec::new();
    let tight = y.scale(1.0 - epsilon);
    for gains in &dc {
        let own = gains[(channel, channel)];
        let mut cross = DVector::zeros(others.len());
        for (col, &k) in others.iter().enumerate() {
            cross[col] = snap(gains[(channel, k)], own.abs());
        }
        if tight.hi()[channel].is_finite() {
            let rhs = tight.hi()[channel] - erode(&cross)?;
            push_row(&mut acc_rows, &mut acc_rhs, &RowDVector::zeros(n), own, rhs);
        }
        if tight.lo()[channel].is_finite() {
            let rhs = -tight.lo()[channel] - erode(&(-&cross))?;
            push_row(&mut acc_rows, &mut acc_rhs, &RowDVector::zeros(n), -own, rhs);
        }
    }

    // Level 0: the current output involves only the state (no feedthrough).
    let mut level: Vec<(RowDVector<f64>, f64, f64)> = Vec::new();
    for sys in vertices {
        let c_row = sys.c.row(channel).into_owned();
        if y_hi.is_finite() {
            level.push((c_row.clone(), 0.0, y_hi));
        }
        if y_lo.is_finite() {
            level.push((-c_row, 0.0, -y_lo));
        }
    }
    let mut frontier = Vec::new();
    for cand in level {
        if !implied(&acc_rows, &acc_rhs, dim, &cand)? {
            push_row(&mut acc_rows, &mut acc_rhs, &cand.0, cand.1, cand.2);
            frontier.push(cand);
        }
    }

    let mut t_star = None;
    for t in 0..=t_max {
        if frontier.is_empty() {
            t_star = Some(t);
            break;
        }
        if t == t_max {
            break;
        }
        let mut next = Vec::new();
        for (c_x, c_v, rhs) in &frontier {
            let scale = c_x.amax();
            for j in 0..vertices.len() {
                let c_x2 = c_x * &a_bars[j];
                let c_v2 = c_v + (c_x * &b_own[j])[0];
                let erosion = match &vbar {
                    Some(_) => {
                        let mut dir = (c_x * &b_other[j]).transpose();
                        for v in dir.iter_mut() {
                            *v = snap(*v, scale);
                        }
                        erode(&dir)?
                    }
                    None => 0.0,
                };
                let cand = (c_x2, c_v2, rhs - erosion);
                if !implied(&acc_rows, &acc_rhs, dim, &cand)? {
                    push_row(&mut acc_rows, &mut acc_rhs, &cand.0, cand.1, cand.2);
                    next.push(cand);
                }
            }
        }
        frontier = next;
    }
    let Some(t_star) = t_star else {
        return Err(Error::NotFinitelyDetermined(t_max));
    };

    let poly = Polytope::new(
        DMatrix::from_row_slice(acc_rhs.len(), dim, &acc_rows),
        DVector::from_vec(acc_rhs),
    )?;
    let poly = poly.remove_redundant().map_err(|e| match e {
        Error::EmptyPolytope => Error::EmptyRobustMas,
        other => other,
    })?;
    Ok(Mas::from_parts(poly, n, 1, t_star, epsilon)?.with_channel(channel))
}

/// Closed-loop DC gain matrix `C (I - A_bar)^{-1} B_bar` of one vertex.
fn vertex_dc(sys: &LinearSystem, dec: &SsDecoupling, j: usize) -> Result<DMatrix<f64>> {
    let a_bar = dec.a_bar(sys);
    let rho = spectral_radius(&a_bar);
    if rho >= 1.0 {
        return Err(Error::UnstableVertexLoop { vertex: j, rho });
    }
    let n = a_bar.nrows();
    let inv = (DMatrix::identity(n, n) - a_bar)
        .try_inverse()
        .ok_or(Error::PoleAtOne)?;
    Ok(&sys.c * inv * dec.b_bar(sys))
}

fn snap(v: f64, scale: f64) -> f64 {
    if v.abs() <= SNAP_TOL * (1.0 + scale) {
        0.0
    } else {
        v
    }
}

fn push_row(rows: &mut Vec<f64>, rhs: &mut Vec<f64>, c_x: &RowDVector<f64>, c_v: f64, b: f64) {
    rows.extend(c_x.iter());
    rows.push(c_v);
    rhs.push(b);
}

/// True when the accumulated rows already force `c_x x + c_v v <= rhs`.
fn implied(
    acc_rows: &[f64],
    acc_rhs: &[f64],
    dim: usize,
    cand: &(RowDVector<f64>, f64, f64),
) -> Result<bool> {
    if acc_rhs.is_empty() {
        return Ok(false);
    }
    let poly = Polytope::new(
        DMatrix::from_row_slice(acc_rhs.len(), dim, acc_rows),
        DVector::from_vec(acc_rhs.to_vec()),
    )?;
    let mut dir = DVector::zeros(dim);
    for (i, v) in cand.0.iter().enumerate() {
        dir[i] = *v;
    }
    dir[dim - 1] = cand.1;
    match poly.maximize(&dir) {
        Ok(sol) => Ok(sol.value <= cand.2 + REDUNDANT_TOL * (1.0 + cand.2.abs())),
        Err(Error::Unbounded) => Ok(false),
        Err(Error::Infeasible) => Err(Error::EmptyRobustMas),
        Err(e) => Err(e),
    }
}

fn validate_family(
    vertices: &[LinearSystem],
    dec: &SsDecoupling,
    y: &BoxSet,
    epsilon: f64,
) -> Result<()> {
    let Some(first) = vertices.first() else {
        return Err(Error::Validation("the vertex list is empty".into()));
    };
    let (n, m, p) = (first.n_states(), first.n_inputs(), first.n_outputs());
    for sys in vertices {
        if sys.n_states() != n || sys.n_inputs() != m || sys.n_outputs() != p {
            return Err(Error::DimensionMismatch(
                "all vertex systems must share the same dimensions".into(),
            ));
        }
        if sys.d.amax() != 0.0 {
            return Err(Error::Validation(
                "the uncertain construction assumes no direct feedthrough".into(),
            ));
        }
    }
    if dec.phi.nrows() != m || dec.phi.ncols() != n || dec.gamma.nrows() != m {
        return Err(Error::DimensionMismatch(
            "feedback pair does not match the vertex dimensions".into(),
        ));
    }
    if y.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "constraint box has dimension {}, plant has {p} outputs",
            y.dim()
        )));
    }
    for i in 0..p {
        if !(y.lo()[i] < 0.0 && y.hi()[i] > 0.0) {
            return Err(Error::Validation(format!(
                "constraint set must contain the origin in its interior \
                 (output {i} has bounds [{}, {}])",
                y.lo()[i],
                y.hi()[i]
            )));
        }
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Validation(format!(
            "tightening factor must be in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}
