//! End-to-end governed pipelines.
//!
//! A pipeline bundles a plant realization, a decoupling design, one
//! admissible set per governed channel, and the per-step governor state. Two
//! families are provided: [`DrgTfPipeline`] routes references through the
//! filter pair `F⁻¹`/`F` around a bank of scalar governors, while
//! [`DrgSsPipeline`] applies the static state-feedback pair `Φ, Γ` around the
//! same bank. Robust variants tighten each channel set against bounded
//! disturbances or polytopic model uncertainty, and the non-square extensions
//! widen or fuse plants whose input and output counts differ.
//!
//! Every pipeline is a single-owner state machine: one step at a time,
//! movable across threads, never shared mutably. Independent instances run
//! concurrently without coordination.

mod observer;
mod nonsquare;
mod ss;
mod tf;
mod uncertain;

pub use observer::{
    ackermann_observer_gain, kalman_observer_gain, ObserverConfig,
};
pub use nonsquare::{
    drg_tall_build, squarify_wide, tall_fuse_step, tall_parts, DrgTallOptions, DrgTallPipeline,
    FuseChoice, FuseOutcome, FuseStrategy, TallParts,
};
pub use ss::{drg_ss_build, drg_ss_robust_build, DrgSsOptions, DrgSsPipeline};
pub use tf::{drg_tf_build, drg_tf_build_with, drg_tf_robust_build, DrgTfOptions, DrgTfPipeline, TfMethod};
pub(crate) use tf::split_inputs;
pub use uncertain::{param_uncertain_build, vbar_bounds};

use crate::error::{Error, Result};
use crate::governor::{srg_step_explicit, srg_step_lp, DIRECTION_TOL, START_TOL};
use crate::mas::Mas;
use crate::polytope::qp_min;
use nalgebra::{DMatrix, DVector};

/// How the per-step blend factors are computed. The explicit path is the
/// closed-form ratio test; the implicit paths solve the same problem through
/// the generic LP / QP machinery and exist as timing baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GovernorSolver {
    Explicit,
    ImplicitLp,
    ImplicitQp,
}

/// Mutable per-step governor bookkeeping shared by every pipeline.
#[derive(Debug, Clone)]
pub struct GovernorState {
    /// Input applied on the previous step (held during warm-up).
    pub v_prev: DVector<f64>,
    /// Blend factor per channel from the most recent step.
    pub kappas: DVector<f64>,
    /// Solver used for the bank step.
    pub solver: GovernorSolver,
    /// Remaining steps during which the governor holds `v = v_prev`.
    pub warmup_left: usize,
}

impl GovernorState {
    fn new(v_init: DVector<f64>, solver: GovernorSolver, warmup: usize) -> Self {
        let m = v_init.len();
        GovernorState {
            v_prev: v_init,
            kappas: DVector::from_element(m, 1.0),
            solver,
            warmup_left: warmup,
        }
    }
}

/// One pipeline step: the applied input, the governed reference, the
/// transformed reference, the measured output, and the per-channel blend
/// factors.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub r_prime: DVector<f64>,
    pub y: DVector<f64>,
    pub kappas: DVector<f64>,
}

/// How one channel of a pipeline computes its governed reference.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ChannelKind {
    /// Pure-delay channel: the admissible set is state-free and the governor
    /// is a literal interval clamp.
    StateFree { lo: f64, hi: f64 },
    /// Channel with internal dynamics; membership is tested against the state
    /// feed supplied by the observer.
    Dynamic,
    /// Unconstrained channel: the reference passes through untouched and no
    /// scalar governor is created.
    Ungoverned,
}

/// Bank step over heterogeneous channels. `feeds[i]` is the membership state
/// for channel `i`; state-free and ungoverned channels ignore it.
pub(crate) fn bank_step(
    kinds: &[ChannelKind],
    mas_list: &[Mas],
    feeds: &[DVector<f64>],
    v_prev: &DVector<f64>,
    r_prime: &DVector<f64>,
    solver: GovernorSolver,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = kinds.len();
    let mut v = DVector::zeros(m);
    let mut kappas = DVector::from_element(m, 1.0);
    match solver {
        GovernorSolver::Explicit | GovernorSolver::ImplicitLp => {
            for i in 0..m {
                match kinds[i] {
                    ChannelKind::Ungoverned => v[i] = r_prime[i],
                    ChannelKind::StateFree { lo, hi } => {
                        v[i] = r_prime[i].clamp(lo, hi);
                        kappas[i] = clamp_fraction(v_prev[i], r_prime[i], v[i]);
                    }
                    ChannelKind::Dynamic => {
                        let step = match solver {
                            GovernorSolver::Explicit => {
                                srg_step_explicit(&mas_list[i], &feeds[i], v_prev[i], r_prime[i])
                            }
                            _ => srg_step_lp(&mas_list[i], &feeds[i], v_prev[i], r_prime[i]),
                        }
                        .map_err(|e| Error::Channel {
                            index: i,
                            source: Box::new(e),
                        })?;
                        v[i] = step.v_new;
                        kappas[i] = step.kappa;
                    }
                }
            }
        }
        GovernorSolver::ImplicitQp => {
            return bank_step_qp(kinds, mas_list, feeds, v_prev, r_prime);
        }
    }
    Ok((v, kappas))
}

/// Reported blend factor for a clamp channel; the applied value is always the
/// literal clamp, this is bookkeeping for the trace.
fn clamp_fraction(v_prev: f64, target: f64, v_new: f64) -> f64 {
    let d = target - v_prev;
    if d.abs() <= DIRECTION_TOL {
        1.0
    } else {
        ((v_new - v_prev) / d).clamp(0.0, 1.0)
    }
}

/// Joint quadratic-program formulation of the bank step: one blend variable
/// per moving channel, the channel rows stacked block-diagonally, objective
/// `min Σ dᵢ²(1 − κᵢ)²`. The problem is separable, so the minimizer agrees
/// with the per-channel closed form; it exists as the implicit-QP timing
/// baseline.
fn bank_step_qp(
    kinds: &[ChannelKind],
    mas_list: &[Mas],
    feeds: &[DVector<f64>],
    v_prev: &DVector<f64>,
    r_prime: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = kinds.len();
    let mut v = DVector::zeros(m);
    let mut kappas = DVector::from_element(m, 1.0);
    // Channels that actually move and carry rows into the joint program.
    let mut active: Vec<usize> = Vec::new();
    let mut rows: Vec<(DVector<f64>, DVector<f64>)> = Vec::new(); // (a, b) per active channel
    for i in 0..m {
        if kinds[i] == ChannelKind::Ungoverned {
            v[i] = r_prime[i];
            continue;
        }
        let mas = &mas_list[i];
        let h_x = mas.h_x();
        let h_u = mas.h_u();
        let d = r_prime[i] - v_prev[i];
        let a = &h_u * DVector::from_element(1, d);
        let b = mas.h_vec() - h_x * &feeds[i] - h_u * DVector::from_element(1, v_prev[i]);
        // Start check mirroring the scalar kernels.
        let scale = 1.0 + mas.h_vec().amax();
        for (row, &bi) in b.iter().enumerate() {
            if bi < -START_TOL * scale {
                return Err(Error::Channel {
                    index: i,
                    source: Box::new(Error::InfeasibleStart {
                        row,
                        violation: -bi,
                    }),
                });
            }
        }
        if d.abs() <= DIRECTION_TOL {
            v[i] = v_prev[i];
            continue;
        }
        active.push(i);
        rows.push((a, b));
    }
    if active.is_empty() {
        return Ok((v, kappas));
    }
    let nv = active.len();
    let total_rows: usize = rows.iter().map(|(a, _)| a.len()).sum();
    let mut a_mat = DMatrix::<f64>::zeros(total_rows + 2 * nv, nv);
    let mut b_vec = DVector::<f64>::zeros(total_rows + 2 * nv);
    let mut r = 0;
    for (slot, (a, b)) in rows.iter().enumerate() {
        for k in 0..a.len() {
            a_mat[(r, slot)] = a[k];
            b_vec[r] = b[k].max(0.0);
            r += 1;
        }
    }
    for slot in 0..nv {
        a_mat[(r, slot)] = 1.0;
        b_vec[r] = 1.0;
        r += 1;
        a_mat[(r, slot)] = -1.0;
        b_vec[r] = 0.0;
        r += 1;
    }
    let mut q_mat = DMatrix::<f64>::zeros(nv, nv);
    let mut q_vec = DVector::<f64>::zeros(nv);
    for (slot, &i) in active.iter().enumerate() {
        let d = r_prime[i] - v_prev[i];
        q_mat[(slot, slot)] = 2.0 * d * d;
        q_vec[slot] = -2.0 * d * d;
    }
    let x0 = DVector::<f64>::zeros(nv);
    let sol = qp_min(&q_mat, &q_vec, &a_mat, &b_vec, &x0)?;
    for (slot, &i) in active.iter().enumerate() {
        let k = sol[slot].clamp(0.0, 1.0);
        kappas[i] = k;
        v[i] = v_prev[i] + k * (r_prime[i] - v_prev[i]);
    }
    Ok((v, kappas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mas::delay_mas;

    #[test]
    fn clamp_channel_reports_the_moved_fraction() {
        let kinds = vec![ChannelKind::StateFree { lo: -1.0, hi: 1.0 }];
        let mas = vec![delay_mas(-1.0, 1.0, 0)];
        let feeds = vec![DVector::<f64>::zeros(0)];
        let v_prev = DVector::from_vec(vec![0.0]);
        let r = DVector::from_vec(vec![2.0]);
        let (v, k) = bank_step(
            &kinds,
            &mas,
            &feeds,
            &v_prev,
            &r,
            GovernorSolver::Explicit,
        )
        .unwrap();
        assert_eq!(v[0], 1.0);
        assert!((k[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn qp_bank_matches_the_explicit_bank() {
        let kinds = vec![
            ChannelKind::StateFree { lo: -1.0, hi: 1.0 },
            ChannelKind::StateFree { lo: -2.0, hi: 0.5 },
        ];
        let mas = vec![delay_mas(-1.0, 1.0, 0), delay_mas(-2.0, 0.5, 0)];
        let feeds = vec![DVector::<f64>::zeros(0), DVector::<f64>::zeros(0)];
        let v_prev = DVector::from_vec(vec![0.2, -0.3]);
        let r = DVector::from_vec(vec![3.0, 0.9]);
        let (ve, _) = bank_step(&kinds, &mas, &feeds, &v_prev, &r, GovernorSolver::Explicit).unwrap();
        let (vq, _) = bank_step(&kinds, &mas, &feeds, &v_prev, &r, GovernorSolver::ImplicitQp).unwrap();
        assert!((ve - vq).amax() < 1e-9);
    }

    #[test]
    fn ungoverned_channel_passes_the_reference_through() {
        let kinds = vec![ChannelKind::Ungoverned];
        let mas = vec![delay_mas(f64::NEG_INFINITY, f64::INFINITY, 0)];
        let feeds = vec![DVector::<f64>::zeros(0)];
        let v_prev = DVector::from_vec(vec![0.0]);
        let r = DVector::from_vec(vec![42.0]);
        let (v, k) = bank_step(&kinds, &mas, &feeds, &v_prev, &r, GovernorSolver::Explicit).unwrap();
        assert_eq!(v[0], 42.0);
        assert_eq!(k[0], 1.0);
    }
}
