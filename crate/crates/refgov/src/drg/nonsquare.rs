//! Non-square plants.
//!
//! Wide plants (more inputs than outputs) are squared up by appending
//! fictitious outputs: the extended plant `[[G], [0 | G_bar]]` is decoupled
//! by an exact block-inverse filter whose target is the block diagonal of
//! the physical channel diagonals and a designer-chosen fictitious target
//! `G_bar_w`. The result plugs straight into the square filter pipeline; the
//! fictitious channels carry no constraints and pass their references
//! through.
//!
//! Tall plants (more outputs than inputs) decouple the leading square
//! subsystem and treat the remaining outputs as a shared tail constraint:
//! one admissible set over all governed inputs jointly. Each step fuses the
//! per-channel blend factors with the tail factor, either by applying the
//! smallest factor to every channel or by comparing two line-search
//! candidates and keeping the one closer to the transformed reference.

use super::{GovernorSolver, GovernorState, StepRecord};
use crate::decouple::{design_tf_diagonal, design_tf_identity, TfDecoupling, INVERSE_STABILITY_MARGIN};
use crate::error::{Error, Result};
use crate::governor::{check_start, srg_step_explicit, DIRECTION_TOL};
use crate::mas::{build_mas, Mas, DEFAULT_EPSILON, DEFAULT_T_MAX};
use crate::polytope::BoxSet;
use crate::sys::{realize, LinearSystem, RationalMatrix, RationalTf};
use nalgebra::DVector;

/// Squares up a wide plant (`p` outputs, `m > p` inputs): returns the
/// extended square plant `[[G], [0 | G_bar]]` and the filter pair that
/// decouples it toward `W = diag(G_11 .. G_pp, G_bar_w)`.
///
/// `g_bar` is the designer-chosen dynamics of the fictitious outputs
/// (square, `m - p`, invertible); `g_bar_w` is their diagonal target.
/// Choosing `g_bar_w = g_bar` leaves the fictitious inputs unfiltered: the
/// lower-right block of the filter is the (delay-padded) identity.
///
/// The forward filter is assembled from the exact block inverse,
/// `F = [[G_lead^-1 W_p, -G_lead^-1 G_cross G_bar^-1 G_bar_w],
///       [0,             G_bar^-1 G_bar_w]]`,
/// which satisfies `G_tilde F = W` for any invertible `g_bar`.
///
/// Feed the results to the square pipeline builder with the constraint box
/// extended by unbounded intervals for the fictitious channels; those become
/// ungoverned pass-through channels.
pub fn squarify_wide(
    g: &RationalMatrix,
    g_bar: &RationalMatrix,
    g_bar_w: &RationalMatrix,
) -> Result<(RationalMatrix, TfDecoupling)> {
    let p = g.rows();
    let m = g.cols();
    if p >= m {
        return Err(Error::DimensionMismatch(format!(
            "squaring up needs more inputs than outputs, got {p}x{m}"
        )));
    }
    let f_rows = m - p;
    for (name, mat) in [("fictitious dynamics", g_bar), ("fictitious target", g_bar_w)] {
        if mat.rows() != f_rows || mat.cols() != f_rows {
            return Err(Error::DimensionMismatch(format!(
                "{name} block must be {f_rows}x{f_rows}, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
    }
    for i in 0..f_rows {
        for j in 0..f_rows {
            if i != j && !g_bar_w.get(i, j).is_zero() {
                return Err(Error::Validation(
                    "the fictitious target block must be diagonal".into(),
                ));
            }
        }
    }

    // Extended plant.
    let mut entries = Vec::with_capacity(m * m);
    for i in 0..p {
        for j in 0..m {
            entries.push(g.get(i, j).clone());
        }
    }
    for i in 0..f_rows {
        for j in 0..m {
            entries.push(if j < p {
                RationalTf::zero()
            } else {
                g_bar.get(i, j - p).clone()
            });
        }
    }
    let g_tilde = RationalMatrix::new(m, m, entries)?;

    // Blocks of the plant and the target.
    let lead_idx: Vec<usize> = (0..p).collect();
    let tail_idx: Vec<usize> = (p..m).collect();
    let g_lead = g.submatrix(&lead_idx, &lead_idx);
    let g_cross = g.submatrix(&lead_idx, &tail_idx);
    let lead_inv = g_lead.rational_inverse()?;
    let w_lead: Vec<RationalTf> = (0..p).map(|i| g.get(i, i).clone()).collect();
    let w_p = RationalMatrix::from_diag(&w_lead);
    let corner = g_bar.rational_inverse()?.matmul(g_bar_w)?;

    let upper_left = lead_inv.matmul(&w_p)?;
    let upper_right = lead_inv.matmul(&g_cross)?.matmul(&corner)?;
    let mut fe = Vec::with_capacity(m * m);
    for i in 0..p {
        for j in 0..p {
            fe.push(upper_left.get(i, j).clone());
        }
        for j in 0..f_rows {
            fe.push(upper_right.get(i, j).neg());
        }
    }
    for i in 0..f_rows {
        for j in 0..m {
            fe.push(if j < p {
                RationalTf::zero()
            } else {
                corner.get(i, j - p).clone()
            });
        }
    }
    let f_raw = RationalMatrix::new(m, m, fe)?;

    // Inverse filter from the same block structure:
    // [[W_p^-1 G_lead, W_p^-1 G_cross], [0, G_bar_w^-1 G_bar]].
    let mut w_lead_inv = Vec::with_capacity(p);
    for e in &w_lead {
        w_lead_inv.push(e.inv()?);
    }
    let w_p_inv = RationalMatrix::from_diag(&w_lead_inv);
    let inv_ul = w_p_inv.matmul(&g_lead)?;
    let inv_ur = w_p_inv.matmul(&g_cross)?;
    let corner_inv = g_bar_w.rational_inverse()?.matmul(g_bar)?;
    let mut fie = Vec::with_capacity(m * m);
    for i in 0..p {
        for j in 0..p {
            fie.push(inv_ul.get(i, j).clone());
        }
        for j in 0..f_rows {
            fie.push(inv_ur.get(i, j).clone());
        }
    }
    for i in 0..f_rows {
        for j in 0..m {
            fie.push(if j < p {
                RationalTf::zero()
            } else {
                corner_inv.get(i, j - p).clone()
            });
        }
    }
    let f_inv_raw = RationalMatrix::new(m, m, fie)?;

    let mut w_diag = w_lead;
    for i in 0..f_rows {
        w_diag.push(g_bar_w.get(i, i).clone());
    }
    let w_raw = RationalMatrix::from_diag(&w_diag);
    if w_raw.max_pole_modulus() >= 1.0 {
        return Err(Error::UnstableSystem(w_raw.max_pole_modulus()));
    }

    let (f, beta1) = f_raw.make_proper();
    let (f_inv, beta2) = f_inv_raw.make_proper();
    for filt in [&f, &f_inv] {
        let rho = filt.max_pole_modulus();
        if rho >= 1.0 - INVERSE_STABILITY_MARGIN {
            return Err(Error::UnstableInverse(rho));
        }
    }
    let w = w_raw.delayed(beta1);
    Ok((
        g_tilde,
        TfDecoupling {
            f,
            f_inv,
            w,
            beta1,
            beta2,
        },
    ))
}

/// How a tall pipeline reconciles the per-channel blend factors with the
/// joint tail factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FuseStrategy {
    /// Apply the smallest of all factors to every channel.
    MinKappa,
    /// Compare two admissible candidates — the per-channel bank point pulled
    /// back into the tail set, and the tail point pulled back into the
    /// per-channel sets — and keep the one closer to the transformed
    /// reference. Never farther from it than the blended point, because the
    /// second candidate coincides with it.
    #[default]
    Projection,
}

/// Which fused candidate was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseChoice {
    /// The common blend with the smallest factor.
    MinKappa,
    /// Projection candidate built around the per-channel bank point.
    BankCandidate,
    /// Projection candidate built around the joint tail point.
    TailCandidate,
}

/// Result of one fused governor step.
#[derive(Debug, Clone)]
pub struct FuseOutcome {
    /// Admitted reference vector.
    pub v: DVector<f64>,
    /// Each set's own maximal factor: one per channel, then the tail factor.
    /// The applied move is the fusion of these, not any single entry.
    pub kappas: DVector<f64>,
    /// Which candidate produced `v`.
    pub choice: FuseChoice,
}

/// Largest fraction of the segment from `v_prev` to `target` that keeps the
/// stacked pair inside the set, with the binding row when one caps it.
fn segment_kappa(
    set: &Mas,
    feed: &DVector<f64>,
    v_prev: &DVector<f64>,
    target: &DVector<f64>,
) -> Result<f64> {
    if feed.len() != set.n_states() || v_prev.len() != set.n_inputs() {
        return Err(Error::DimensionMismatch(format!(
            "segment search got state {} / input {}, set expects {} / {}",
            feed.len(),
            v_prev.len(),
            set.n_states(),
            set.n_inputs()
        )));
    }
    check_start(set, feed, v_prev)?;
    let d = target - v_prev;
    let a = set.h_u() * &d;
    let b = set.h_vec() - set.h_x() * feed - set.h_u() * v_prev;
    let mut ratio = f64::INFINITY;
    for i in 0..a.len() {
        if a[i] > DIRECTION_TOL {
            ratio = ratio.min(b[i] / a[i]);
        }
    }
    Ok(ratio.min(1.0).max(0.0))
}

/// One fused governor step for a tall pipeline: per-channel scalar sets plus
/// one joint tail set over all channels.
///
/// `channel_feeds[i]` is the membership state of channel `i`'s set and
/// `tail_feed` that of the tail set. Errors from a channel kernel are
/// wrapped with the channel index; when the projection strategy loses both
/// of its candidates the step fails with
/// [`Error::BothProjectionsInfeasible`].
pub fn tall_fuse_step(
    channel_sets: &[Mas],
    channel_feeds: &[DVector<f64>],
    tail_set: &Mas,
    tail_feed: &DVector<f64>,
    v_prev: &DVector<f64>,
    r_prime: &DVector<f64>,
    strategy: FuseStrategy,
) -> Result<FuseOutcome> {
    let m = channel_sets.len();
    if channel_feeds.len() != m || v_prev.len() != m || r_prime.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "fused step needs {m} feeds and {m}-dimensional references"
        )));
    }
    if tail_set.n_inputs() != m {
        return Err(Error::DimensionMismatch(format!(
            "tail set has {} inputs, pipeline has {m} channels",
            tail_set.n_inputs()
        )));
    }

    // Raw factors: each channel toward its own reference, and the joint
    // move toward the full reference through the tail set.
    let bank: Result<Vec<crate::governor::KappaResult>> = (0..m)
        .map(|i| {
            srg_step_explicit(&channel_sets[i], &channel_feeds[i], v_prev[i], r_prime[i]).map_err(
                |e| Error::Channel {
                    index: i,
                    source: Box::new(e),
                },
            )
        })
        .collect();
    let tail_kappa = segment_kappa(tail_set, tail_feed, v_prev, r_prime);

    let kappas_of = |bank: &[crate::governor::KappaResult], tail: f64| {
        let mut k = DVector::from_element(m + 1, 1.0);
        for (i, s) in bank.iter().enumerate() {
            k[i] = s.kappa;
        }
        k[m] = tail;
        k
    };

    match strategy {
        FuseStrategy::MinKappa => {
            let bank = bank?;
            let tail = tail_kappa?;
            let mut blend = tail;
            for s in &bank {
                blend = blend.min(s.kappa);
            }
            let v = v_prev + (r_prime - v_prev) * blend;
            Ok(FuseOutcome {
                v,
                kappas: kappas_of(&bank, tail),
                choice: FuseChoice::MinKappa,
            })
        }
        FuseStrategy::Projection => {
            // Candidate A: the bank point, pulled back along its segment
            // until the tail set admits it.
            let cand_a = bank.as_ref().ok().map(|bank| {
                let v_s = DVector::from_fn(m, |i, _| bank[i].v_new);
                segment_kappa(tail_set, tail_feed, v_prev, &v_s)
                    .map(|alpha| v_prev + (&v_s - v_prev) * alpha)
            });
            // Candidate B: the tail point, pulled back by the largest common
            // fraction every channel admits along its own coordinate. This
            // is exactly the min-factor blend.
            let cand_b = tail_kappa.as_ref().ok().map(|&tail| -> Result<_> {
                let v_d = v_prev + (r_prime - v_prev) * tail;
                let mut alpha = 1.0f64;
                for i in 0..m {
                    let s = srg_step_explicit(
                        &channel_sets[i],
                        &channel_feeds[i],
                        v_prev[i],
                        v_d[i],
                    )
                    .map_err(|e| Error::Channel {
                        index: i,
                        source: Box::new(e),
                    })?;
                    alpha = alpha.min(s.kappa);
                }
                Ok(v_prev + (&v_d - v_prev) * alpha)
            });
            let cand_a = cand_a.and_then(|r| r.ok());
            let cand_b = cand_b.and_then(|r| r.ok());
            let (v, choice) = match (cand_a, cand_b) {
                (Some(a), Some(b)) => {
                    if (r_prime - &a).norm() <= (r_prime - &b).norm() {
                        (a, FuseChoice::BankCandidate)
                    } else {
                        (b, FuseChoice::TailCandidate)
                    }
                }
                (Some(a), None) => (a, FuseChoice::BankCandidate),
                (None, Some(b)) => (b, FuseChoice::TailCandidate),
                (None, None) => return Err(Error::BothProjectionsInfeasible),
            };
            let bank = bank?;
            let tail = tail_kappa?;
            Ok(FuseOutcome {
                v,
                kappas: kappas_of(&bank, tail),
                choice,
            })
        }
    }
}

/// Design-time decomposition of a tall plant.
#[derive(Clone, Debug)]
pub struct TallParts {
    /// Filter pair designed on the leading square subsystem.
    pub dec: TfDecoupling,
    /// Map from the governed references to the tail outputs:
    /// the tail rows of the plant composed with the forward filter.
    pub tail_map: RationalMatrix,
}

/// Splits a tall plant (`p > m`) into a decoupled leading subsystem and the
/// reference-to-tail-output map.
pub fn tall_parts(g: &RationalMatrix, method: super::TfMethod) -> Result<TallParts> {
    let p = g.rows();
    let m = g.cols();
    if p <= m {
        return Err(Error::DimensionMismatch(format!(
            "tall decomposition needs more outputs than inputs, got {p}x{m}"
        )));
    }
    let lead_idx: Vec<usize> = (0..m).collect();
    let tail_idx: Vec<usize> = (m..p).collect();
    let leading = g.submatrix(&lead_idx, &lead_idx);
    let dec = match method {
        super::TfMethod::Diagonal => design_tf_diagonal(&leading)?,
        super::TfMethod::Identity => design_tf_identity(&leading)?,
    };
    let tail_map = g.submatrix(&tail_idx, &lead_idx).matmul(&dec.f)?;
    Ok(TallParts { dec, tail_map })
}

/// Build-time options for the tall pipeline.
#[derive(Debug, Clone)]
pub struct DrgTallOptions {
    /// Steady-state tightening factor for all admissible sets.
    pub epsilon: f64,
    /// Horizon cap for the set recursions.
    pub t_max: usize,
    /// Design method for the leading square subsystem.
    pub method: super::TfMethod,
    /// Fusion strategy for the tail factor.
    pub strategy: FuseStrategy,
    /// Initial governed reference; zero when omitted.
    pub v_init: Option<DVector<f64>>,
}

impl Default for DrgTallOptions {
    fn default() -> Self {
        DrgTallOptions {
            epsilon: DEFAULT_EPSILON,
            t_max: DEFAULT_T_MAX,
            method: super::TfMethod::Diagonal,
            strategy: FuseStrategy::Projection,
            v_init: None,
        }
    }
}

/// Governed pipeline for a tall plant: filter pair on the leading square
/// subsystem, per-channel sets on its diagonal, and a joint tail set across
/// all governed inputs.
pub struct DrgTallPipeline {
    plant: LinearSystem,
    x_plant: DVector<f64>,
    f_sys: LinearSystem,
    x_f: DVector<f64>,
    finv_sys: LinearSystem,
    x_finv: DVector<f64>,
    parts: TallParts,
    models: Vec<LinearSystem>,
    xs: Vec<DVector<f64>>,
    tail_sys: Option<LinearSystem>,
    x_tail: DVector<f64>,
    sets: Vec<Mas>,
    tail_set: Option<Mas>,
    strategy: FuseStrategy,
    gov: GovernorState,
    constraints: BoxSet,
    last_choice: Option<FuseChoice>,
    t: usize,
}

/// Builds the tall pipeline. The constraint box covers every plant output;
/// bounds beyond the governed channels define the tail set (omitted when all
/// of them are unbounded).
pub fn drg_tall_build(
    g: &RationalMatrix,
    y: &BoxSet,
    opts: DrgTallOptions,
) -> Result<DrgTallPipeline> {
    let p = g.rows();
    let m = g.cols();
    if y.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "constraint box has dimension {}, plant has {p} outputs",
            y.dim()
        )));
    }
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::Validation("epsilon must lie in (0, 1)".into()));
    }
    let parts = tall_parts(g, opts.method)?;
    let plant = realize(g)?;
    let f_sys = realize(&parts.dec.f)?;
    let finv_sys = realize(&parts.dec.f_inv)?;

    let mut models = Vec::with_capacity(m);
    let mut xs = Vec::with_capacity(m);
    let mut sets = Vec::with_capacity(m);
    for i in 0..m {
        let entry = parts.dec.w.submatrix(&[i], &[i]);
        let model = realize(&entry).map_err(|e| Error::Channel {
            index: i,
            source: Box::new(e),
        })?;
        let interval = BoxSet::from_bounds(&[(y.lo()[i], y.hi()[i])])?;
        let set = build_mas(&model, &interval, opts.epsilon, opts.t_max)
            .map_err(|e| Error::Channel {
                index: i,
                source: Box::new(e),
            })?
            .with_channel(i);
        xs.push(DVector::zeros(model.n_states()));
        models.push(model);
        sets.push(set);
    }

    let tail_bounded = (m..p).any(|i| y.lo()[i].is_finite() || y.hi()[i].is_finite());
    let (tail_sys, x_tail, tail_set) = if tail_bounded {
        let sys = realize(&parts.tail_map)?;
        let bounds: Vec<(f64, f64)> = (m..p).map(|i| (y.lo()[i], y.hi()[i])).collect();
        let set = build_mas(&sys, &BoxSet::from_bounds(&bounds)?, opts.epsilon, opts.t_max)?;
        let x0 = DVector::zeros(sys.n_states());
        (Some(sys), x0, Some(set))
    } else {
        (None, DVector::zeros(0), None)
    };

    let v_init = match opts.v_init {
        Some(v) => {
            if v.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "initial reference has length {}, pipeline has {m} channels",
                    v.len()
                )));
            }
            v
        }
        None => DVector::zeros(m),
    };
    Ok(DrgTallPipeline {
        x_plant: DVector::zeros(plant.n_states()),
        plant,
        x_f: DVector::zeros(f_sys.n_states()),
        f_sys,
        x_finv: DVector::zeros(finv_sys.n_states()),
        finv_sys,
        parts,
        models,
        xs,
        tail_sys,
        x_tail,
        sets,
        tail_set,
        strategy: opts.strategy,
        gov: GovernorState::new(v_init, GovernorSolver::Explicit, 0),
        constraints: y.clone(),
        last_choice: None,
        t: 0,
    })
}

impl DrgTallPipeline {
    /// Number of governed channels (the plant input count).
    pub fn n_channels(&self) -> usize {
        self.sets.len()
    }

    /// Per-channel admissible sets.
    pub fn sets(&self) -> &[Mas] {
        &self.sets
    }

    /// Joint tail set, when any tail output is bounded.
    pub fn tail_set(&self) -> Option<&Mas> {
        self.tail_set.as_ref()
    }

    /// The design-time decomposition.
    pub fn parts(&self) -> &TallParts {
        &self.parts
    }

    /// Governor bookkeeping.
    pub fn governor(&self) -> &GovernorState {
        &self.gov
    }

    /// Constraint box over all plant outputs.
    pub fn constraints(&self) -> &BoxSet {
        &self.constraints
    }

    /// The plant realization being simulated.
    pub fn plant(&self) -> &LinearSystem {
        &self.plant
    }

    /// Active fusion strategy.
    pub fn strategy(&self) -> FuseStrategy {
        self.strategy
    }

    /// Switches the fusion strategy.
    pub fn set_strategy(&mut self, strategy: FuseStrategy) {
        self.strategy = strategy;
    }

    /// Candidate chosen by the most recent fused step.
    pub fn last_choice(&self) -> Option<FuseChoice> {
        self.last_choice
    }

    /// Steps taken so far.
    pub fn steps_taken(&self) -> usize {
        self.t
    }

    /// Evaluates both fusion strategies at the current state without
    /// advancing anything: `(min-factor blend, projection)`.
    pub fn fuse_candidates(&self, r: &DVector<f64>) -> Result<(FuseOutcome, FuseOutcome)> {
        let Some(tail_set) = &self.tail_set else {
            return Err(Error::Validation(
                "no tail constraints: the strategies coincide with the plain bank".into(),
            ));
        };
        let r_prime = self.finv_sys.output(&self.x_finv, r, None);
        let blend = tall_fuse_step(
            &self.sets,
            &self.xs,
            tail_set,
            &self.x_tail,
            &self.gov.v_prev,
            &r_prime,
            FuseStrategy::MinKappa,
        )?;
        let proj = tall_fuse_step(
            &self.sets,
            &self.xs,
            tail_set,
            &self.x_tail,
            &self.gov.v_prev,
            &r_prime,
            FuseStrategy::Projection,
        )?;
        Ok((blend, proj))
    }

    /// One governed step. The returned factors hold one entry per channel
    /// plus, when a tail set exists, the joint tail factor last.
    pub fn step(&mut self, r: &DVector<f64>) -> Result<StepRecord> {
        let m = self.n_channels();
        if r.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "reference has length {}, pipeline has {m} channels",
                r.len()
            )));
        }
        let r_prime = self.finv_sys.output(&self.x_finv, r, None);
        let (v, kappas, choice) = match &self.tail_set {
            Some(tail_set) => {
                let out = tall_fuse_step(
                    &self.sets,
                    &self.xs,
                    tail_set,
                    &self.x_tail,
                    &self.gov.v_prev,
                    &r_prime,
                    self.strategy,
                )?;
                (out.v, out.kappas, Some(out.choice))
            }
            None => {
                let mut v = DVector::zeros(m);
                let mut kappas = DVector::from_element(m, 1.0);
                for i in 0..m {
                    let s = srg_step_explicit(
                        &self.sets[i],
                        &self.xs[i],
                        self.gov.v_prev[i],
                        r_prime[i],
                    )
                    .map_err(|e| Error::Channel {
                        index: i,
                        source: Box::new(e),
                    })?;
                    v[i] = s.v_new;
                    kappas[i] = s.kappa;
                }
                (v, kappas, None)
            }
        };
        let u = self.f_sys.output(&self.x_f, &v, None);
        let y = self.plant.output(&self.x_plant, &u, None);

        self.x_f = self.f_sys.next_state(&self.x_f, &v, None);
        self.x_plant = self.plant.next_state(&self.x_plant, &u, None);
        for i in 0..m {
            let vi = DVector::from_element(1, v[i]);
            self.xs[i] = self.models[i].next_state(&self.xs[i], &vi, None);
        }
        if let Some(tail_sys) = &self.tail_sys {
            self.x_tail = tail_sys.next_state(&self.x_tail, &v, None);
        }
        self.x_finv = self.finv_sys.next_state(&self.x_finv, r, None);
        self.gov.v_prev = v.clone();
        self.gov.kappas = kappas.clone();
        self.last_choice = choice;
        self.t += 1;
        Ok(StepRecord {
            u,
            v,
            r_prime,
            y,
            kappas,
        })
    }

    /// Worst signed violation of the constraint box by an output sample.
    pub fn violation(&self, y: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..y.len().min(self.constraints.dim()) {
            let hi = self.constraints.hi()[i];
            let lo = self.constraints.lo()[i];
            if hi.is_finite() {
                worst = worst.max(y[i] - hi);
            }
            if lo.is_finite() {
                worst = worst.max(lo - y[i]);
            }
        }
        if worst == f64::NEG_INFINITY {
            0.0
        } else {
            worst
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decouple::coupled_benchmark_plant;
    use crate::drg::{drg_tf_build_with, DrgTfOptions, TfMethod};
    use crate::mas::delay_mas;
    use crate::polytope::Polytope;
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe_points() -> Vec<Complex64> {
        vec![
            Complex64::new(1.3, 0.4),
            Complex64::new(-0.7, 1.1),
            Complex64::new(2.2, -0.3),
            Complex64::new(0.9, 0.9),
        ]
    }

    /// 2x3 wide plant: the coupled benchmark extended by a third input
    /// column.
    fn wide_plant() -> RationalMatrix {
        let base = coupled_benchmark_plant(0.05);
        RationalMatrix::new(
            2,
            3,
            vec![
                base.get(0, 0).clone(),
                base.get(0, 1).clone(),
                RationalTf::from_coeffs(&[0.2], &[-0.4, 1.0]).unwrap(),
                base.get(1, 0).clone(),
                base.get(1, 1).clone(),
                RationalTf::from_coeffs(&[0.1], &[-0.3, 1.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn bar_block(pole: f64) -> RationalMatrix {
        RationalMatrix::new(
            1,
            1,
            vec![RationalTf::from_coeffs(&[1.0], &[-pole, 1.0]).unwrap()],
        )
        .unwrap()
    }

    /// 3x2 tall plant: the coupled benchmark plus one extra output row.
    fn tall_plant() -> RationalMatrix {
        let base = coupled_benchmark_plant(0.05);
        RationalMatrix::new(
            3,
            2,
            vec![
                base.get(0, 0).clone(),
                base.get(0, 1).clone(),
                base.get(1, 0).clone(),
                base.get(1, 1).clone(),
                RationalTf::from_coeffs(&[0.5], &[-0.4, 1.0]).unwrap(),
                RationalTf::from_coeffs(&[0.3], &[-0.5, 1.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn block_inverse_matches_the_numeric_inverse_pointwise() {
        // General form with distinct fictitious dynamics and target.
        let g = wide_plant();
        let (g_tilde, dec) = squarify_wide(&g, &bar_block(0.5), &bar_block(0.45)).unwrap();
        for z in probe_points() {
            let gt = g_tilde.eval(z);
            let f = dec.f.eval(z);
            let w = dec.w.eval(z);
            // G_tilde F = W.
            let prod = &gt * &f;
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (prod[(i, j)] - w[(i, j)]).norm() < 1e-8,
                        "G~F != W at ({i},{j}), z = {z}"
                    );
                }
            }
            // F agrees with the numeric inverse times the target.
            let oracle = gt.try_inverse().unwrap() * &w;
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (f[(i, j)] - oracle[(i, j)]).norm() < 1e-8,
                        "block inverse mismatch at ({i},{j}), z = {z}"
                    );
                }
            }
            // Filters compose to the padding delay.
            let comp = dec.f_inv.eval(z) * &f;
            let expect = z.powi(-((dec.beta1 + dec.beta2) as i32));
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { expect } else { Complex64::new(0.0, 0.0) };
                    assert!((comp[(i, j)] - want).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn matched_fictitious_blocks_leave_an_identity_corner() {
        let g = wide_plant();
        let bar = bar_block(0.5);
        let (_, dec) = squarify_wide(&g, &bar, &bar).unwrap();
        for z in probe_points() {
            let f = dec.f.eval(z);
            let pad = z.powi(-(dec.beta1 as i32));
            assert!((f[(2, 2)] - pad).norm() < 1e-8, "corner not identity at {z}");
            assert!(f[(2, 0)].norm() < 1e-12 && f[(2, 1)].norm() < 1e-12);
        }
    }

    #[test]
    fn wide_shapes_are_validated() {
        let square = coupled_benchmark_plant(0.05);
        assert!(matches!(
            squarify_wide(&square, &bar_block(0.5), &bar_block(0.5)),
            Err(Error::DimensionMismatch(_))
        ));
        // Non-diagonal fictitious target.
        let g3 = RationalMatrix::new(
            1,
            3,
            vec![
                RationalTf::from_coeffs(&[1.0], &[-0.5, 1.0]).unwrap(),
                RationalTf::from_coeffs(&[0.5], &[-0.4, 1.0]).unwrap(),
                RationalTf::from_coeffs(&[0.3], &[-0.3, 1.0]).unwrap(),
            ],
        )
        .unwrap();
        let mut bad = RationalMatrix::identity(2);
        *bad.get_mut(0, 1) = RationalTf::constant(0.5);
        assert!(matches!(
            squarify_wide(&g3, &RationalMatrix::identity(2), &bad),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn wide_pipeline_passes_fictitious_references_through() {
        let g = wide_plant();
        let bar = bar_block(0.5);
        let (g_tilde, dec) = squarify_wide(&g, &bar, &bar).unwrap();
        let y = BoxSet::from_bounds(&[
            (-1.2, 1.2),
            (-3.9, 3.9),
            (f64::NEG_INFINITY, f64::INFINITY),
        ])
        .unwrap();
        let mut pipe =
            drg_tf_build_with(&g_tilde, dec, &y, DrgTfOptions::default()).unwrap();
        let r = DVector::from_vec(vec![1.0, 1.0, 0.4]);
        let mut governed = false;
        for _ in 0..300 {
            let rec = pipe.step(&r).unwrap();
            assert!(pipe.violation(&rec.y) <= 1e-9);
            // The fictitious channel is ungoverned pass-through.
            assert_eq!(rec.v[2], rec.r_prime[2]);
            if rec.kappas[0] < 1.0 - 1e-12 || rec.kappas[1] < 1.0 - 1e-12 {
                governed = true;
            }
        }
        assert!(governed, "the physical constraints bind for this reference");
    }

    fn synthetic_sets() -> (Vec<Mas>, Mas) {
        let ch = vec![delay_mas(-1.0, 1.0, 0), delay_mas(-2.0, 2.0, 0)];
        // |v1 + v2| <= 1.5 over zero states.
        let tail = Mas::from_parts(
            Polytope::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]),
                DVector::from_vec(vec![1.5, 1.5]),
            )
            .unwrap(),
            0,
            2,
            0,
            DEFAULT_EPSILON,
        )
        .unwrap();
        (ch, tail)
    }

    #[test]
    fn fusion_factors_match_the_hand_computation() {
        let (ch, tail) = synthetic_sets();
        let feeds = vec![DVector::zeros(0), DVector::zeros(0)];
        let v_prev = DVector::zeros(2);
        let r_prime = DVector::from_vec(vec![2.5, 0.5]);

        let blend = tall_fuse_step(
            &ch,
            &feeds,
            &tail,
            &DVector::zeros(0),
            &v_prev,
            &r_prime,
            FuseStrategy::MinKappa,
        )
        .unwrap();
        // Factors: 1/2.5 = 0.4, unconstrained, 1.5/3 = 0.5.
        assert!((blend.kappas[0] - 0.4).abs() < 1e-12);
        assert!((blend.kappas[1] - 1.0).abs() < 1e-12);
        assert!((blend.kappas[2] - 0.5).abs() < 1e-12);
        assert!((blend.v[0] - 1.0).abs() < 1e-12);
        assert!((blend.v[1] - 0.2).abs() < 1e-12);
        assert_eq!(blend.choice, FuseChoice::MinKappa);

        let proj = tall_fuse_step(
            &ch,
            &feeds,
            &tail,
            &DVector::zeros(0),
            &v_prev,
            &r_prime,
            FuseStrategy::Projection,
        )
        .unwrap();
        // Bank point (1.0, 0.5) sums to exactly the tail bound, so the bank
        // candidate survives whole and is closer than the blend.
        assert_eq!(proj.choice, FuseChoice::BankCandidate);
        assert!((proj.v[0] - 1.0).abs() < 1e-12);
        assert!((proj.v[1] - 0.5).abs() < 1e-12);
        let d_proj = (&r_prime - &proj.v).norm();
        let d_blend = (&r_prime - &blend.v).norm();
        assert!(d_proj < d_blend);
    }

    #[test]
    fn projection_is_admissible_and_never_farther_than_the_blend() {
        let (ch, tail) = synthetic_sets();
        let feeds = vec![DVector::zeros(0), DVector::zeros(0)];
        let empty = DVector::zeros(0);
        let mut v_prev = DVector::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let r_prime = DVector::from_fn(2, |_, _| rng.gen_range(-4.0..4.0));
            let blend = tall_fuse_step(
                &ch, &feeds, &tail, &empty, &v_prev, &r_prime, FuseStrategy::MinKappa,
            )
            .unwrap();
            let proj = tall_fuse_step(
                &ch, &feeds, &tail, &empty, &v_prev, &r_prime, FuseStrategy::Projection,
            )
            .unwrap();
            for (i, set) in ch.iter().enumerate() {
                assert!(set.contains(&empty, &DVector::from_element(1, proj.v[i]), 1e-9));
            }
            assert!(tail.contains(&empty, &proj.v, 1e-9));
            let d_proj = (&r_prime - &proj.v).norm();
            let d_blend = (&r_prime - &blend.v).norm();
            assert!(
                d_proj <= d_blend + 1e-12,
                "projection lost: {d_proj} vs {d_blend}"
            );
            v_prev = proj.v;
        }
    }

    #[test]
    fn tall_pipeline_respects_every_output_bound() {
        let g = tall_plant();
        let y = BoxSet::from_bounds(&[(-1.2, 1.2), (-3.9, 3.9), (-0.3, 0.3)]).unwrap();
        let mut pipe = drg_tall_build(&g, &y, DrgTallOptions::default()).unwrap();
        assert!(pipe.tail_set().is_some());
        let r = DVector::from_vec(vec![1.0, 1.0]);
        let mut tail_bound_active = false;
        for _ in 0..400 {
            let (blend, proj) = pipe.fuse_candidates(&r).unwrap();
            let rec = pipe.step(&r).unwrap();
            assert!(
                pipe.violation(&rec.y) <= 1e-9,
                "violation {}",
                pipe.violation(&rec.y)
            );
            // The step applied the projection; it must be at least as close
            // to the transformed reference as the blend from the same state.
            let d_proj = (&rec.r_prime - &proj.v).norm();
            let d_blend = (&rec.r_prime - &blend.v).norm();
            assert!(d_proj <= d_blend + 1e-12);
            assert_eq!(rec.v, proj.v);
            if rec.kappas[2] < 1.0 - 1e-12 {
                tail_bound_active = true;
            }
        }
        assert!(tail_bound_active, "the tail constraint binds for this run");
    }

    #[test]
    fn tall_blend_strategy_also_keeps_the_run_feasible() {
        let g = tall_plant();
        let y = BoxSet::from_bounds(&[(-1.2, 1.2), (-3.9, 3.9), (-0.3, 0.3)]).unwrap();
        let opts = DrgTallOptions {
            strategy: FuseStrategy::MinKappa,
            ..DrgTallOptions::default()
        };
        let mut pipe = drg_tall_build(&g, &y, opts).unwrap();
        let r = DVector::from_vec(vec![1.0, 1.0]);
        for _ in 0..400 {
            let rec = pipe.step(&r).unwrap();
            assert!(pipe.violation(&rec.y) <= 1e-9);
        }
    }

    #[test]
    fn unbounded_tail_reduces_to_the_plain_bank() {
        let g = tall_plant();
        let y = BoxSet::from_bounds(&[
            (-1.2, 1.2),
            (-3.9, 3.9),
            (f64::NEG_INFINITY, f64::INFINITY),
        ])
        .unwrap();
        let mut pipe = drg_tall_build(&g, &y, DrgTallOptions::default()).unwrap();
        assert!(pipe.tail_set().is_none());
        let r = DVector::from_vec(vec![1.0, 1.0]);
        for _ in 0..200 {
            let rec = pipe.step(&r).unwrap();
            assert!(pipe.violation(&rec.y) <= 1e-9);
            assert_eq!(rec.kappas.len(), 2);
        }
        assert!(pipe.last_choice().is_none());
    }

    #[test]
    fn tall_shapes_are_validated() {
        let square = coupled_benchmark_plant(0.05);
        assert!(matches!(
            tall_parts(&square, TfMethod::Diagonal),
            Err(Error::DimensionMismatch(_))
        ));
        let y = BoxSet::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        assert!(drg_tall_build(&square, &y, DrgTallOptions::default()).is_err());
    }
}

