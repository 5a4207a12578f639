//! Filter-based governed pipeline: `r → F⁻¹ → scalar-governor bank → F →
//! plant`, with one admissible set per decoupled channel.
//!
//! Pure-delay channels (the identity-target design) carry state-free sets,
//! so their governor step is a literal interval clamp. Dynamic channels test
//! membership against the state supplied by the configured observer: the
//! open-loop and per-channel-correction kinds feed each channel's own model
//! state, while the centralized kind feeds the filter state stacked on a
//! full plant estimate and builds the channel sets on that augmented
//! realization.

use super::observer::{ChannelModel, ObserverConfig, ObserverState};
use super::{bank_step, ChannelKind, GovernorSolver, GovernorState, StepRecord};
use crate::decouple::{design_tf_diagonal, design_tf_identity, ic_cancellation, IcCancellation, TfDecoupling};
use crate::error::{Error, Result};
use crate::mas::{build_mas, build_robust_mas, delay_mas, Mas, DEFAULT_EPSILON, DEFAULT_T_MAX};
use crate::polytope::BoxSet;
use crate::sys::rational::{RationalMatrix, RationalTf};
use crate::sys::{realize, LinearSystem};
use nalgebra::{DMatrix, DVector};

/// Which diagonal target the filter pair aims for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfMethod {
    /// `W = diag(G_11 .. G_mm)`: channels keep their own dynamics.
    Diagonal,
    /// `W = z^{-β} I`: channels become pure delays and the governor bank
    /// degenerates to interval clamps.
    Identity,
}

/// Build-time options for the filter pipeline.
#[derive(Debug, Clone)]
pub struct DrgTfOptions {
    /// Steady-state tightening factor for the channel sets.
    pub epsilon: f64,
    /// Horizon cap for the admissible-set recursions.
    pub t_max: usize,
    /// Diagonal target used when the design is not supplied explicitly.
    pub method: TfMethod,
    /// State-estimate source for the dynamic channels.
    pub observer: ObserverConfig,
    /// Steps during which the governor holds `v = v_init` before acting.
    pub warmup: usize,
    /// Initial governed reference; zero when omitted.
    pub v_init: Option<DVector<f64>>,
    /// Known plant initial state; engages the cancellation input when
    /// nonzero.
    pub x0: Option<DVector<f64>>,
    /// Blend-factor solver.
    pub solver: GovernorSolver,
}

impl Default for DrgTfOptions {
    fn default() -> Self {
        DrgTfOptions {
            epsilon: DEFAULT_EPSILON,
            t_max: DEFAULT_T_MAX,
            method: TfMethod::Diagonal,
            observer: ObserverConfig::OpenLoop,
            warmup: 0,
            v_init: None,
            x0: None,
            solver: GovernorSolver::Explicit,
        }
    }
}

/// Governed filter pipeline; see the module docs for the step order.
pub struct DrgTfPipeline {
    plant: LinearSystem,
    x_plant: DVector<f64>,
    f_sys: LinearSystem,
    x_f: DVector<f64>,
    finv_sys: LinearSystem,
    x_finv: DVector<f64>,
    dec: TfDecoupling,
    kinds: Vec<ChannelKind>,
    mas: Vec<Mas>,
    observer: ObserverState,
    gov: GovernorState,
    ic: Option<IcCancellation>,
    constraints: BoxSet,
    last_obs_err: f64,
    last_gov_time: std::time::Duration,
    t: usize,
}

/// Detects an entry of the exact form `z^{-k}` and returns `k`.
fn unit_delay_order(tf: &RationalTf) -> Option<usize> {
    let num = tf.num();
    let den = tf.den();
    if num.degree() != 0 || num.is_zero() {
        return None;
    }
    let k = den.degree();
    for j in 0..k {
        if den.coeff(j) != 0.0 {
            return None;
        }
    }
    let c = num.coeff(0) / den.coeff(k);
    if (c - 1.0).abs() <= 1e-12 {
        Some(k)
    } else {
        None
    }
}

/// Splits a jointly realized system into main and disturbance input blocks.
pub(crate) fn split_inputs(sys: LinearSystem, m: usize) -> Result<LinearSystem> {
    let total = sys.n_inputs();
    if total < m {
        return Err(Error::DimensionMismatch(format!(
            "joint realization has {total} inputs, expected at least {m}"
        )));
    }
    let q = total - m;
    let b = sys.b.columns(0, m).into_owned();
    let d = sys.d.columns(0, m).into_owned();
    let main = LinearSystem::new(
        sys.a.clone(),
        b,
        sys.c.clone(),
        d,
    )?;
    if q == 0 {
        return Ok(main);
    }
    let b_w = sys.b.columns(m, q).into_owned();
    let d_w = sys.d.columns(m, q).into_owned();
    main.with_disturbance(b_w, d_w)
}

/// Augmented realization of the decoupled map: filter states stacked on
/// plant states, driven by the governed reference.
fn augment_filter_plant(f: &LinearSystem, plant: &LinearSystem) -> Result<LinearSystem> {
    let n_f = f.n_states();
    let n = plant.n_states();
    let m = f.n_inputs();
    let p = plant.n_outputs();
    let mut a_w = DMatrix::<f64>::zeros(n_f + n, n_f + n);
    a_w.view_mut((0, 0), (n_f, n_f)).copy_from(&f.a);
    a_w.view_mut((n_f, 0), (n, n_f)).copy_from(&(&plant.b * &f.c));
    a_w.view_mut((n_f, n_f), (n, n)).copy_from(&plant.a);
    let mut b_aug = DMatrix::<f64>::zeros(n_f + n, m);
    b_aug.view_mut((0, 0), (n_f, m)).copy_from(&f.b);
    b_aug.view_mut((n_f, 0), (n, m)).copy_from(&(&plant.b * &f.d));
    let mut c_w = DMatrix::<f64>::zeros(p, n_f + n);
    c_w.view_mut((0, 0), (p, n_f)).copy_from(&(&plant.d * &f.c));
    c_w.view_mut((0, n_f), (p, n)).copy_from(&plant.c);
    let d_w = &plant.d * &f.d;
    let aug = LinearSystem::new(a_w, b_aug, c_w, d_w)?;
    match (&plant.b_w, &plant.d_w) {
        (Some(bw), Some(dw)) => {
            let q = bw.ncols();
            let mut bw_aug = DMatrix::<f64>::zeros(n_f + n, q);
            bw_aug.view_mut((n_f, 0), (n, q)).copy_from(bw);
            aug.with_disturbance(bw_aug, dw.clone())
        }
        _ => Ok(aug),
    }
}

/// Single-input, single-output slice `(A, B e_i, e_iᵀ C, D_ii)` of a system,
/// keeping any disturbance inputs intact.
fn channel_slice(sys: &LinearSystem, i: usize) -> Result<LinearSystem> {
    let sliced = LinearSystem::new(
        sys.a.clone(),
        sys.b.columns(i, 1).into_owned(),
        sys.c.rows(i, 1).into_owned(),
        DMatrix::from_element(1, 1, sys.d[(i, i)]),
    )?;
    match (&sys.b_w, &sys.d_w) {
        (Some(bw), Some(dw)) => sliced.with_disturbance(bw.clone(), dw.rows(i, 1).into_owned()),
        _ => Ok(sliced),
    }
}

/// Designs the filter pair for `g` per the chosen method and assembles the
/// pipeline.
pub fn drg_tf_build(g: &RationalMatrix, y: &BoxSet, opts: DrgTfOptions) -> Result<DrgTfPipeline> {
    let dec = match opts.method {
        TfMethod::Diagonal => design_tf_diagonal(g)?,
        TfMethod::Identity => design_tf_identity(g)?,
    };
    drg_tf_build_with(g, dec, y, opts)
}

/// Assembles the pipeline around an explicitly supplied filter design (used
/// by the widened non-square construction, or to reuse a cached design).
pub fn drg_tf_build_with(
    g: &RationalMatrix,
    dec: TfDecoupling,
    y: &BoxSet,
    opts: DrgTfOptions,
) -> Result<DrgTfPipeline> {
    let plant = realize(g)?;
    build_pipeline(plant, dec, y, None, opts)
}

/// Builds the robust pipeline: the plant is realized jointly with its
/// disturbance map and every channel set is tightened against the bounded
/// disturbance box.
pub fn drg_tf_robust_build(
    g: &RationalMatrix,
    g_w: &RationalMatrix,
    y: &BoxSet,
    w_dist: &BoxSet,
    opts: DrgTfOptions,
) -> Result<DrgTfPipeline> {
    if g_w.rows() != g.rows() {
        return Err(Error::DimensionMismatch(format!(
            "disturbance map has {} rows, plant has {}",
            g_w.rows(),
            g.rows()
        )));
    }
    if w_dist.dim() != g_w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "disturbance box has dimension {}, map has {} inputs",
            w_dist.dim(),
            g_w.cols()
        )));
    }
    if !w_dist.is_bounded() {
        return Err(Error::Validation(
            "robust construction needs a bounded disturbance box".into(),
        ));
    }
    let dec = match opts.method {
        TfMethod::Diagonal => design_tf_diagonal(g)?,
        TfMethod::Identity => design_tf_identity(g)?,
    };
    let joint = realize(&g.hcat(g_w)?)?;
    let plant = split_inputs(joint, g.cols())?;
    let zero_box = w_dist.lo().amax() == 0.0 && w_dist.hi().amax() == 0.0;
    let robust = if zero_box { None } else { Some((g_w, w_dist)) };
    build_pipeline(plant, dec, y, robust, opts)
}

fn build_pipeline(
    plant: LinearSystem,
    dec: TfDecoupling,
    y: &BoxSet,
    robust: Option<(&RationalMatrix, &BoxSet)>,
    opts: DrgTfOptions,
) -> Result<DrgTfPipeline> {
    let m = dec.f.rows();
    let p = plant.n_outputs();
    if plant.n_inputs() != m {
        return Err(Error::DimensionMismatch(format!(
            "plant has {} inputs, filter pair covers {m}",
            plant.n_inputs()
        )));
    }
    if p > m {
        return Err(Error::DimensionMismatch(format!(
            "plant has {p} outputs but only {m} channels; decouple a square subsystem instead"
        )));
    }
    if y.dim() != m {
        return Err(Error::DimensionMismatch(format!(
            "constraint box has dimension {}, pipeline has {m} channels",
            y.dim()
        )));
    }
    for i in p..m {
        if y.lo()[i].is_finite() || y.hi()[i].is_finite() {
            return Err(Error::Validation(format!(
                "channel {i} has no physical output; its constraint must be unbounded"
            )));
        }
    }
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::Validation("epsilon must lie in (0, 1)".into()));
    }
    let f_sys = realize(&dec.f)?;
    let finv_sys = realize(&dec.f_inv)?;

    // Initial plant state and the cancellation input it requires.
    let x_plant = match &opts.x0 {
        Some(x0) => {
            if x0.len() != plant.n_states() {
                return Err(Error::DimensionMismatch(format!(
                    "initial state has length {}, plant has {} states",
                    x0.len(),
                    plant.n_states()
                )));
            }
            x0.clone()
        }
        None => DVector::zeros(plant.n_states()),
    };
    let ic = if x_plant.amax() > 0.0 {
        Some(ic_cancellation(&plant, &x_plant)?)
    } else {
        None
    };

    let centralized = opts.observer.is_centralized();
    let augmented = if centralized {
        Some(augment_filter_plant(&f_sys, &plant)?)
    } else {
        None
    };

    let mut kinds = Vec::with_capacity(m);
    let mut mas = Vec::with_capacity(m);
    let mut models = Vec::with_capacity(m);
    for i in 0..m {
        let (lo, hi) = (y.lo()[i], y.hi()[i]);
        let interval = BoxSet::from_bounds(&[(lo, hi)])?;
        // Channel model: the diagonal map entry, jointly realized with the
        // disturbance row when the sets are robust.
        let model = match robust {
            Some((g_w, _)) => {
                let w_entry = RationalMatrix::new(1, 1, vec![dec.w.get(i, i).clone()])?;
                let dist_row = g_w.submatrix(&[i], &(0..g_w.cols()).collect::<Vec<_>>());
                let joint = realize(&w_entry.hcat(&dist_row)?)?;
                split_inputs(joint, 1)?
            }
            None => realize(&RationalMatrix::new(1, 1, vec![dec.w.get(i, i).clone()])?)?,
        };
        if !lo.is_finite() && !hi.is_finite() {
            kinds.push(ChannelKind::Ungoverned);
            mas.push(delay_mas(lo, hi, 0));
            models.push(ChannelModel::new(model));
            continue;
        }
        let delay_channel = unit_delay_order(dec.w.get(i, i)).is_some();
        match robust {
            None if delay_channel => {
                kinds.push(ChannelKind::StateFree { lo, hi });
                mas.push(delay_mas(lo, hi, 0));
            }
            None => {
                let set = if centralized {
                    let slice = channel_slice(augmented.as_ref().expect("built above"), i)?;
                    build_mas(&slice, &interval, opts.epsilon, opts.t_max)
                } else {
                    build_mas(&model, &interval, opts.epsilon, opts.t_max)
                }
                .map_err(|e| Error::Channel {
                    index: i,
                    source: Box::new(e),
                })?
                .with_channel(i);
                kinds.push(ChannelKind::Dynamic);
                mas.push(set);
            }
            Some((_, w_dist)) => {
                let set = if centralized {
                    let slice = channel_slice(augmented.as_ref().expect("built above"), i)?;
                    build_robust_mas(&slice, &interval, w_dist, opts.epsilon, opts.t_max)
                } else {
                    build_robust_mas(&model, &interval, w_dist, opts.epsilon, opts.t_max)
                }
                .map_err(|e| Error::Channel {
                    index: i,
                    source: Box::new(e),
                })?
                .with_channel(i);
                // The robust set may still be state-free (a pure-delay
                // channel with feedthrough-only disturbance), but its bounds
                // are eroded, so keep the kernel path.
                kinds.push(ChannelKind::Dynamic);
                mas.push(set);
            }
        }
        models.push(ChannelModel::new(model));
    }

    let observer = ObserverState::build(&opts.observer, models, &plant)?;
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
    let x_f = DVector::zeros(f_sys.n_states());
    let x_finv = DVector::zeros(finv_sys.n_states());
    Ok(DrgTfPipeline {
        plant,
        x_plant,
        f_sys,
        x_f,
        finv_sys,
        x_finv,
        dec,
        kinds,
        mas,
        observer,
        gov: GovernorState::new(v_init, opts.solver, opts.warmup),
        ic,
        constraints: y.clone(),
        last_obs_err: 0.0,
        last_gov_time: std::time::Duration::ZERO,
        t: 0,
    })
}

impl DrgTfPipeline {
    /// Number of governed channels (equals the filter dimension).
    pub fn n_channels(&self) -> usize {
        self.kinds.len()
    }

    /// Per-channel admissible sets.
    pub fn mas(&self) -> &[Mas] {
        &self.mas
    }

    /// The filter design the pipeline was built around.
    pub fn decoupling(&self) -> &TfDecoupling {
        &self.dec
    }

    /// Governor bookkeeping (previous reference, blend factors, solver).
    pub fn governor(&self) -> &GovernorState {
        &self.gov
    }

    /// Switches the blend-factor solver.
    pub fn set_solver(&mut self, solver: GovernorSolver) {
        self.gov.solver = solver;
    }

    /// Constraint box the pipeline enforces.
    pub fn constraints(&self) -> &BoxSet {
        &self.constraints
    }

    /// Current true plant state (the simulation side of the pipeline).
    pub fn plant_state(&self) -> &DVector<f64> {
        &self.x_plant
    }

    /// The plant realization being simulated.
    pub fn plant(&self) -> &LinearSystem {
        &self.plant
    }

    /// Steps taken so far.
    pub fn steps_taken(&self) -> usize {
        self.t
    }

    /// Estimation-quality figure of the most recent step: estimate-to-truth
    /// distance for the centralized observer, output innovation norm for the
    /// per-channel kinds. Zero before the first step.
    pub fn last_observer_residual(&self) -> f64 {
        self.last_obs_err
    }

    /// Wall-clock time the most recent step spent in the governor bank
    /// (state-feed assembly and blend-factor computation); the filter,
    /// observer, and plant updates are excluded.
    pub fn last_governor_duration(&self) -> std::time::Duration {
        self.last_gov_time
    }

    /// Current per-channel model states (open-loop and per-channel-corrected
    /// observers).
    pub fn channel_states(&self) -> Option<Vec<DVector<f64>>> {
        match &self.observer {
            ObserverState::OpenLoop { models } | ObserverState::Decoupled { models, .. } => {
                Some(models.iter().map(|m| m.x_hat.clone()).collect())
            }
            ObserverState::Centralized { .. } => None,
        }
    }

    /// Overrides the per-channel estimates (e.g. to start an observer from a
    /// deliberately wrong guess).
    pub fn set_channel_states(&mut self, states: &[DVector<f64>]) -> Result<()> {
        self.observer.set_channel_states(states)
    }

    /// Overrides the centralized plant estimate.
    pub fn set_plant_estimate(&mut self, x0: &DVector<f64>) -> Result<()> {
        self.observer.set_plant_estimate(x0)
    }

    /// Centralized estimate of the plant state, when that observer kind is
    /// configured.
    pub fn plant_estimate(&self) -> Option<&DVector<f64>> {
        match &self.observer {
            ObserverState::Centralized { x_hat, .. } => Some(x_hat),
            _ => None,
        }
    }

    /// One governed step without disturbance.
    pub fn step(&mut self, r: &DVector<f64>) -> Result<StepRecord> {
        self.step_with_disturbance(r, None)
    }

    /// One governed step with the true disturbance sample `w` applied to the
    /// plant (and to any channel models that carry a disturbance input).
    pub fn step_with_disturbance(
        &mut self,
        r: &DVector<f64>,
        w: Option<&DVector<f64>>,
    ) -> Result<StepRecord> {
        let m = self.n_channels();
        if r.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "reference has length {}, pipeline has {m} channels",
                r.len()
            )));
        }
        if let Some(wv) = w {
            if wv.len() != self.plant.n_disturbances() {
                return Err(Error::DimensionMismatch(format!(
                    "disturbance sample has length {}, plant has {} disturbance inputs",
                    wv.len(),
                    self.plant.n_disturbances()
                )));
            }
        }
        // Transformed reference.
        let r_prime = self.finv_sys.output(&self.x_finv, r, None);
        // Governor bank; only this section counts as governor time.
        let gov_start = std::time::Instant::now();
        let (v, kappas) = if self.gov.warmup_left > 0 {
            self.gov.warmup_left -= 1;
            (self.gov.v_prev.clone(), DVector::zeros(m))
        } else {
            let feeds: Vec<DVector<f64>> = (0..m)
                .map(|i| match self.kinds[i] {
                    ChannelKind::Dynamic => self.observer.channel_feed(i, &self.x_f),
                    _ => DVector::zeros(0),
                })
                .collect();
            bank_step(
                &self.kinds,
                &self.mas,
                &feeds,
                &self.gov.v_prev,
                &r_prime,
                self.gov.solver,
            )?
        };
        self.last_gov_time = gov_start.elapsed();
        // Forward filter and the cancellation input.
        let mut u = self.f_sys.output(&self.x_f, &v, None);
        if let Some(ic) = &mut self.ic {
            u += ic.next_term();
        }
        // Plant output at the current state.
        let y = self.plant.output(&self.x_plant, &u, w);
        // Observer residual before states move.
        self.last_obs_err = self.observer_residual(&v, &y);
        // Advance every stateful block.
        self.x_f = self.f_sys.next_state(&self.x_f, &v, None);
        self.x_plant = self.plant.next_state(&self.x_plant, &u, w);
        self.observer.advance(&v, &u, &y, w);
        self.x_finv = self.finv_sys.next_state(&self.x_finv, r, None);
        self.gov.v_prev = v.clone();
        self.gov.kappas = kappas.clone();
        self.t += 1;
        Ok(StepRecord {
            u,
            v,
            r_prime,
            y,
            kappas,
        })
    }

    /// Estimation-quality figure recorded in traces: the centralized kind
    /// reports the estimate-to-truth distance (truth is known in
    /// simulation); the per-channel kinds report the output innovation norm
    /// over dynamic channels.
    fn observer_residual(&self, v: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match &self.observer {
            ObserverState::Centralized { x_hat, .. } => (x_hat - &self.x_plant).norm(),
            ObserverState::OpenLoop { models } | ObserverState::Decoupled { models, .. } => {
                let mut sum = 0.0;
                for (i, model) in models.iter().enumerate() {
                    if self.kinds[i] != ChannelKind::Dynamic || i >= y.len() {
                        continue;
                    }
                    let vi = DVector::from_element(1, v[i]);
                    let y_hat = model.sys.output(&model.x_hat, &vi, None);
                    let e = y[i] - y_hat[0];
                    sum += e * e;
                }
                sum.sqrt()
            }
        }
    }

    /// Worst signed violation of the constraint box by an output sample;
    /// non-positive means satisfied.
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
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn benchmark_constraints() -> BoxSet {
        BoxSet::from_bounds(&[(-1.2, 1.2), (-3.9, 3.9)]).unwrap()
    }

    fn step_ref(m: usize, val: f64) -> DVector<f64> {
        DVector::from_element(m, val)
    }

    #[test]
    fn admissible_constant_reference_passes_through() {
        let g = coupled_benchmark_plant(0.05);
        let y = benchmark_constraints();
        let mut p = drg_tf_build(&g, &y, DrgTfOptions::default()).unwrap();
        let r = DVector::from_vec(vec![0.3, 0.8]);
        let mut last = None;
        for _ in 0..250 {
            let rec = p.step(&r).unwrap();
            assert!(p.violation(&rec.y) <= 1e-9);
            last = Some(rec);
        }
        let rec = last.unwrap();
        // Constant admissible reference: at steady state the governor is
        // inactive and the filter cascade is a pure delay, so u = r.
        assert!((rec.u - &r).amax() < 1e-6, "u settles to r");
        assert!((rec.kappas.min() - 1.0).abs() < 1e-12, "no clamping");
    }

    #[test]
    fn coupled_benchmark_step_respects_both_constraints() {
        let g = coupled_benchmark_plant(0.05);
        let y = benchmark_constraints();
        let mut p = drg_tf_build(&g, &y, DrgTfOptions::default()).unwrap();
        let r = step_ref(2, 1.0);
        let mut clamped = false;
        for _ in 0..400 {
            let rec = p.step(&r).unwrap();
            assert!(
                p.violation(&rec.y) <= 1e-9,
                "violation {}",
                p.violation(&rec.y)
            );
            if rec.kappas.min() < 1.0 - 1e-12 {
                clamped = true;
            }
        }
        assert!(clamped, "governor was active at least once");
    }

    #[test]
    fn stronger_coupling_costs_more_steady_tracking() {
        let r = step_ref(2, 1.0);
        let mut gaps = Vec::new();
        for q in [0.05, 0.5] {
            let g = coupled_benchmark_plant(q);
            let y = benchmark_constraints();
            let mut p = drg_tf_build(&g, &y, DrgTfOptions::default()).unwrap();
            let mut last = DVector::zeros(2);
            for _ in 0..600 {
                last = p.step(&r).unwrap().u;
            }
            gaps.push((last - &r).norm());
        }
        assert!(
            gaps[1] > gaps[0],
            "steady input gap {} (q=0.5) should exceed {} (q=0.05)",
            gaps[1],
            gaps[0]
        );
    }

    #[test]
    fn identity_design_acts_as_componentwise_saturation() {
        let g = coupled_benchmark_plant(0.05);
        let y = benchmark_constraints();
        let opts = DrgTfOptions {
            method: TfMethod::Identity,
            ..DrgTfOptions::default()
        };
        let mut p = drg_tf_build(&g, &y, opts).unwrap();
        for kind in &p.kinds {
            assert!(matches!(kind, ChannelKind::StateFree { .. }));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let r = DVector::from_fn(2, |_, _| rng.gen_range(-6.0..6.0));
            let rec = p.step(&r).unwrap();
            for i in 0..2 {
                let clamped = rec.r_prime[i].clamp(y.lo()[i], y.hi()[i]);
                assert_eq!(
                    rec.v[i].to_bits(),
                    clamped.to_bits(),
                    "channel {i} is a literal clamp"
                );
            }
        }
    }

    #[test]
    fn infeasible_start_names_the_channel() {
        let g = coupled_benchmark_plant(0.05);
        let y = benchmark_constraints();
        let opts = DrgTfOptions {
            v_init: Some(DVector::from_vec(vec![0.0, 50.0])),
            ..DrgTfOptions::default()
        };
        let mut p = drg_tf_build(&g, &y, opts).unwrap();
        let err = p.step(&step_ref(2, 0.0)).unwrap_err();
        match err {
            Error::Channel { index, source } => {
                assert_eq!(index, 1);
                assert!(matches!(*source, Error::InfeasibleStart { .. }));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn channel_models_reproduce_the_plant_outputs() {
        // With zero initial state the plant seen through F equals the
        // diagonal map, so each channel model predicts the plant output: the
        // states captured before a step, driven by that step's v, must give
        // that step's measured y.
        let g = coupled_benchmark_plant(0.05);
        let mut p = drg_tf_build(&g, &benchmark_constraints(), DrgTfOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..150 {
            let r = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let states = p.channel_states().unwrap();
            let rec = p.step(&r).unwrap();
            if let ObserverState::OpenLoop { models } = &p.observer {
                for i in 0..2 {
                    let vi = DVector::from_element(1, rec.v[i]);
                    let y_hat = models[i].sys.output(&states[i], &vi, None);
                    worst = worst.max((y_hat[0] - rec.y[i]).abs());
                }
            }
        }
        assert!(worst < 1e-8, "worst model/plant mismatch {worst}");
    }

    #[test]
    fn output_correction_recovers_a_wrong_initial_guess() {
        let g = coupled_benchmark_plant(0.05);
        let y = benchmark_constraints();
        let opts = DrgTfOptions {
            observer: ObserverConfig::DecoupledPoles { pole: 0.05 },
            warmup: 40,
            ..DrgTfOptions::default()
        };
        let mut wrong = drg_tf_build(&g, &y, opts.clone()).unwrap();
        let mut truth = drg_tf_build(
            &g,
            &y,
            DrgTfOptions {
                warmup: 40,
                ..DrgTfOptions::default()
            },
        )
        .unwrap();
        // Seed the corrected pipeline with a wrong estimate.
        let states = wrong.channel_states().unwrap();
        let bad: Vec<DVector<f64>> = states
            .iter()
            .map(|s| DVector::from_element(s.len(), 0.7))
            .collect();
        wrong.set_channel_states(&bad).unwrap();
        let r = DVector::from_vec(vec![0.4, 0.4]);
        let n_max = wrong
            .channel_states()
            .unwrap()
            .iter()
            .map(|s| s.len())
            .max()
            .unwrap();
        let horizon = 20 * n_max;
        let mut err = f64::INFINITY;
        for t in 0..horizon + 10 {
            wrong.step(&r).unwrap();
            truth.step(&r).unwrap();
            if t >= horizon {
                let a = wrong.channel_states().unwrap();
                let b = truth.channel_states().unwrap();
                err = a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                break;
            }
        }
        assert!(err < 1e-6, "estimation error {err} after {horizon} steps");
    }

    #[test]
    fn centralized_sets_use_the_augmented_state() {
        let g = coupled_benchmark_plant(0.05);
        let y = benchmark_constraints();
        let opts = DrgTfOptions {
            observer: ObserverConfig::CentralizedKalman { measured: vec![0, 1] },
            ..DrgTfOptions::default()
        };
        let mut p = drg_tf_build(&g, &y, opts).unwrap();
        let expect = p.f_sys.n_states() + p.plant.n_states();
        for set in p.mas() {
            assert_eq!(set.n_states(), expect, "sets live on (x_f, x_hat)");
        }
        let r = step_ref(2, 1.0);
        for _ in 0..300 {
            let rec = p.step(&r).unwrap();
            assert!(p.violation(&rec.y) <= 1e-9);
        }
        // Exact model and exact start: the estimate tracks the truth.
        let est = p.plant_estimate().unwrap();
        assert!((est - &p.x_plant).amax() < 1e-8);
    }

    #[test]
    fn zero_disturbance_box_reproduces_nominal_rows() {
        let g = coupled_benchmark_plant(0.05);
        let g_w = RationalMatrix::new(
            2,
            1,
            vec![
                RationalTf::from_coeffs(&[0.1], &[-0.5, 1.0]).unwrap(),
                RationalTf::from_coeffs(&[0.2], &[-0.4, 1.0]).unwrap(),
            ],
        )
        .unwrap();
        let y = benchmark_constraints();
        let zero = BoxSet::from_bounds(&[(0.0, 0.0)]).unwrap();
        let nominal = drg_tf_build(&g, &y, DrgTfOptions::default()).unwrap();
        let robust = drg_tf_robust_build(&g, &g_w, &y, &zero, DrgTfOptions::default()).unwrap();
        for (a, b) in nominal.mas().iter().zip(robust.mas().iter()) {
            assert_eq!(a.polytope().h_mat(), b.polytope().h_mat());
            assert_eq!(a.polytope().h_vec(), b.polytope().h_vec());
        }
    }

    #[test]
    fn feedthrough_only_disturbance_shifts_every_bound_by_its_support() {
        // Scalar lag with a static disturbance path: B_w = 0, D_w = 0.5, so
        // every tightened set bound moves by 0.5 * 0.1 and nothing else
        // changes.
        let g = RationalMatrix::new(
            1,
            1,
            vec![RationalTf::from_coeffs(&[0.4], &[-0.6, 1.0]).unwrap()],
        )
        .unwrap();
        let g_w = RationalMatrix::new(1, 1, vec![RationalTf::constant(0.5)]).unwrap();
        let y = BoxSet::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let dist = BoxSet::from_bounds(&[(-0.1, 0.1)]).unwrap();
        let nominal = drg_tf_build(&g, &y, DrgTfOptions::default()).unwrap();
        let robust = drg_tf_robust_build(&g, &g_w, &y, &dist, DrgTfOptions::default()).unwrap();
        let n = &nominal.mas()[0];
        let r = &robust.mas()[0];
        assert_eq!(n.polytope().n_rows(), r.polytope().n_rows());
        assert_eq!(n.t_star(), r.t_star());
        // Row senses match; bounds differ by the support 0.05, scaled by
        // (1 - epsilon) on the steady rows.
        let hn = n.polytope().h_vec();
        let hr = r.polytope().h_vec();
        for k in 0..hn.len() {
            let shift = hn[k] - hr[k];
            let tightened = 0.05 * (1.0 - DEFAULT_EPSILON);
            assert!(
                (shift - 0.05).abs() < 1e-12 || (shift - tightened).abs() < 1e-12,
                "row {k} shifted by {shift}"
            );
        }
    }

    #[test]
    fn seeded_disturbance_run_stays_feasible() {
        let g = coupled_benchmark_plant(0.05);
        // Disturbance paths 0.2/((z-0.5)^2 (3z+1)) and 0.3/((2z+1)(z-0.7)^2).
        let g_w = RationalMatrix::new(
            2,
            1,
            vec![
                RationalTf::from_coeffs(&[0.2], &[0.25, -0.25, -2.0, 3.0]).unwrap(),
                RationalTf::from_coeffs(&[0.3], &[0.49, -0.42, -1.8, 2.0]).unwrap(),
            ],
        )
        .unwrap();
        let y = benchmark_constraints();
        let dist = BoxSet::from_bounds(&[(-0.1, 0.1)]).unwrap();
        let mut p = drg_tf_robust_build(&g, &g_w, &y, &dist, DrgTfOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let r = step_ref(2, 1.0);
        for _ in 0..250 {
            let w = DVector::from_fn(1, |_, _| rng.gen_range(-0.1..0.1));
            let rec = p.step_with_disturbance(&r, Some(&w)).unwrap();
            assert!(
                p.violation(&rec.y) <= 1e-9,
                "violation {}",
                p.violation(&rec.y)
            );
        }
    }
}
