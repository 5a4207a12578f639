//! Scenario execution: builds the pipeline a scenario describes, walks the
//! reference program, samples disturbances from the seeded stream, and
//! collects the trace.
//!
//! Runs are deterministic: the same scenario and seed produce bit-identical
//! traces. Model-uncertainty scenarios simulate the nominal plant while the
//! channel sets are tightened to hold on every vertex of the family.

use super::scenario::{DisturbanceSpec, GovernorKind, Scenario, SystemSpec};
use super::trace::{summarize, Trace, TraceRecord};
use crate::drg::{
    bank_step, drg_ss_build, drg_ss_robust_build, drg_tf_build, drg_tf_robust_build,
    param_uncertain_build, ChannelKind, DrgSsOptions, DrgSsPipeline, DrgTfOptions, DrgTfPipeline,
    GovernorSolver, ObserverConfig, TfMethod,
};
use crate::error::{Error, Result};
use crate::governor::vrg_step;
use crate::mas::{build_mas, build_robust_mas, delay_mas, Mas, DEFAULT_T_MAX};
use crate::sys::LinearSystem;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

/// Signals produced by one runner step.
struct StepOut {
    r_prime: DVector<f64>,
    v: DVector<f64>,
    u: DVector<f64>,
    y: DVector<f64>,
    kappas: DVector<f64>,
    obs_err: f64,
    gov_time: Duration,
}

/// A built, steppable pipeline for one scenario.
enum Runner {
    /// Scalar governor applied directly to a single-input plant: the
    /// governed reference is the plant input, no transform in between.
    Srg {
        sys: LinearSystem,
        x: DVector<f64>,
        kinds: Vec<ChannelKind>,
        mas: Vec<Mas>,
        v_prev: DVector<f64>,
        solver: GovernorSolver,
    },
    /// Vector governor over the joint admissible set; always solves its
    /// quadratic program, so the solver selection does not apply.
    Vrg {
        sys: LinearSystem,
        x: DVector<f64>,
        mas: Mas,
        u_prev: DVector<f64>,
    },
    Tf(Box<DrgTfPipeline>),
    Ss(Box<DrgSsPipeline>),
}

impl Runner {
    fn dims(&self) -> (usize, usize) {
        match self {
            Runner::Srg { sys, .. } | Runner::Vrg { sys, .. } => {
                (sys.n_inputs(), sys.n_outputs())
            }
            Runner::Tf(p) => (p.n_channels(), p.plant().n_outputs()),
            Runner::Ss(p) => (p.n_channels(), p.plant().n_outputs()),
        }
    }

    fn step(&mut self, r: &DVector<f64>, w: Option<&DVector<f64>>) -> Result<StepOut> {
        match self {
            Runner::Srg {
                sys,
                x,
                kinds,
                mas,
                v_prev,
                solver,
            } => {
                let feeds = vec![x.clone()];
                let gov_start = Instant::now();
                let (v, kappas) = bank_step(kinds, mas, &feeds, v_prev, r, *solver)?;
                let gov_time = gov_start.elapsed();
                let y = sys.output(x, &v, w);
                *x = sys.next_state(x, &v, w);
                *v_prev = v.clone();
                Ok(StepOut {
                    r_prime: r.clone(),
                    u: v.clone(),
                    v,
                    y,
                    kappas,
                    obs_err: 0.0,
                    gov_time,
                })
            }
            Runner::Vrg { sys, x, mas, u_prev } => {
                let gov_start = Instant::now();
                let res = vrg_step(mas, x, u_prev, r)?;
                let gov_time = gov_start.elapsed();
                let u = res.u_new;
                let y = sys.output(x, &u, w);
                *x = sys.next_state(x, &u, w);
                *u_prev = u.clone();
                Ok(StepOut {
                    r_prime: r.clone(),
                    v: u.clone(),
                    u,
                    y,
                    kappas: res.kappas,
                    obs_err: 0.0,
                    gov_time,
                })
            }
            Runner::Tf(pipe) => {
                let rec = pipe.step_with_disturbance(r, w)?;
                Ok(StepOut {
                    r_prime: rec.r_prime,
                    v: rec.v,
                    u: rec.u,
                    y: rec.y,
                    kappas: rec.kappas,
                    obs_err: pipe.last_observer_residual(),
                    gov_time: pipe.last_governor_duration(),
                })
            }
            Runner::Ss(pipe) => {
                let rec = pipe.step_with_disturbance(r, w)?;
                Ok(StepOut {
                    r_prime: rec.r_prime,
                    v: rec.v,
                    u: rec.u,
                    y: rec.y,
                    kappas: rec.kappas,
                    // The feedback architecture measures the state directly.
                    obs_err: 0.0,
                    gov_time: pipe.last_governor_duration(),
                })
            }
        }
    }
}

fn build_runner(s: &Scenario, solver_override: Option<GovernorSolver>) -> Result<Runner> {
    let built = s.build_system()?;
    let y = s.constraints.to_box()?;
    let solver = solver_override.unwrap_or_else(|| s.solver_or_default().to_solver());
    let dist_box = s.disturbance.as_ref().map(|d| d.to_box()).transpose()?;

    match s.governor {
        GovernorKind::Srg | GovernorKind::Vrg => {
            let sys = built.ss.clone();
            let set = match &dist_box {
                Some(w) => build_robust_mas(&sys, &y, w, s.epsilon, DEFAULT_T_MAX)?,
                None => build_mas(&sys, &y, s.epsilon, DEFAULT_T_MAX)?,
            };
            if s.governor == GovernorKind::Srg {
                Ok(Runner::Srg {
                    x: DVector::zeros(sys.n_states()),
                    kinds: vec![ChannelKind::Dynamic],
                    mas: vec![set],
                    v_prev: DVector::zeros(1),
                    solver,
                    sys,
                })
            } else {
                Ok(Runner::Vrg {
                    x: DVector::zeros(sys.n_states()),
                    u_prev: DVector::zeros(sys.n_inputs()),
                    mas: set,
                    sys,
                })
            }
        }
        GovernorKind::DrgTfDiag | GovernorKind::DrgTfIdentity => {
            let method = match s.governor {
                GovernorKind::DrgTfDiag => TfMethod::Diagonal,
                _ => TfMethod::Identity,
            };
            let opts = DrgTfOptions {
                epsilon: s.epsilon,
                method,
                observer: s
                    .observer
                    .as_ref()
                    .map_or(ObserverConfig::OpenLoop, |o| o.to_config()),
                solver,
                ..Default::default()
            };
            let g = built.main_tf()?;
            let pipe = match &dist_box {
                Some(w) => drg_tf_robust_build(&g, &built.dist_tf()?, &y, w, opts)?,
                None => drg_tf_build(&g, &y, opts)?,
            };
            Ok(Runner::Tf(Box::new(pipe)))
        }
        GovernorKind::DrgSsIdentity | GovernorKind::DrgSsPole => {
            let opts = DrgSsOptions {
                epsilon: s.epsilon,
                pole_ms: s.pole_blocks(),
                solver,
                ..Default::default()
            };
            let mut pipe = match &dist_box {
                Some(w) => drg_ss_robust_build(&built.ss, &y, w, opts)?,
                None => drg_ss_build(&built.ss, &y, opts)?,
            };
            if let Some(verts) = &s.uncertainty {
                let mut family = Vec::with_capacity(verts.len());
                for (k, v) in verts.iter().enumerate() {
                    family.push(
                        SystemSpec::Ss(v.clone())
                            .build_at(&format!("uncertainty[{k}]"))?
                            .ss,
                    );
                }
                let p = built.ss.n_outputs();
                let mut sets = Vec::with_capacity(p);
                for i in 0..p {
                    let (lo, hi) = (y.lo()[i], y.hi()[i]);
                    if !lo.is_finite() && !hi.is_finite() {
                        sets.push(delay_mas(lo, hi, built.ss.n_states()));
                        continue;
                    }
                    let set = param_uncertain_build(
                        &family,
                        pipe.decoupling(),
                        i,
                        &y,
                        s.epsilon,
                        DEFAULT_T_MAX,
                    )
                    .map_err(|e| Error::Channel {
                        index: i,
                        source: Box::new(e),
                    })?;
                    sets.push(set.with_channel(i));
                }
                pipe.set_channel_sets(sets)?;
            }
            Ok(Runner::Ss(Box::new(pipe)))
        }
    }
}

/// One uniform sample from the disturbance box.
fn sample_disturbance(rng: &mut ChaCha8Rng, d: &DisturbanceSpec) -> DVector<f64> {
    DVector::from_iterator(
        d.lo.len(),
        d.lo.iter().zip(&d.hi).map(|(&lo, &hi)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        }),
    )
}

/// Runs a validated scenario for `steps` steps. The reference program and
/// disturbance stream extend past the scenario horizon, so benchmarks can
/// run longer than the nominal trace.
pub(crate) fn run_validated(
    s: &Scenario,
    solver_override: Option<GovernorSolver>,
    steps: usize,
) -> Result<Trace> {
    let mut runner = build_runner(s, solver_override)?;
    let (m, p) = runner.dims();
    let mut rng = s
        .disturbance
        .as_ref()
        .map(|d| ChaCha8Rng::seed_from_u64(d.seed));
    let mut records = Vec::with_capacity(steps);
    let mut durations = Vec::with_capacity(steps);
    for t in 0..steps {
        let r = s.reference_at(t);
        let w = rng
            .as_mut()
            .map(|rng| sample_disturbance(rng, s.disturbance.as_ref().unwrap()));
        let out = runner.step(&r, w.as_ref()).map_err(|e| Error::Step {
            step: t,
            source: Box::new(e),
        })?;
        durations.push(out.gov_time);
        records.push(TraceRecord {
            t,
            r,
            r_prime: out.r_prime,
            v: out.v,
            u: out.u,
            y: out.y,
            kappas: out.kappas,
            obs_err: out.obs_err,
        });
    }
    let y_box = s.constraints.to_box()?;
    let summary = summarize(&records, Some(&y_box), &durations);
    Ok(Trace {
        records,
        summary,
        n_inputs: m,
        n_outputs: p,
    })
}

/// Validates and runs a scenario, producing one trace record per step of the
/// horizon. Deterministic given the scenario (including its disturbance
/// seed); errors raised mid-run carry the step index.
pub fn run_scenario(s: &Scenario) -> Result<Trace> {
    s.validate()?;
    run_validated(s, None, s.horizon)
}

/// Runs scenarios concurrently, one worker per available core, and reports
/// the results sorted by scenario id so the output order does not depend on
/// thread scheduling.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<(String, Result<Trace>)> {
    if scenarios.is_empty() {
        return Vec::new();
    }
    let workers = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
        .min(scenarios.len());
    let chunk = scenarios.len().div_ceil(workers);
    let mut results: Vec<(String, Result<Trace>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| (s.id.clone(), run_scenario(s)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scenario worker panicked"))
            .collect()
    });
    results.sort_by(|a, b| a.0.cmp(&b.0));
    results
}
