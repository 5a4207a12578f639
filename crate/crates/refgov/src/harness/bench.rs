//! Governor-step benchmarking. Each repetition replays the scenario and
//! accumulates the wall-clock time of the governor-step computation alone;
//! plant simulation, observer updates, and trace bookkeeping are excluded
//! from the measurement. An initial warm-up repetition is run and discarded.

use super::run::run_validated;
use super::scenario::{Scenario, SolverSpec};
use crate::error::{Error, Result};
use std::fmt;
use std::time::Duration;

/// Aggregate timing for one benchmarked governor configuration.
#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Solver the governor steps were forced to use.
    pub solver: SolverSpec,
    /// Steps per repetition.
    pub steps: usize,
    /// Number of measured repetitions (the warm-up run is not counted).
    pub repetitions: usize,
    /// Mean governor-step time of each measured repetition.
    pub batch_means: Vec<Duration>,
    /// Worst governor-step time of each measured repetition.
    pub batch_maxes: Vec<Duration>,
    /// Mean governor-step time across all measured repetitions.
    pub mean: Duration,
    /// Worst governor-step time across all measured repetitions.
    pub max: Duration,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "solver {}: {} repetitions x {} steps",
            self.solver, self.repetitions, self.steps
        )?;
        writeln!(f, "  mean step: {:.3e} s", self.mean.as_secs_f64())?;
        write!(f, "  max step:  {:.3e} s", self.max.as_secs_f64())
    }
}

fn mean_duration(samples: &[Duration]) -> Duration {
    if samples.is_empty() {
        return Duration::ZERO;
    }
    let total: u128 = samples.iter().map(Duration::as_nanos).sum();
    Duration::from_nanos((total / samples.len() as u128) as u64)
}

/// Benchmarks the governor step of a scenario with the given solver.
///
/// The scenario is validated first; `steps` must be at least 1000 so the
/// per-step mean is stable, and at least one measured repetition is
/// required. Timing covers only the governor-step call inside each
/// simulation step.
pub fn benchmark(
    s: &Scenario,
    solver: SolverSpec,
    steps: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    s.validate()?;
    if steps < 1000 {
        return Err(Error::Validation(format!(
            "steps: benchmark needs at least 1000 steps, got {steps}"
        )));
    }
    if repetitions == 0 {
        return Err(Error::Validation(
            "repetitions: benchmark needs at least one measured repetition".into(),
        ));
    }
    let mut batch_means = Vec::with_capacity(repetitions);
    let mut batch_maxes = Vec::with_capacity(repetitions);
    for rep in 0..=repetitions {
        let trace = run_validated(s, Some(solver.to_solver()), steps)?;
        if rep == 0 {
            // Warm-up repetition: populates caches and the allocator, not
            // the statistics.
            continue;
        }
        batch_means.push(trace.summary.governor_time.mean);
        batch_maxes.push(trace.summary.governor_time.max);
    }
    let mean = mean_duration(&batch_means);
    let max = batch_maxes.iter().copied().max().unwrap_or(Duration::ZERO);
    Ok(BenchReport {
        solver,
        steps,
        repetitions,
        batch_means,
        batch_maxes,
        mean,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::benchmark_scenario;

    #[test]
    fn benchmark_produces_positive_timings() {
        let s = benchmark_scenario();
        let report = benchmark(&s, SolverSpec::Explicit, 1000, 2).unwrap();
        assert_eq!(report.batch_means.len(), 2);
        assert_eq!(report.batch_maxes.len(), 2);
        assert!(report.mean > Duration::ZERO);
        assert!(report.max >= report.mean);
        let text = report.to_string();
        assert!(text.contains("mean step"), "display: {text}");
    }

    #[test]
    fn benchmark_rejects_short_runs() {
        let s = benchmark_scenario();
        let err = benchmark(&s, SolverSpec::Explicit, 999, 2).unwrap_err();
        assert!(err.to_string().contains("at least 1000"), "{err}");
        let err = benchmark(&s, SolverSpec::Explicit, 1000, 0).unwrap_err();
        assert!(err.to_string().contains("repetition"), "{err}");
    }
}
