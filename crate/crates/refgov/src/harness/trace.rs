//! Simulation traces: per-step signal records, run summaries, and the fixed
//! CSV interchange format.
//!
//! The CSV layout is bit-exact: the header is
//! `t,r_1..r_m,rp_1..rp_m,v_1..v_m,u_1..u_m,y_1..y_p,kappa_1..kappa_m,obs_err`
//! expanded without spaces, and every value is written with 17 significant
//! digits, so a round trip through the file reproduces each `f64` exactly.

use crate::error::{Error, Result};
use crate::polytope::BoxSet;
use nalgebra::DVector;
use std::path::Path;
use std::time::Duration;

/// Signals of one simulation step: the raw reference `r`, the transformed
/// reference `r'`, the governed reference `v`, the applied input `u`, the
/// measured output `y`, the per-channel blend factors, and the observer
/// residual norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub r: DVector<f64>,
    pub r_prime: DVector<f64>,
    pub v: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub kappas: DVector<f64>,
    pub obs_err: f64,
}

/// Wall-clock statistics over the per-step governor calls of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TimingStats {
    pub count: usize,
    pub mean: Duration,
    pub max: Duration,
    pub min: Duration,
}

impl TimingStats {
    pub(crate) fn from_samples(samples: &[Duration]) -> TimingStats {
        if samples.is_empty() {
            return TimingStats::default();
        }
        let total: Duration = samples.iter().sum();
        TimingStats {
            count: samples.len(),
            mean: total / samples.len() as u32,
            max: samples.iter().copied().max().unwrap(),
            min: samples.iter().copied().min().unwrap(),
        }
    }
}

/// Aggregate figures of one run. Only the per-step records travel through
/// CSV; summaries are recomputed from records where possible (`max_violation`
/// needs the constraint box and is `NaN` on imported traces).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    /// Worst signed constraint violation over the run; non-positive means
    /// every output sample satisfied the box.
    pub max_violation: f64,
    /// `‖u − r‖` at the final step.
    pub steady_input_gap: f64,
    /// Per output channel: first step at which the output crosses 90% of its
    /// net change over the run; `None` when the channel never moves.
    pub rise_times: Vec<Option<usize>>,
    /// Per-step governor wall-clock statistics.
    pub governor_time: TimingStats,
}

/// A complete run: one record per simulated step plus the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub summary: TraceSummary,
    /// Governed input channels (the `m` in the CSV header).
    pub n_inputs: usize,
    /// Output channels (the `p` in the CSV header).
    pub n_outputs: usize,
}

/// Worst signed violation of a box by a sample; non-positive means inside.
pub(crate) fn box_violation(b: &BoxSet, y: &DVector<f64>) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..y.len().min(b.dim()) {
        if b.hi()[i].is_finite() {
            worst = worst.max(y[i] - b.hi()[i]);
        }
        if b.lo()[i].is_finite() {
            worst = worst.max(b.lo()[i] - y[i]);
        }
    }
    if worst == f64::NEG_INFINITY {
        0.0
    } else {
        worst
    }
}

/// Builds the summary of a record list. `constraints = None` leaves the
/// violation figure undefined (`NaN`).
pub(crate) fn summarize(
    records: &[TraceRecord],
    constraints: Option<&BoxSet>,
    durations: &[Duration],
) -> TraceSummary {
    let max_violation = match (constraints, records.is_empty()) {
        (Some(b), false) => records
            .iter()
            .map(|rec| box_violation(b, &rec.y))
            .fold(f64::NEG_INFINITY, f64::max),
        _ => f64::NAN,
    };
    let steady_input_gap = records
        .last()
        .map_or(f64::NAN, |rec| (&rec.u - &rec.r).norm());
    let rise_times = match (records.first(), records.last()) {
        (Some(first), Some(last)) => {
            let p = first.y.len();
            (0..p)
                .map(|i| {
                    let y0 = first.y[i];
                    let delta = last.y[i] - y0;
                    if delta.abs() <= 1e-9 {
                        return None;
                    }
                    let threshold = y0 + 0.9 * delta;
                    records
                        .iter()
                        .position(|rec| (rec.y[i] - threshold) * delta.signum() >= 0.0)
                })
                .collect()
        }
        _ => Vec::new(),
    };
    TraceSummary {
        max_violation,
        steady_input_gap,
        rise_times,
        governor_time: TimingStats::from_samples(durations),
    }
}

impl Trace {
    /// Number of recorded steps.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The fixed CSV header for `m` input and `p` output channels.
    pub fn header(m: usize, p: usize) -> String {
        let mut cols = Vec::with_capacity(2 + 5 * m + p);
        cols.push("t".to_string());
        for prefix in ["r", "rp", "v", "u"] {
            for i in 1..=m {
                cols.push(format!("{prefix}_{i}"));
            }
        }
        for i in 1..=p {
            cols.push(format!("y_{i}"));
        }
        for i in 1..=m {
            cols.push(format!("kappa_{i}"));
        }
        cols.push("obs_err".to_string());
        cols.join(",")
    }

    /// Renders the trace in the fixed CSV layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&Trace::header(self.n_inputs, self.n_outputs));
        out.push('\n');
        let mut cols: Vec<String> = Vec::with_capacity(2 + 5 * self.n_inputs + self.n_outputs);
        for rec in &self.records {
            cols.clear();
            cols.push(rec.t.to_string());
            for block in [&rec.r, &rec.r_prime, &rec.v, &rec.u, &rec.y, &rec.kappas] {
                for &x in block.iter() {
                    cols.push(format!("{x:.16e}"));
                }
            }
            cols.push(format!("{:.16e}", rec.obs_err));
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes the trace CSV to a file.
    pub fn export(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    /// Parses a trace from its CSV text. The channel counts are recovered
    /// from the header; the summary is recomputed from the records (see
    /// [`TraceSummary`] for which fields survive).
    pub fn from_csv_str(text: &str) -> Result<Trace> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("trace: empty file".into()))?;
        let names: Vec<&str> = header.split(',').collect();
        let m = names
            .iter()
            .filter(|n| n.strip_prefix("r_").is_some_and(|s| s.parse::<usize>().is_ok()))
            .count();
        let p = names
            .iter()
            .filter(|n| n.strip_prefix("y_").is_some_and(|s| s.parse::<usize>().is_ok()))
            .count();
        if header != Trace::header(m, p) {
            return Err(Error::Parse(
                "trace: header does not match the fixed layout".into(),
            ));
        }
        let width = 2 + 5 * m + p;
        let mut records = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(Error::Parse(format!(
                    "trace row {k}: expected {width} fields, found {}",
                    fields.len()
                )));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("trace row {k}, column t: {e}")))?;
            let mut vals = Vec::with_capacity(width - 1);
            for (c, field) in fields[1..].iter().enumerate() {
                let v: f64 = field.parse().map_err(|e| {
                    Error::Parse(format!("trace row {k}, column {}: {e}", c + 1))
                })?;
                vals.push(v);
            }
            let mut take = {
                let mut offset = 0;
                move |len: usize| {
                    let block = DVector::from_row_slice(&vals[offset..offset + len]);
                    offset += len;
                    block
                }
            };
            records.push(TraceRecord {
                t,
                r: take(m),
                r_prime: take(m),
                v: take(m),
                u: take(m),
                y: take(p),
                kappas: take(m),
                obs_err: take(1)[0],
            });
        }
        let summary = summarize(&records, None, &[]);
        Ok(Trace {
            records,
            summary,
            n_inputs: m,
            n_outputs: p,
        })
    }

    /// Reads a trace CSV file.
    pub fn import(path: &Path) -> Result<Trace> {
        Trace::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Writes a trace to a CSV file (free-function form of [`Trace::export`]).
pub fn export_trace(trace: &Trace, path: &Path) -> Result<()> {
    trace.export(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: usize, vals: [f64; 2], y: [f64; 2]) -> TraceRecord {
        TraceRecord {
            t,
            r: DVector::from_row_slice(&vals),
            r_prime: DVector::from_row_slice(&vals),
            v: DVector::from_row_slice(&vals),
            u: DVector::from_row_slice(&vals),
            y: DVector::from_row_slice(&y),
            kappas: DVector::from_row_slice(&[1.0, 1.0]),
            obs_err: 0.0,
        }
    }

    fn trace_of(records: Vec<TraceRecord>) -> Trace {
        let summary = summarize(&records, None, &[]);
        Trace {
            records,
            summary,
            n_inputs: 2,
            n_outputs: 2,
        }
    }

    #[test]
    fn header_matches_the_fixed_layout() {
        assert_eq!(
            Trace::header(2, 3),
            "t,r_1,r_2,rp_1,rp_2,v_1,v_2,u_1,u_2,y_1,y_2,y_3,kappa_1,kappa_2,obs_err"
        );
        assert!(!Trace::header(3, 1).contains(' '));
    }

    #[test]
    fn empty_trace_exports_a_header_only_file() {
        let trace = trace_of(vec![]);
        let csv = trace.to_csv();
        assert_eq!(csv, format!("{}\n", Trace::header(2, 2)));
        let back = Trace::from_csv_str(&csv).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.n_inputs, back.n_outputs), (2, 2));
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        // Values chosen to stress the encoding: non-representable decimals,
        // negative zero, subnormals, huge and tiny magnitudes.
        let tricky = [
            0.1,
            -0.0,
            1.0 / 3.0,
            5e-324,
            1.7976931348623157e308,
            -2.2250738585072014e-308,
            1.0 + f64::EPSILON,
        ];
        let mut records = Vec::new();
        for (t, pair) in tricky.windows(2).enumerate() {
            records.push(record(t, [pair[0], pair[1]], [pair[1], pair[0]]));
        }
        let trace = trace_of(records);
        let csv = trace.to_csv();
        let back = Trace::from_csv_str(&csv).unwrap();
        assert_eq!(back.records.len(), trace.records.len());
        for (a, b) in trace.records.iter().zip(&back.records) {
            assert_eq!(a.t, b.t);
            for (x, y) in a.u.iter().zip(b.u.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.y.iter().zip(b.y.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(csv, back.to_csv());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = trace_of(vec![record(0, [0.25, -1.5], [0.1, 0.2])]);
        export_trace(&trace, &path).unwrap();
        let back = Trace::import(&path).unwrap();
        assert_eq!(back.records, trace.records);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(Trace::from_csv_str("").is_err());
        assert!(Trace::from_csv_str("a,b,c\n").is_err());
        let good = trace_of(vec![record(0, [1.0, 2.0], [0.0, 0.0])]).to_csv();
        let short = good.replace(",0.0000000000000000e0\n", "\n");
        assert!(Trace::from_csv_str(&short).is_err());
    }

    #[test]
    fn summary_figures_from_a_hand_trace() {
        // Output 1 climbs 0 -> 1 over four steps; the 90% threshold is
        // crossed at step 3. Output 2 stays at zero and has no rise time.
        let ys = [[0.0, 0.0], [0.5, 0.0], [0.85, 0.0], [0.95, 0.0], [1.0, 0.0]];
        let records: Vec<TraceRecord> = ys
            .iter()
            .enumerate()
            .map(|(t, y)| record(t, [1.0, 0.0], *y))
            .collect();
        let b = BoxSet::from_bounds(&[(-0.9, 0.9), (-1.0, 1.0)]).unwrap();
        let summary = summarize(&records, Some(&b), &[]);
        assert_eq!(summary.rise_times, vec![Some(3), None]);
        // Worst violation is the final sample poking 0.1 above the band.
        assert!((summary.max_violation - 0.1).abs() < 1e-12);
        // Final u = (1, 0) vs r = (1, 0).
        assert_eq!(summary.steady_input_gap, 0.0);
    }

    #[test]
    fn timing_stats_from_samples() {
        let stats = TimingStats::from_samples(&[
            Duration::from_nanos(100),
            Duration::from_nanos(300),
            Duration::from_nanos(200),
        ]);
        assert_eq!(stats.count, 3);
        assert_eq!(stats.mean, Duration::from_nanos(200));
        assert_eq!(stats.max, Duration::from_nanos(300));
        assert_eq!(stats.min, Duration::from_nanos(100));
        assert_eq!(TimingStats::from_samples(&[]), TimingStats::default());
    }
}
