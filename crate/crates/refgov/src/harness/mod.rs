//! Simulation, benchmarking, and command-line harness.
//!
//! The harness turns a *scenario file* — a JSON document with a versioned
//! schema tag — into a closed-loop run of one of the governor
//! architectures, and records a [`Trace`] with one record per step plus
//! summary statistics. Scenario execution is deterministic: the same file
//! (including its disturbance seed) always produces a bit-identical CSV.
//!
//! # Scenario schema (`refgov-scenario-v1`)
//!
//! ```json
//! {
//!   "schema": "refgov-scenario-v1",
//!   "id": "my-run",
//!   "system": { "tf": { ... } }            // or { "ss": { ... } }
//!   "constraints": { "lo": [-1.2, null], "hi": [1.2, 3.9] },
//!   "governor": "drg_tf_diag",
//!   "observer": { "kind": "decoupled_poles", "pole": 0.4 },
//!   "disturbance": { "lo": [-0.05], "hi": [0.05], "seed": 7 },
//!   "uncertainty": [ { "A": ..., "B": ..., "C": ..., "D": ... } ],
//!   "reference": [ { "t": 0, "r": [0.3, 0.8] } ],
//!   "horizon": 500,
//!   "epsilon": 0.01,
//!   "pole_ms": [ [[0.9]], [[0.9]] ],
//!   "solver": "explicit"
//! }
//! ```
//!
//! - `system`: either a transfer-function block (`rows`, `cols`, row-major
//!   `entries` with ascending `num`/`den` coefficients, optional `w_cols` +
//!   `w_entries` for disturbance columns) or a state-space block with
//!   row-major matrices `A`, `B`, `C`, `D` and optional `Bw`, `Dw`.
//! - `constraints`: per-output box bounds; `null` leaves a side unbounded.
//! - `governor`: `srg`, `vrg`, `drg_tf_diag`, `drg_tf_identity`,
//!   `drg_ss_identity`, or `drg_ss_pole`.
//! - `observer` (optional, filter architectures only): `open_loop`,
//!   `decoupled_poles` with a common observer `pole`, or
//!   `centralized_kalman` with the list of `measured` outputs.
//! - `disturbance` (optional): a box sampled uniformly with the given seed.
//! - `uncertainty` (optional, feedback architectures only): state-space
//!   vertices of a polytopic model family; channel sets are tightened so
//!   constraints hold on every vertex while the nominal plant is simulated.
//! - `reference`: piecewise-constant program; entries are `(t, r)` pairs
//!   with strictly increasing `t` starting at 0.
//! - `horizon`: number of steps, at least 1.
//! - `epsilon` (optional, default 0.01): steady-state tightening margin.
//! - `pole_ms` (required exactly for `drg_ss_pole`): per-channel square
//!   blocks assigning the decoupled closed-loop dynamics.
//! - `solver` (optional, default `explicit`): `explicit`, `implicit_lp`, or
//!   `implicit_qp`.
//!
//! Validation checks every cross-field dimension before anything runs and
//! reports offending fields by path (for example
//! `constraints: 1 bounds for 2 outputs`). Errors raised mid-run carry the
//! step index.
//!
//! # Trace CSV
//!
//! `t,r_1..r_m,rp_1..rp_m,v_1..v_m,u_1..u_m,y_1..y_p,kappa_1..kappa_m,obs_err`
//! with 17-significant-digit values, so import/export round-trips are
//! bitwise exact. An empty trace exports as a header-only file.
//!
//! # Command line
//!
//! The `refgov` binary exposes `simulate`, `mas build`, `bench`, and
//! `analyze`; see [`cli`]. Exit codes are 0 (success), 1 (validation), and
//! 2 (runtime failure). `REFGOV_OUT_DIR` names the default output
//! directory.

mod bench;
mod cli;
mod run;
mod scenario;
mod trace;

pub use bench::{benchmark, BenchReport};
pub use cli::{analyze_report, cli, OUT_DIR_ENV};
pub use run::{run_batch, run_scenario};
pub use scenario::{
    benchmark_scenario, benchmark_scenario_with_coupling, DisturbanceSpec, GovernorKind,
    LimitsSpec, ObserverSpec, ReferenceStep, Scenario, SolverSpec, SsSpec, SystemSpec, TfEntry,
    TfSpec, SCHEMA_TAG,
};
pub use trace::{export_trace, TimingStats, Trace, TraceRecord, TraceSummary};
