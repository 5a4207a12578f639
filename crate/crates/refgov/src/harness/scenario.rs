//! Scenario descriptions: a versioned, serializable specification of one
//! governed simulation run.
//!
//! A scenario file is a single JSON document carrying the schema tag
//! [`SCHEMA_TAG`]. Validation checks every dimensional relation before a run
//! and reports offending fields by path (`"reference[2].r"`), so a malformed
//! file fails loudly instead of producing a subtly wrong trace.

use crate::drg::{split_inputs, ObserverConfig};
use crate::error::{Error, Result};
use crate::polytope::BoxSet;
use crate::sys::{realize, LinearSystem, RationalMatrix, RationalTf};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Schema tag every scenario file must carry in its `schema` field.
pub const SCHEMA_TAG: &str = "refgov-scenario-v1";

/// One rational transfer-function entry, coefficients ascending in powers of
/// `z` (`num[0] + num[1] z + ...`).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TfEntry {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

/// Transfer-matrix system: `entries` row-major over a `rows x cols` grid.
/// The optional `w_cols`/`w_entries` block is a second transfer matrix from
/// bounded disturbance inputs to the same outputs.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TfSpec {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<TfEntry>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub w_cols: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w_entries: Vec<TfEntry>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

/// State-space system with row-major nested arrays; `Bw`/`Dw` are the
/// optional disturbance input maps (a missing one defaults to zeros).
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SsSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "Bw", default, skip_serializing_if = "Option::is_none")]
    pub bw: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dw", default, skip_serializing_if = "Option::is_none")]
    pub dw: Option<Vec<Vec<f64>>>,
}

/// System definition: `{"tf": {...}}` or `{"ss": {...}}`. The same document
/// shape serves as a standalone system file for `analyze` and `mas build`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SystemSpec {
    Tf(TfSpec),
    Ss(SsSpec),
}

/// Built form of a system spec: the realization that gets simulated plus the
/// exact transfer matrices when the spec provided them.
pub(crate) struct BuiltSystem {
    pub ss: LinearSystem,
    tf: Option<RationalMatrix>,
    tf_w: Option<RationalMatrix>,
}

impl BuiltSystem {
    /// Transfer matrix of the main input block: the spec's own entries when
    /// it was a `tf` spec, otherwise recovered from the realization.
    pub(crate) fn main_tf(&self) -> Result<RationalMatrix> {
        match &self.tf {
            Some(g) => Ok(g.clone()),
            None => self.ss.transfer_function(),
        }
    }

    /// Transfer matrix of the disturbance block.
    pub(crate) fn dist_tf(&self) -> Result<RationalMatrix> {
        if let Some(g) = &self.tf_w {
            return Ok(g.clone());
        }
        match (&self.ss.b_w, &self.ss.d_w) {
            (Some(bw), Some(dw)) => LinearSystem::new(
                self.ss.a.clone(),
                bw.clone(),
                self.ss.c.clone(),
                dw.clone(),
            )?
            .transfer_function(),
            _ => Err(Error::Validation(
                "system: no disturbance map to build a transfer matrix from".into(),
            )),
        }
    }
}

fn check_finite(v: f64, path: impl FnOnce() -> String) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{}: must be finite", path())))
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Validation(format!("{path}: must not be empty")));
    }
    let cols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Validation(format!(
                "{path}[{i}]: has {} entries, row 0 has {cols}",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            check_finite(v, || format!("{path}[{i}][{j}]"))?;
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn tf_block(entries: &[TfEntry], rows: usize, cols: usize, path: &str) -> Result<RationalMatrix> {
    if entries.len() != rows * cols {
        return Err(Error::Validation(format!(
            "{path}: expected {} entries ({rows} rows x {cols} cols), found {}",
            rows * cols,
            entries.len()
        )));
    }
    let mut tfs = Vec::with_capacity(entries.len());
    for (k, e) in entries.iter().enumerate() {
        for (j, &v) in e.num.iter().enumerate() {
            check_finite(v, || format!("{path}[{k}].num[{j}]"))?;
        }
        for (j, &v) in e.den.iter().enumerate() {
            check_finite(v, || format!("{path}[{k}].den[{j}]"))?;
        }
        let tf = RationalTf::from_coeffs(&e.num, &e.den)
            .map_err(|e| Error::Validation(format!("{path}[{k}]: {e}")))?;
        tfs.push(tf);
    }
    RationalMatrix::new(rows, cols, tfs).map_err(|e| Error::Validation(format!("{path}: {e}")))
}

impl SystemSpec {
    /// Parses a system spec from its JSON text.
    pub fn from_json(text: &str) -> Result<SystemSpec> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("system: {e}")))
    }

    /// Serializes the spec as pretty-printed JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system spec serializes")
    }

    /// Reads a system file.
    pub fn load(path: &Path) -> Result<SystemSpec> {
        SystemSpec::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes a system file.
    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    /// Builds the system, reporting problems under the field path `prefix`.
    pub(crate) fn build_at(&self, prefix: &str) -> Result<BuiltSystem> {
        match self {
            SystemSpec::Tf(spec) => {
                if spec.rows == 0 || spec.cols == 0 {
                    return Err(Error::Validation(format!(
                        "{prefix}.tf: needs at least one row and one column"
                    )));
                }
                let g = tf_block(
                    &spec.entries,
                    spec.rows,
                    spec.cols,
                    &format!("{prefix}.tf.entries"),
                )?;
                if spec.w_entries.is_empty() != (spec.w_cols == 0) {
                    return Err(Error::Validation(format!(
                        "{prefix}.tf.w_cols: w_cols and w_entries must be given together"
                    )));
                }
                if spec.w_cols == 0 {
                    let ss = realize(&g)
                        .map_err(|e| Error::Validation(format!("{prefix}.tf: {e}")))?;
                    return Ok(BuiltSystem {
                        ss,
                        tf: Some(g),
                        tf_w: None,
                    });
                }
                let g_w = tf_block(
                    &spec.w_entries,
                    spec.rows,
                    spec.w_cols,
                    &format!("{prefix}.tf.w_entries"),
                )?;
                // Joint realization so the main and disturbance lanes share
                // states, then split the input blocks apart again.
                let joint = g
                    .hcat(&g_w)
                    .and_then(|j| realize(&j))
                    .and_then(|sys| split_inputs(sys, spec.cols))
                    .map_err(|e| Error::Validation(format!("{prefix}.tf: {e}")))?;
                Ok(BuiltSystem {
                    ss: joint,
                    tf: Some(g),
                    tf_w: Some(g_w),
                })
            }
            SystemSpec::Ss(spec) => {
                let a = matrix_from_rows(&spec.a, &format!("{prefix}.ss.A"))?;
                if a.nrows() != a.ncols() {
                    return Err(Error::Validation(format!(
                        "{prefix}.ss.A: must be square, got {}x{}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
                let b = matrix_from_rows(&spec.b, &format!("{prefix}.ss.B"))?;
                let c = matrix_from_rows(&spec.c, &format!("{prefix}.ss.C"))?;
                let d = matrix_from_rows(&spec.d, &format!("{prefix}.ss.D"))?;
                let sys = LinearSystem::new(a, b, c, d)
                    .map_err(|e| Error::Validation(format!("{prefix}.ss: {e}")))?;
                let sys = match (&spec.bw, &spec.dw) {
                    (None, None) => sys,
                    (bw, dw) => {
                        let bw = match bw {
                            Some(rows) => matrix_from_rows(rows, &format!("{prefix}.ss.Bw"))?,
                            None => DMatrix::zeros(
                                sys.n_states(),
                                dw.as_ref().map_or(0, |r| r.first().map_or(0, Vec::len)),
                            ),
                        };
                        let dw = match dw {
                            Some(rows) => matrix_from_rows(rows, &format!("{prefix}.ss.Dw"))?,
                            None => DMatrix::zeros(sys.n_outputs(), bw.ncols()),
                        };
                        sys.with_disturbance(bw, dw)
                            .map_err(|e| Error::Validation(format!("{prefix}.ss: {e}")))?
                    }
                };
                Ok(BuiltSystem {
                    ss: sys,
                    tf: None,
                    tf_w: None,
                })
            }
        }
    }
}

/// Box bounds with `null` encoding an unbounded side.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
}

impl LimitsSpec {
    /// Interval form with `None` mapped to the corresponding infinity.
    pub fn to_box(&self) -> Result<BoxSet> {
        let lo = DVector::from_iterator(
            self.lo.len(),
            self.lo.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
        );
        let hi = DVector::from_iterator(
            self.hi.len(),
            self.hi.iter().map(|v| v.unwrap_or(f64::INFINITY)),
        );
        BoxSet::new(lo, hi)
    }

    /// Spec form of a box, with infinite sides mapped back to `null`.
    pub fn from_box(b: &BoxSet) -> LimitsSpec {
        LimitsSpec {
            lo: b.lo().iter().map(|&v| v.is_finite().then_some(v)).collect(),
            hi: b.hi().iter().map(|&v| v.is_finite().then_some(v)).collect(),
        }
    }
}

/// Which governor architecture runs the scenario.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GovernorKind {
    /// Scalar governor applied directly to a single-input plant.
    Srg,
    /// Vector governor over the joint admissible set of all inputs.
    Vrg,
    /// Filter decoupling toward the plant's own diagonal, then a scalar bank.
    DrgTfDiag,
    /// Filter decoupling toward pure delays, then interval clamps.
    DrgTfIdentity,
    /// State-feedback decoupling with the identity target.
    DrgSsIdentity,
    /// State-feedback decoupling with pole-assignment blocks.
    DrgSsPole,
}

impl GovernorKind {
    /// Kinds routed through the transfer-function filter pair.
    pub fn is_filter_based(self) -> bool {
        matches!(self, GovernorKind::DrgTfDiag | GovernorKind::DrgTfIdentity)
    }

    /// Kinds routed through the static state-feedback pair.
    pub fn is_feedback_based(self) -> bool {
        matches!(self, GovernorKind::DrgSsIdentity | GovernorKind::DrgSsPole)
    }
}

/// Blend-factor solver selection; `explicit` is the closed form, the
/// implicit variants route the same problem through the LP/QP machinery.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverSpec {
    #[default]
    Explicit,
    ImplicitLp,
    ImplicitQp,
}

impl SolverSpec {
    pub(crate) fn to_solver(self) -> crate::drg::GovernorSolver {
        match self {
            SolverSpec::Explicit => crate::drg::GovernorSolver::Explicit,
            SolverSpec::ImplicitLp => crate::drg::GovernorSolver::ImplicitLp,
            SolverSpec::ImplicitQp => crate::drg::GovernorSolver::ImplicitQp,
        }
    }
}

impl std::str::FromStr for SolverSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "explicit" => Ok(SolverSpec::Explicit),
            "implicit_lp" => Ok(SolverSpec::ImplicitLp),
            "implicit_qp" => Ok(SolverSpec::ImplicitQp),
            _ => Err(format!(
                "unknown solver {s:?}; expected explicit, implicit_lp, or implicit_qp"
            )),
        }
    }
}

impl std::fmt::Display for SolverSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverSpec::Explicit => "explicit",
            SolverSpec::ImplicitLp => "implicit_lp",
            SolverSpec::ImplicitQp => "implicit_qp",
        })
    }
}

/// Observer selection for the filter-based governor kinds. The designed
/// variants (`decoupled_poles`, `centralized_kalman`) compute their gains at
/// build time; explicit-gain observers are available through the library API.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObserverSpec {
    OpenLoop,
    DecoupledPoles { pole: f64 },
    CentralizedKalman { measured: Vec<usize> },
}

impl ObserverSpec {
    pub(crate) fn to_config(&self) -> ObserverConfig {
        match self {
            ObserverSpec::OpenLoop => ObserverConfig::OpenLoop,
            ObserverSpec::DecoupledPoles { pole } => {
                ObserverConfig::DecoupledPoles { pole: *pole }
            }
            ObserverSpec::CentralizedKalman { measured } => ObserverConfig::CentralizedKalman {
                measured: measured.clone(),
            },
        }
    }
}

/// Bounded disturbance description: a box sampled uniformly per step with a
/// fixed stream seed, so a run is reproducible bit for bit.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub seed: u64,
}

impl DisturbanceSpec {
    pub fn to_box(&self) -> Result<BoxSet> {
        BoxSet::new(
            DVector::from_vec(self.lo.clone()),
            DVector::from_vec(self.hi.clone()),
        )
    }
}

/// One step of the piecewise-constant reference program: from step `t`
/// onward the reference is `r`, until a later program entry replaces it.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStep {
    pub t: usize,
    pub r: Vec<f64>,
}

fn default_epsilon() -> f64 {
    crate::mas::DEFAULT_EPSILON
}

/// Complete description of one governed simulation run.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Must equal [`SCHEMA_TAG`].
    pub schema: String,
    /// Stable identifier; batch reports are sorted by it.
    pub id: String,
    pub system: SystemSpec,
    /// Output constraint box, one bound pair per output.
    pub constraints: LimitsSpec,
    pub governor: GovernorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSpec>,
    /// Vertex family of a polytopic model uncertainty (feedback-based kinds
    /// only); channel sets are tightened to hold on every vertex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<Vec<SsSpec>>,
    pub reference: Vec<ReferenceStep>,
    /// Number of simulated steps; the trace has exactly this many records.
    pub horizon: usize,
    /// Steady-state tightening factor for the admissible sets.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Pole-assignment blocks (row-major, one square matrix per delay tap)
    /// for the `drg_ss_pole` kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_ms: Option<Vec<Vec<Vec<f64>>>>,
    /// Blend-factor solver; `explicit` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
}

impl Scenario {
    /// Parses a scenario from its JSON text.
    pub fn from_json(text: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    /// Serializes the scenario as pretty-printed JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Reads a scenario file.
    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes a scenario file.
    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub(crate) fn build_system(&self) -> Result<BuiltSystem> {
        self.system.build_at("system")
    }

    /// Reference vector active at step `t`.
    pub fn reference_at(&self, t: usize) -> DVector<f64> {
        let mut cur = &self.reference[0];
        for step in &self.reference {
            if step.t <= t {
                cur = step;
            } else {
                break;
            }
        }
        DVector::from_vec(cur.r.clone())
    }

    /// Pole-assignment blocks as matrices; call after validation.
    pub(crate) fn pole_blocks(&self) -> Option<Vec<DMatrix<f64>>> {
        self.pole_ms.as_ref().map(|blocks| {
            blocks
                .iter()
                .map(|b| DMatrix::from_fn(b.len(), b[0].len(), |i, j| b[i][j]))
                .collect()
        })
    }

    /// Effective blend-factor solver.
    pub fn solver_or_default(&self) -> SolverSpec {
        self.solver.unwrap_or_default()
    }

    /// Checks every dimensional relation of the scenario and reports the
    /// first offending field by path.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.schema != SCHEMA_TAG {
            return fail(format!(
                "schema: expected \"{SCHEMA_TAG}\", found \"{}\"",
                self.schema
            ));
        }
        if self.id.is_empty() {
            return fail("id: must not be empty".into());
        }
        let built = self.build_system()?;
        let m = built.ss.n_inputs();
        let p = built.ss.n_outputs();
        let q = built.ss.n_disturbances();

        if self.constraints.lo.len() != self.constraints.hi.len() {
            return fail(format!(
                "constraints: lo has {} entries, hi has {}",
                self.constraints.lo.len(),
                self.constraints.hi.len()
            ));
        }
        if self.constraints.lo.len() != p {
            return fail(format!(
                "constraints: dimension {} does not match the {p} system outputs",
                self.constraints.lo.len()
            ));
        }
        self.constraints
            .to_box()
            .map_err(|e| Error::Validation(format!("constraints: {e}")))?;

        match self.governor {
            GovernorKind::Srg => {
                if m != 1 {
                    return fail(format!(
                        "governor: srg needs a single-input system, got {m} inputs"
                    ));
                }
            }
            GovernorKind::Vrg => {}
            _ => {
                if m != p {
                    return fail(format!(
                        "governor: decoupled kinds need a square system, got {m} inputs and {p} outputs"
                    ));
                }
            }
        }

        if let Some(obs) = &self.observer {
            if !self.governor.is_filter_based() {
                return fail(
                    "observer: only the filter-based kinds (drg_tf_diag, drg_tf_identity) take an observer"
                        .into(),
                );
            }
            match obs {
                ObserverSpec::OpenLoop => {}
                ObserverSpec::DecoupledPoles { pole } => {
                    if !(pole.abs() < 1.0) {
                        return fail(format!(
                            "observer.pole: must lie strictly inside the unit circle, got {pole}"
                        ));
                    }
                }
                ObserverSpec::CentralizedKalman { measured } => {
                    if measured.is_empty() {
                        return fail("observer.measured: must name at least one output".into());
                    }
                    for (k, &i) in measured.iter().enumerate() {
                        if i >= p {
                            return fail(format!(
                                "observer.measured[{k}]: output {i} does not exist ({p} outputs)"
                            ));
                        }
                    }
                }
            }
        }

        if let Some(d) = &self.disturbance {
            if q == 0 {
                return fail(
                    "disturbance: the system has no disturbance map (tf w_entries or ss Bw/Dw)"
                        .into(),
                );
            }
            if d.lo.len() != d.hi.len() {
                return fail(format!(
                    "disturbance: lo has {} entries, hi has {}",
                    d.lo.len(),
                    d.hi.len()
                ));
            }
            if d.lo.len() != q {
                return fail(format!(
                    "disturbance: dimension {} does not match the {q} disturbance inputs",
                    d.lo.len()
                ));
            }
            for j in 0..d.lo.len() {
                if !d.lo[j].is_finite() || !d.hi[j].is_finite() {
                    return fail(format!("disturbance.lo[{j}]: bounds must be finite"));
                }
                if d.lo[j] > d.hi[j] {
                    return fail(format!(
                        "disturbance.lo[{j}]: lower bound {} exceeds upper bound {}",
                        d.lo[j], d.hi[j]
                    ));
                }
            }
        }

        if let Some(verts) = &self.uncertainty {
            if !self.governor.is_feedback_based() {
                return fail(
                    "uncertainty: only the feedback-based kinds (drg_ss_identity, drg_ss_pole) take vertex families"
                        .into(),
                );
            }
            if self.disturbance.is_some() {
                return fail("uncertainty: cannot be combined with a disturbance spec".into());
            }
            if verts.is_empty() {
                return fail("uncertainty: vertex list must not be empty".into());
            }
            let n = built.ss.n_states();
            for (k, v) in verts.iter().enumerate() {
                if v.bw.is_some() || v.dw.is_some() {
                    return fail(format!(
                        "uncertainty[{k}]: vertices must not carry disturbance maps"
                    ));
                }
                let vert = SystemSpec::Ss(v.clone()).build_at(&format!("uncertainty[{k}]"))?;
                if vert.ss.n_states() != n
                    || vert.ss.n_inputs() != m
                    || vert.ss.n_outputs() != p
                {
                    return fail(format!(
                        "uncertainty[{k}]: vertex has {} states, {} inputs, {} outputs; nominal has {n}, {m}, {p}",
                        vert.ss.n_states(),
                        vert.ss.n_inputs(),
                        vert.ss.n_outputs()
                    ));
                }
            }
        }

        if self.reference.is_empty() {
            return fail("reference: program must contain at least one step".into());
        }
        if self.reference[0].t != 0 {
            return fail("reference[0].t: program must start at step 0".into());
        }
        for k in 1..self.reference.len() {
            if self.reference[k].t <= self.reference[k - 1].t {
                return fail(format!("reference[{k}].t: times must be strictly increasing"));
            }
        }
        for (k, step) in self.reference.iter().enumerate() {
            if step.r.len() != m {
                return fail(format!(
                    "reference[{k}].r: length {} does not match the {m} reference channels",
                    step.r.len()
                ));
            }
            for (j, &v) in step.r.iter().enumerate() {
                if !v.is_finite() {
                    return fail(format!("reference[{k}].r[{j}]: must be finite"));
                }
            }
        }

        if self.horizon == 0 {
            return fail("horizon: must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon: must lie in (0, 1), got {}", self.epsilon));
        }

        match (&self.pole_ms, self.governor) {
            (Some(_), kind) if kind != GovernorKind::DrgSsPole => {
                return fail(
                    "pole_ms: only the drg_ss_pole kind takes pole-assignment blocks".into(),
                );
            }
            (Some(blocks), _) => {
                if blocks.is_empty() {
                    return fail("pole_ms: must contain at least one block".into());
                }
                for (k, block) in blocks.iter().enumerate() {
                    if block.len() != m || block.iter().any(|row| row.len() != m) {
                        return fail(format!("pole_ms[{k}]: block must be {m}x{m}"));
                    }
                    for (i, row) in block.iter().enumerate() {
                        for (j, &v) in row.iter().enumerate() {
                            if !v.is_finite() {
                                return fail(format!("pole_ms[{k}][{i}][{j}]: must be finite"));
                            }
                        }
                    }
                }
            }
            (None, GovernorKind::DrgSsPole) => {
                return fail("pole_ms: the drg_ss_pole kind needs at least one block".into());
            }
            (None, _) => {}
        }

        Ok(())
    }
}

/// The standard benchmark scenario with an adjustable off-diagonal coupling
/// gain: a two-channel plant whose cross terms pull both outputs toward
/// their box bounds, governed by the diagonal-target filter pipeline.
pub fn benchmark_scenario_with_coupling(coupling: f64) -> Scenario {
    Scenario {
        schema: SCHEMA_TAG.to_string(),
        id: format!("coupled-benchmark-q{coupling}"),
        system: SystemSpec::Tf(TfSpec {
            rows: 2,
            cols: 2,
            entries: vec![
                TfEntry {
                    num: vec![0.9],
                    den: vec![0.04, -0.4, 1.0],
                },
                TfEntry {
                    num: vec![coupling],
                    den: vec![1.0, 3.0],
                },
                TfEntry {
                    num: vec![3.0],
                    den: vec![1.0, -4.0, 4.0],
                },
                TfEntry {
                    num: vec![0.4],
                    den: vec![-0.6, 1.0],
                },
            ],
            w_cols: 0,
            w_entries: vec![],
        }),
        constraints: LimitsSpec {
            lo: vec![Some(-1.2), Some(-3.9)],
            hi: vec![Some(1.2), Some(3.9)],
        },
        governor: GovernorKind::DrgTfDiag,
        observer: None,
        disturbance: None,
        uncertainty: None,
        reference: vec![ReferenceStep {
            t: 0,
            r: vec![0.3, 0.8],
        }],
        horizon: 500,
        epsilon: 0.01,
        pole_ms: None,
        solver: None,
    }
}

/// The standard benchmark scenario (weak coupling, `q = 0.05`): the default
/// subject for `bench` and a worked example of the scenario schema.
pub fn benchmark_scenario() -> Scenario {
    benchmark_scenario_with_coupling(0.05)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_scenario_round_trips_through_json() {
        let s = benchmark_scenario();
        let text = s.to_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn benchmark_scenario_validates() {
        benchmark_scenario().validate().unwrap();
        benchmark_scenario_with_coupling(0.5).validate().unwrap();
    }

    #[test]
    fn schema_tag_is_checked() {
        let mut s = benchmark_scenario();
        s.schema = "refgov-scenario-v0".into();
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("schema:"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&benchmark_scenario().to_json()).unwrap();
        doc.as_object_mut()
            .unwrap()
            .insert("horizn".into(), serde_json::json!(10));
        assert!(Scenario::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn validation_reports_field_paths() {
        let base = benchmark_scenario();

        let mut s = base.clone();
        s.constraints.lo.push(Some(-1.0));
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("constraints:"), "{err}");

        let mut s = base.clone();
        s.reference[0].r.pop();
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("reference[0].r"), "{err}");

        let mut s = base.clone();
        s.reference.push(ReferenceStep {
            t: 0,
            r: vec![0.0, 0.0],
        });
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("reference[1].t"), "{err}");

        let mut s = base.clone();
        s.horizon = 0;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("horizon"), "{err}");

        let mut s = base.clone();
        s.epsilon = 1.5;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("epsilon"), "{err}");

        let mut s = base.clone();
        s.disturbance = Some(DisturbanceSpec {
            lo: vec![-0.1],
            hi: vec![0.1],
            seed: 1,
        });
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("disturbance:"), "{err}");

        let mut s = base.clone();
        s.pole_ms = Some(vec![vec![vec![0.9, 0.0], vec![0.0, 0.9]]]);
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("pole_ms"), "{err}");

        let mut s = base.clone();
        if let SystemSpec::Tf(tf) = &mut s.system {
            tf.entries.pop();
        }
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("system.tf.entries"), "{err}");
    }

    #[test]
    fn governor_kind_dimensional_rules() {
        let mut s = benchmark_scenario();
        s.governor = GovernorKind::Srg;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("governor: srg"), "{err}");

        let mut s = benchmark_scenario();
        s.governor = GovernorKind::Vrg;
        s.validate().unwrap();
    }

    #[test]
    fn ss_spec_builds_with_default_dw() {
        let spec = SystemSpec::Ss(SsSpec {
            a: vec![vec![0.5, 0.0], vec![0.0, 0.4]],
            b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            d: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            bw: Some(vec![vec![1.0], vec![0.0]]),
            dw: None,
        });
        let built = spec.build_at("system").unwrap();
        assert_eq!(built.ss.n_states(), 2);
        assert_eq!(built.ss.n_disturbances(), 1);
        let g = built.main_tf().unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 2));
        let gw = built.dist_tf().unwrap();
        assert_eq!((gw.rows(), gw.cols()), (2, 1));
    }

    #[test]
    fn tf_spec_with_disturbance_block_realizes_jointly() {
        let spec = SystemSpec::Tf(TfSpec {
            rows: 1,
            cols: 1,
            entries: vec![TfEntry {
                num: vec![1.0],
                den: vec![-0.5, 1.0],
            }],
            w_cols: 1,
            w_entries: vec![TfEntry {
                num: vec![0.3],
                den: vec![-0.2, 1.0],
            }],
        });
        let built = spec.build_at("system").unwrap();
        assert_eq!(built.ss.n_inputs(), 1);
        assert_eq!(built.ss.n_disturbances(), 1);
    }

    #[test]
    fn limits_round_trip_with_unbounded_sides() {
        let spec = LimitsSpec {
            lo: vec![Some(-1.0), None],
            hi: vec![Some(2.0), Some(3.0)],
        };
        let b = spec.to_box().unwrap();
        assert_eq!(b.lo()[1], f64::NEG_INFINITY);
        assert_eq!(LimitsSpec::from_box(&b), spec);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<LimitsSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn reference_program_lookup_is_piecewise_constant() {
        let mut s = benchmark_scenario();
        s.reference = vec![
            ReferenceStep {
                t: 0,
                r: vec![0.0, 0.0],
            },
            ReferenceStep {
                t: 10,
                r: vec![1.0, -1.0],
            },
        ];
        assert_eq!(s.reference_at(0)[0], 0.0);
        assert_eq!(s.reference_at(9)[0], 0.0);
        assert_eq!(s.reference_at(10)[1], -1.0);
        assert_eq!(s.reference_at(400)[0], 1.0);
    }

    #[test]
    fn system_file_format_parses_both_shapes() {
        let tf_text = r#"{"tf": {"rows": 1, "cols": 1, "entries": [{"num": [1.0], "den": [-0.5, 1.0]}]}}"#;
        let spec = SystemSpec::from_json(tf_text).unwrap();
        assert!(matches!(spec, SystemSpec::Tf(_)));

        let ss_text = r#"{"ss": {"A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]}}"#;
        let spec = SystemSpec::from_json(ss_text).unwrap();
        assert!(matches!(spec, SystemSpec::Ss(_)));
        let built = spec.build_at("system").unwrap();
        assert_eq!(built.ss.n_states(), 1);
    }
}
