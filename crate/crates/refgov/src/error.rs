use thiserror::Error;

/// Unified error type for the toolkit.
///
/// Variants are grouped by the layer that raises them: system algebra,
/// polytope/optimization, admissible-set construction, governor stepping,
/// decoupling design, and harness I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The determinant of a square transfer matrix vanishes identically, so
    /// no rational inverse exists.
    #[error("transfer matrix is singular: determinant vanishes identically")]
    SingularTransferMatrix,

    /// A matrix entry has numerator degree above denominator degree where a
    /// proper entry is required.
    #[error("entry ({row},{col}) is improper: numerator degree exceeds denominator degree by {excess}")]
    ImproperEntry { row: usize, col: usize, excess: usize },

    /// `I - A` is singular, so the DC gain is undefined.
    #[error("system has a pole at z = 1; DC gain is undefined")]
    PoleAtOne,

    #[error("system is unstable: spectral radius {0:.6} >= 1")]
    UnstableSystem(f64),

    #[error("polytope is empty")]
    EmptyPolytope,

    #[error("linear program is unbounded in the requested direction")]
    Unbounded,

    #[error("linear program is infeasible")]
    Infeasible,

    /// The admissible-set row recursion did not become redundant within the
    /// step budget.
    #[error("admissible set is not finitely determined within {0} steps")]
    NotFinitelyDetermined(usize),

    /// Worst-case disturbance margins consumed the whole constraint range.
    #[error("robust admissible set is empty: disturbance margins exceed the constraint range")]
    EmptyRobustMas,

    /// The governor was asked to step from a point outside the admissible set.
    #[error("governor start point infeasible: row {row} violated by {violation:.3e}")]
    InfeasibleStart { row: usize, violation: f64 },

    /// Wraps an error raised by one channel of a multi-channel operation.
    #[error("channel {index}: {source}")]
    Channel {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// The decoupling matrix B* built from the relative-degree rows is
    /// singular; state-feedback decoupling does not exist.
    #[error("B* is singular (min singular value {0:.3e}); state-feedback decoupling does not exist")]
    SingularBStar(f64),

    /// The plant inverse has a pole on or outside the unit circle, so the
    /// decoupling filter would be internally unstable.
    #[error("inverse system is unstable: pole at modulus {0:.6}")]
    UnstableInverse(f64),

    /// The state-feedback loop is unstable, so no certificate can be issued.
    #[error("decoupled loop is unstable: spectral radius {0:.6} >= 1")]
    UnstableLoop(f64),

    /// One vertex of an uncertainty polytope is unstable under the nominal
    /// feedback pair, so no robust admissible set exists.
    #[error("uncertainty vertex {vertex} is unstable under the nominal feedback: spectral radius {rho:.6} >= 1")]
    UnstableVertexLoop { vertex: usize, rho: f64 },

    #[error("observer error dynamics unstable: spectral radius {0:.6} >= 1")]
    UnstableObserver(f64),

    /// The user-supplied lower-right block of a widened plant is singular.
    #[error("auxiliary block is singular: determinant vanishes identically")]
    SingularGBar,

    /// Neither line-search candidate of the tall-system fusion is feasible.
    #[error("both projection candidates are infeasible")]
    BothProjectionsInfeasible,

    /// Wraps an error raised at a known step of a scenario run.
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("validation: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
