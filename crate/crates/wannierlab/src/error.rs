use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("hopping list is not Hermitian: {entry}")]
    NonHermitian { entry: String },
    #[error("spectral gap closes at k = {k:?} (gap {gap:e})")]
    GapClosure { k: Vec<f64>, gap: f64 },
    #[error("band window selects {found} states at k = {k:?}, expected {expected}")]
    SelectionCount { k: Vec<f64>, expected: usize, found: usize },
    #[error("projections too far: ||P - Q|| = {distance}")]
    ProjectionsTooFar { distance: f64 },
    #[error("matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositive { min_eig: f64 },
    #[error("unitaries do not commute (residual {residual:e})")]
    NonCommuting { residual: f64 },
    #[error("holonomy does not preserve fiber (residual {residual:e})")]
    FiberNotPreserved { residual: f64 },
    #[error("scalar family vanishes at k = {k}")]
    ZeroCrossing { k: f64 },
    #[error("grid too coarse to resolve the winding (rounding residual {residual})")]
    CoarseGrid { residual: f64 },
    #[error("phase family is not even (residual {residual:e})")]
    NotEven { residual: f64 },
    #[error("phase family winds {winding} times")]
    Winding { winding: i64 },
    #[error("degenerate spectrum at k = {nodes:?} (gap {gap:e})")]
    Degenerate { nodes: Vec<f64>, gap: f64 },
    #[error("exp(i phi0) is in the spectrum at k = {k} (distance {distance:e})")]
    CayleySingular { k: f64, distance: f64 },
    #[error("branch matching is ambiguous at k = {k} (score separation {separation}); refine the grid")]
    BranchAmbiguity { k: f64, separation: f64 },
    #[error("conjugation symmetry violated at k = {k:?} (residual {residual:e})")]
    CsViolated { k: Vec<f64>, residual: f64 },
    #[error("projection is not real (residual {residual:e})")]
    NotReal { residual: f64 },
    #[error("could not reach the 1/2 bound after {iterations} shrink steps (last deviation {deviation})")]
    ShrinkFailed { iterations: usize, deviation: f64 },
    #[error("seed is not in Ran P(0) (residual {residual:e})")]
    SeedNotInRange { residual: f64 },
    #[error("sampler is not conjugation symmetric (CS residual {residual:e}); Chern number {chern}")]
    CsGate { chern: i64, residual: f64 },
    #[error("box radius {radius} aliases on a grid of {nodes} nodes")]
    Aliasing { radius: usize, nodes: usize },
    #[error("decay fit needs at least 4 shells, found {found}")]
    InsufficientShells { found: usize },
    #[error("delta too large: ||h - I|| = {deviation} at delta = {delta}")]
    DeltaTooLarge { deviation: f64, delta: f64 },
    #[error("b too large: Gram matrix min eigenvalue {min_eig} < 1/2")]
    FieldTooStrong { min_eig: f64 },
    #[error("Chern number residual {residual} too large; refine the grid")]
    ChernUnreliable { residual: f64 },
    #[error("Wilson loop overlap is singular at k = {k}; refine the grid")]
    SingularOverlap { k: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Pipeline stage the error belongs to, used in CLI error reports.
    pub fn stage(&self) -> &'static str {
        use Error::*;
        match self {
            Input(_) | NonHermitian { .. } | Io(_) => "model",
            GapClosure { .. } | SelectionCount { .. } | ProjectionsTooFar { .. } | NotPositive { .. } | NonCommuting { .. } => {
                "spectral"
            }
            FiberNotPreserved { .. } => "transport",
            ZeroCrossing { .. }
            | CoarseGrid { .. }
            | NotEven { .. }
            | Winding { .. }
            | Degenerate { .. }
            | CayleySingular { .. }
            | BranchAmbiguity { .. }
            | ShrinkFailed { .. } => "unilog",
            CsViolated { .. } | NotReal { .. } | CsGate { .. } => "cs-check",
            SeedNotInRange { .. } => "frame",
            Aliasing { .. } | InsufficientShells { .. } | DeltaTooLarge { .. } => "wannier",
            FieldTooStrong { .. } => "magnetic",
            ChernUnreliable { .. } | SingularOverlap { .. } => "diagnostics",
            Precondition(_) => "precondition",
        }
    }

    /// Grid node where the error triggered, when there is one.
    pub fn node(&self) -> Option<Vec<f64>> {
        use Error::*;
        match self {
            GapClosure { k, .. } | SelectionCount { k, .. } | CsViolated { k, .. } => Some(k.clone()),
            ZeroCrossing { k } | CayleySingular { k, .. } | BranchAmbiguity { k, .. } | SingularOverlap { k } => {
                Some(vec![*k])
            }
            Degenerate { nodes, .. } => nodes.first().map(|k| vec![*k]),
            _ => None,
        }
    }
}
