use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // systems
    #[error("adjacency matrix is not aperiodic: no power up to {max_power} is strictly positive")]
    NotAperiodic { max_power: usize },
    #[error("transition support does not match adjacency at ({row}, {col})")]
    IncompatibleSupport { row: usize, col: usize },
    #[error("transition row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("matrix is not unimodular (determinant {det})")]
    NotUnimodular { det: i128 },
    #[error("matrix has an eigenvalue of modulus {modulus} too close to 1")]
    NotHyperbolic { modulus: f64 },
    #[error("index {index} lies outside the sampled window [-{window}, {window}]")]
    WindowExhausted { index: i64, window: i64 },
    #[error("observable and point belong to different system types")]
    VariantMismatch,
    #[error("system is not invertible; negative times are not allowed")]
    NonInvertible,
    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    // sequences
    #[error("term r_{index} = {value} is not positive")]
    NonPositiveTerm { index: u64, value: i128 },

    // correlations
    #[error("exact shift oracle requires cylinder observables")]
    NotCylinder,
    #[error("exact torus oracle requires trigonometric observables")]
    NotTrig,
    #[error("index span {span} exceeds the limit {limit}")]
    SpanTooLarge { span: u64, limit: u64 },
    #[error("frequency vector exceeds {bits} bits")]
    FrequencyOverflow { bits: u64 },
    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("moment table has no entry for subset {mask:#b}")]
    SubsetMissing { mask: u32 },
    #[error("k = {k} exceeds the supported maximum {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("leading observable must have zero mean (mean = {mean})")]
    NotCentered { mean: f64 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    // averages
    #[error("matrix power cache exceeded {limit} entries")]
    PrecisionBudget { limit: usize },

    // dyadic
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // matrix_growth
    #[error("matrix is singular")]
    Singular,
    #[error("eigenvalue modulus {modulus} is indistinguishable from 1")]
    Indeterminate { modulus: f64 },
    #[error("growth fit disagrees with spectral data: {0}")]
    FitInconsistent(String),
    #[error("hypothesis failed: {0}")]
    HypothesisFailed(String),
    #[error("matrices do not commute (max deviation {deviation})")]
    NotCommuting { deviation: f64 },

    #[error("domain error: {0}")]
    DomainError(String),
}

impl Error {
    /// Module-qualified code used in machine-readable summaries.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            NotAperiodic { .. } => "systems.NotAperiodic",
            IncompatibleSupport { .. } => "systems.IncompatibleSupport",
            NotStochastic { .. } => "systems.NotStochastic",
            NotUnimodular { .. } => "systems.NotUnimodular",
            NotHyperbolic { .. } => "systems.NotHyperbolic",
            WindowExhausted { .. } => "systems.WindowExhausted",
            VariantMismatch => "systems.VariantMismatch",
            NonInvertible => "systems.NonInvertible",
            InvalidObservable(_) => "systems.InvalidObservable",
            NonPositiveTerm { .. } => "sequences.NonPositiveTerm",
            NotCylinder => "correlations.NotCylinder",
            NotTrig => "correlations.NotTrig",
            SpanTooLarge { .. } => "correlations.SpanTooLarge",
            FrequencyOverflow { .. } => "correlations.FrequencyOverflow",
            InsufficientData { .. } => "correlations.InsufficientData",
            SubsetMissing { .. } => "correlations.SubsetMissing",
            KTooLarge { .. } => "correlations.KTooLarge",
            NotCentered { .. } => "correlations.NotCentered",
            InvalidQuery(_) => "correlations.InvalidQuery",
            PrecisionBudget { .. } => "averages.PrecisionBudget",
            ShapeMismatch(_) => "dyadic.ShapeMismatch",
            Singular => "matrix_growth.Singular",
            Indeterminate { .. } => "matrix_growth.Indeterminate",
            FitInconsistent(_) => "matrix_growth.FitInconsistent",
            HypothesisFailed(_) => "matrix_growth.HypothesisFailed",
            NotCommuting { .. } => "matrix_growth.NotCommuting",
            DomainError(_) => "DomainError",
        }
    }
}
