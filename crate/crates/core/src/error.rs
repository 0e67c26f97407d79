use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty clutter scene")]
    EmptyClutterScene,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target outside processing region")]
    TargetOutsideRegion,

    #[error("invalid subarray condensation: {horizontal} horizontal elements not divisible by L={l}")]
    InvalidCondensation { horizontal: usize, l: usize },

    #[error("singular covariance: need K >= ΛL samples")]
    SingularCovariance,

    #[error("zero clutter-plus-noise trace in output SCNR")]
    ZeroDenominatorTrace,

    #[error("gain calibration failed to converge: achieved {achieved_db:.3} dB, target {target_db:.3} dB")]
    CalibrationDiverged { achieved_db: f64, target_db: f64 },

    #[error("no clutter subspace above noise floor")]
    NoClutterSubspace,

    #[error("subspace ambient dimensions differ: {0} vs {1}")]
    AmbientMismatch(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate zero error in gain factor")]
    DegenerateZeroError,

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("missing scenario key: {0}")]
    MissingScenario(String),

    #[error("bad dataset file: {0}")]
    BadDatasetFile(String),

    #[error("bad checkpoint file: {0}")]
    BadCheckpointFile(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
