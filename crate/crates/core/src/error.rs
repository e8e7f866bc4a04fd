use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis mismatch: {left} vs {right}")]
    BasisMismatch { left: String, right: String },

    #[error("coefficient length {got} does not match basis dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) lies outside the closed unit disk")]
    OutsideDisk { x: f64, y: f64 },

    #[error("chord parameter t = {t} outside [0, {tau}]")]
    ChordParameter { t: f64, tau: f64 },

    #[error("line grid too coarse: weight sum {weight_sum} deviates from {exact} by more than 1%")]
    CoarseLineGrid { weight_sum: f64, exact: f64 },

    #[error("theta grid too coarse: {0}")]
    CoarseThetaGrid(String),

    #[error("rank-deficient Gram matrix (condition number {condition:.3e} exceeds {cap:.1e})")]
    RankDeficient { condition: f64, cap: f64 },

    #[error("not a least favourable direction: {projected} vs {difference} ({detail})")]
    InvalidLfd {
        projected: f64,
        difference: f64,
        detail: String,
    },

    #[error("efficient information must be positive, got {0}")]
    NonPositiveInfo(f64),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("covariance not positive definite ({0}); consider adding jitter")]
    NotPositiveDefinite(String),

    #[error("truncation too small: tail {tail:.3e} exceeds noise floor {floor:.3e}; need K_max >= {required}")]
    TruncationTail {
        tail: f64,
        floor: f64,
        required: usize,
    },

    #[error("reference normal has mass {mass:.3e} outside the grid; widen Theta or increase n")]
    ReferenceSupport { mass: f64 },

    #[error("config field '{field}': {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Innermost error, looking through stage wrappers.
    /// Stable machine-readable name of the root cause.
    pub fn code(&self) -> &'static str {
        match self.root() {
            Error::BasisMismatch { .. } => "basis_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::OutsideDisk { .. } => "outside_disk",
            Error::ChordParameter { .. } => "chord_parameter",
            Error::CoarseLineGrid { .. } => "coarse_line_grid",
            Error::CoarseThetaGrid(_) => "coarse_theta_grid",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::InvalidLfd { .. } => "invalid_lfd",
            Error::NonPositiveInfo(_) => "non_positive_info",
            Error::Hypothesis(_) => "hypothesis",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::TruncationTail { .. } => "truncation_tail",
            Error::ReferenceSupport { .. } => "reference_support",
            Error::Config { .. } => "config",
            Error::Parse(_) => "parse",
            Error::Stage { .. } => unreachable!("root is never a stage"),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
