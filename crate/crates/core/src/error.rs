use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    Schema(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("{0}")]
    Domain(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unknown unit id {0}")]
    Lookup(i64),

    /// The centered values are zero on the weighted support.
    #[error("degenerate variance: values are constant on the weighted support")]
    DegenerateVariance,

    /// All local means coincide, so the neighbourhood side of the correlation has no spread.
    #[error("degenerate local means: all neighbourhood means are equal")]
    DegenerateLocalMeans,

    #[error("degenerate weights: total weight is zero")]
    DegenerateWeights,

    #[error("degenerate indicator: sample is empty or equals the population")]
    DegenerateIndicator,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("saturation: placed {placed} of {requested} points")]
    Saturation { placed: usize, requested: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable name of the error kind, used in CLI diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Schema(_) => "SchemaError",
            Error::Parse { .. } => "ParseError",
            Error::Domain(_) => "DomainError",
            Error::Infeasible(_) => "InfeasibleError",
            Error::Lookup(_) => "LookupError",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::DegenerateLocalMeans => "DegenerateLocalMeans",
            Error::DegenerateWeights => "DegenerateWeights",
            Error::DegenerateIndicator => "DegenerateIndicator",
            Error::Numeric(_) => "NumericError",
            Error::Saturation { .. } => "SaturationError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }

    /// True for the degenerate-denominator family that simulations count instead of aborting.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateVariance
                | Error::DegenerateLocalMeans
                | Error::DegenerateWeights
                | Error::DegenerateIndicator
        )
    }
}
