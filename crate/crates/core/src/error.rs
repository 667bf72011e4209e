use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate coefficient for covariate {covariate} (|coef| < 1e-10)")]
    DegenerateCoefficient { covariate: &'static str },

    #[error("all importance weights are zero for site {site}")]
    AllWeightsZero { site: usize },

    #[error("model {model}: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_model(self, model: &str) -> Error {
        Error::Model {
            model: model.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
