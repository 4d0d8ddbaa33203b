use thiserror::Error;

/// Errors raised by the simulator, allocator and learner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("EV {id}: power {power_kw} kW outside limits [{min_kw}, {max_kw}]")]
    PowerLimit {
        id: u32,
        power_kw: f64,
        min_kw: f64,
        max_kw: f64,
    },

    #[error("EV {id}: SOC would reach {soc_after}, outside [{soc_min}, {soc_max}] by {overshoot}")]
    SocBound {
        id: u32,
        soc_after: f64,
        soc_min: f64,
        soc_max: f64,
        overshoot: f64,
    },

    #[error("no connected EVs")]
    NoConnected,

    #[error("infeasible EVA power {requested_kw} kW (achievable {achievable_kw} kW)")]
    Infeasible { requested_kw: f64, achievable_kw: f64 },

    #[error("episode already finished; reset the environment")]
    EpisodeDone,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
