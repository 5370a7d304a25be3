use std::path::PathBuf;

use crate::flexibility::TrajectoryPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data at record {record}: {reason}")]
    MalformedData { record: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("trace covers {seconds} s, at least {required} s required")]
    ShortTrace { seconds: f64, required: f64 },

    #[error("no hour qualifies for target mean {target:.4}")]
    SelectionInfeasible { target: f64 },

    #[error("target hourly mean {target} cannot be realized inside [-1, 1]")]
    ClippingInfeasible { target: f64 },

    #[error("device kind does not support the {0} direction")]
    UnsupportedDirection(&'static str),

    #[error("time step mismatch: reference dt {reference} s, fleet dt {fleet} s")]
    DtMismatch { reference: f64, fleet: f64 },

    #[error("precision undefined: reference is identically zero over the window")]
    UndefinedPrecision,

    #[error("horizon of {horizon_s} s is shorter than one {window_s} s scoring window")]
    HorizonTooShort { horizon_s: f64, window_s: f64 },

    #[error("hour of day {0} out of range 0..24")]
    HourOutOfRange(usize),

    #[error("fleet size cap {cap} reached without meeting the precision threshold")]
    CapExceeded {
        cap: usize,
        trajectory: Vec<TrajectoryPoint>,
    },

    #[error("no feasible control fractions; best attainable mean SoC {max_soc:.4}")]
    MacroInfeasible { max_soc: f64 },

    #[error("fixed point not reached after {iterations} iterations (residual {residual:.3e}, contraction estimate {contraction:.6})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        contraction: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParams(_) | Error::DtMismatch { .. } => 2,
            Error::CapExceeded { .. }
            | Error::MacroInfeasible { .. }
            | Error::SelectionInfeasible { .. }
            | Error::NonConvergence { .. } => 3,
            _ => 4,
        }
    }
}
