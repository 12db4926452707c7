use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode collision: {0} is present in both operands")]
    ModeCollision(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("mode transform is not unitary: {0}")]
    UnitarityViolation(String),

    #[error("port contract violated: {0}")]
    PortContract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("photon cap exceeded: {found} photons, cap is {cap}")]
    PhotonCap { found: u32, cap: u32 },

    #[error("VBS schedule undefined: {0}")]
    ScheduleUndefined(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unsupported instance: {0}")]
    UnsupportedInstance(String),

    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unbound parameter `{0}`")]
    Binding(String),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
