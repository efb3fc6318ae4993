use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate link: transmitter and receiver coincide")]
    DegenerateLink,
    #[error("no donor available")]
    NoDonor,
    #[error("link not scheduled in slot {0}")]
    LinkNotScheduled(&'static str),
    #[error("degenerate record: zero elapsed time for user {0}")]
    DegenerateRecord(usize),
    #[error("no served MC users")]
    NoServedMcUsers,
    #[error("empty MC sample")]
    EmptyMcSample,
    #[error("unnormalized input: feature {name} = {value}")]
    UnnormalizedInput { name: &'static str, value: f64 },
    #[error("action id {0} out of range [0, 80]")]
    InvalidAction(usize),
    #[error("state off the candidate grid: {0}")]
    OffGrid(String),
    #[error("schedule exhausted")]
    ScheduleExhausted,
    #[error("diverged network: non-finite parameter or output")]
    DivergedNetwork,
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
