use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("formula syntax error at byte {pos}: {msg}")]
    FormulaSyntax { pos: usize, msg: String },
    #[error("empty random-effect group at byte {pos}")]
    EmptyRandomGroup { pos: usize },
    #[error("invalid formula: {0}")]
    InvalidFormula(String),
    #[error("probability out of range (0, 1]: {what} = {value}")]
    Probability { what: String, value: f64 },
    #[error("design error: {0}")]
    Design(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no pairs available")]
    NoPairs,
    #[error("missing pair probability in group {group}")]
    MissingPairProbability { group: u32 },
    #[error("singular 2x2 block for pair ({j}, {k}) of group {group}: det = {det:e}")]
    SingularBlock { group: u32, j: usize, k: usize, det: f64 },
    #[error("singular 2x2 block: det = {0:e}")]
    SingularKernel(f64),
    #[error("rank-deficient fixed-effect design; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("degenerate fit: residual variance estimate is zero")]
    DegenerateFit,
    #[error("optimizer failure: {0}")]
    Optimizer(String),
    #[error("stratum {stratum} has a single PSU; variance estimation needs at least two")]
    SinglePsuStratum { stratum: u32 },
    #[error("{failed} of {total} bootstrap replicate fits failed")]
    BootstrapFailures { failed: usize, total: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
