//! Config-driven runner for the importance-sampling experiments: `run`
//! executes replications and writes artifacts, `report` recomputes the
//! summary table from stored results.

pub mod config;
pub mod results;
pub mod run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("all replications failed; see results.json")]
    AllReplicationsFailed,
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 2 for config errors, 3 when every replication failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllReplicationsFailed => 3,
            CliError::Other(_) => 1,
        }
    }
}
