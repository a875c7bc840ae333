//! The `feeding` command-line tool: headless runs, replay, monitor
//! training and the live WebSocket service.

pub mod commands;
pub mod serve;

/// Process exit codes shared by the subcommands.
pub mod exit {
    /// The run finished and every subtask or check succeeded.
    pub const OK: u8 = 0;
    /// The run finished but a subtask failed or a replay diverged.
    pub const FAILED: u8 = 1;
    /// Bad input or an internal error stopped the run.
    pub const ERROR: u8 = 2;
}
