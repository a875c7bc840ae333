//! Task executive: the feeding state machine, delivery calibration,
//! primitive scripts and the subtask runners that drive the simulation.

pub mod calibration;
pub mod executive;
pub mod fsm;
pub mod script;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{DeliveryCalibration, Direction};
pub use executive::{Driver, ExecConfig, Executive, Outcome, SessionEvent};
pub use fsm::{Decision, Fsm, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Idle,
    InitScoop,
    EstimateFood,
    Scoop,
    InitWipe,
    Wipe,
    InitDeliver,
    EstimateMouth,
    Deliver,
    TiltAndRetract,
    AbortReturn,
}

impl TaskState {
    pub const ALL: [TaskState; 11] = [
        TaskState::Idle,
        TaskState::InitScoop,
        TaskState::EstimateFood,
        TaskState::Scoop,
        TaskState::InitWipe,
        TaskState::Wipe,
        TaskState::InitDeliver,
        TaskState::EstimateMouth,
        TaskState::Deliver,
        TaskState::TiltAndRetract,
        TaskState::AbortReturn,
    ];

    pub fn is_active(self) -> bool {
        self != TaskState::Idle
    }

    pub fn subtask(self) -> Option<Subtask> {
        match self {
            TaskState::InitScoop | TaskState::EstimateFood | TaskState::Scoop => Some(Subtask::Scoop),
            TaskState::InitWipe | TaskState::Wipe => Some(Subtask::Wipe),
            TaskState::InitDeliver | TaskState::EstimateMouth | TaskState::Deliver | TaskState::TiltAndRetract => {
                Some(Subtask::Deliver)
            }
            TaskState::Idle | TaskState::AbortReturn => None,
        }
    }

    /// Banner text shown to the operator.
    pub fn banner(self) -> &'static str {
        match self {
            TaskState::Idle => "Ready",
            TaskState::InitScoop => "Moving to the bowl",
            TaskState::EstimateFood => "Looking for food",
            TaskState::Scoop => "Scooping",
            TaskState::InitWipe => "Moving to the wiping bar",
            TaskState::Wipe => "Wiping the spoon",
            TaskState::InitDeliver => "Moving toward you",
            TaskState::EstimateMouth => "Finding your mouth",
            TaskState::Deliver => "Feeding",
            TaskState::TiltAndRetract => "Releasing and retracting",
            TaskState::AbortReturn => "Stopped, returning",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    Scoop,
    Wipe,
    Deliver,
}

impl Subtask {
    pub fn name(self) -> &'static str {
        match self {
            Subtask::Scoop => "scoop",
            Subtask::Wipe => "wipe",
            Subtask::Deliver => "deliver",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "scoop" => Some(Subtask::Scoop),
            "wipe" => Some(Subtask::Wipe),
            "deliver" => Some(Subtask::Deliver),
            _ => None,
        }
    }

    pub fn init_state(self) -> TaskState {
        match self {
            Subtask::Scoop => TaskState::InitScoop,
            Subtask::Wipe => TaskState::InitWipe,
            Subtask::Deliver => TaskState::InitDeliver,
        }
    }
}

/// Transition trigger: user-commanded progress or stop/anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "T_N")]
    Normal,
    #[serde(rename = "T_A")]
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ui,
    Cli,
    Monitor,
    /// The executive itself, for subtask progress.
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackLabel {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandKind {
    Scoop,
    Wipe,
    Feed,
    Stop,
    Calibrate { direction: Direction },
    Feedback { label: FeedbackLabel },
    ReEstimateMouth,
    DryRun,
}

impl CommandKind {
    /// Wire name of the command.
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Scoop => "scoop",
            CommandKind::Wipe => "wipe",
            CommandKind::Feed => "feed",
            CommandKind::Stop => "stop",
            CommandKind::Calibrate { .. } => "calibrate",
            CommandKind::Feedback { .. } => "feedback",
            CommandKind::ReEstimateMouth => "re_estimate_mouth",
            CommandKind::DryRun => "dry_run",
        }
    }

    pub fn label(self) -> Label {
        match self {
            CommandKind::Stop => Label::Anomalous,
            _ => Label::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    #[serde(flatten)]
    pub kind: CommandKind,
    pub source: Source,
    /// Simulation tick at which the executive received the command.
    pub tick: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("script error: {0}")]
    Script(String),
    #[error("calibration file error: {0}")]
    Calibration(String),
    #[error("simulation error: {0}")]
    Sim(String),
}
