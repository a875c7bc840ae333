//! The feeding state machine: command decisions and the transition table.

use serde::{Deserialize, Serialize};

use crate::task::{CommandKind, Label, Source, Subtask, TaskState};

/// One state change as written to the session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub tick: u64,
    pub from: TaskState,
    pub to: TaskState,
    pub label: Label,
    pub cause: String,
    pub source: Source,
}

/// What the state machine does with a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// Change state.
    Go { to: TaskState, label: Label },
    /// Accepted without a state change.
    Accept,
    Reject { reason: String },
}

/// Facts about the world the guards depend on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Guards {
    pub spoon: bool,
    pub loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fsm {
    pub state: TaskState,
    /// Subtask the current activity belongs to; kept through AbortReturn.
    pub subtask: Option<Subtask>,
    pub entered: u64,
    /// Tick the current activity left Idle.
    pub started: u64,
}

impl Default for Fsm {
    fn default() -> Self {
        Self { state: TaskState::Idle, subtask: None, entered: 0, started: 0 }
    }
}

/// Whether `from → to` under `label` is an edge of the graph.
pub fn is_edge(from: TaskState, to: TaskState, label: Label) -> bool {
    use TaskState::*;
    match label {
        Label::Anomalous => from.is_active() && from != AbortReturn && to == AbortReturn,
        Label::Normal => matches!(
            (from, to),
            (Idle, InitScoop)
                | (Idle, InitWipe)
                | (Idle, InitDeliver)
                | (InitScoop, EstimateFood)
                | (EstimateFood, Scoop)
                | (InitWipe, Wipe)
                | (InitDeliver, EstimateMouth)
                | (EstimateMouth, Deliver)
                | (Deliver, TiltAndRetract)
        ) || (from.is_active() && to == Idle),
    }
}

impl Fsm {
    /// Decides a command against the current state without changing it.
    pub fn decide(&self, cmd: &CommandKind, guards: &Guards) -> Decision {
        let reject = |r: &str| Decision::Reject { reason: r.to_string() };
        let busy = || reject(&format!("busy: {}", self.state.banner().to_lowercase()));
        match (self.state, cmd) {
            (TaskState::Idle, CommandKind::Stop) => Decision::Accept,
            (TaskState::AbortReturn, CommandKind::Stop) => Decision::Accept,
            (_, CommandKind::Stop) => Decision::Go { to: TaskState::AbortReturn, label: Label::Anomalous },
            (TaskState::Idle, CommandKind::Scoop) => Decision::Go { to: TaskState::InitScoop, label: Label::Normal },
            (TaskState::Idle, CommandKind::Wipe) if !guards.spoon => reject("wiping needs a spoon"),
            (TaskState::Idle, CommandKind::Wipe) => Decision::Go { to: TaskState::InitWipe, label: Label::Normal },
            (TaskState::Idle, CommandKind::Feed) => Decision::Go { to: TaskState::InitDeliver, label: Label::Normal },
            (TaskState::Idle, CommandKind::DryRun) if guards.loaded => reject("dry run needs an empty utensil"),
            (TaskState::Idle, CommandKind::DryRun) => Decision::Go { to: TaskState::InitDeliver, label: Label::Normal },
            (TaskState::Idle, CommandKind::Calibrate { .. })
            | (TaskState::Idle, CommandKind::Feedback { .. })
            | (TaskState::Idle, CommandKind::ReEstimateMouth) => Decision::Accept,
            _ => busy(),
        }
    }

    /// Moves to `to`, returning the record. Panics on a non-edge, which
    /// would be an executive bug.
    pub fn go(&mut self, to: TaskState, label: Label, cause: &str, source: Source, tick: u64) -> Transition {
        assert!(is_edge(self.state, to, label), "illegal transition {:?} -> {:?} ({:?})", self.state, to, label);
        let t = Transition { tick, from: self.state, to, label, cause: cause.to_string(), source };
        if let Some(s) = to.subtask() {
            self.subtask = Some(s);
        } else if to == TaskState::Idle {
            self.subtask = None;
        }
        if self.state == TaskState::Idle {
            self.started = tick;
        }
        self.state = to;
        self.entered = tick;
        t
    }
}
