//! Wire messages between the operator console and the service.
//!
//! Every message is one JSON text frame:
//! `{"type": ..., "payload": {...}, "seq": n, "timestamp": t}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{PoseSE3, Vec3};
use crate::sim::arm::N_JOINTS;
use crate::sim::{MassLedger, World};
use crate::task::{CommandKind, Outcome, SessionEvent, Subtask, TaskState, Transition};

pub const PROTOCOL_VERSION: u32 = 1;

/// Message types, in wire spelling.
pub const MESSAGE_TYPES: [&str; 7] = ["command", "state", "scene", "estimate", "feedback_request", "calibration", "error"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("clients may only send command messages, got {0:?}")]
    NotACommand(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBody {
    pub state: TaskState,
    /// Operator-facing text for the state.
    pub banner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Transition>,
    /// Label of the anomaly that stopped the subtask, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBody {
    pub tick: u64,
    pub joints: [f64; N_JOINTS],
    pub utensil: PoseSE3,
    pub utensil_load: f64,
    pub food: MassLedger,
    pub bowl: Vec3,
    pub mouth: PoseSE3,
    pub mouth_open: bool,
}

impl SceneBody {
    pub fn capture(world: &World) -> Self {
        let mut joints = [0.0; N_JOINTS];
        joints.copy_from_slice(world.state.position.as_slice());
        Self {
            tick: world.tick(),
            joints,
            utensil: world.tip_pose(),
            utensil_load: world.utensil.load(),
            food: world.mass_ledger(),
            bowl: world.bowl.pose.position,
            mouth: world.mouth,
            mouth_open: world.effective_mouth_open(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum EstimateBody {
    Mouth { pose: PoseSE3, confidence: f64, open: bool, reused: bool },
    Food { site: Vec3, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequestBody {
    pub execution: usize,
    pub subtask: Subtask,
    pub success: bool,
    pub aborted: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBody {
    /// Persisted offset in the mouth frame, m.
    pub offset: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Command(CommandKind),
    State(StateBody),
    Scene(SceneBody),
    Estimate(EstimateBody),
    FeedbackRequest(FeedbackRequestBody),
    Calibration(CalibrationBody),
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    #[serde(flatten)]
    pub payload: Payload,
    pub seq: u64,
    /// Simulated time, s.
    pub timestamp: f64,
}

impl ProtocolMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }
}

/// Parses a client frame into the command it carries.
pub fn parse_client(text: &str) -> Result<CommandKind, ProtocolError> {
    let v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let ty = v
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::Malformed("missing string field \"type\"".into()))?;
    if !MESSAGE_TYPES.contains(&ty) {
        return Err(ProtocolError::UnknownType(ty.into()));
    }
    if ty != "command" {
        return Err(ProtocolError::NotACommand(ty.into()));
    }
    let body = v.get("payload").cloned().ok_or_else(|| ProtocolError::Malformed("missing payload".into()))?;
    serde_json::from_value(body).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Stamps outgoing payloads for one connection.
#[derive(Debug, Default)]
pub struct Sequencer {
    next: u64,
}

impl Sequencer {
    pub fn stamp(&mut self, payload: Payload, timestamp: f64) -> ProtocolMessage {
        self.next += 1;
        ProtocolMessage { payload, seq: self.next, timestamp }
    }
}

fn state_body(state: TaskState, transition: Option<Transition>, anomaly: Option<String>) -> StateBody {
    let banner = match &anomaly {
        Some(a) => format!("Stopped: {a} detected"),
        None => state.banner().to_string(),
    };
    StateBody { state, banner, transition, anomaly }
}

/// Broadcast payload for the current state, sent to new connections.
pub fn current_state(state: TaskState) -> Payload {
    Payload::State(state_body(state, None, None))
}

/// The broadcast, if any, that a session event produces.
pub fn payload_for(event: &SessionEvent, state: TaskState) -> Option<Payload> {
    Some(match event {
        SessionEvent::Transition(t) => Payload::State(state_body(t.to, Some(t.clone()), None)),
        SessionEvent::Anomaly(a) => Payload::State(state_body(state, None, Some(a.label.clone()))),
        SessionEvent::Calibration { offset, .. } => Payload::Calibration(CalibrationBody { offset: *offset }),
        SessionEvent::MouthEstimate { pose, confidence, open, reused, .. } => {
            Payload::Estimate(EstimateBody::Mouth { pose: *pose, confidence: *confidence, open: *open, reused: *reused })
        }
        SessionEvent::FoodSite { site, index, .. } => Payload::Estimate(EstimateBody::Food { site: *site, index: *index }),
        SessionEvent::Outcome(o) => Payload::FeedbackRequest(feedback_request(o, 0)),
        SessionEvent::Command { accepted: false, reason, command, .. } => Payload::Error {
            reason: format!("{} rejected: {}", command.name(), reason.clone().unwrap_or_default()),
        },
        _ => return None,
    })
}

fn feedback_request(o: &Outcome, execution: usize) -> FeedbackRequestBody {
    FeedbackRequestBody { execution, subtask: o.subtask, success: o.success, aborted: o.aborted, reason: o.reason.clone() }
}

/// Like [`payload_for`], numbering feedback requests by execution.
#[derive(Debug, Default)]
pub struct EventMapper {
    executions: usize,
}

impl EventMapper {
    pub fn map(&mut self, event: &SessionEvent, state: TaskState) -> Option<Payload> {
        if let SessionEvent::Outcome(o) = event {
            let p = Payload::FeedbackRequest(feedback_request(o, self.executions));
            self.executions += 1;
            return Some(p);
        }
        payload_for(event, state)
    }
}
