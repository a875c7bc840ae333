//! Headless sessions: timed command scripts, session records and replay.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge::record::{RecordHeader, SessionRecord};
use crate::monitor::FeatureSequence;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{World, TICK_HZ};
use crate::task::{CommandKind, Driver, Executive, SessionEvent, Source, TaskError, TaskState, Transition};

/// Hard cap on simulated session length, ticks.
pub const MAX_SESSION_TICKS: u64 = 3_600 * TICK_HZ;

#[derive(Debug, Error)]
pub enum HeadlessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("script: {0}")]
    Script(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("scenario hash {actual} does not match the record's {expected}")]
    ScenarioMismatch { expected: String, actual: String },
    #[error("record names no scenario file; pass one explicitly")]
    NoScenario,
}

/// One scripted command. `at` is absolute simulated time, `after` is
/// relative to the previous command; with `wait_idle` the command also
/// waits for the executive to be idle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(flatten)]
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<f64>,
    #[serde(default)]
    pub wait_idle: bool,
    #[serde(default = "cli")]
    pub source: Source,
}

fn cli() -> Source {
    Source::Cli
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandScript {
    pub steps: Vec<ScriptStep>,
}

impl CommandScript {
    pub fn parse(text: &str) -> Result<Self, HeadlessError> {
        let s: Self = serde_json::from_str(text).map_err(|e| HeadlessError::Script(e.to_string()))?;
        for (i, st) in s.steps.iter().enumerate() {
            if st.at.is_some() && st.after.is_some() {
                return Err(HeadlessError::Script(format!("step {i}: give at most one of at and after")));
            }
            if st.at.into_iter().chain(st.after).any(|t| !(t.is_finite() && t >= 0.0)) {
                return Err(HeadlessError::Script(format!("step {i}: times must be finite and nonnegative")));
            }
            if st.source == Source::Monitor {
                return Err(HeadlessError::Script(format!("step {i}: scripts cannot speak for the monitor")));
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HeadlessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HeadlessError::Script(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            HeadlessError::Script(m) => HeadlessError::Script(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Back-to-back subtasks, each waiting for the previous to finish.
    pub fn sequence(commands: impl IntoIterator<Item = CommandKind>) -> Self {
        Self {
            steps: commands
                .into_iter()
                .map(|command| ScriptStep { command, at: None, after: None, wait_idle: true, source: Source::Cli })
                .collect(),
        }
    }
}

fn to_ticks(s: f64) -> u64 {
    (s * TICK_HZ as f64).round() as u64
}

/// Feeds a script to the executive.
pub struct ScriptDriver {
    steps: VecDeque<ScriptStep>,
    last_issue: u64,
}

impl ScriptDriver {
    pub fn new(script: &CommandScript) -> Self {
        Self { steps: script.steps.iter().cloned().collect(), last_issue: 0 }
    }
}

impl Driver for ScriptDriver {
    fn poll(&mut self, world: &World, state: TaskState) -> Vec<(CommandKind, Source)> {
        let tick = world.tick();
        let mut out = Vec::new();
        while let Some(st) = self.steps.front() {
            let due = match (st.at, st.after) {
                (Some(a), _) => to_ticks(a),
                (None, Some(d)) => self.last_issue + to_ticks(d),
                (None, None) => self.last_issue,
            };
            // a waiting step sees the state as of this tick, before anything issued now
            if tick < due || (st.wait_idle && (state != TaskState::Idle || !out.is_empty())) {
                break;
            }
            let st = self.steps.pop_front().expect("checked");
            self.last_issue = tick;
            out.push((st.command, st.source));
        }
        out
    }

    fn finished(&mut self, _world: &World) -> bool {
        self.steps.is_empty()
    }
}

/// Re-issues a record's operator commands at their recorded ticks.
pub struct ReplayDriver {
    commands: VecDeque<(u64, CommandKind, Source)>,
}

impl ReplayDriver {
    pub fn new(record: &SessionRecord) -> Self {
        let commands = record
            .events
            .iter()
            .filter_map(|e| match e {
                SessionEvent::Command { tick, command, source, .. } if *source != Source::Monitor => Some((*tick, *command, *source)),
                _ => None,
            })
            .collect();
        Self { commands }
    }
}

impl Driver for ReplayDriver {
    fn poll(&mut self, world: &World, _state: TaskState) -> Vec<(CommandKind, Source)> {
        let mut out = Vec::new();
        while self.commands.front().is_some_and(|c| c.0 <= world.tick()) {
            let (_, k, s) = self.commands.pop_front().expect("checked");
            out.push((k, s));
        }
        out
    }

    fn finished(&mut self, _world: &World) -> bool {
        self.commands.is_empty()
    }
}

/// Result of a headless run.
pub struct HeadlessRun {
    pub record: SessionRecord,
    pub features: Vec<FeatureSequence>,
    pub executive: Executive,
}

impl HeadlessRun {
    /// Exit status for the CLI: every executed subtask succeeded.
    pub fn succeeded(&self) -> bool {
        self.record.summary().all_succeeded
    }
}

fn session_id(scenario_hash: &str, script: &CommandScript) -> String {
    let mut h = Sha256::new();
    h.update(scenario_hash.as_bytes());
    h.update(serde_json::to_vec(script).expect("script serializes"));
    hex::encode(&h.finalize()[..8])
}

/// Header for a session on `scenario`.
pub fn record_header(scenario: &Scenario, session_id: String) -> RecordHeader {
    RecordHeader::new(
        session_id,
        scenario.hash(),
        scenario.file.name.clone(),
        scenario.path.as_ref().map(|p| p.display().to_string()),
        scenario.file.world.seed,
    )
}

/// Runs `driver` against a fresh executive built from `scenario`.
pub fn run_with_driver(scenario: &Scenario, driver: &mut dyn Driver, session_id: String) -> Result<HeadlessRun, HeadlessError> {
    let mut exec = scenario.executive()?;
    exec.run(driver, MAX_SESSION_TICKS)?;
    let record = SessionRecord { header: record_header(scenario, session_id), events: exec.events().to_vec() };
    Ok(HeadlessRun { record, features: exec.features().to_vec(), executive: exec })
}

/// Executes a command script in simulated time and records the session.
pub fn run_headless(scenario: &Scenario, script: &CommandScript) -> Result<HeadlessRun, HeadlessError> {
    let id = session_id(&scenario.hash(), script);
    run_with_driver(scenario, &mut ScriptDriver::new(script), id)
}

/// Where a replay first departed from the record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub index: usize,
    pub recorded: Option<Transition>,
    pub replayed: Option<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub transitions: usize,
    pub matched: bool,
    pub divergence: Option<Divergence>,
}

/// First index where two transition lists differ, compared by their
/// serialized form so floating fields match bit for bit.
pub fn first_divergence(recorded: &[Transition], replayed: &[Transition]) -> Option<Divergence> {
    let n = recorded.len().max(replayed.len());
    let key = |t: Option<&Transition>| t.map(|t| serde_json::to_string(t).expect("transitions serialize"));
    (0..n)
        .find(|&i| key(recorded.get(i)) != key(replayed.get(i)))
        .map(|i| Divergence { index: i, recorded: recorded.get(i).cloned(), replayed: replayed.get(i).cloned() })
}

/// Re-runs a record against `scenario`, refusing if the scenario differs.
pub fn replay(record: &SessionRecord, scenario: &Scenario) -> Result<ReplayReport, HeadlessError> {
    let scenario = scenario.clone().with_seed(record.header.seed);
    let actual = scenario.hash();
    if actual != record.header.scenario_hash {
        return Err(HeadlessError::ScenarioMismatch { expected: record.header.scenario_hash.clone(), actual });
    }
    let run = run_with_driver(&scenario, &mut ReplayDriver::new(record), record.header.session_id.clone())?;
    let recorded: Vec<Transition> = record.transitions().cloned().collect();
    let replayed: Vec<Transition> = run.record.transitions().cloned().collect();
    let divergence = first_divergence(&recorded, &replayed);
    Ok(ReplayReport {
        session_id: record.header.session_id.clone(),
        transitions: recorded.len(),
        matched: divergence.is_none(),
        divergence,
    })
}

/// Loads the scenario a record names.
pub fn record_scenario(record: &SessionRecord) -> Result<Scenario, HeadlessError> {
    let path = record.header.scenario_path.as_ref().ok_or(HeadlessError::NoScenario)?;
    Ok(Scenario::load(Path::new(path))?)
}
