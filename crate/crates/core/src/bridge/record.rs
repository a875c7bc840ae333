//! Session records: a header line, one line per event, a summary line.
//! The summary is always recomputed from the events; a stored summary
//! that disagrees is an error.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sim::TICK_HZ;
use crate::task::{SessionEvent, Subtask};

pub const RECORD_FORMAT: &str = "feeding-session";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record has no header")]
    MissingHeader,
    #[error("stored summary does not match the events")]
    SummaryMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub format: String,
    pub version: u32,
    pub session_id: String,
    pub scenario_hash: String,
    pub scenario_name: String,
    /// Scenario file as given when the session started.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<String>,
    pub seed: u64,
}

impl RecordHeader {
    pub fn new(session_id: String, scenario_hash: String, scenario_name: String, scenario_path: Option<String>, seed: u64) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            session_id,
            scenario_hash,
            scenario_name,
            scenario_path,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskCounts {
    pub attempted: usize,
    pub succeeded: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub subtasks: BTreeMap<Subtask, SubtaskCounts>,
    /// Scoop start to delivery end for every successful delivery that
    /// directly follows a successful scoop, s.
    pub cycle_durations: Vec<f64>,
    /// Start to end of every subtask, s.
    pub subtask_durations: Vec<f64>,
    pub anomalies: usize,
    pub transitions: usize,
    pub rejected_commands: usize,
    /// Every executed subtask succeeded.
    pub all_succeeded: bool,
}

impl Summary {
    pub fn from_events(events: &[SessionEvent]) -> Self {
        let mut subtasks: BTreeMap<Subtask, SubtaskCounts> = BTreeMap::new();
        let mut cycle_durations = Vec::new();
        let mut subtask_durations = Vec::new();
        let mut last_scoop: Option<u64> = None;
        let (mut anomalies, mut transitions, mut rejected) = (0, 0, 0);
        for e in events {
            match e {
                SessionEvent::Outcome(o) => {
                    let c = subtasks.entry(o.subtask).or_default();
                    c.attempted += 1;
                    c.succeeded += o.success as usize;
                    c.aborted += o.aborted as usize;
                    subtask_durations.push(o.duration());
                    match o.subtask {
                        Subtask::Scoop => last_scoop = o.success.then_some(o.start_tick),
                        Subtask::Deliver => {
                            if let (true, Some(start)) = (o.success, last_scoop.take()) {
                                cycle_durations.push((o.tick - start) as f64 / TICK_HZ as f64);
                            }
                        }
                        Subtask::Wipe => {}
                    }
                }
                SessionEvent::Anomaly(_) => anomalies += 1,
                SessionEvent::Transition(_) => transitions += 1,
                SessionEvent::Command { accepted: false, .. } => rejected += 1,
                _ => {}
            }
        }
        let all_succeeded = subtasks.values().all(|c| c.succeeded == c.attempted);
        Self {
            subtasks,
            cycle_durations,
            subtask_durations,
            anomalies,
            transitions,
            rejected_commands: rejected,
            all_succeeded,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: RecordHeader,
    pub events: Vec<SessionEvent>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum MetaOut<'a> {
    Header(&'a RecordHeader),
    Summary(&'a Summary),
}

#[derive(Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum MetaIn {
    Header(RecordHeader),
    Summary(Summary),
}

impl SessionRecord {
    pub fn summary(&self) -> Summary {
        Summary::from_events(&self.events)
    }

    pub fn transitions(&self) -> impl Iterator<Item = &crate::task::Transition> {
        self.events.iter().filter_map(|e| match e {
            SessionEvent::Transition(t) => Some(t),
            _ => None,
        })
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), RecordError> {
        writeln!(w, "{}", serde_json::to_string(&MetaOut::Header(&self.header)).expect("header serializes"))?;
        for e in &self.events {
            writeln!(w, "{}", serde_json::to_string(e).expect("events serialize"))?;
        }
        writeln!(w, "{}", serde_json::to_string(&MetaOut::Summary(&self.summary())).expect("summary serializes"))?;
        Ok(())
    }

    pub fn to_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f)
    }

    pub fn read(r: impl BufRead) -> Result<Self, RecordError> {
        let mut header = None;
        let mut summary = None;
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| RecordError::Parse { line: i + 1, message: e.to_string() };
            let v: Value = serde_json::from_str(&line).map_err(err)?;
            if v.get("record").is_some() {
                match serde_json::from_value::<MetaIn>(v).map_err(err)? {
                    MetaIn::Header(h) => header = Some(h),
                    MetaIn::Summary(s) => summary = Some(s),
                }
            } else {
                events.push(serde_json::from_value(v).map_err(err)?);
            }
        }
        let header = header.ok_or(RecordError::MissingHeader)?;
        if header.format != RECORD_FORMAT || header.version != RECORD_VERSION {
            return Err(RecordError::Parse { line: 1, message: format!("unsupported record {} v{}", header.format, header.version) });
        }
        let rec = Self { header, events };
        if let Some(s) = summary {
            if s != rec.summary() {
                return Err(RecordError::SummaryMismatch);
            }
        }
        Ok(rec)
    }

    pub fn load(path: &Path) -> Result<Self, RecordError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{CommandKind, Outcome, Source};

    fn outcome(subtask: Subtask, start: u64, tick: u64, success: bool) -> SessionEvent {
        SessionEvent::Outcome(Outcome {
            tick,
            start_tick: start,
            subtask,
            success,
            aborted: !success,
            reason: String::new(),
            grams: 0.0,
            dry_run: false,
            insert_error: None,
            insert_tip: None,
            insert_target: None,
        })
    }

    fn record() -> SessionRecord {
        SessionRecord {
            header: RecordHeader::new("s1".into(), "abc".into(), "t".into(), None, 7),
            events: vec![
                SessionEvent::Command { tick: 1, command: CommandKind::Scoop, source: Source::Cli, accepted: true, reason: None },
                outcome(Subtask::Scoop, 1, 20_001, true),
                outcome(Subtask::Deliver, 20_002, 50_001, true),
                outcome(Subtask::Scoop, 50_002, 60_000, false),
                outcome(Subtask::Deliver, 60_001, 90_000, true),
            ],
        }
    }

    #[test]
    fn summary_is_derived_from_events() {
        let s = record().summary();
        assert_eq!(s.cycle_durations, vec![50.0]);
        assert_eq!(s.subtasks[&Subtask::Scoop], SubtaskCounts { attempted: 2, succeeded: 1, aborted: 1 });
        assert!(!s.all_succeeded);
        assert_eq!(s.subtask_durations.len(), 4);
    }

    #[test]
    fn records_round_trip() {
        let r = record();
        let text = r.to_string();
        assert_eq!(text.lines().count(), r.events.len() + 2);
        let back = SessionRecord::read(text.as_bytes()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_string(), text);
    }

    #[test]
    fn tampered_summary_is_rejected() {
        let text = record().to_string().replace("\"anomalies\":0", "\"anomalies\":3");
        assert!(matches!(SessionRecord::read(text.as_bytes()), Err(RecordError::SummaryMismatch)));
    }

    #[test]
    fn bad_lines_report_their_number() {
        let mut text = record().to_string();
        text.push_str("{oops\n");
        match SessionRecord::read(text.as_bytes()) {
            Err(RecordError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_session_succeeds() {
        let r = SessionRecord { header: record().header, events: Vec::new() };
        assert!(r.summary().all_succeeded);
    }
}
