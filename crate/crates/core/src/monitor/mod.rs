//! Execution monitor: window features, a left-to-right HMM of nominal
//! executions, likelihood-threshold detection and a simple labeler.

pub mod detector;
pub mod features;
pub mod hmm;
pub mod labeler;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detector::{count_detections, train_nominal, Detection, Detector, NominalModel, TrainConfig};
pub use features::{extract_features, FeatureVector, WindowAccumulator};
pub use labeler::Labeler;

use crate::sim::{SensorFrame, TICK_HZ};
use crate::task::{FeedbackLabel, Subtask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("need at least 10 nominal sequences, got {0}")]
    InsufficientData(usize),
    #[error("feature window is empty")]
    EmptyWindow,
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("model file: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub tick: u64,
    pub timestamp: f64,
    pub subtask: Subtask,
    pub score: f64,
    pub threshold: f64,
    pub label: String,
    /// Standardized per-channel deviation that produced the label.
    #[serde(default)]
    pub deviation: Vec<f64>,
}

/// Features of one monitored phase, kept for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub subtask: Subtask,
    /// Index of the subtask outcome this phase belongs to.
    pub execution: usize,
    pub features: Vec<FeatureVector>,
    /// Whether the phase ran to its end without an abort.
    pub completed: bool,
    pub success: bool,
    pub label: Option<FeedbackLabel>,
}

impl FeatureSequence {
    /// Usable as nominal training data.
    pub fn is_nominal(&self) -> bool {
        self.completed && self.success && self.label != Some(FeedbackLabel::Failure) && !self.features.is_empty()
    }
}

/// Trains on the nominal sequences of one subtask; failure-labelled,
/// aborted and unsuccessful executions are left out.
pub fn train_from_sequences(
    sequences: &[FeatureSequence],
    subtask: Subtask,
    cfg: &TrainConfig,
) -> Result<NominalModel, MonitorError> {
    let data: Vec<Vec<FeatureVector>> =
        sequences.iter().filter(|s| s.subtask == subtask && s.is_nominal()).map(|s| s.features.clone()).collect();
    train_nominal(&data, subtask, cfg)
}

struct Phase {
    subtask: Subtask,
    windows: WindowAccumulator,
    detector: Option<Detector>,
    features: Vec<FeatureVector>,
}

/// Monitor state owned by the executive.
pub struct Monitor {
    pub models: BTreeMap<Subtask, NominalModel>,
    pub sensitivity: f64,
    pub labeler: Labeler,
    phase: Option<Phase>,
    warned: bool,
}

impl Default for Monitor {
    fn default() -> Self {
        Self { models: BTreeMap::new(), sensitivity: 2.0, labeler: Labeler::default(), phase: None, warned: false }
    }
}

impl Monitor {
    pub fn with_models(models: impl IntoIterator<Item = NominalModel>, sensitivity: f64) -> Self {
        Self { models: models.into_iter().map(|m| (m.subtask, m)).collect(), sensitivity, ..Self::default() }
    }

    pub fn is_active(&self) -> bool {
        self.phase.is_some()
    }

    /// Starts watching a phase whose nominal length is `nominal_seconds`.
    pub fn begin(&mut self, subtask: Subtask, tick: u64, nominal_seconds: f64) {
        let detector = self.models.get(&subtask).map(|m| Detector::new(m.clone(), self.sensitivity));
        if detector.is_none() && !self.warned {
            log::warn!("no monitor model for {}; detection idle", subtask.name());
            self.warned = true;
        }
        self.phase = Some(Phase { subtask, windows: WindowAccumulator::new(tick, nominal_seconds), detector, features: Vec::new() });
    }

    /// Feeds one frame; returns an anomaly the first time one is detected.
    pub fn push(&mut self, frame: &SensorFrame) -> Option<AnomalyEvent> {
        let phase = self.phase.as_mut()?;
        let f = phase.windows.push(frame)?;
        phase.features.push(f);
        let det = phase.detector.as_mut()?.step(&f)?;
        Some(AnomalyEvent {
            tick: frame.tick,
            timestamp: frame.tick as f64 / TICK_HZ as f64,
            subtask: phase.subtask,
            score: det.score,
            threshold: det.threshold,
            label: self.labeler.label(&det.deviation),
            deviation: det.deviation,
        })
    }

    /// Stops watching and hands back the phase's features.
    pub fn end(&mut self) -> Option<(Subtask, Vec<FeatureVector>)> {
        self.phase.take().map(|p| (p.subtask, p.features))
    }
}
