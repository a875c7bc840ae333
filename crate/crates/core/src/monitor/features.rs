//! Window features over 100 ms of 1 kHz sensor frames.

use serde::{Deserialize, Serialize};

use crate::monitor::MonitorError;
use crate::sim::SensorFrame;

/// Frames per feature window.
pub const WINDOW_TICKS: usize = 100;
pub const N_FEATURES: usize = 7;
pub const FEATURE_NAMES: [&str; N_FEATURES] =
    ["force_mean", "force_max", "sound", "current", "contacts", "face_visibility", "progress"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Mean wrist force magnitude, N.
    pub force_mean: f64,
    /// Peak wrist force magnitude, N.
    pub force_max: f64,
    /// RMS of the sound-energy channel.
    pub sound: f64,
    /// Mean over frames of the summed joint currents, A.
    pub current: f64,
    /// Mean number of active contact patches.
    pub contacts: f64,
    /// Mean fraction of face landmarks in view.
    pub face_visibility: f64,
    /// Elapsed fraction of the monitored phase.
    pub progress: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [self.force_mean, self.force_max, self.sound, self.current, self.contacts, self.face_visibility, self.progress]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        Self {
            force_mean: a[0],
            force_max: a[1],
            sound: a[2],
            current: a[3],
            contacts: a[4],
            face_visibility: a[5],
            progress: a[6],
        }
    }
}

pub fn extract_features(frames: &[SensorFrame], progress: f64) -> Result<FeatureVector, MonitorError> {
    if frames.is_empty() {
        return Err(MonitorError::EmptyWindow);
    }
    let n = frames.len() as f64;
    let mut f = FeatureVector { progress, ..FeatureVector::default() };
    let mut sound_sq = 0.0;
    for s in frames {
        let force = s.force.norm();
        f.force_mean += force;
        f.force_max = f.force_max.max(force);
        sound_sq += s.sound * s.sound;
        f.current += s.currents.sum();
        f.contacts += s.contacts.iter().filter(|c| **c).count() as f64;
        f.face_visibility += s.face_visibility;
    }
    f.force_mean /= n;
    f.sound = (sound_sq / n).sqrt();
    f.current /= n;
    f.contacts /= n;
    f.face_visibility /= n;
    Ok(f)
}

/// Collects frames into consecutive windows from a phase start.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    start_tick: u64,
    nominal_ticks: f64,
    frames: Vec<SensorFrame>,
}

impl WindowAccumulator {
    pub fn new(start_tick: u64, nominal_seconds: f64) -> Self {
        Self {
            start_tick,
            nominal_ticks: (nominal_seconds * crate::sim::TICK_HZ as f64).max(1.0),
            frames: Vec::with_capacity(WINDOW_TICKS),
        }
    }

    /// Adds a frame; returns the features when a window fills.
    pub fn push(&mut self, frame: &SensorFrame) -> Option<FeatureVector> {
        self.frames.push(*frame);
        if self.frames.len() < WINDOW_TICKS {
            return None;
        }
        let progress = (frame.tick - self.start_tick) as f64 / self.nominal_ticks;
        let f = extract_features(&self.frames, progress).expect("window is full");
        self.frames.clear();
        Some(f)
    }
}
