//! Nominal-model training and likelihood-threshold detection.
//!
//! Each window is scored by its predictive log-likelihood under the HMM
//! given the windows before it. Training runs are scored the same way and
//! binned by progress, giving a mean and a spread per bin. A window whose
//! score falls below `mean - sensitivity * spread` is anomalous.

use serde::{Deserialize, Serialize};

use crate::monitor::features::{FeatureVector, N_FEATURES};
use crate::monitor::hmm::{FitReport, GaussianHmm, HmmConfig};
use crate::monitor::MonitorError;
use crate::task::Subtask;

pub const MODEL_VERSION: u32 = 1;
pub const MIN_TRAINING_SEQUENCES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_states: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Standard-deviation floor per feature, in feature units.
    pub std_floor: [f64; N_FEATURES],
    /// Residual clip used when scoring, in standard deviations.
    pub z_clip: f64,
    pub progress_bins: usize,
    /// Added to the per-bin score deviation, nats.
    pub spread_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_states: 12,
            max_iterations: 200,
            tolerance: 1e-4,
            std_floor: [0.3, 0.5, 0.02, 0.5, 0.2, 0.05, 0.05],
            z_clip: 4.0,
            progress_bins: 20,
            spread_floor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mean: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalModel {
    pub version: u32,
    pub subtask: Subtask,
    pub config: TrainConfig,
    pub hmm: GaussianHmm,
    pub fit: FitReport,
    /// Score mean and spread per progress bin.
    pub curve: Vec<CurvePoint>,
    pub training_sequences: usize,
}

fn to_rows(seq: &[FeatureVector]) -> Vec<Vec<f64>> {
    seq.iter().map(|f| f.to_array().to_vec()).collect()
}

impl NominalModel {
    pub fn bin(&self, progress: f64) -> usize {
        let n = self.curve.len();
        ((progress.max(0.0) * n as f64) as usize).min(n - 1)
    }

    pub fn threshold(&self, progress: f64, sensitivity: f64) -> f64 {
        let c = self.curve[self.bin(progress)];
        c.mean - sensitivity * c.spread
    }

    /// Per-window predictive scores of a whole sequence.
    pub fn score_sequence(&self, seq: &[FeatureVector]) -> Vec<f64> {
        let mut alpha: Option<Vec<f64>> = None;
        seq.iter()
            .map(|f| {
                let (a, ll) = self.hmm.filter_step(alpha.as_deref(), &f.to_array(), self.config.z_clip);
                alpha = Some(a);
                ll
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MonitorError> {
        let m: Self = serde_json::from_str(s).map_err(|e| MonitorError::Model(e.to_string()))?;
        if m.version != MODEL_VERSION {
            return Err(MonitorError::Model(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }
}

pub fn train_nominal(
    sequences: &[Vec<FeatureVector>],
    subtask: Subtask,
    cfg: &TrainConfig,
) -> Result<NominalModel, MonitorError> {
    if sequences.len() < MIN_TRAINING_SEQUENCES {
        return Err(MonitorError::InsufficientData(sequences.len()));
    }
    let rows: Vec<Vec<Vec<f64>>> = sequences.iter().map(|s| to_rows(s)).collect();
    let hcfg = HmmConfig {
        n_states: cfg.n_states,
        max_iterations: cfg.max_iterations,
        tolerance: cfg.tolerance,
        std_floor: cfg.std_floor.to_vec(),
    };
    let (hmm, fit) = GaussianHmm::fit(&rows, &hcfg)?;
    let mut model = NominalModel {
        version: MODEL_VERSION,
        subtask,
        config: cfg.clone(),
        hmm,
        fit,
        curve: vec![CurvePoint { mean: 0.0, spread: cfg.spread_floor }; cfg.progress_bins.max(1)],
        training_sequences: sequences.len(),
    };

    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); model.curve.len()];
    for s in sequences {
        for (f, score) in s.iter().zip(model.score_sequence(s)) {
            bins[model.bin(f.progress)].push(score);
        }
    }
    let stats: Vec<Option<CurvePoint>> = bins
        .iter()
        .map(|b| {
            if b.is_empty() {
                return None;
            }
            let n = b.len() as f64;
            let mean = b.iter().sum::<f64>() / n;
            let var = b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            Some(CurvePoint { mean, spread: var.sqrt() + cfg.spread_floor })
        })
        .collect();
    if stats.iter().all(|s| s.is_none()) {
        return Err(MonitorError::InvalidData("no scored windows".into()));
    }
    // empty bins take the nearest populated bin, preferring the earlier one
    for i in 0..stats.len() {
        let nearest = (0..stats.len())
            .filter(|&j| stats[j].is_some())
            .min_by_key(|&j| (i as i64 - j as i64).unsigned_abs() * 2 + u64::from(j > i))
            .expect("some bin populated");
        model.curve[i] = stats[nearest].expect("populated");
    }
    Ok(model)
}

/// One detection from the running stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub score: f64,
    pub threshold: f64,
    pub progress: f64,
    /// Standardized residuals against the predicted state mixture,
    /// clipped, without the progress channel.
    pub deviation: Vec<f64>,
}

/// Running detector for one execution.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: NominalModel,
    pub sensitivity: f64,
    alpha: Option<Vec<f64>>,
    fired: bool,
}

impl Detector {
    pub fn new(model: NominalModel, sensitivity: f64) -> Self {
        Self { model, sensitivity, alpha: None, fired: false }
    }

    pub fn set_sensitivity(&mut self, s: f64) {
        self.sensitivity = s;
    }

    fn deviation(&self, pred: &[f64], x: &[f64; N_FEATURES]) -> Vec<f64> {
        let h = &self.model.hmm;
        let w: Vec<f64> = pred.iter().map(|p| p.exp()).collect();
        (0..N_FEATURES - 1)
            .map(|d| {
                let mean: f64 = (0..h.n_states()).map(|j| w[j] * h.means[j][d]).sum();
                let var: f64 = (0..h.n_states()).map(|j| w[j] * h.vars[j][d]).sum();
                let z = self.model.config.z_clip;
                ((x[d] - mean) / var.sqrt()).clamp(-z, z)
            })
            .collect()
    }

    /// Scores one window; returns a detection the first time the score
    /// drops below threshold.
    pub fn step(&mut self, f: &FeatureVector) -> Option<Detection> {
        let x = f.to_array();
        let pred = self.model.hmm.predict(self.alpha.as_deref());
        let (alpha, score) = self.model.hmm.filter_step(self.alpha.as_deref(), &x, self.model.config.z_clip);
        self.alpha = Some(alpha);
        let threshold = self.model.threshold(f.progress, self.sensitivity);
        if self.fired || score >= threshold {
            return None;
        }
        self.fired = true;
        Some(Detection { score, threshold, progress: f.progress, deviation: self.deviation(&pred, &x) })
    }
}

/// Offline count of executions that would raise an event at `sensitivity`.
pub fn count_detections(model: &NominalModel, sequences: &[Vec<FeatureVector>], sensitivity: f64) -> usize {
    sequences
        .iter()
        .filter(|s| {
            let mut d = Detector::new(model.clone(), sensitivity);
            s.iter().any(|f| d.step(f).is_some())
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nominal(rng: &mut ChaCha8Rng, len: usize) -> Vec<FeatureVector> {
        (0..len)
            .map(|t| {
                let p = t as f64 / len as f64;
                FeatureVector {
                    force_mean: 1.0 + 2.0 * (p * 3.0).sin().abs() + rng.random_range(-0.05..0.05),
                    force_max: 1.5 + 2.0 * (p * 3.0).sin().abs() + rng.random_range(-0.1..0.1),
                    sound: 0.05 + rng.random_range(0.0..0.005),
                    current: 8.0 + rng.random_range(-0.2..0.2),
                    contacts: if p > 0.3 && p < 0.6 { 1.0 } else { 0.0 },
                    face_visibility: 0.9,
                    progress: p,
                }
            })
            .collect()
    }

    fn training() -> Vec<Vec<FeatureVector>> {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        (0..12).map(|k| nominal(&mut r, 80 + k)).collect()
    }

    fn model() -> NominalModel {
        train_nominal(&training(), Subtask::Deliver, &TrainConfig::default()).unwrap()
    }

    #[test]
    fn too_few_sequences_is_an_error() {
        let seqs = training()[..9].to_vec();
        assert_eq!(
            train_nominal(&seqs, Subtask::Scoop, &TrainConfig::default()),
            Err(MonitorError::InsufficientData(9))
        );
    }

    #[test]
    fn training_sequences_do_not_fire() {
        let m = model();
        assert_eq!(count_detections(&m, &training(), 2.0), 0);
    }

    #[test]
    fn held_out_nominal_scores_above_fifth_percentile() {
        let m = model();
        let mut train_scores: Vec<f64> = training().iter().map(|s| m.score_sequence(s).iter().sum::<f64>() / s.len() as f64).collect();
        train_scores.sort_by(|a, b| a.total_cmp(b));
        let p5 = train_scores[0];
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let held = nominal(&mut r, 85);
        let s = m.score_sequence(&held).iter().sum::<f64>() / held.len() as f64;
        assert!(s >= p5 - 0.5, "{s} < {p5}");
        assert_eq!(count_detections(&m, &[held], 2.0), 0);
    }

    fn spiked(extra: f64) -> Vec<FeatureVector> {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut s = nominal(&mut r, 82);
        s[40].force_mean += extra;
        s[40].force_max += extra;
        s
    }

    #[test]
    fn spike_fires_at_two_but_not_at_ten() {
        let m = model();
        let s = spiked(20.0);
        let mut d = Detector::new(m.clone(), 2.0);
        let hit = s.iter().position(|f| d.step(f).is_some());
        assert_eq!(hit, Some(40));
        assert_eq!(count_detections(&m, &[s], 10.0), 0);
    }

    #[test]
    fn detections_are_monotone_in_sensitivity() {
        let m = model();
        let mut seqs = training();
        for e in [0.5, 1.0, 2.0, 5.0, 20.0] {
            seqs.push(spiked(e));
        }
        let mut last = usize::MAX;
        for k in 0..40 {
            let c = count_detections(&m, &seqs, 0.25 * k as f64);
            assert!(c <= last);
            last = c;
        }
    }

    #[test]
    fn fires_only_once_per_execution() {
        let m = model();
        let mut s = spiked(20.0);
        s[60].force_mean += 20.0;
        let mut d = Detector::new(m, 2.0);
        assert_eq!(s.iter().filter(|f| d.step(f).is_some()).count(), 1);
    }

    #[test]
    fn model_round_trips_bit_exactly() {
        let m = model();
        let back = NominalModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), m.to_json());
    }

    #[test]
    fn retraining_gives_identical_model() {
        assert_eq!(model().to_json(), model().to_json());
    }
}
