//! Nearest-centroid anomaly labeling over standardized deviations.

use serde::{Deserialize, Serialize};

/// Configurable vocabulary. Only some classes have prototypes.
pub const VOCABULARY: [&str; 12] = [
    "collision",
    "loud sound",
    "face occluded",
    "mouth closed",
    "motor overload",
    "user stop",
    "spoon miss",
    "food spill",
    "face not found",
    "utensil slip",
    "unexpected contact",
    "timeout",
];
pub const UNKNOWN: &str = "unknown";

/// Channels: force mean, force max, sound, current, contacts, face visibility.
pub const N_CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub label: String,
    pub deviation: [f64; N_CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeler {
    pub prototypes: Vec<Prototype>,
    /// Deviations shorter than this are not labeled.
    pub min_norm: f64,
    /// Farther than this from every prototype is unknown.
    pub max_distance: f64,
}

impl Default for Labeler {
    fn default() -> Self {
        let p = |label: &str, deviation| Prototype { label: label.into(), deviation };
        Self {
            prototypes: vec![
                p("collision", [2.5, 4.0, 0.0, 0.0, 0.0, 0.0]),
                p("loud sound", [0.0, 0.0, 4.0, 0.0, 0.0, 0.0]),
                p("face occluded", [0.0, 0.0, 0.0, 0.0, 0.0, -4.0]),
                p("motor overload", [0.0, 0.0, 0.0, 4.0, 0.0, 0.0]),
                p("mouth closed", [1.5, 1.5, 0.0, 0.0, 4.0, 0.0]),
            ],
            min_norm: 1.0,
            max_distance: 4.0,
        }
    }
}

impl Labeler {
    pub fn label(&self, deviation: &[f64]) -> String {
        let norm = deviation.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm < self.min_norm {
            return UNKNOWN.into();
        }
        let dist = |p: &Prototype| p.deviation.iter().zip(deviation).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        match self.prototypes.iter().map(|p| (dist(p), p)).min_by(|a, b| a.0.total_cmp(&b.0)) {
            Some((d, p)) if d <= self.max_distance => p.label.clone(),
            _ => UNKNOWN.into(),
        }
    }
}
