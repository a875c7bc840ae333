//! Operator delivery calibration: ±1 cm steps on three axes, clamped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{PoseSE3, Vec3};
use crate::task::TaskError;

pub const STEP: f64 = 0.01;
pub const LIMIT: f64 = 0.05;
/// Default target depth inside the mouth plane, m.
pub const DEFAULT_DEPTH: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    In,
    Out,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 6] =
        [Direction::Left, Direction::Right, Direction::In, Direction::Out, Direction::Up, Direction::Down];

    /// Offset component and sign.
    fn axis(self) -> (usize, i32) {
        match self {
            Direction::Right => (0, 1),
            Direction::Left => (0, -1),
            Direction::In => (1, 1),
            Direction::Out => (1, -1),
            Direction::Up => (2, 1),
            Direction::Down => (2, -1),
        }
    }
}

/// Offset from the default target in whole centimeters, stored as
/// `[right, in, up]` so every component is an exact multiple of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryCalibration {
    pub steps: [i32; 3],
}

impl DeliveryCalibration {
    /// Offset in meters as `[right, in, up]`.
    pub fn offset(&self) -> Vec3 {
        Vec3::new(self.steps[0] as f64, self.steps[1] as f64, self.steps[2] as f64) * STEP
    }

    /// One arrow click, clamped to ±5 cm per axis.
    pub fn apply(&self, d: Direction) -> Self {
        let (i, s) = d.axis();
        let max = (LIMIT / STEP).round() as i32;
        let mut out = *self;
        out.steps[i] = (out.steps[i] + s).clamp(-max, max);
        out
    }

    /// Target point in the mouth frame. Mouth axes: x toward the face's
    /// left (the operator's right), y up, z out of the face.
    pub fn target_in_mouth(&self) -> Vec3 {
        let o = self.offset();
        Vec3::new(o.x, o.z, -DEFAULT_DEPTH - o.y)
    }

    /// Delivery target in the world.
    pub fn target_pose(&self, mouth: &PoseSE3) -> PoseSE3 {
        mouth.compose(&PoseSE3::from_translation(self.target_in_mouth()))
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let s = std::fs::read_to_string(path).map_err(|e| TaskError::Calibration(e.to_string()))?;
        serde_json::from_str(&s).map_err(|e| TaskError::Calibration(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TaskError> {
        let s = serde_json::to_string_pretty(self).expect("plain struct");
        std::fs::write(path, s).map_err(|e| TaskError::Calibration(e.to_string()))
    }
}
