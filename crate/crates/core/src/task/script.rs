//! Primitive scripts: per-subtask waypoint lists loaded from data and
//! resolved against the frames known at run time.

use serde::{Deserialize, Serialize};

use crate::control::plan::{MotionKind, MotionPrimitive};
use crate::geometry::{PoseSE3, UnitQuaternion, Vec3};
use crate::task::TaskError;

/// The shipped scripts.
pub const STANDARD_SCRIPTS: &str = include_str!("../../data/scripts.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRef {
    World,
    Bowl,
    /// Bowl-aligned frame at the chosen food site, on the food surface.
    Site,
    /// Bowl-aligned frames at the two ends of the wiping bar.
    BarStart,
    BarEnd,
    /// Delivery frame: the calibrated target inside the mouth, with x
    /// pointing into the mouth and z along the mouth's up axis.
    Delivery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Apply the scoop or stab effect at the site.
    Scoop,
    /// Clear underside residue if the bar was touched.
    Wipe,
    /// Measure the tip error against the insert waypoint.
    CheckInsert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub name: String,
    pub frame: FrameRef,
    pub position: [f64; 3],
    /// Roll, pitch, yaw in degrees, applied in the frame.
    pub rpy: [f64; 3],
    pub duration: f64,
    pub kind: MotionKind,
    #[serde(default)]
    pub action: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScript {
    pub init: Vec<PrimitiveSpec>,
    pub main: Vec<PrimitiveSpec>,
    #[serde(default)]
    pub release: Vec<PrimitiveSpec>,
}

impl SubtaskScript {
    pub fn main_duration(&self) -> f64 {
        self.main.iter().chain(&self.release).map(|p| p.duration).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.init.iter().map(|p| p.duration).sum::<f64>() + self.main_duration()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLibrary {
    /// Hold while the food cloud is captured, s.
    pub estimate_food_hold: f64,
    pub scoop: SubtaskScript,
    pub stab: SubtaskScript,
    pub wipe: SubtaskScript,
    pub deliver: SubtaskScript,
}

impl ScriptLibrary {
    pub fn standard() -> Self {
        Self::parse(STANDARD_SCRIPTS).expect("shipped scripts are valid")
    }

    pub fn parse(s: &str) -> Result<Self, TaskError> {
        let lib: Self = serde_json::from_str(s).map_err(|e| TaskError::Script(e.to_string()))?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        for (name, s) in [("scoop", &self.scoop), ("stab", &self.stab), ("wipe", &self.wipe), ("deliver", &self.deliver)] {
            if s.init.is_empty() || s.main.is_empty() {
                return Err(TaskError::Script(format!("{name}: init and main must be nonempty")));
            }
            for p in s.init.iter().chain(&s.main).chain(&s.release) {
                let finite = p.position.iter().chain(&p.rpy).all(|v| v.is_finite());
                if !finite || !(p.duration >= 0.0) || !p.duration.is_finite() {
                    return Err(TaskError::Script(format!("{name}/{}: values must be finite", p.name)));
                }
            }
        }
        Ok(())
    }
}

/// Frames available when resolving a script.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameSet {
    pub bowl: PoseSE3,
    pub site: Option<PoseSE3>,
    pub bar: [Vec3; 2],
    pub delivery: Option<PoseSE3>,
}

/// Rotation from the delivery frame's mouth-aligned axes to the tool's
/// insertion orientation.
pub fn delivery_rotation() -> UnitQuaternion {
    UnitQuaternion::from_axes(&Vec3::new(0.0, 0.0, -1.0), &Vec3::new(-1.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0))
}

impl FrameSet {
    fn frame(&self, f: FrameRef) -> Result<PoseSE3, TaskError> {
        let missing = |n: &str| TaskError::Script(format!("{n} frame is not available"));
        let bowl_at = |p: Vec3| PoseSE3::new(p, self.bowl.orientation);
        Ok(match f {
            FrameRef::World => PoseSE3::identity(),
            FrameRef::Bowl => self.bowl,
            FrameRef::Site => self.site.ok_or_else(|| missing("site"))?,
            FrameRef::BarStart => bowl_at(self.bar[0]),
            FrameRef::BarEnd => bowl_at(self.bar[1]),
            FrameRef::Delivery => self.delivery.ok_or_else(|| missing("delivery"))?,
        })
    }

    pub fn resolve(&self, p: &PrimitiveSpec) -> Result<MotionPrimitive, TaskError> {
        let frame = self.frame(p.frame)?;
        let [r, pi, y] = p.rpy.map(f64::to_radians);
        let local = PoseSE3::new(Vec3::from(p.position), UnitQuaternion::from_euler(r, pi, y));
        Ok(MotionPrimitive { goal: frame.compose(&local), duration: p.duration, kind: p.kind })
    }
}
