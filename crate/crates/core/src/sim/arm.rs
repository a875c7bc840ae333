//! Serial 7-R arm: forward kinematics, geometric Jacobian and gravity torques.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{PoseSE3, UnitQuaternion, Vec3};
use crate::sim::SimError;

pub const N_JOINTS: usize = 7;
pub type JointVector = SVector<f64, N_JOINTS>;
pub type Jacobian = SMatrix<f64, 6, N_JOINTS>;

const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// Translation from the previous joint frame, meters.
    pub offset: [f64; 3],
    /// Rotation axis in the joint frame.
    pub axis: [f64; 3],
    /// `[min, max]`, radians.
    pub limits: [f64; 2],
    /// Diagonal inertia proxy, kg·m².
    pub inertia: f64,
    /// Viscous friction, N·m·s/rad.
    pub friction: f64,
    /// Mass of the link carried by this joint, kg.
    #[serde(default)]
    pub link_mass: f64,
    /// Center of mass of that link in the joint frame, meters.
    #[serde(default)]
    pub link_com: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArmModel {
    #[serde(default)]
    pub base: PoseSE3,
    pub joints: Vec<JointSpec>,
    /// Flange offset from the last joint frame, meters.
    pub flange: [f64; 3],
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    GRAVITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub position: JointVector,
    pub velocity: JointVector,
}

impl JointState {
    pub fn at_rest(position: JointVector) -> Self {
        Self {
            position,
            velocity: JointVector::zeros(),
        }
    }
}

/// World poses of every joint frame plus the flange.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub joints: [PoseSE3; N_JOINTS],
    pub flange: PoseSE3,
}

impl ChainFrames {
    pub fn joint_axis(&self, model: &ArmModel, i: usize) -> Vec3 {
        self.joints[i].transform_vector(&model.axis(i))
    }
}

impl ArmModel {
    /// PR2-like left arm: pan, lift, upper-arm roll, elbow flex, forearm
    /// roll, wrist flex, wrist roll. Lift and flex joints rotate about y,
    /// roll joints about the link axis x.
    pub fn pr2_like() -> Self {
        let j = |name: &str,
                 offset: [f64; 3],
                 axis: [f64; 3],
                 limits: [f64; 2],
                 inertia: f64,
                 friction: f64,
                 link_mass: f64,
                 link_com: [f64; 3]| JointSpec {
            name: name.to_string(),
            offset,
            axis,
            limits,
            inertia,
            friction,
            link_mass,
            link_com,
        };
        Self {
            base: PoseSE3::identity(),
            joints: vec![
                j("shoulder_pan", [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [-1.6, 1.6], 0.5, 2.0, 0.0, [0.0; 3]),
                j("shoulder_lift", [0.1, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.9, 1.4], 0.5, 2.0, 0.0, [0.0; 3]),
                j("upper_arm_roll", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-3.0, 3.0], 0.1, 1.0, 2.5, [0.2, 0.0, 0.0]),
                j("elbow_flex", [0.4, 0.0, 0.0], [0.0, 1.0, 0.0], [-2.5, 0.0], 0.1, 1.0, 0.0, [0.0; 3]),
                j("forearm_roll", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-3.1, 3.1], 0.05, 0.5, 1.8, [0.16, 0.0, 0.0]),
                j("wrist_flex", [0.321, 0.0, 0.0], [0.0, 1.0, 0.0], [-2.0, 2.0], 0.05, 0.5, 0.0, [0.0; 3]),
                j("wrist_roll", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-3.1, 3.1], 0.05, 0.5, 0.6, [0.09, 0.0, 0.0]),
            ],
            flange: [0.18, 0.0, 0.0],
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.joints.len() != N_JOINTS {
            return Err(SimError::Config(format!(
                "arm must have {N_JOINTS} revolute joints, got {}",
                self.joints.len()
            )));
        }
        for j in &self.joints {
            let a = Vec3::from(j.axis);
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::Config(format!("joint {} axis is not unit", j.name)));
            }
            if !(j.limits[0] <= j.limits[1]) || j.inertia <= 0.0 || j.friction < 0.0 {
                return Err(SimError::Config(format!("joint {} has invalid parameters", j.name)));
            }
        }
        Ok(())
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        Vec3::from(self.joints[i].axis)
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].limits[0])
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].limits[1])
    }

    pub fn inertia(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].inertia)
    }

    pub fn friction(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].friction)
    }

    pub fn within_limits(&self, theta: &JointVector) -> bool {
        theta.iter().enumerate().all(|(i, &q)| {
            q.is_finite() && q >= self.joints[i].limits[0] && q <= self.joints[i].limits[1]
        })
    }

    pub fn check_limits(&self, theta: &JointVector) -> Result<(), SimError> {
        for (i, &q) in theta.iter().enumerate() {
            let [lo, hi] = self.joints[i].limits;
            if !q.is_finite() || q < lo || q > hi {
                return Err(SimError::JointLimit {
                    joint: i,
                    value: q,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }

    pub fn clamp_to_limits(&self, theta: &JointVector) -> JointVector {
        JointVector::from_fn(|i, _| theta[i].clamp(self.joints[i].limits[0], self.joints[i].limits[1]))
    }

    /// Joint frames without limit checks. Callers inside the simulation
    /// loop keep `theta` clamped already.
    pub fn frames_unchecked(&self, theta: &JointVector) -> ChainFrames {
        let mut t = self.base;
        let mut joints = [PoseSE3::identity(); N_JOINTS];
        for (i, spec) in self.joints.iter().enumerate() {
            t = t.compose(&PoseSE3::from_translation(Vec3::from(spec.offset)));
            let r = UnitQuaternion::from_axis_angle(&Vec3::from(spec.axis), theta[i]);
            t = t.compose(&PoseSE3::from_rotation(r));
            // store the frame after rotation: origin is unchanged, and the
            // joint axis is invariant under its own rotation
            joints[i] = t;
        }
        let flange = t.compose(&PoseSE3::from_translation(Vec3::from(self.flange)));
        ChainFrames { joints, flange }
    }

    pub fn frames(&self, theta: &JointVector) -> Result<ChainFrames, SimError> {
        self.check_limits(theta)?;
        Ok(self.frames_unchecked(theta))
    }

    /// Flange pose in the world frame.
    pub fn forward_kinematics(&self, theta: &JointVector) -> Result<PoseSE3, SimError> {
        Ok(self.frames(theta)?.flange)
    }

    /// Pose of a tool frame rigidly attached to the flange.
    pub fn tool_pose(&self, theta: &JointVector, tool: &PoseSE3) -> Result<PoseSE3, SimError> {
        Ok(self.forward_kinematics(theta)?.compose(tool))
    }

    pub fn jacobian(&self, theta: &JointVector) -> Result<Jacobian, SimError> {
        self.tool_jacobian(theta, &PoseSE3::identity())
    }

    /// Geometric Jacobian of the tool frame: linear rows are the tool-point
    /// velocity, angular rows the world-frame angular velocity.
    pub fn tool_jacobian(&self, theta: &JointVector, tool: &PoseSE3) -> Result<Jacobian, SimError> {
        self.check_limits(theta)?;
        Ok(self.tool_jacobian_unchecked(theta, tool))
    }

    pub fn tool_jacobian_unchecked(&self, theta: &JointVector, tool: &PoseSE3) -> Jacobian {
        let frames = self.frames_unchecked(theta);
        let tip = frames.flange.compose(tool).position;
        let mut jac = Jacobian::zeros();
        for i in 0..N_JOINTS {
            let z = frames.joint_axis(self, i);
            let lin = z.cross(&(tip - frames.joints[i].position));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = z[r];
            }
        }
        jac
    }

    /// Torque each joint must supply to hold the arm static against gravity.
    pub fn gravity_torque(&self, theta: &JointVector) -> JointVector {
        let frames = self.frames_unchecked(theta);
        let weight = Vec3::new(0.0, 0.0, self.gravity);
        let coms: Vec<(f64, Vec3)> = self
            .joints
            .iter()
            .enumerate()
            .map(|(k, s)| (s.link_mass, frames.joints[k].transform_point(&Vec3::from(s.link_com))))
            .collect();
        JointVector::from_fn(|i, _| {
            let z = frames.joint_axis(self, i);
            let p = frames.joints[i].position;
            coms[i..]
                .iter()
                .filter(|(m, _)| *m > 0.0)
                .map(|(m, c)| z.dot(&(c - p).cross(&(weight * *m))))
                .sum()
        })
    }
}
