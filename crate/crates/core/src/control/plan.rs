//! Motion primitives, inverse kinematics and 50 Hz setpoint generation.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::control::ControlError;
use crate::geometry::{pose_interpolate, PoseSE3, Twist6};
use crate::sim::arm::{ArmModel, JointVector};

/// Outer-loop rate, Hz.
pub const MPC_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    JointPtp,
    CartesianPtp,
    CartesianLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    pub goal: PoseSE3,
    pub duration: f64,
    pub kind: MotionKind,
}

/// One outer-loop target: time since primitive start and tip pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub t: f64,
    pub pose: PoseSE3,
}

/// Minimum-jerk time scaling on `[0, 1]`.
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkConfig {
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub angle_tolerance: f64,
    pub damping: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self { max_iterations: 200, position_tolerance: 1e-5, angle_tolerance: 1e-4, damping: 0.02 }
    }
}

/// Damped least-squares IK for the tool tip, seeded at `seed`.
pub fn solve_ik(
    arm: &ArmModel,
    tool: &PoseSE3,
    goal: &PoseSE3,
    seed: &JointVector,
    cfg: &IkConfig,
) -> Result<JointVector, ControlError> {
    let mut theta = arm.clamp_to_limits(seed);
    for _ in 0..cfg.max_iterations {
        let pose = arm.frames_unchecked(&theta).flange.compose(tool);
        let err = Twist6::between(&pose, goal);
        if err.linear.norm() <= cfg.position_tolerance && err.angular.norm() <= cfg.angle_tolerance {
            return Ok(theta);
        }
        let mut e = Vector6::from_column_slice(&err.to_array());
        // cap the per-iteration step so the linearization stays valid
        let scale = (0.1 / e.fixed_rows::<3>(0).norm()).min(0.5 / e.fixed_rows::<3>(3).norm()).min(1.0);
        e *= scale;
        let j = arm.tool_jacobian_unchecked(&theta, tool);
        let jjt = j * j.transpose() + Matrix6::identity() * cfg.damping * cfg.damping;
        let y = jjt.lu().solve(&e).ok_or_else(|| ControlError::Planning("IK linear solve failed".into()))?;
        theta = arm.clamp_to_limits(&(theta + j.transpose() * y));
    }
    Err(ControlError::Planning(format!("IK did not converge within {} iterations", cfg.max_iterations)))
}

fn sample_count(duration: f64) -> usize {
    ((duration * MPC_HZ).round() as usize).max(1)
}

/// Expands a primitive into setpoints at the outer-loop rate. The last
/// setpoint is at `t = duration` and equals the goal exactly.
pub fn plan_primitive(
    prim: &MotionPrimitive,
    arm: &ArmModel,
    tool: &PoseSE3,
    theta: &JointVector,
) -> Result<Vec<Setpoint>, ControlError> {
    if !(prim.duration >= 0.0) || !prim.duration.is_finite() || !prim.goal.is_finite() {
        return Err(ControlError::Planning("primitive duration and goal must be finite".into()));
    }
    let start = arm.frames_unchecked(theta).flange.compose(tool);
    if prim.duration == 0.0 {
        return Ok(vec![Setpoint { t: 0.0, pose: prim.goal }]);
    }
    let n = sample_count(prim.duration);
    let times = (0..=n).map(|k| prim.duration * k as f64 / n as f64);
    let interp = |s: f64| pose_interpolate(&start, &prim.goal, s).map_err(|e| ControlError::Planning(e.to_string()));
    let mut out = Vec::with_capacity(n + 1);
    match prim.kind {
        MotionKind::JointPtp => {
            let goal_theta = solve_ik(arm, tool, &prim.goal, theta, &IkConfig::default())?;
            for (k, t) in times.enumerate() {
                let pose = if k == n {
                    prim.goal
                } else {
                    let q = theta + (goal_theta - theta) * min_jerk(t / prim.duration);
                    arm.frames_unchecked(&q).flange.compose(tool)
                };
                out.push(Setpoint { t, pose });
            }
        }
        MotionKind::CartesianPtp => {
            for t in times {
                out.push(Setpoint { t, pose: interp(min_jerk(t / prim.duration))? });
            }
        }
        MotionKind::CartesianLinear => {
            for (k, t) in times.enumerate() {
                out.push(Setpoint { t, pose: interp(k as f64 / n as f64)? });
            }
        }
    }
    Ok(out)
}
