//! Closed-loop execution of a setpoint sequence: MPC at 50 Hz producing
//! joint targets, PD at 1 kHz producing torques for the plant.

use serde::{Deserialize, Serialize};

use crate::control::mpc::{mpc_step, MpcProblem};
use crate::control::pid::{pid_torque, saturate, PidGains};
use crate::control::plan::{Setpoint, MPC_HZ};
use crate::control::ControlError;
use crate::geometry::{PoseSE3, Twist6};
use crate::sim::arm::JointVector;
use crate::sim::{World, TICK_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub gains: PidGains,
    /// Joint stiffness used inside the MPC model, N·m/rad.
    pub mpc_stiffness: [f64; 7],
    /// Per-tick joint increment bound, rad.
    pub increment_bound: f64,
    pub lambda: f64,
    pub torque_limit: f64,
    pub position_tolerance: f64,
    pub angle_tolerance: f64,
    /// Timeout as a multiple of the primitive duration.
    pub timeout_factor: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let gains = PidGains::default();
        Self {
            gains,
            mpc_stiffness: gains.k,
            increment_bound: 0.02,
            lambda: 1e-6,
            torque_limit: 30.0,
            position_tolerance: 0.002,
            angle_tolerance: 1f64.to_radians(),
            timeout_factor: 1.5,
        }
    }
}

/// One outer-loop sample of a tracked motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub tick: u64,
    pub theta: JointVector,
    pub theta_d: JointVector,
    /// The MPC increment that produced `theta_d`.
    pub increment: JointVector,
    pub tip: PoseSE3,
    pub setpoint: PoseSE3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub success: bool,
    pub interrupted: bool,
    pub timed_out: bool,
    pub position_error: f64,
    pub angle_error: f64,
    /// Simulated seconds spent.
    pub duration: f64,
    pub ticks: u64,
    pub trace: Vec<TraceSample>,
}

/// Called after every 1 kHz tick; returning true aborts the motion.
pub type TickHook<'a> = dyn FnMut(&World) -> bool + 'a;

fn pose_error(tip: &PoseSE3, target: &PoseSE3) -> (f64, f64) {
    ((target.position - tip.position).norm(), tip.orientation.angle_to(&target.orientation))
}

/// Per-joint increment bounds: the configured box shrunk to stay in limits.
pub fn increment_bounds(world: &World, bound: f64) -> (JointVector, JointVector) {
    let theta = world.state.position;
    let lo = world.arm.lower_limits();
    let hi = world.arm.upper_limits();
    (
        JointVector::from_fn(|i, _| (-bound).max(lo[i] - theta[i]).min(0.0)),
        JointVector::from_fn(|i, _| bound.min(hi[i] - theta[i]).max(0.0)),
    )
}

/// One outer-loop solve toward `target`; returns the joint increment.
pub fn mpc_increment(world: &World, target: &PoseSE3, cfg: &ControllerConfig) -> Result<JointVector, ControlError> {
    let theta = world.state.position;
    let tip = world.tip_pose();
    let err = Twist6::between(&tip, target);
    let (lower, upper) = increment_bounds(world, cfg.increment_bound);
    let problem = MpcProblem {
        dp: err.linear,
        dq: err.angular,
        jacobian: world.arm.tool_jacobian_unchecked(&theta, &world.utensil.tip),
        stiffness: JointVector::from(cfg.mpc_stiffness),
        contacts: Vec::new(),
        lower,
        upper,
        lambda: cfg.lambda,
    };
    mpc_step(&problem)
}

/// Runs the setpoints to completion, timeout or abort.
pub fn track(
    world: &mut World,
    setpoints: &[Setpoint],
    cfg: &ControllerConfig,
    hook: &mut TickHook,
    record_trace: bool,
) -> Result<TrackReport, ControlError> {
    let last = setpoints.last().ok_or_else(|| ControlError::Planning("empty setpoint sequence".into()))?;
    let start_tick = world.tick();
    let nominal = last.t;
    let max_ticks = (nominal * cfg.timeout_factor * TICK_HZ as f64).round() as u64;
    let per_mpc = (TICK_HZ as f64 / MPC_HZ).round() as u64;
    let mut trace = Vec::new();
    let report = |world: &World, success, interrupted, timed_out, trace| {
        let (pe, ae) = pose_error(&world.tip_pose(), &last.pose);
        TrackReport {
            success,
            interrupted,
            timed_out,
            position_error: pe,
            angle_error: ae,
            duration: (world.tick() - start_tick) as f64 / TICK_HZ as f64,
            ticks: world.tick() - start_tick,
            trace,
        }
    };

    let mut theta_d = world.state.position;
    loop {
        let elapsed = world.tick() - start_tick;
        let t = elapsed as f64 / TICK_HZ as f64;
        if elapsed.is_multiple_of(per_mpc) {
            let (pe, ae) = pose_error(&world.tip_pose(), &last.pose);
            if t >= nominal && pe < cfg.position_tolerance && ae < cfg.angle_tolerance {
                return Ok(report(world, true, false, false, trace));
            }
            if elapsed >= max_ticks {
                return Ok(report(world, false, false, true, trace));
            }
            let idx = setpoints.partition_point(|s| s.t < t - 1e-9).min(setpoints.len() - 1);
            let sp = &setpoints[idx];
            let increment = mpc_increment(world, &sp.pose, cfg)?;
            theta_d = world.state.position + increment;
            if record_trace {
                trace.push(TraceSample {
                    tick: world.tick(),
                    theta: world.state.position,
                    theta_d,
                    increment,
                    tip: world.tip_pose(),
                    setpoint: sp.pose,
                });
            }
        }
        let tau_g = world.gravity_torque();
        let tau = saturate(&pid_torque(&theta_d, &world.state, &cfg.gains, &tau_g), cfg.torque_limit);
        world.step(&tau).map_err(|e| ControlError::Sim(e.to_string()))?;
        if hook(world) {
            return Ok(report(world, false, true, false, trace));
        }
    }
}
