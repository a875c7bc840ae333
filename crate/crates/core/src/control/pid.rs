//! Low-gain joint PD law with gravity feed-forward, and the torque limiter.

use serde::{Deserialize, Serialize};

use crate::sim::arm::{JointState, JointVector, N_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    /// Stiffness diagonal, N·m/rad.
    pub k: [f64; N_JOINTS],
    /// Damping diagonal, N·m·s/rad.
    pub d: [f64; N_JOINTS],
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            k: [90.0, 80.0, 20.0, 22.0, 12.0, 27.5, 20.0],
            d: [10.0, 10.0, 2.0, 1.0, 1.0, 2.0, 2.0],
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> bool {
        self.k.iter().chain(self.d.iter()).all(|g| *g > 0.0 && g.is_finite())
    }
}

/// `τ = K(θ_d − θ) − Dθ̇ + τ̂_g`, elementwise.
pub fn pid_torque(theta_d: &JointVector, state: &JointState, gains: &PidGains, tau_g: &JointVector) -> JointVector {
    JointVector::from_fn(|i, _| {
        gains.k[i] * (theta_d[i] - state.position[i]) - gains.d[i] * state.velocity[i] + tau_g[i]
    })
}

/// Clamps every torque to `±limit`.
pub fn saturate(tau: &JointVector, limit: f64) -> JointVector {
    tau.map(|t| t.clamp(-limit, limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, v: f64) -> JointVector {
        let mut x = JointVector::zeros();
        x[i] = v;
        x
    }

    #[test]
    fn equilibrium_returns_gravity_torque() {
        let theta = JointVector::from([0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7]);
        let g = JointVector::from([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let tau = pid_torque(&theta, &JointState::at_rest(theta), &PidGains::default(), &g);
        assert_eq!(tau, g);
    }

    #[test]
    fn first_joint_stiffness_from_published_gains() {
        let s = JointState::at_rest(JointVector::zeros());
        let tau = pid_torque(&e(0, 0.1), &s, &PidGains::default(), &JointVector::zeros());
        assert!((tau[0] - 9.0).abs() < 1e-12);
        assert!(tau.iter().skip(1).all(|t| *t == 0.0));
    }

    #[test]
    fn third_joint_damping_from_published_gains() {
        let s = JointState { position: JointVector::zeros(), velocity: e(2, 1.0) };
        let tau = pid_torque(&JointVector::zeros(), &s, &PidGains::default(), &JointVector::zeros());
        assert_eq!(tau[2], -2.0);
    }

    #[test]
    fn every_gain_entry_is_applied() {
        let g = PidGains::default();
        for i in 0..N_JOINTS {
            let s = JointState { position: JointVector::zeros(), velocity: e(i, 1.0) };
            let tau = pid_torque(&e(i, 1.0), &s, &g, &JointVector::zeros());
            assert_eq!(tau[i], g.k[i] - g.d[i]);
        }
        assert_eq!(g.k, [90.0, 80.0, 20.0, 22.0, 12.0, 27.5, 20.0]);
        assert_eq!(g.d, [10.0, 10.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn feedback_is_linear() {
        let g = PidGains::default();
        let err = JointVector::from([0.01, -0.02, 0.03, 0.0, 0.05, -0.01, 0.2]);
        let vel = JointVector::from([0.3, 0.1, -0.2, 0.4, 0.0, 0.1, -0.5]);
        for alpha in [0.5, 2.0, -3.0] {
            let base = pid_torque(&err, &JointState { position: JointVector::zeros(), velocity: vel }, &g, &JointVector::zeros());
            let scaled = pid_torque(
                &(err * alpha),
                &JointState { position: JointVector::zeros(), velocity: vel * alpha },
                &g,
                &JointVector::zeros(),
            );
            assert!((scaled - base * alpha).amax() <= 1e-12);
        }
    }

    #[test]
    fn limiter_clamps_after_the_law() {
        let s = JointState::at_rest(JointVector::zeros());
        let tau = pid_torque(&e(0, 1.0), &s, &PidGains::default(), &JointVector::zeros());
        assert_eq!(tau[0], 90.0);
        assert_eq!(saturate(&tau, 30.0)[0], 30.0);
    }
}
