//! One-step MPC: the joint increment that best realizes a desired tip
//! displacement under joint-increment bounds.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::control::qp::{solve_box_lsq, QpSolution};
use crate::control::ControlError;
use crate::geometry::Vec3;
use crate::sim::arm::{Jacobian, JointVector, N_JOINTS};

/// A contact point's Jacobian and Cartesian stiffness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTerm {
    pub jacobian: SMatrix<f64, 3, N_JOINTS>,
    pub stiffness: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcProblem {
    /// Desired tip translation, m.
    pub dp: Vec3,
    /// Desired tip rotation as a world-frame rotation vector, rad.
    pub dq: Vec3,
    pub jacobian: Jacobian,
    /// Diagonal joint stiffness, N·m/rad.
    pub stiffness: JointVector,
    pub contacts: Vec<ContactTerm>,
    pub lower: JointVector,
    pub upper: JointVector,
    pub lambda: f64,
}

impl MpcProblem {
    pub fn target(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.dp.iter().chain(self.dq.iter()).copied())
    }

    fn validate(&self) -> Result<(), ControlError> {
        if !self.stiffness.iter().all(|k| *k > 0.0 && k.is_finite()) {
            return Err(ControlError::Domain("joint stiffness must be positive".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(ControlError::Domain("damping must be positive".into()));
        }
        for i in 0..N_JOINTS {
            if !(self.lower[i] <= 0.0 && 0.0 <= self.upper[i]) {
                return Err(ControlError::Domain(format!("increment bounds must bracket zero at joint {i}")));
            }
        }
        Ok(())
    }

    /// Effective Jacobian `J (K + Σ Jcᵀ Kc Jc)⁻¹ K`.
    pub fn effective_jacobian(&self) -> Result<Jacobian, ControlError> {
        let mut m = SMatrix::<f64, N_JOINTS, N_JOINTS>::from_diagonal(&self.stiffness);
        for c in &self.contacts {
            m += c.jacobian.transpose() * c.stiffness * c.jacobian;
        }
        let k = SMatrix::<f64, N_JOINTS, N_JOINTS>::from_diagonal(&self.stiffness);
        let is_diagonal = (0..N_JOINTS).all(|r| (0..N_JOINTS).all(|c| r == c || m[(r, c)] == 0.0));
        let x = if is_diagonal {
            // exact elementwise inverse keeps the contact-free case identical to J
            SMatrix::<f64, N_JOINTS, N_JOINTS>::from_fn(|r, c| k[(r, c)] / m[(r, r)])
        } else {
            m.lu().solve(&k).ok_or_else(|| ControlError::Numerical("contact-augmented stiffness is singular".into()))?
        };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ControlError::Numerical("contact-augmented stiffness is singular".into()));
        }
        Ok(self.jacobian * x)
    }
}

fn solve_with(jac: &Jacobian, p: &MpcProblem) -> Result<QpSolution, ControlError> {
    let a = DMatrix::from_column_slice(6, N_JOINTS, jac.as_slice());
    let lo = DVector::from_column_slice(p.lower.as_slice());
    let hi = DVector::from_column_slice(p.upper.as_slice());
    solve_box_lsq(&a, &p.target(), p.lambda, &lo, &hi)
}

fn finish(sol: QpSolution, p: &MpcProblem) -> Result<JointVector, ControlError> {
    if sol.kkt_residual > 1e-8 {
        return Err(ControlError::Numerical(format!("KKT residual {:.3e} above tolerance", sol.kkt_residual)));
    }
    let x = JointVector::from_fn(|i, _| sol.x[i].clamp(p.lower[i], p.upper[i]));
    Ok(x)
}

/// Full form with contact stiffness terms.
pub fn mpc_step(problem: &MpcProblem) -> Result<JointVector, ControlError> {
    problem.validate()?;
    let jeff = problem.effective_jacobian()?;
    finish(solve_with(&jeff, problem)?, problem)
}

/// Simplified form that uses the tip Jacobian directly, ignoring contacts.
pub fn mpc_step_simplified(problem: &MpcProblem) -> Result<JointVector, ControlError> {
    problem.validate()?;
    finish(solve_with(&problem.jacobian, problem)?, problem)
}

/// Full solver output, for diagnostics and tests.
pub fn mpc_solve(problem: &MpcProblem) -> Result<QpSolution, ControlError> {
    problem.validate()?;
    solve_with(&problem.effective_jacobian()?, problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::pid::PidGains;
    use crate::control::qp::objective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, bound: f64) -> MpcProblem {
        MpcProblem {
            dp: Vec3::from_fn(|_, _| rng.random_range(-0.02..0.02)),
            dq: Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05)),
            jacobian: Jacobian::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            stiffness: JointVector::from(PidGains::default().k),
            contacts: Vec::new(),
            lower: JointVector::from_element(-bound),
            upper: JointVector::from_element(bound),
            lambda: 1e-6,
        }
    }

    #[test]
    fn zero_target_gives_zero_increment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = random_problem(&mut rng, 0.02);
        p.dp = Vec3::zeros();
        p.dq = Vec3::zeros();
        assert_eq!(mpc_step(&p).unwrap(), JointVector::zeros());
    }

    #[test]
    fn unconstrained_matches_damped_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_problem(&mut rng, f64::INFINITY);
            let j = p.jacobian;
            let h = j.transpose() * j + SMatrix::<f64, 7, 7>::identity() * p.lambda;
            let rhs = j.transpose() * nalgebra::Vector6::from_column_slice(p.target().as_slice());
            let expect = h.lu().solve(&rhs).unwrap();
            assert!((mpc_step(&p).unwrap() - expect).amax() <= 1e-8);
        }
    }

    #[test]
    fn zero_contact_stiffness_reduces_to_simplified_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut p = random_problem(&mut rng, 0.02);
            p.contacts.push(ContactTerm {
                jacobian: SMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                stiffness: Matrix3::zeros(),
            });
            let a = mpc_step(&p).unwrap();
            let b = mpc_step_simplified(&p).unwrap();
            assert!((a - b).amax() <= 1e-10);
        }
    }

    #[test]
    fn contact_stiffness_changes_the_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_problem(&mut rng, f64::INFINITY);
        let free = mpc_step(&p).unwrap();
        p.contacts.push(ContactTerm {
            jacobian: SMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            stiffness: Matrix3::identity() * 500.0,
        });
        let stiff = mpc_step(&p).unwrap();
        assert!((free - stiff).amax() > 1e-6);
    }

    #[test]
    fn output_always_inside_bounds_and_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 0.01);
            let x = mpc_step(&p).unwrap();
            assert!(x.iter().all(|v| v.abs() <= 0.01));
            let a = DMatrix::from_column_slice(6, 7, p.jacobian.as_slice());
            let f = objective(&a, &p.target(), p.lambda, &DVector::from_column_slice(x.as_slice()));
            for _ in 0..1000 {
                let r = DVector::from_fn(7, |_, _| rng.random_range(-0.01..=0.01));
                assert!(f <= objective(&a, &p.target(), p.lambda, &r) + 1e-12);
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_problem(&mut rng, 0.02);
        p.lower[0] = 0.01;
        assert!(matches!(mpc_step(&p), Err(ControlError::Domain(_))));
        let mut p = random_problem(&mut rng, 0.02);
        p.stiffness[2] = 0.0;
        assert!(matches!(mpc_step(&p), Err(ControlError::Domain(_))));
        let mut p = random_problem(&mut rng, 0.02);
        // a contact exactly cancelling joint 0's stiffness makes the sum singular
        let mut jc = SMatrix::<f64, 3, 7>::zeros();
        jc[(0, 0)] = 1.0;
        p.contacts.push(ContactTerm { jacobian: jc, stiffness: Matrix3::from_diagonal(&Vec3::new(-p.stiffness[0], 0.0, 0.0)) });
        assert!(matches!(mpc_step(&p), Err(ControlError::Numerical(_))));
    }
}
