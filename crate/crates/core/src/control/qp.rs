//! Dense box-constrained least squares by a primal active-set method.
//!
//! Solves `min ‖b − A x‖² + λ‖x‖²` subject to `lo ≤ x ≤ hi` with
//! `lo ≤ 0 ≤ hi`, so the origin is a feasible start.

use nalgebra::{DMatrix, DVector};

use crate::control::ControlError;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Infinity norm of `x − P(x − ∇f(x))`, `P` the box projection.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Objective value `‖b − A x‖² + λ‖x‖²`.
pub fn objective(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, x: &DVector<f64>) -> f64 {
    (b - a * x).norm_squared() + lambda * x.norm_squared()
}

/// Gradient of [`objective`].
pub fn gradient(h: &DMatrix<f64>, atb: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    (h * x - atb) * 2.0
}

pub fn kkt_residual(g: &DVector<f64>, x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max)
}

pub fn solve_box_lsq(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Result<QpSolution, ControlError> {
    let n = a.ncols();
    if b.len() != a.nrows() || lo.len() != n || hi.len() != n {
        return Err(ControlError::Domain("dimension mismatch".into()));
    }
    if !(lambda > 0.0) {
        return Err(ControlError::Domain("damping must be positive".into()));
    }
    for i in 0..n {
        if !(lo[i] <= 0.0 && 0.0 <= hi[i]) {
            return Err(ControlError::Domain(format!("bounds must bracket zero at index {i}")));
        }
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(ControlError::Numerical("non-finite problem data".into()));
    }

    let h = a.transpose() * a + DMatrix::identity(n, n) * lambda;
    let atb = a.transpose() * b;
    let mut x = DVector::zeros(n);
    let mut state = vec![Bound::Free; n];
    let max_iter = 20 * n + 50;

    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        // Newton step on the free variables with the others held at their bounds
        let g = gradient(&h, &atb, &x);
        let mut d = DVector::zeros(n);
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -0.5 * g[i]));
            let chol = hff.cholesky().ok_or_else(|| ControlError::Numerical("reduced Hessian not positive definite".into()))?;
            let mut step = chol.solve(&rhs);
            // one round of iterative refinement
            let resid = &rhs - DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]) * &step;
            step += chol.solve(&resid);
            for (k, &i) in free.iter().enumerate() {
                d[i] = step[k];
            }
        }

        // longest feasible fraction of the step
        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &free {
            if d[i] < 0.0 && x[i] + d[i] < lo[i] {
                let t = (lo[i] - x[i]) / d[i];
                if t < alpha {
                    alpha = t;
                    blocking = Some((i, Bound::Lower));
                }
            } else if d[i] > 0.0 && x[i] + d[i] > hi[i] {
                let t = (hi[i] - x[i]) / d[i];
                if t < alpha {
                    alpha = t;
                    blocking = Some((i, Bound::Upper));
                }
            }
        }
        for &i in &free {
            x[i] += alpha * d[i];
        }
        if let Some((i, side)) = blocking {
            x[i] = if side == Bound::Lower { lo[i] } else { hi[i] };
            state[i] = side;
            continue;
        }

        // full step taken: check the multipliers of the fixed variables
        let g = gradient(&h, &atb, &x);
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match state[i] {
                Bound::Lower => -g[i],
                Bound::Upper => g[i],
                Bound::Free => continue,
            };
            if violation > 0.0 && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((i, violation));
            }
        }
        match worst {
            Some((i, _)) => state[i] = Bound::Free,
            None => {
                for i in 0..n {
                    x[i] = x[i].clamp(lo[i], hi[i]);
                }
                let g = gradient(&h, &atb, &x);
                return Ok(QpSolution {
                    objective: objective(a, b, lambda, &x),
                    kkt_residual: kkt_residual(&g, &x, lo, hi),
                    x,
                    iterations: iter + 1,
                });
            }
        }
    }
    Err(ControlError::Numerical("active-set iteration limit reached".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unconstrained_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = DMatrix::from_fn(6, 7, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(6, |_, _| rng.random_range(-0.1..0.1));
            let lo = DVector::from_element(7, f64::NEG_INFINITY);
            let hi = DVector::from_element(7, f64::INFINITY);
            let sol = solve_box_lsq(&a, &b, 1e-6, &lo, &hi).unwrap();
            let h = a.transpose() * &a + DMatrix::identity(7, 7) * 1e-6;
            let x = h.lu().solve(&(a.transpose() * &b)).unwrap();
            assert!((sol.x - x).amax() < 1e-8);
            assert!(sol.kkt_residual <= 1e-8);
        }
    }

    #[test]
    fn two_variable_box_matches_hand_solution() {
        // min (x-1)² + (y+2)² over [-0.5,0.5]² has its corner at (0.5,-0.5)
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let lo = DVector::from_element(2, -0.5);
        let hi = DVector::from_element(2, 0.5);
        let sol = solve_box_lsq(&a, &b, 1e-6, &lo, &hi).unwrap();
        assert_eq!(sol.x.as_slice(), &[0.5, -0.5]);
    }

    #[test]
    fn bounds_not_bracketing_zero_are_rejected() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::zeros(2);
        let lo = DVector::from_vec(vec![0.1, -1.0]);
        let hi = DVector::from_element(2, 1.0);
        assert!(matches!(solve_box_lsq(&a, &b, 1e-6, &lo, &hi), Err(ControlError::Domain(_))));
    }

    #[test]
    fn random_boxes_satisfy_kkt_and_beat_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = DMatrix::from_fn(6, 7, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(6, |_, _| rng.random_range(-0.2..0.2));
            let lo = DVector::from_fn(7, |_, _| -rng.random_range(0.0..0.05));
            let hi = DVector::from_fn(7, |_, _| rng.random_range(0.0..0.05));
            let sol = solve_box_lsq(&a, &b, 1e-6, &lo, &hi).unwrap();
            assert!(sol.kkt_residual <= 1e-8, "residual {}", sol.kkt_residual);
            for i in 0..7 {
                assert!(lo[i] <= sol.x[i] && sol.x[i] <= hi[i]);
            }
            for _ in 0..100 {
                let p = DVector::from_fn(7, |i, _| rng.random_range(lo[i]..=hi[i]));
                assert!(sol.objective <= objective(&a, &b, 1e-6, &p) + 1e-12);
            }
        }
    }
}
