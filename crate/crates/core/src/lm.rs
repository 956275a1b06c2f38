//! Levenberg-Marquardt for real-parameter least squares.
//!
//! Problems hand over the gradient `Jᵀr` and the Gauss-Newton matrix `JᵀJ`
//! instead of the Jacobian itself, so structured problems never build `J`.
//! Complex residuals are treated as stacked real and imaginary parts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub enum Normal {
    Dense(DMatrix<f64>),
    /// `JᵀJ` is diagonal, e.g. when every parameter touches its own rows.
    Diagonal(Vec<f64>),
}

impl Normal {
    fn diagonal(&self) -> Vec<f64> {
        match self {
            Normal::Dense(m) => m.diagonal().iter().copied().collect(),
            Normal::Diagonal(d) => d.clone(),
        }
    }
}

pub struct Linearization {
    pub cost: f64,
    /// `Jᵀr`.
    pub gradient: Vec<f64>,
    pub normal: Normal,
}

/// `cost(x) = ‖r(x)‖²`.
pub trait LmProblem {
    fn cost(&self, x: &[f64]) -> f64;
    fn linearize(&self, x: &[f64]) -> Linearization;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmOptions {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// `JᵀJ` vanished or could not be factorized.
    RankDeficient,
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    /// Number of accepted steps.
    pub steps: usize,
    pub status: LmStatus,
}

fn solve_damped(normal: &Normal, gradient: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let diag = normal.diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let floor = max * 1e-12;
    match normal {
        Normal::Diagonal(d) => Some(
            d.iter().zip(gradient).map(|(&a, &g)| -g / (a + lambda * a.max(floor))).collect(),
        ),
        Normal::Dense(m) => {
            let mut a = m.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * diag[i].max(floor);
            }
            let rhs = DVector::from_iterator(gradient.len(), gradient.iter().map(|g| -g));
            a.cholesky().map(|c| c.solve(&rhs).iter().copied().collect())
        }
    }
}

pub fn levenberg_marquardt<P: LmProblem + ?Sized>(problem: &P, x0: &[f64], opts: &LmOptions) -> LmReport {
    let mut x = x0.to_vec();
    let mut lin = problem.linearize(&x);
    let initial_cost = lin.cost;
    let mut lambda = opts.initial_damping;
    let mut steps = 0;
    let mut iterations = 0;
    let status = loop {
        let gnorm = lin.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.gradient_tol {
            break LmStatus::GradientTolerance;
        }
        if iterations >= opts.max_iterations {
            break LmStatus::MaxIterations;
        }
        iterations += 1;
        let Some(delta) = solve_damped(&lin.normal, &lin.gradient, lambda) else {
            break LmStatus::RankDeficient;
        };
        let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step_norm < opts.step_tol * (1.0 + xnorm) {
            break LmStatus::StepTolerance;
        }
        let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let cost = problem.cost(&trial);
        if cost < lin.cost {
            x = trial;
            lin = problem.linearize(&x);
            lambda *= opts.damping_down;
            steps += 1;
        } else {
            // the step no longer changes the cost measurably
            if (cost - lin.cost).abs() <= 4.0 * f64::EPSILON * lin.cost {
                break LmStatus::StepTolerance;
            }
            lambda *= opts.damping_up;
            if lambda > 1e16 {
                break LmStatus::StepTolerance;
            }
        }
    };
    LmReport { x, cost: lin.cost, initial_cost, iterations, steps, status }
}

/// Problem given by closures for the residual vector and its dense Jacobian.
pub struct DenseProblem<R, J> {
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> LmProblem for DenseProblem<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    fn cost(&self, x: &[f64]) -> f64 {
        (self.residual)(x).iter().map(|r| r * r).sum()
    }

    fn linearize(&self, x: &[f64]) -> Linearization {
        let r = (self.residual)(x);
        let j = (self.jacobian)(x);
        let rv = DVector::from_vec(r);
        let gradient = (j.transpose() * &rv).iter().copied().collect();
        Linearization { cost: rv.norm_squared(), gradient, normal: Normal::Dense(j.transpose() * &j) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_problem() -> DenseProblem<impl Fn(&[f64]) -> Vec<f64>, impl Fn(&[f64]) -> DMatrix<f64>> {
        // r = A x - b with a known minimizer
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a2 = a.clone();
        DenseProblem {
            residual: move |x: &[f64]| (&a * DVector::from_column_slice(x) - &b).iter().copied().collect(),
            jacobian: move |_x: &[f64]| a2.clone(),
        }
    }

    #[test]
    fn quadratic_converges_to_normal_equations() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let exact = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        let r = levenberg_marquardt(&linear_problem(), &[10.0, -7.0], &LmOptions::default());
        assert!(r.iterations <= 10, "{} iterations", r.iterations);
        assert!((r.x[0] - exact[0]).abs() < 1e-9 && (r.x[1] - exact[1]).abs() < 1e-9);
    }

    #[test]
    fn start_at_optimum_takes_no_step() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let exact = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        let r = levenberg_marquardt(&linear_problem(), exact.as_slice(), &LmOptions::default());
        assert_eq!(r.steps, 0);
        assert_eq!(r.x, exact.as_slice().to_vec());
    }

    #[test]
    fn rosenbrock() {
        let p = DenseProblem {
            residual: |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]],
            jacobian: |x: &[f64]| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]),
        };
        let r = levenberg_marquardt(&p, &[-1.2, 1.0], &LmOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8, "{:?}", r);
    }

    #[test]
    fn zero_jacobian_is_flagged() {
        let p = DenseProblem { residual: |_x: &[f64]| vec![1.0], jacobian: |_x: &[f64]| DMatrix::zeros(1, 1) };
        let mut opts = LmOptions::default();
        opts.gradient_tol = -1.0;
        let r = levenberg_marquardt(&p, &[0.3], &opts);
        assert_eq!(r.status, LmStatus::RankDeficient);
        assert_eq!(r.x, vec![0.3]);
    }

    #[test]
    fn diagonal_normal() {
        struct Sep;
        impl LmProblem for Sep {
            fn cost(&self, x: &[f64]) -> f64 {
                x.iter().enumerate().map(|(i, v)| (v.sin() - 0.1 * i as f64).powi(2)).sum()
            }
            fn linearize(&self, x: &[f64]) -> Linearization {
                let r: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() - 0.1 * i as f64).collect();
                let j: Vec<f64> = x.iter().map(|v| v.cos()).collect();
                Linearization {
                    cost: r.iter().map(|v| v * v).sum(),
                    gradient: r.iter().zip(&j).map(|(a, b)| a * b).collect(),
                    normal: Normal::Diagonal(j.iter().map(|v| v * v).collect()),
                }
            }
        }
        let r = levenberg_marquardt(&Sep, &[0.0; 5], &LmOptions::default());
        for (i, v) in r.x.iter().enumerate() {
            assert!((v.sin() - 0.1 * i as f64).abs() < 1e-9);
        }
    }
}
