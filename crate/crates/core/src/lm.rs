//! Levenberg-Marquardt nonlinear least squares with a central-difference
//! Jacobian and Marquardt diagonal scaling.

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Relative tolerance on both the step and the cost decrease.
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            lambda0: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport<T> {
    pub params: Vec<T>,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: T,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared residuals at the start and after every accepted step.
    pub cost_history: Vec<T>,
}

const LAMBDA_MAX: f64 = 1e16;

#[derive(Debug, Clone, Default)]
pub struct LevenbergMarquardt {
    pub config: LmConfig,
}

fn cost<T: Scalar>(r: &[T]) -> T {
    r.iter().map(|&v| v * v).sum()
}

fn all_finite<T: Scalar>(r: &[T]) -> bool {
    r.iter().all(|v| v.is_finite())
}

impl LevenbergMarquardt {
    pub fn new(config: LmConfig) -> Self {
        Self { config }
    }

    /// Central-difference Jacobian, one row per residual.
    pub fn jacobian<T, F>(residuals: &F, p: &[T]) -> Vec<Vec<T>>
    where
        T: Scalar,
        F: Fn(&[T]) -> Vec<T>,
    {
        let h_rel = T::epsilon().cbrt();
        let mut cols = Vec::with_capacity(p.len());
        let mut q = p.to_vec();
        for j in 0..p.len() {
            let h = h_rel * p[j].abs().max(T::one());
            q[j] = p[j] + h;
            let up = residuals(&q);
            q[j] = p[j] - h;
            let down = residuals(&q);
            q[j] = p[j];
            let two_h = (p[j] + h) - (p[j] - h);
            cols.push(
                up.iter()
                    .zip(&down)
                    .map(|(&a, &b)| (a - b) / two_h)
                    .collect::<Vec<T>>(),
            );
        }
        let m = cols.first().map_or(0, Vec::len);
        (0..m)
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }

    /// Minimizes `|residuals(p)|²` from `init`. Stops early (with
    /// `converged = false`) after `max_iter` Jacobian evaluations.
    pub fn minimize<T, F>(&self, residuals: F, init: &[T]) -> Result<LmReport<T>>
    where
        T: Scalar,
        F: Fn(&[T]) -> Vec<T>,
    {
        let tol = T::of(self.config.tol);
        let mut p = init.to_vec();
        let mut r = residuals(&p);
        if !all_finite(&r) || !all_finite(&p) {
            return Err(Error::NonFiniteResidual);
        }
        let mut c = cost(&r);
        let mut history = vec![c];
        let mut lambda = T::of(self.config.lambda0);
        let n = p.len();

        for iter in 1..=self.config.max_iter {
            if c == T::zero() {
                return Ok(self.report(p, c, iter - 1, true, history));
            }
            let jac = Self::jacobian(&residuals, &p);
            let mut a = vec![vec![T::zero(); n]; n];
            let mut g = vec![T::zero(); n];
            for (row, &ri) in jac.iter().zip(&r) {
                for i in 0..n {
                    g[i] += row[i] * ri;
                    for k in i..n {
                        a[i][k] += row[i] * row[k];
                    }
                }
            }
            for i in 0..n {
                for k in 0..i {
                    a[i][k] = a[k][i];
                }
            }
            // solve in Jacobi-scaled coordinates so the pivot test is not
            // dominated by the largest parameter scale
            let diag_floor = (0..n).fold(T::zero(), |m, i| m.max(a[i][i])) * T::epsilon();
            let d: Vec<T> = (0..n)
                .map(|i| a[i][i].max(diag_floor).max(T::min_positive_value()).sqrt())
                .collect();
            let scaled: Vec<Vec<T>> = (0..n)
                .map(|i| (0..n).map(|k| a[i][k] / (d[i] * d[k])).collect())
                .collect();
            loop {
                let mut damped = scaled.clone();
                for (i, row) in damped.iter_mut().enumerate() {
                    row[i] += lambda;
                }
                let rhs: Vec<T> = g.iter().zip(&d).map(|(&v, &di)| -v / di).collect();
                let step = crate::scalar::solve_dense(damped, rhs).map(|y| {
                    y.iter()
                        .zip(&d)
                        .map(|(&yi, &di)| yi / di)
                        .collect::<Vec<T>>()
                });
                if let Some(step) = &step {
                    let trial: Vec<T> = p.iter().zip(step).map(|(&x, &d)| x + d).collect();
                    let r_new = residuals(&trial);
                    let c_new = cost(&r_new);
                    if all_finite(&r_new) && c_new < c {
                        let step_norm = step.iter().map(|&d| d * d).sum::<T>().sqrt();
                        let p_norm = p.iter().map(|&x| x * x).sum::<T>().sqrt();
                        let small_step = step_norm <= tol * (p_norm + tol);
                        let small_gain = c - c_new <= tol * c;
                        p = trial;
                        r = r_new;
                        c = c_new;
                        history.push(c);
                        lambda = (lambda / T::of(10.0)).max(T::of(1e-300));
                        if small_step && small_gain {
                            return Ok(self.report(p, c, iter, true, history));
                        }
                        break;
                    }
                }
                lambda *= T::of(10.0);
                if lambda > T::of(LAMBDA_MAX) {
                    // no damping yields a decrease: the current point is a
                    // minimum to working precision, unless the system is
                    // degenerate everywhere
                    if step.is_none() && a.iter().all(|row| row.iter().all(|v| *v == T::zero())) {
                        return Err(Error::SingularNormalEquations);
                    }
                    return Ok(self.report(p, c, iter, true, history));
                }
            }
        }
        Ok(self.report(p, c, self.config.max_iter, false, history))
    }

    fn report<T: Scalar>(
        &self,
        params: Vec<T>,
        cost: T,
        iterations: usize,
        converged: bool,
        cost_history: Vec<T>,
    ) -> LmReport<T> {
        LmReport {
            params,
            residual_norm: cost.sqrt(),
            iterations,
            converged,
            cost_history,
        }
    }
}

/// Like [`LevenbergMarquardt::minimize`], but running out of iterations is
/// an error.
pub fn lm_optimize<T, F>(residuals: F, init: &[T], config: LmConfig) -> Result<LmReport<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T>,
{
    let report = LevenbergMarquardt::new(config).minimize(residuals, init)?;
    if report.converged {
        Ok(report)
    } else {
        Err(Error::MaxIterationsReached {
            iterations: report.iterations,
        })
    }
}
