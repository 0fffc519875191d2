//! Small dense nonlinear least squares with a lower bound on every variable.
//!
//! Levenberg-Marquardt trust region with Nielsen's damping update. Steps
//! that would cross the bound are shortened to stay strictly inside it.

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsConfig {
    pub max_iterations: usize,
    /// Stop when `‖r‖` or the relative step falls below this.
    pub tolerance: f64,
    /// Fraction of the distance to the bound a truncated step may cover.
    pub boundary_fraction: f64,
}

impl Default for NlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
            boundary_fraction: 0.995,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsReport {
    pub x: DVector<f64>,
    /// Residual norm `‖r(x)‖`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `½‖r(x)‖²` subject to `x > lower` elementwise. `model`
/// returns the residual and its Jacobian.
pub fn solve_bounded<F>(mut model: F, x0: DVector<f64>, lower: f64, cfg: &NlsConfig) -> NlsReport
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut r, mut j) = model(&x);
    let mut cost = 0.5 * r.norm_squared();
    let mut jtj = j.transpose() * &j;
    let mut mu = 1e-3 * jtj.diagonal().max().max(f64::MIN_POSITIVE);
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        if !cost.is_finite() {
            break;
        }
        if r.norm() <= cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let g = j.transpose() * &r;
        let mut lhs = jtj.clone();
        for i in 0..n {
            lhs[(i, i)] += mu * jtj[(i, i)].max(1e-12);
        }
        let Some(chol) = lhs.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let mut p = -chol.solve(&g);
        let mut alpha: f64 = 1.0;
        for i in 0..n {
            if p[i] < 0.0 {
                alpha = alpha.min(cfg.boundary_fraction * (x[i] - lower) / -p[i]);
            }
        }
        p *= alpha;
        let predicted = -(g.dot(&p) + 0.5 * p.dot(&(&jtj * &p)));
        let x_new = &x + &p;
        let (r_new, j_new) = model(&x_new);
        let cost_new = 0.5 * r_new.norm_squared();
        let rho = if predicted > 0.0 {
            (cost - cost_new) / predicted
        } else {
            -1.0
        };
        if rho > 1e-4 && cost_new.is_finite() {
            let step = p.norm();
            x = x_new;
            r = r_new;
            j = j_new;
            cost = cost_new;
            jtj = j.transpose() * &j;
            mu *= (1.0 / 3.0_f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if step <= cfg.tolerance * (x.norm() + cfg.tolerance) {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() {
                break;
            }
        }
    }
    let residual_norm = r.norm();
    NlsReport {
        x,
        residual_norm,
        iterations,
        converged: converged || residual_norm <= cfg.tolerance,
    }
}
