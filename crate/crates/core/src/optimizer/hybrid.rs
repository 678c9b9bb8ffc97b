use nalgebra::{DMatrix, DVector};

use super::{norm, Bounds, Objective};
use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-7;
const PINV_RTOL: f64 = 1e-10;

/// Result of solving the gradient system.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// The refined point, or the input if refinement was rejected.
    pub point: Vec<f64>,
    pub value: f64,
    /// Gradient norm at `point`.
    pub residual_norm: f64,
    pub iterations: usize,
    /// The solver reached `residual_tol`.
    pub converged: bool,
    /// The solver's point was kept; `false` means the input came back unchanged.
    pub accepted: bool,
}

/// Forward-difference Jacobian of the gradient, column by column.
fn fd_jacobian<O: Objective>(objective: &O, x: &[f64], g: &[f64]) -> Option<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = FD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let gp = objective.gradient(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (gp[i] - g[i]) / h;
        }
    }
    Some(jac)
}

/// Powell dogleg step inside a trust region of radius `delta`.
fn dogleg(jac: &DMatrix<f64>, f: &DVector<f64>, delta: f64) -> DVector<f64> {
    let gn = match jac
        .clone()
        .svd(true, true)
        .pseudo_inverse(PINV_RTOL * jac.norm().max(f64::MIN_POSITIVE))
    {
        Ok(pinv) => -(pinv * f),
        Err(_) => DVector::zeros(f.len()),
    };
    if gn.norm() <= delta && gn.iter().all(|v| v.is_finite()) {
        return gn;
    }
    let grad = jac.transpose() * f;
    let jg = jac * &grad;
    let jg2 = jg.norm_squared();
    if !(jg2 > 0.0) {
        return -&grad * (delta / grad.norm().max(f64::MIN_POSITIVE));
    }
    let cauchy = -&grad * (grad.norm_squared() / jg2);
    let cn = cauchy.norm();
    if cn >= delta || !gn.iter().all(|v| v.is_finite()) {
        return cauchy * (delta / cn);
    }
    // Walk from the Cauchy point toward the Gauss-Newton point until the boundary.
    let diff = &gn - &cauchy;
    let a = diff.norm_squared();
    let b = 2.0 * cauchy.dot(&diff);
    let c = cn * cn - delta * delta;
    let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    cauchy + diff * tau
}

/// Solves `grad f(x) = 0` from `start` by a Powell hybrid (dogleg) method.
///
/// The Jacobian of the gradient is approximated by forward differences. The
/// solution is kept only when the objective has not increased, so a saddle
/// or maximum near `start` cannot replace a descent point.
pub fn stationary_refine<O: Objective>(
    start: &[f64],
    objective: &O,
    bounds: &Bounds,
    residual_tol: f64,
    max_iterations: usize,
) -> Result<RefineOutcome> {
    if start.len() != objective.dim() || bounds.dim() != start.len() {
        return Err(Error::Dimension(
            "start, objective and bounds differ in length".into(),
        ));
    }
    let f_in = objective.value(start);
    let g_in = objective
        .gradient(start)
        .filter(|_| f_in.is_finite())
        .ok_or_else(|| {
            Error::Optimization("objective is not differentiable at the start point".into())
        })?;
    let r_in = norm(&g_in);

    let mut x = start.to_vec();
    let mut g = g_in.clone();
    let mut r = r_in;
    let mut delta = 0.5 * norm(&x).max(1.0);
    let mut iterations = 0;

    while r > residual_tol && iterations < max_iterations {
        iterations += 1;
        let Some(jac) = fd_jacobian(objective, &x, &g) else {
            break;
        };
        let fvec = DVector::from_column_slice(&g);
        let mut step = dogleg(&jac, &fvec, delta);
        let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        if bounds.project(&mut trial) {
            step = DVector::from_iterator(x.len(), trial.iter().zip(&x).map(|(a, b)| a - b));
        }
        let step_norm = step.norm();
        if step_norm == 0.0 {
            break;
        }
        let predicted_res = (&fvec + &jac * &step).norm_squared();
        let predicted = r * r - predicted_res;
        let g_trial = objective.gradient(&trial);
        let actual_res = g_trial.as_ref().map(|gt| norm(gt)).unwrap_or(f64::INFINITY);
        let actual = r * r - actual_res * actual_res;
        let rho = if predicted > 0.0 {
            actual / predicted
        } else {
            -1.0
        };

        if rho > 0.1 {
            x = trial;
            g = g_trial.expect("finite residual implies a gradient");
            r = actual_res;
        }
        if rho < 0.25 {
            delta = 0.25 * step_norm;
        } else if rho > 0.75 {
            delta = delta.max(2.0 * step_norm);
        }
        if delta < 1e-14 * norm(&x).max(1.0) {
            break;
        }
    }

    let f_out = objective.value(&x);
    let slack = 8.0 * f64::EPSILON * f_in.abs();
    if f_out.is_finite() && f_out <= f_in + slack {
        Ok(RefineOutcome {
            point: x,
            value: f_out,
            residual_norm: r,
            iterations,
            converged: r <= residual_tol,
            accepted: true,
        })
    } else {
        Ok(RefineOutcome {
            point: start.to_vec(),
            value: f_in,
            residual_norm: r_in,
            iterations,
            converged: r_in <= residual_tol,
            accepted: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::FnObjective;

    #[test]
    fn quartic_converges_to_zero() {
        let obj = FnObjective::new(1, |x| x[0].powi(4), |x| vec![4.0 * x[0].powi(3)]);
        let bounds = Bounds::uniform(1, -1.0, 1.0).unwrap();
        let out = stationary_refine(&[0.1], &obj, &bounds, 1e-10, 100).unwrap();
        assert!(out.converged);
        assert!(out.accepted);
        assert!(out.point[0].abs() < 1e-3);
        assert!(out.value <= 1e-4);
    }

    #[test]
    fn converged_input_is_returned_untouched() {
        let obj = FnObjective::new(
            2,
            |x| x[0] * x[0] + x[1] * x[1],
            |x| vec![2.0 * x[0], 2.0 * x[1]],
        );
        let bounds = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let out = stationary_refine(&[0.0, 0.0], &obj, &bounds, 1e-10, 100).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.point, vec![0.0, 0.0]);
        assert!(out.converged);
    }

    #[test]
    fn saddle_is_rejected() {
        let obj = FnObjective::new(
            2,
            |x| x[0] * x[0] - x[1] * x[1],
            |x| vec![2.0 * x[0], -2.0 * x[1]],
        );
        let bounds = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let out = stationary_refine(&[0.1, 0.2], &obj, &bounds, 1e-10, 100).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.point, vec![0.1, 0.2]);
        assert_eq!(out.value, obj.value(&[0.1, 0.2]));
    }

    #[test]
    fn quadratic_is_solved_in_one_step() {
        let obj = FnObjective::new(
            2,
            |x| (x[0] - 0.3).powi(2) + 3.0 * (x[1] + 0.2).powi(2),
            |x| vec![2.0 * (x[0] - 0.3), 6.0 * (x[1] + 0.2)],
        );
        let bounds = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let out = stationary_refine(&[0.25, -0.1], &obj, &bounds, 1e-10, 100).unwrap();
        assert!(out.converged && out.accepted);
        assert!(out.iterations <= 3);
        assert!((out.point[0] - 0.3).abs() < 1e-10);
    }
}
