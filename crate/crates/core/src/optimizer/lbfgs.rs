use std::collections::VecDeque;

use super::{dot, norm, Bounds, Objective};
use crate::error::{Error, Result};

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Result of the quasi-Newton stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FineOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    /// Norm of the projected gradient at `point`.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// How many accepted iterates had to be clamped into the box.
    pub projections: usize,
}

/// `x - P(x - g)`, zero at a box-constrained stationary point.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    bounds.project(&mut y);
    x.iter().zip(&y).map(|(a, b)| a - b).collect()
}

/// Two-loop recursion for `-H g`.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Projected limited-memory BFGS with Armijo backtracking.
///
/// Trial points are clamped into `bounds`. Iteration stops once the
/// projected gradient norm falls to `gradient_tol` or after
/// `max_iterations` steps. The returned value never exceeds the value at
/// `start`.
pub fn fine_improve<O: Objective>(
    start: &[f64],
    objective: &O,
    bounds: &Bounds,
    gradient_tol: f64,
    max_iterations: usize,
) -> Result<FineOutcome> {
    if start.len() != objective.dim() || bounds.dim() != start.len() {
        return Err(Error::Dimension(
            "start, objective and bounds differ in length".into(),
        ));
    }
    let mut x = start.to_vec();
    bounds.project(&mut x);
    let mut fx = objective.value(&x);
    let mut g = objective
        .gradient(&x)
        .filter(|_| fx.is_finite())
        .ok_or_else(|| {
            Error::Optimization("objective is not differentiable at the start point".into())
        })?;

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut projections = 0;
    let mut iterations = 0;
    let mut pg_norm = norm(&projected_gradient(&x, &g, bounds));

    while pg_norm > gradient_tol && iterations < max_iterations {
        let mut d = direction(&g, &memory);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let clamped = bounds.project(&mut trial);
            let ft = objective.value(&trial);
            // Sufficient decrease measured along the projected displacement.
            let moved: f64 = g
                .iter()
                .zip(trial.iter().zip(&x))
                .map(|(gi, (t, xi))| gi * (t - xi))
                .sum();
            let predicted = if clamped {
                moved.min(0.0)
            } else {
                step * slope
            };
            if ft.is_finite() && ft <= fx + ARMIJO * predicted && trial != x {
                accepted = Some((trial, ft, clamped));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, clamped)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        let Some(g_new) = objective.gradient(&x_new) else {
            break;
        };
        if clamped {
            projections += 1;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        pg_norm = norm(&projected_gradient(&x, &g, bounds));
    }

    Ok(FineOutcome {
        point: x,
        value: fx,
        gradient_norm: pg_norm,
        iterations,
        converged: pg_norm <= gradient_tol,
        projections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::FnObjective;

    fn quadratic() -> impl Objective {
        FnObjective::new(
            2,
            |x| {
                (x[0] - 1.0).powi(2)
                    + 10.0 * (x[1] + 2.0).powi(2)
                    + 0.5 * (x[0] - 1.0) * (x[1] + 2.0)
            },
            |x| {
                vec![
                    2.0 * (x[0] - 1.0) + 0.5 * (x[1] + 2.0),
                    20.0 * (x[1] + 2.0) + 0.5 * (x[0] - 1.0),
                ]
            },
        )
    }

    #[test]
    fn quadratic_converges_quickly() {
        let bounds = Bounds::uniform(2, -10.0, 10.0).unwrap();
        let out = fine_improve(&[7.0, 5.0], &quadratic(), &bounds, 1e-10, 50).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 50);
        assert!((out.point[0] - 1.0).abs() < 1e-8);
        assert!((out.point[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn start_at_minimizer_takes_no_steps() {
        let bounds = Bounds::uniform(2, -10.0, 10.0).unwrap();
        let out = fine_improve(&[1.0, -2.0], &quadratic(), &bounds, 1e-10, 50).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.point, vec![1.0, -2.0]);
    }

    #[test]
    fn active_bound_is_a_stationary_point() {
        let bounds = Bounds::new(vec![-10.0, 0.0], vec![10.0, 10.0]).unwrap();
        let out = fine_improve(&[5.0, 5.0], &quadratic(), &bounds, 1e-9, 200).unwrap();
        assert!(out.converged);
        assert_eq!(out.point[1], 0.0);
        // d/dx0 = 2(x0 - 1) + 1 = 0
        assert!((out.point[0] - 0.5).abs() < 1e-8);
        assert!(out.projections > 0);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let obj = FnObjective::new(
            2,
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            |x| {
                vec![
                    -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]),
                    200.0 * (x[1] - x[0] * x[0]),
                ]
            },
        );
        let bounds = Bounds::uniform(2, -5.0, 5.0).unwrap();
        let out = fine_improve(&[-1.2, 1.0], &obj, &bounds, 1e-8, 1000).unwrap();
        assert!(out.converged);
        assert!((out.point[0] - 1.0).abs() < 1e-6);
        assert!(out.value <= obj.value(&[-1.2, 1.0]));
    }
}
