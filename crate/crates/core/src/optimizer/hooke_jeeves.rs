use std::cell::Cell;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Bounds, Objective};
use crate::error::{Error, Result};

/// Result of one rough improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    /// Objective evaluations spent, including the one at the start point.
    pub evaluations: usize,
}

struct Counted<'a, O> {
    inner: &'a O,
    calls: Cell<usize>,
}

impl<O: Objective> Counted<'_, O> {
    fn eval(&self, x: &[f64]) -> f64 {
        self.calls.set(self.calls.get() + 1);
        self.inner.value(x)
    }
}

/// One Hooke-Jeeves iteration followed by a probe along the displacement.
///
/// The exploratory sweep visits coordinates in a random order with step
/// `step[i]`, trying `+step` then `-step`. A successful sweep is followed by
/// a single pattern probe. With `d` the displacement from the start, the
/// line probe tries `start + 2d` and, failing that, `start + d/2`. The whole
/// procedure uses at most `2n + 4` evaluations and never returns a worse
/// point than `start`. All probes are projected into `bounds`.
pub fn rough_improve<O: Objective, R: Rng + ?Sized>(
    start: &[f64],
    objective: &O,
    bounds: &Bounds,
    step: &[f64],
    rng: &mut R,
) -> Result<RoughOutcome> {
    let n = start.len();
    if step.len() != n || bounds.dim() != n {
        return Err(Error::Dimension(
            "start, step and bounds differ in length".into(),
        ));
    }
    let f = Counted {
        inner: objective,
        calls: Cell::new(0),
    };
    let f0 = f.eval(start);
    if !f0.is_finite() {
        return Err(Error::Optimization(
            "objective is not finite at the start point".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut x = start.to_vec();
    let mut fx = f0;
    for &i in &order {
        if step[i] == 0.0 {
            continue;
        }
        let base = x[i];
        let mut improved = false;
        for delta in [step[i], -step[i]] {
            let trial = (base + delta).clamp(bounds.lo[i], bounds.hi[i]);
            if trial == base {
                continue;
            }
            x[i] = trial;
            let ft = f.eval(&x);
            if ft < fx {
                fx = ft;
                improved = true;
                break;
            }
        }
        if !improved {
            x[i] = base;
        }
    }

    if fx < f0 {
        // Pattern move through the new base point.
        let mut pattern: Vec<f64> = x.iter().zip(start).map(|(xi, si)| 2.0 * xi - si).collect();
        bounds.project(&mut pattern);
        if pattern != x {
            let fp = f.eval(&pattern);
            if fp < fx {
                x = pattern;
                fx = fp;
            }
        }

        let displacement: Vec<f64> = x.iter().zip(start).map(|(xi, si)| xi - si).collect();
        for scale in [2.0, 0.5] {
            let mut probe: Vec<f64> = start
                .iter()
                .zip(&displacement)
                .map(|(s, d)| s + scale * d)
                .collect();
            bounds.project(&mut probe);
            if probe == x {
                continue;
            }
            let fp = f.eval(&probe);
            if fp < fx {
                x = probe;
                fx = fp;
                break;
            }
        }
    }

    Ok(RoughOutcome {
        point: x,
        value: fx,
        evaluations: f.calls.get(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::FnObjective;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_quadratic_hand_trace() {
        let obj = FnObjective::new(1, |x| (x[0] - 3.0).powi(2), |x| vec![2.0 * (x[0] - 3.0)]);
        let bounds = Bounds::uniform(1, -10.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = rough_improve(&[0.0], &obj, &bounds, &[1.0], &mut rng).unwrap();
        // sweep 0 -> 1, pattern 1 -> 2, probes 4 and 1 do not improve
        assert_eq!(out.point, vec![2.0]);
        assert_eq!(out.value, 1.0);
        assert!(out.value < 9.0);
        assert_eq!(out.evaluations, 5);
    }

    #[test]
    fn local_minimum_is_returned_unchanged() {
        let obj = FnObjective::new(
            2,
            |x| x[0] * x[0] + x[1] * x[1],
            |x| vec![2.0 * x[0], 2.0 * x[1]],
        );
        let bounds = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = rough_improve(&[0.0, 0.0], &obj, &bounds, &[0.1, 0.1], &mut rng).unwrap();
        assert_eq!(out.point, vec![0.0, 0.0]);
        assert_eq!(out.value, 0.0);
        assert_eq!(out.evaluations, 5);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let obj = FnObjective::new(1, |_| f64::INFINITY, |_| vec![0.0]);
        let bounds = Bounds::uniform(1, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(rough_improve(&[0.0], &obj, &bounds, &[0.1], &mut rng).is_err());
    }

    #[test]
    fn evaluation_budget_holds_on_rosenbrock() {
        let obj = FnObjective::new(
            4,
            |x| {
                (0..3)
                    .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
                    .sum()
            },
            |_| vec![0.0; 4],
        );
        let bounds = Bounds::uniform(4, -5.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let start: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let out = rough_improve(&start, &obj, &bounds, &[0.5; 4], &mut rng).unwrap();
            assert!(out.evaluations <= 2 * 4 + 4);
            assert!(out.value <= obj.value(&start));
            assert!(bounds.contains(&out.point));
        }
    }
}
