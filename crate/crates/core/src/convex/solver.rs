//! Projected gradient descent with Barzilai-Borwein trial steps, Armijo
//! backtracking along the projection arc, and a deterministic multi-start.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::set::FeasibleSet;
use crate::rng;

/// A smooth scalar function with gradient access.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Adapts a pair of closures into an [`Objective`].
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target norm of the projected-gradient step `|x - P(x - grad)|`.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Number of multi-start runs (the first uses `start` or the set center).
    pub starts: usize,
    pub start: Option<Vec<f64>>,
    /// Scale of random starts on unbounded sets.
    pub spread: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 20_000, seed: 0, starts: 5, start: None, spread: 1.0 }
    }
}

impl SolverOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn starting_at(mut self, x: Vec<f64>) -> Self {
        self.start = Some(x);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    /// No further decrease representable in floating point.
    Stalled,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub start_index: usize,
    pub status: RunStatus,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver did not converge in {iterations} iterations (best value {value}, step norm {step_norm:e})", iterations = best.iterations, value = best.value, step_norm = best.projected_gradient_norm)]
    NonConvergence { best: Box<Minimum> },
    #[error("objective is not finite at any start point")]
    NonFinite,
}

/// Minimizes `objective` over `set`.
///
/// Runs `opts.starts` descents and returns, among the runs whose value is
/// within `1e-8` of the best, the one with the lowest start index. Fails only
/// when every run exhausts `max_iters`.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    set: &FeasibleSet,
    opts: &SolverOptions,
) -> Result<Minimum, SolverError> {
    let mut runs = Vec::with_capacity(opts.starts.max(1));
    for (index, start) in start_points(set, opts).into_iter().enumerate() {
        if let Some(mut run) = descend(objective, set, &start, opts) {
            run.start_index = index;
            runs.push(run);
        }
    }
    if runs.is_empty() {
        return Err(SolverError::NonFinite);
    }
    let best_value = runs.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    if runs.iter().all(|r| r.status == RunStatus::MaxIters) {
        let best = runs.into_iter().find(|r| r.value == best_value).expect("non-empty");
        return Err(SolverError::NonConvergence { best: Box::new(best) });
    }
    Ok(runs
        .into_iter()
        .find(|r| r.value <= best_value + 1e-8)
        .expect("best run qualifies"))
}

fn start_points(set: &FeasibleSet, opts: &SolverOptions) -> Vec<Vec<f64>> {
    let first = match &opts.start {
        Some(x) => set.project(x),
        None => set.center(),
    };
    let mut rng = rng::stream(opts.seed, "multistart");
    let mut starts = vec![first.clone()];
    for _ in 1..opts.starts.max(1) {
        let p = if set.is_bounded() {
            set.sample(&mut rng, opts.spread)
        } else {
            let noise = FeasibleSet::all_of(first.len()).sample(&mut rng, opts.spread);
            set.project(&first.iter().zip(noise).map(|(a, b)| a + b).collect::<Vec<_>>())
        };
        starts.push(p);
    }
    starts
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn projected_gradient_norm(set: &FeasibleSet, x: &[f64], g: &[f64]) -> f64 {
    let stepped: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    super::set::dist(x, &set.project(&stepped))
}

fn descend<O: Objective + ?Sized>(
    objective: &O,
    set: &FeasibleSet,
    start: &[f64],
    opts: &SolverOptions,
) -> Option<Minimum> {
    const ARMIJO: f64 = 1e-4;
    let mut x = set.project(start);
    let mut f = objective.value(&x);
    if !f.is_finite() {
        return None;
    }
    let mut g = objective.gradient(&x);
    let mut step = 1.0;
    let mut flat_iters = 0;
    let finish = |x: Vec<f64>, f: f64, g: &[f64], k: usize, status| Minimum {
        projected_gradient_norm: projected_gradient_norm(set, &x, g),
        point: x,
        value: f,
        iterations: k,
        start_index: 0,
        status,
    };
    for k in 0..opts.max_iters {
        let gm = projected_gradient_norm(set, &x, &g);
        if gm <= opts.tol {
            return Some(finish(x, f, &g, k, RunStatus::Converged));
        }
        let mut t = step;
        let accepted = loop {
            let raw: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let trial = set.project(&raw);
            let d: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let ft = objective.value(&trial);
            if ft.is_finite() && ft <= f + ARMIJO * dot(&g, &d) {
                break Some((trial, ft, d));
            }
            t *= 0.5;
            if t < 1e-30 {
                break None;
            }
        };
        let Some((x_new, f_new, s)) = accepted else {
            return Some(finish(x, f, &g, k, RunStatus::Stalled));
        };
        let g_new = objective.gradient(&x_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss = dot(&s, &s);
        let sy = dot(&s, &y);
        if ss == 0.0 {
            return Some(finish(x, f, &g, k, RunStatus::Stalled));
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (t * 4.0).min(1e12) };
        if f - f_new <= 4.0 * f64::EPSILON * f.abs().max(f64::MIN_POSITIVE) {
            flat_iters += 1;
        } else {
            flat_iters = 0;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        if flat_iters >= 25 {
            return Some(finish(x, f, &g, k, RunStatus::Stalled));
        }
    }
    Some(finish(x, f, &g, opts.max_iters, RunStatus::MaxIters))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_dist_to(target: Vec<f64>) -> impl Objective {
        let t2 = target.clone();
        FnObjective {
            value: move |w: &[f64]| w.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum(),
            gradient: move |w: &[f64]| w.iter().zip(&t2).map(|(a, b)| 2.0 * (a - b)).collect(),
        }
    }

    #[test]
    fn feasible_minimizer_on_simplex() {
        let m = minimize(&sq_dist_to(vec![0.2, 0.8]), &FeasibleSet::simplex(2), &SolverOptions::default())
            .unwrap();
        assert!((m.point[0] - 0.2).abs() < 1e-9 && (m.point[1] - 0.8).abs() < 1e-9);
        assert!(m.value < 1e-16);
    }

    #[test]
    fn boundary_minimizer_on_interval_ball() {
        let obj = FnObjective {
            value: |w: &[f64]| 0.5 * (w[0] - 1.0).powi(2),
            gradient: |w: &[f64]| vec![w[0] - 1.0],
        };
        let m = minimize(&obj, &FeasibleSet::l2_ball(1, 1.0), &SolverOptions::default()).unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-9);
        assert!(m.value.abs() < 1e-16);
    }

    #[test]
    fn kl_minimizer_matches_grid() {
        // Grid oracle over the 2-simplex at step 1e-4.
        let p = [0.25, 0.75];
        let kl = |q: &[f64]| -> f64 { p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum() };
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..10_000 {
            let q0 = k as f64 * 1e-4;
            let v = kl(&[q0, 1.0 - q0]);
            if v < best.0 {
                best = (v, q0);
            }
        }
        assert!((best.1 - 0.25).abs() < 1e-12);
        let obj = FnObjective {
            value: move |q: &[f64]| kl(q),
            gradient: move |q: &[f64]| p.iter().zip(q).map(|(a, b)| -a / b.max(1e-12)).collect(),
        };
        let m = minimize(&obj, &FeasibleSet::simplex(2), &SolverOptions::default()).unwrap();
        assert!((m.point[0] - best.1).abs() < 1e-6, "{:?}", m.point);
    }

    #[test]
    fn deterministic_given_seed() {
        let obj = sq_dist_to(vec![3.0, -1.0, 0.5]);
        let set = FeasibleSet::cube(3, 0.0, 1.0);
        let a = minimize(&obj, &set, &SolverOptions::with_seed(11)).unwrap();
        let b = minimize(&obj, &set, &SolverOptions::with_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reports_non_convergence_with_best_iterate() {
        let obj = sq_dist_to(vec![1.0; 4]);
        let opts = SolverOptions { max_iters: 0, ..SolverOptions::default() };
        match minimize(&obj, &FeasibleSet::all_of(4), &opts) {
            Err(SolverError::NonConvergence { best }) => assert_eq!(best.point.len(), 4),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
