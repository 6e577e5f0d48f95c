//! Closed convex feasible sets with Euclidean projection.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// Membership slack used by [`FeasibleSet::contains`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// A closed convex subset of `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibleSet {
    /// `{ x : sum(x) = 1, x >= lower }`. The plain probability simplex has
    /// `lower = 0`.
    Simplex { lower: Vec<f64> },
    /// Euclidean ball `{ x : |x - center| <= radius }`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box `lo <= x <= hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// All of `R^dim`.
    AllOf { dim: usize },
    /// Intersection of sets of equal dimension, projected with Dykstra's method.
    Intersection(Vec<FeasibleSet>),
}

impl FeasibleSet {
    pub fn simplex(n: usize) -> Self {
        FeasibleSet::Simplex { lower: vec![0.0; n] }
    }

    /// Simplex with every coordinate bounded below by `floor`.
    pub fn interior_simplex(n: usize, floor: f64) -> Self {
        assert!(floor >= 0.0 && floor * n as f64 <= 1.0, "floor too large for simplex");
        FeasibleSet::Simplex { lower: vec![floor; n] }
    }

    pub fn l2_ball(dim: usize, radius: f64) -> Self {
        FeasibleSet::Ball { center: vec![0.0; dim], radius }
    }

    pub fn ball_at(center: Vec<f64>, radius: f64) -> Self {
        FeasibleSet::Ball { center, radius }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        FeasibleSet::Box { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn all_of(dim: usize) -> Self {
        FeasibleSet::AllOf { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Simplex { lower } => lower.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::Box { lo, .. } => lo.len(),
            FeasibleSet::AllOf { dim } => *dim,
            FeasibleSet::Intersection(parts) => parts.first().map_or(0, FeasibleSet::dim),
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            FeasibleSet::AllOf { .. } => false,
            FeasibleSet::Intersection(parts) => parts.iter().any(FeasibleSet::is_bounded),
            _ => true,
        }
    }

    /// Membership with [`MEMBERSHIP_TOL`] slack.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_within(x, MEMBERSHIP_TOL)
    }

    pub fn contains_within(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            FeasibleSet::Simplex { lower } => {
                let sum: f64 = x.iter().sum();
                (sum - 1.0).abs() <= tol && x.iter().zip(lower).all(|(v, l)| *v >= l - tol)
            }
            FeasibleSet::Ball { center, radius } => dist(x, center) <= radius + tol,
            FeasibleSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            FeasibleSet::AllOf { .. } => true,
            FeasibleSet::Intersection(parts) => parts.iter().all(|p| p.contains_within(x, tol)),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            FeasibleSet::Simplex { lower } => project_simplex(x, lower),
            FeasibleSet::Ball { center, radius } => {
                let d = dist(x, center);
                if d <= *radius {
                    x.to_vec()
                } else {
                    let scale = radius / d;
                    x.iter().zip(center).map(|(v, c)| c + (v - c) * scale).collect()
                }
            }
            FeasibleSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            FeasibleSet::AllOf { .. } => x.to_vec(),
            FeasibleSet::Intersection(parts) => project_dykstra(parts, x),
        }
    }

    /// A deterministic interior-ish reference point.
    pub fn center(&self) -> Vec<f64> {
        match self {
            FeasibleSet::Simplex { lower } => {
                let slack = 1.0 - lower.iter().sum::<f64>();
                let n = lower.len() as f64;
                lower.iter().map(|l| l + slack / n).collect()
            }
            FeasibleSet::Ball { center, .. } => center.clone(),
            FeasibleSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            FeasibleSet::AllOf { dim } => vec![0.0; *dim],
            FeasibleSet::Intersection(parts) => {
                let first = parts.first().map(FeasibleSet::center).unwrap_or_default();
                project_dykstra(parts, &first)
            }
        }
    }

    /// Draws a point of the set. Unbounded coordinates are drawn from a
    /// standard normal scaled by `spread`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64) -> Vec<f64> {
        match self {
            FeasibleSet::Simplex { lower } => {
                let slack = 1.0 - lower.iter().sum::<f64>();
                let e: Vec<f64> = lower.iter().map(|_| Exp1.sample(rng)).collect();
                let total: f64 = e.iter().sum();
                lower.iter().zip(e).map(|(l, v)| l + slack * v / total).collect()
            }
            FeasibleSet::Ball { center, radius } => {
                let d = center.len();
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                center.iter().zip(g).map(|(c, v)| c + r * v / norm).collect()
            }
            FeasibleSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            FeasibleSet::AllOf { dim } => (0..*dim)
                .map(|_| { let z: f64 = StandardNormal.sample(rng); spread * z })
                .collect(),
            FeasibleSet::Intersection(parts) => {
                let p = parts.first().expect("empty intersection").sample(rng, spread);
                project_dykstra(parts, &p)
            }
        }
    }

    /// Deterministic audit points: a lattice at resolution `1e-2` in low
    /// dimension, otherwise `10^4` seeded samples.
    pub fn audit_points(&self, seed: u64) -> Vec<Vec<f64>> {
        const STEPS: usize = 100;
        const RANDOM_POINTS: usize = 10_000;
        let dim = self.dim();
        match self {
            FeasibleSet::Simplex { lower } if dim <= 3 => {
                let slack = 1.0 - lower.iter().sum::<f64>();
                simplex_lattice(dim, STEPS)
                    .into_iter()
                    .map(|g| lower.iter().zip(g).map(|(l, v)| l + slack * v).collect())
                    .collect()
            }
            FeasibleSet::Ball { center, radius } if dim <= 2 => {
                let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
                let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
                box_lattice(&lo, &hi, 2 * STEPS)
                    .into_iter()
                    .filter(|x| self.contains(x))
                    .collect()
            }
            FeasibleSet::Box { lo, hi } if dim <= 2 => {
                let steps = ((hi[0] - lo[0]) / 1e-2).round().max(1.0) as usize;
                box_lattice(lo, hi, steps.min(1000))
            }
            _ => {
                let mut rng = crate::rng::stream(seed, "audit-points");
                (0..RANDOM_POINTS).map(|_| self.sample(&mut rng, 3.0)).collect()
            }
        }
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sort-based projection onto `{ x : sum = 1, x >= lower }`.
fn project_simplex(x: &[f64], lower: &[f64]) -> Vec<f64> {
    let target = 1.0 - lower.iter().sum::<f64>();
    let u: Vec<f64> = x.iter().zip(lower).map(|(v, l)| v - l).collect();
    let mut sorted = u.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - target) / (j + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    u.iter().zip(lower).map(|(v, l)| (v - theta).max(0.0) + l).collect()
}

fn project_dykstra(parts: &[FeasibleSet], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut corrections = vec![vec![0.0; x.len()]; parts.len()];
    for _ in 0..20_000 {
        let prev = y.clone();
        for (set, corr) in parts.iter().zip(corrections.iter_mut()) {
            let shifted: Vec<f64> = y.iter().zip(corr.iter()).map(|(a, b)| a + b).collect();
            let projected = set.project(&shifted);
            for i in 0..y.len() {
                corr[i] = shifted[i] - projected[i];
            }
            y = projected;
        }
        if dist(&y, &prev) <= 1e-15 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    y
}

fn simplex_lattice(n: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, remaining: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() + 1 == n {
            prefix.push(remaining);
            out.push(prefix.iter().map(|k| *k as f64 / steps as f64).collect());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(n, remaining - k, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

fn box_lattice(lo: &[f64], hi: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (l, h) in lo.iter().zip(hi) {
        let mut next = Vec::with_capacity(out.len() * (steps + 1));
        for prefix in &out {
            for k in 0..=steps {
                let mut p = prefix.clone();
                p.push(l + (h - l) * k as f64 / steps as f64);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force nearest point of the 2-simplex on a fine grid.
    fn grid_nearest_simplex2(x: &[f64]) -> Vec<f64> {
        let mut best = (f64::INFINITY, vec![]);
        for k in 0..=1000 {
            let p = vec![k as f64 / 1000.0, 1.0 - k as f64 / 1000.0];
            let d = dist(&p, x);
            if d < best.0 {
                best = (d, p);
            }
        }
        best.1
    }

    #[test]
    fn simplex_projection_matches_grid() {
        let p = FeasibleSet::simplex(2).project(&[2.0, 0.0]);
        assert_eq!(grid_nearest_simplex2(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        for x in [[0.3, 0.1], [-0.4, 2.0], [0.9, 0.9]] {
            let p = FeasibleSet::simplex(2).project(&x);
            let g = grid_nearest_simplex2(&x);
            assert!(dist(&p, &g) <= 1e-3, "{x:?} -> {p:?} vs {g:?}");
        }
    }

    #[test]
    fn ball_projection() {
        let ball = FeasibleSet::l2_ball(2, 1.0);
        assert_eq!(ball.project(&[0.3, 0.4]), vec![0.3, 0.4]);
        let p = ball.project(&[3.0, 4.0]);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn floor_simplex_projection_respects_floor() {
        let set = FeasibleSet::interior_simplex(3, 0.1);
        let p = set.project(&[5.0, -3.0, 0.0]);
        assert!(set.contains(&p));
        assert!((p[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn intersection_of_balls() {
        let set = FeasibleSet::Intersection(vec![
            FeasibleSet::l2_ball(2, 1.0),
            FeasibleSet::ball_at(vec![1.0, 0.0], 0.5),
        ]);
        let p = set.project(&[0.0, 3.0]);
        assert!(set.contains_within(&p, 1e-9), "{p:?}");
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(simplex_lattice(2, 100).len(), 101);
        assert_eq!(simplex_lattice(3, 100).len(), 5151);
        let pts = FeasibleSet::simplex(2).audit_points(0);
        assert!(pts.iter().any(|p| p == &vec![1.0, 0.0]));
    }
}
