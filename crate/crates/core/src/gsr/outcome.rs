use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GsrError;
use crate::rng;

/// One labelled example of a regression batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

/// A realized outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Element of a finite outcome set, zero-based.
    Index(usize),
    /// A batch of test data.
    Batch(Vec<DataPoint>),
    /// A vector of true labels.
    Labels(Vec<f64>),
    /// The uniform average over several outcomes. Losses and payouts against a
    /// sample are the mean of their values on each member.
    Sample(Vec<Outcome>),
}

impl Outcome {
    /// Mean of `f` over the atomic outcomes of `self`.
    pub fn average(&self, f: &mut dyn FnMut(&Outcome) -> f64) -> f64 {
        match self {
            Outcome::Sample(items) if !items.is_empty() => {
                let total: f64 = items.iter().map(|o| o.average(f)).sum();
                total / items.len() as f64
            }
            other => f(other),
        }
    }

    /// Coordinate-wise mean of `f` over the atomic outcomes of `self`.
    pub fn average_vec(&self, f: &mut dyn FnMut(&Outcome) -> Vec<f64>) -> Vec<f64> {
        match self {
            Outcome::Sample(items) if !items.is_empty() => {
                let mut acc: Vec<f64> = Vec::new();
                for item in items {
                    let v = item.average_vec(f);
                    if acc.is_empty() {
                        acc = v;
                    } else {
                        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                    }
                }
                let n = items.len() as f64;
                acc.into_iter().map(|a| a / n).collect()
            }
            other => f(other),
        }
    }
}

/// The set of possible outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutcomeSpace {
    Finite { n: usize },
    /// Batches of `(x, y)` with `|x|_2 <= 1` and `y` in `[-1, 1]`.
    DatasetBatch { dim: usize, max_batch: usize },
    /// Label vectors in `[lo, hi]^m`.
    LabelVector { m: usize, lo: f64, hi: f64 },
}

impl OutcomeSpace {
    pub fn contains(&self, x: &Outcome) -> bool {
        match (self, x) {
            (_, Outcome::Sample(items)) => !items.is_empty() && items.iter().all(|o| self.contains(o)),
            (OutcomeSpace::Finite { n }, Outcome::Index(i)) => i < n,
            (OutcomeSpace::DatasetBatch { dim, .. }, Outcome::Batch(points)) => {
                !points.is_empty() && points.iter().all(|p| check_point(p, *dim).is_ok())
            }
            (OutcomeSpace::LabelVector { m, lo, hi }, Outcome::Labels(y)) => {
                y.len() == *m && y.iter().all(|v| v.is_finite() && v >= lo && v <= hi)
            }
            _ => false,
        }
    }

    pub fn validate(&self, x: &Outcome) -> Result<(), GsrError> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(GsrError::InvalidOutcome(format!("{x:?} is not an outcome of {self:?}")))
        }
    }

    /// All outcomes, when the space is finite.
    pub fn enumerate(&self) -> Option<Vec<Outcome>> {
        match self {
            OutcomeSpace::Finite { n } => Some((0..*n).map(Outcome::Index).collect()),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Outcome {
        match self {
            OutcomeSpace::Finite { n } => Outcome::Index(rng.random_range(0..*n)),
            OutcomeSpace::DatasetBatch { dim, max_batch } => {
                let size = rng.random_range(1..=(*max_batch).max(1));
                Outcome::Batch((0..size).map(|_| random_point(rng, *dim)).collect())
            }
            OutcomeSpace::LabelVector { m, lo, hi } => {
                Outcome::Labels((0..*m).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect())
            }
        }
    }

    /// Outcomes used for escrow and worst-case audits: every outcome of a
    /// finite space, otherwise extreme outcomes plus seeded samples.
    pub fn audit_outcomes(&self, seed: u64) -> Vec<Outcome> {
        if let Some(all) = self.enumerate() {
            return all;
        }
        let mut rng = rng::stream(seed, "audit-outcomes");
        let mut out = Vec::new();
        match self {
            OutcomeSpace::DatasetBatch { dim, .. } => {
                for j in 0..*dim {
                    for sign in [1.0, -1.0] {
                        for y in [1.0, -1.0] {
                            let mut x = vec![0.0; *dim];
                            x[j] = sign;
                            out.push(Outcome::Batch(vec![DataPoint { x, y }]));
                        }
                    }
                }
                for _ in 0..20 {
                    let mut p = random_point(&mut rng, *dim);
                    let norm = p.x.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    p.x.iter_mut().for_each(|v| *v /= norm);
                    p.y = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    out.push(Outcome::Batch(vec![p]));
                }
                for _ in 0..40 {
                    out.push(self.sample(&mut rng));
                }
            }
            OutcomeSpace::LabelVector { m, lo, hi } => {
                if *m <= 10 {
                    for mask in 0..(1u32 << m) {
                        out.push(Outcome::Labels(
                            (0..*m).map(|k| if mask & (1 << k) != 0 { *hi } else { *lo }).collect(),
                        ));
                    }
                }
                out.push(Outcome::Labels(vec![0.5 * (lo + hi); *m]));
                for _ in 0..50 {
                    out.push(self.sample(&mut rng));
                }
            }
            OutcomeSpace::Finite { .. } => unreachable!(),
        }
        out
    }
}

fn random_point<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DataPoint {
    let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = rng.random::<f64>().powf(1.0 / dim as f64);
    DataPoint { x: g.iter().map(|v| r * v / norm).collect(), y: rng.random_range(-1.0..=1.0) }
}

/// Checks `|x|_2 <= 1` and `|y| <= 1`.
pub fn check_point(p: &DataPoint, dim: usize) -> Result<(), String> {
    if p.x.len() != dim {
        return Err(format!("expected {dim} features, got {}", p.x.len()));
    }
    if p.x.iter().any(|v| !v.is_finite()) || !p.y.is_finite() {
        return Err("non-finite value".into());
    }
    let norm = p.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 + 1e-12 {
        return Err(format!("feature norm {norm} exceeds 1"));
    }
    if p.y.abs() > 1.0 {
        return Err(format!("label {} outside [-1, 1]", p.y));
    }
    Ok(())
}

/// A finitely supported distribution over outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    support: Vec<Outcome>,
    weights: Vec<f64>,
}

impl Belief {
    pub fn new(support: Vec<Outcome>, weights: Vec<f64>) -> Result<Self, GsrError> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(GsrError::InvalidBelief(format!(
                "{} outcomes but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GsrError::InvalidBelief("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GsrError::InvalidBelief(format!("weights sum to {total}")));
        }
        Ok(Self { support, weights })
    }

    /// Normalizes non-negative `weights` to sum to one.
    pub fn normalized(support: Vec<Outcome>, weights: Vec<f64>) -> Result<Self, GsrError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(GsrError::InvalidBelief("weights must have positive mass".into()));
        }
        Self::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    /// Distribution over `Index(0..p.len())`.
    pub fn categorical(p: &[f64]) -> Result<Self, GsrError> {
        Self::new((0..p.len()).map(Outcome::Index).collect(), p.to_vec())
    }

    pub fn point(x: Outcome) -> Self {
        Self { support: vec![x], weights: vec![1.0] }
    }

    /// Uniform over the given samples.
    pub fn empirical(samples: Vec<Outcome>) -> Result<Self, GsrError> {
        let n = samples.len();
        Self::normalized(samples, vec![1.0; n])
    }

    pub fn support(&self) -> &[Outcome] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Outcome)> {
        self.weights.iter().copied().zip(self.support.iter())
    }

    /// `E_P[f(X)]`.
    pub fn expect(&self, mut f: impl FnMut(&Outcome) -> f64) -> f64 {
        self.iter().map(|(w, x)| if w == 0.0 { 0.0 } else { w * f(x) }).sum()
    }
}
