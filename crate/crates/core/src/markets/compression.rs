//! Stream compression.
//!
//! Participants bet on the distribution `q` used to encode characters of a
//! stream. Encoding character `i` costs `-ln q(i)` nats, and the mechanism
//! implements the loss `L(q; i) = -alpha ln q(i)` with
//!
//! ```text
//! Cost(q, q')       = alpha * max_j ln(q(j) / q'(j))
//! Payout(q, q'; i)  = Cost(q, q') + alpha * ln(q'(i) / q(i))
//! ```
//!
//! The payout is non-negative because the cost is the largest log ratio.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::{MarketError, MarketParams};
use crate::gsr::{Belief, DivergenceGsr, Outcome};
use crate::mechanism::{make_l_clm, ClmSpec, CostRule, Ledger, LedgerHeader};
use crate::rng;

/// Smallest probability a hypothesis may assign to a character.
pub const DEFAULT_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionMarket {
    q0: Vec<f64>,
    alpha: f64,
    stream: Vec<usize>,
    floor: f64,
}

impl CompressionMarket {
    pub fn new(q0: Vec<f64>, alpha: f64, stream: Vec<usize>, floor: f64) -> Result<Self, MarketError> {
        let n = q0.len();
        if n == 0 {
            return Err(MarketError::Invalid("alphabet must be non-empty".into()));
        }
        if !(floor >= 0.0 && floor * n as f64 <= 1.0) {
            return Err(MarketError::Invalid(format!("floor {floor} is infeasible for {n} characters")));
        }
        if q0.iter().any(|q| !(*q > 0.0 && *q >= floor)) {
            return Err(MarketError::Invalid(format!("q0 {q0:?} must be positive and at least the floor")));
        }
        if (q0.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MarketError::Invalid(format!("q0 {q0:?} does not sum to one")));
        }
        if let Some(c) = stream.iter().find(|&&c| c >= n) {
            return Err(MarketError::Invalid(format!("stream character {c} is outside 0..{n}")));
        }
        Ok(Self { q0, alpha, stream, floor })
    }

    /// Uniform `q0` and the default floor.
    pub fn uniform(n: usize, alpha: f64, stream: Vec<usize>) -> Self {
        Self::new(vec![1.0 / n as f64; n], alpha, stream, DEFAULT_FLOOR).expect("uniform market is valid")
    }

    pub fn n(&self) -> usize {
        self.q0.len()
    }

    pub fn q0(&self) -> &[f64] {
        &self.q0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn stream(&self) -> &[usize] {
        &self.stream
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// The same market with a different scale.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn gsr(&self) -> DivergenceGsr {
        DivergenceGsr::compression_with_floor(self.n(), self.floor)
    }

    pub fn clm(&self) -> Result<ClmSpec, MarketError> {
        Ok(make_l_clm(Arc::new(self.gsr()), CostRule::LogRatio, self.q0.clone(), self.alpha)?)
    }

    pub fn params(&self) -> MarketParams {
        MarketParams::Compression { n: self.n(), q0: self.q0.clone(), alpha: self.alpha, floor: self.floor }
    }

    pub fn header(&self, seed: u64) -> LedgerHeader {
        LedgerHeader::new(
            "compression",
            serde_json::to_value(self.params()).expect("parameters serialize"),
            self.q0.clone(),
            self.alpha,
            seed,
        )
    }

    /// Character frequencies of the stream.
    pub fn empirical_distribution(&self) -> Result<Vec<f64>, MarketError> {
        if self.stream.is_empty() {
            return Err(MarketError::Invalid("the stream is empty".into()));
        }
        let mut p = vec![0.0; self.n()];
        for &c in &self.stream {
            p[c] += 1.0;
        }
        let total = self.stream.len() as f64;
        Ok(p.into_iter().map(|v| v / total).collect())
    }

    pub fn empirical_belief(&self) -> Result<Belief, MarketError> {
        Ok(Belief::categorical(&self.empirical_distribution()?)?)
    }

    /// The whole stream as one outcome: losses against it are per-character
    /// averages.
    pub fn empirical_outcome(&self) -> Result<Outcome, MarketError> {
        if self.stream.is_empty() {
            return Err(MarketError::Invalid("the stream is empty".into()));
        }
        Ok(Outcome::Sample(self.stream.iter().map(|&c| Outcome::Index(c)).collect()))
    }

    /// A character drawn uniformly from the stream with the private stream
    /// `seed`.
    pub fn sample_outcome(&self, seed: u64) -> Result<Outcome, MarketError> {
        if self.stream.is_empty() {
            return Err(MarketError::Invalid("the stream is empty".into()));
        }
        let mut rng = rng::stream(seed, "settlement-sample");
        Ok(Outcome::Index(self.stream[rng.random_range(0..self.stream.len())]))
    }

    /// Settles against one character sampled from the stream.
    pub fn settle_by_sample(
        &self,
        ledger: &mut Ledger,
        spec: &ClmSpec,
        seed: u64,
    ) -> Result<(Outcome, BTreeMap<String, f64>), MarketError> {
        let x = self.sample_outcome(seed)?;
        let payouts = ledger.settle(spec, x.clone())?;
        Ok((x, payouts))
    }

    /// Settles against the empirical distribution of the stream, which pays
    /// the expectation of sampled settlement.
    pub fn settle_by_empirical(
        &self,
        ledger: &mut Ledger,
        spec: &ClmSpec,
    ) -> Result<BTreeMap<String, f64>, MarketError> {
        Ok(ledger.settle(spec, self.empirical_outcome()?)?)
    }

    /// Expected total cost of encoding a character drawn from `p`, counting
    /// both the code length under `q_t` and the mechanism's payments:
    /// `H(p) + (1 - alpha) KL(p; q_t) + alpha KL(p; q0)`.
    pub fn total_expected_cost(&self, q_t: &[f64], p: &Belief) -> Result<f64, MarketError> {
        let n = self.n();
        if q_t.len() != n {
            return Err(MarketError::Invalid(format!("q_T has {} entries, expected {n}", q_t.len())));
        }
        let mut dist = vec![0.0; n];
        for (w, x) in p.iter() {
            match x {
                Outcome::Index(i) if *i < n => dist[*i] += w,
                other => return Err(MarketError::Invalid(format!("{other:?} is not a character"))),
            }
        }
        if dist.iter().zip(q_t).any(|(pi, qi)| *pi > 0.0 && *qi <= 0.0) {
            return Err(MarketError::Invalid("q_T must be positive wherever p is".into()));
        }
        Ok(entropy(&dist) + (1.0 - self.alpha) * kl(&dist, q_t) + self.alpha * kl(&dist, &self.q0))
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `KL(p; q)` in nats.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}
