//! Direct betting on test labels.
//!
//! Hypotheses and outcomes are both label vectors in `K^m` for an interval
//! `K = [lo, hi]`, and the loss is the total squared error
//! `alpha * sum_k (w(k) - y(k))^2`. Because the loss is a sum over labels,
//! the market can pay out a block of labels as soon as they are revealed and
//! freeze those coordinates, then settle the rest later.
//!
//! Bids are charged `alpha * 2 m width(K) |w' - w|_2`. A mini-payout
//! credits each trade with the fraction `sum_{k in S} |w'(k) - w(k)| /
//! |w' - w|_1` of its cost, which keeps every block payout non-negative.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{MarketError, MarketParams};
use crate::convex::FeasibleSet;
use crate::gsr::{DivergenceGsr, Outcome};
use crate::mechanism::{make_l_clm, ClmSpec, CostRule, Ledger, LedgerHeader, MechanismError, Wallets};

/// Label interval used when none is given.
pub const DEFAULT_INTERVAL: (f64, f64) = (1.0, 5.0);

#[derive(Clone, Debug, PartialEq)]
pub struct LabelMarket {
    m: usize,
    lo: f64,
    hi: f64,
    alpha: f64,
    schedule: Vec<Vec<usize>>,
}

impl LabelMarket {
    /// A market with no payout schedule: every label is settled at the end.
    pub fn new(m: usize, lo: f64, hi: f64, alpha: f64) -> Result<Self, MarketError> {
        if m == 0 {
            return Err(MarketError::Invalid("need at least one label".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(MarketError::Invalid(format!("label interval [{lo}, {hi}] must be bounded")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MarketError::Invalid(format!("alpha {alpha} must be positive")));
        }
        Ok(Self { m, lo, hi, alpha, schedule: Vec::new() })
    }

    /// `m` labels in the default interval.
    pub fn with_default_interval(m: usize, alpha: f64) -> Result<Self, MarketError> {
        Self::new(m, DEFAULT_INTERVAL.0, DEFAULT_INTERVAL.1, alpha)
    }

    /// Sets the blocks of label indices paid out in turn. Blocks must be
    /// non-empty, in range, and pairwise disjoint; they need not cover every
    /// index, and uncovered labels are paid at final settlement.
    pub fn with_schedule(mut self, schedule: Vec<Vec<usize>>) -> Result<Self, MarketError> {
        let mut seen = BTreeSet::new();
        for (b, block) in schedule.iter().enumerate() {
            if block.is_empty() {
                return Err(MechanismError::Schedule(format!("block {b} is empty")).into());
            }
            for &k in block {
                if k >= self.m {
                    return Err(MechanismError::Schedule(format!("block {b}: index {k} is outside 0..{}", self.m)).into());
                }
                if !seen.insert(k) {
                    return Err(MechanismError::Schedule(format!("block {b}: index {k} appears in two blocks")).into());
                }
            }
        }
        self.schedule = schedule;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn schedule(&self) -> &[Vec<usize>] {
        &self.schedule
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Lipschitz constant of the unscaled loss, `2 m width(K)`.
    pub fn lambda(&self) -> f64 {
        2.0 * self.m as f64 * (self.hi - self.lo)
    }

    pub fn w0(&self) -> Vec<f64> {
        vec![0.5 * (self.lo + self.hi); self.m]
    }

    pub fn gsr(&self) -> DivergenceGsr {
        DivergenceGsr::squared_distance(self.m, self.lo, self.hi, FeasibleSet::cube(self.m, self.lo, self.hi), 2.0)
    }

    pub fn clm(&self) -> Result<ClmSpec, MarketError> {
        Ok(make_l_clm(Arc::new(self.gsr()), CostRule::Lipschitz { lambda: self.lambda() }, self.w0(), self.alpha)?)
    }

    pub fn params(&self) -> MarketParams {
        MarketParams::Label { m: self.m, lo: self.lo, hi: self.hi, alpha: self.alpha }
    }

    pub fn header(&self, seed: u64) -> LedgerHeader {
        LedgerHeader::new(
            "label",
            serde_json::to_value(self.params()).expect("parameters serialize"),
            self.w0(),
            self.alpha,
            seed,
        )
    }

    /// Moves only the coordinates in `updates`, leaving the rest of the
    /// current prediction (frozen or not) as it is.
    pub fn post_update(
        &self,
        ledger: &mut Ledger,
        spec: &ClmSpec,
        participant: &str,
        updates: &[(usize, f64)],
        wallets: &mut Wallets,
    ) -> Result<f64, MarketError> {
        let mut w = ledger.current().to_vec();
        for &(k, v) in updates {
            if k >= self.m {
                return Err(MarketError::Invalid(format!("label index {k} is outside 0..{}", self.m)));
            }
            w[k] = v;
        }
        Ok(ledger.post_bid(spec, participant, w, wallets)?)
    }

    /// Pays out scheduled block `b` with the full label vector `y`, of which
    /// only the block's entries are read.
    pub fn mini_payout(
        &self,
        ledger: &mut Ledger,
        spec: &ClmSpec,
        b: usize,
        y: &[f64],
    ) -> Result<BTreeMap<String, f64>, MarketError> {
        let block = self
            .schedule
            .get(b)
            .ok_or_else(|| MechanismError::Schedule(format!("no block {b} in a schedule of {}", self.schedule.len())))?;
        self.check_labels(y)?;
        let labels: Vec<f64> = block.iter().map(|&k| y[k]).collect();
        Ok(ledger.mini_payout(spec, block, &labels)?)
    }

    /// Settles the labels not yet paid out and closes the ledger.
    pub fn settle_remaining(
        &self,
        ledger: &mut Ledger,
        spec: &ClmSpec,
        y: &[f64],
    ) -> Result<BTreeMap<String, f64>, MarketError> {
        self.check_labels(y)?;
        Ok(ledger.settle(spec, Outcome::Labels(y.to_vec()))?)
    }

    fn check_labels(&self, y: &[f64]) -> Result<(), MarketError> {
        if y.len() != self.m || y.iter().any(|v| !(self.lo..=self.hi).contains(v)) {
            return Err(MarketError::Invalid(format!("labels {y:?} are not in [{}, {}]^{}", self.lo, self.hi, self.m)));
        }
        Ok(())
    }
}
