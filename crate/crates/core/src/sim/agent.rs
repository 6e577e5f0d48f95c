//! Simulated traders.
//!
//! An informed agent moves the hypothesis to the minimizer of its expected
//! loss, which maximizes its expected profit. A budget optimizer does the same
//! within a per-bid spending limit. A noise trader perturbs the current
//! hypothesis at random. Every agent passes when a bid would not be expected
//! to pay.

use std::collections::BTreeSet;

use rand_distr::{Distribution, StandardNormal};

use crate::apmm::ApmmClm;
use crate::convex::{FeasibleSet, SolverOptions};
use crate::gsr::{mean_minimizer, minimize_expected_loss_over, Belief};
use crate::mechanism::{budget_set, Clm, ClmSpec};
use crate::rng::{self, StreamRng};

/// Expected gains at or below this are not worth a bid.
pub const MIN_EXPECTED_GAIN: f64 = 1e-12;

/// The mechanism an agent trades against, with enough structure to compute
/// optimal bids.
#[derive(Clone, Debug)]
pub enum MarketHandle {
    /// An L-incentivized mechanism.
    Learning(ClmSpec),
    /// A share-based market maker.
    Shares(ApmmClm),
}

impl MarketHandle {
    pub fn clm(&self) -> &dyn Clm {
        match self {
            MarketHandle::Learning(spec) => spec,
            MarketHandle::Shares(clm) => clm,
        }
    }

    /// Expected profit of moving from `w` to `w_new` under belief `p`.
    pub fn expected_profit(&self, p: &Belief, w: &[f64], w_new: &[f64]) -> f64 {
        let clm = self.clm();
        p.expect(|x| clm.loss(w, x) - clm.loss(w_new, x))
    }
}

#[derive(Clone, Debug)]
pub enum Strategy {
    Informed { belief: Belief },
    BudgetOptimizer { belief: Belief, budget: f64 },
    Noise { step_scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Bid { to: Vec<f64>, expected_profit: Option<f64> },
    Pass { reason: String },
}

fn pass(reason: impl Into<String>) -> Action {
    Action::Pass { reason: reason.into() }
}

#[derive(Clone, Debug)]
pub struct TraderAgent {
    id: String,
    strategy: Strategy,
    seed: u64,
    rng: StreamRng,
}

impl TraderAgent {
    /// An agent drawing its randomness from the stream `agent:<id>` of
    /// `seed`.
    pub fn new(id: impl Into<String>, strategy: Strategy, seed: u64) -> Self {
        let id = id.into();
        let rng = rng::stream(seed, &format!("agent:{id}"));
        Self { id, strategy, seed, rng }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    /// Chooses a bid from `w`, spending at most `balance`. Coordinates in
    /// `frozen` are kept as they are.
    pub fn act(&mut self, market: &MarketHandle, w: &[f64], frozen: &BTreeSet<usize>, balance: f64) -> Action {
        match self.strategy.clone() {
            Strategy::Informed { belief } => self.informed(market, &belief, w, frozen, balance),
            Strategy::BudgetOptimizer { belief, budget } => {
                self.budgeted(market, &belief, w, frozen, budget.min(balance))
            }
            Strategy::Noise { step_scale } => self.noise(market, w, frozen, step_scale, balance),
        }
    }

    fn informed(&self, market: &MarketHandle, p: &Belief, w: &[f64], frozen: &BTreeSet<usize>, balance: f64) -> Action {
        let target = match market {
            MarketHandle::Learning(spec) => {
                let gsr = spec.gsr();
                let closed_form = gsr.as_divergence().and_then(|d| mean_minimizer(d, p).ok());
                let target = match closed_form {
                    Some(t) => t,
                    None => {
                        let set = pinned(spec.hypothesis_space().clone(), w, frozen);
                        match minimize_expected_loss_over(gsr.as_ref(), p, &set, &self.solver_options(w)) {
                            Ok(t) => t,
                            Err(e) => return pass(format!("solver failed: {e}")),
                        }
                    }
                };
                pin_coordinates(target, w, frozen)
            }
            MarketHandle::Shares(clm) => match clm.apmm().at(w.to_vec()).optimal_trade(p, f64::INFINITY) {
                Ok(r) => w.iter().zip(r).map(|(s, d)| s + d).collect(),
                Err(e) => return pass(format!("no optimal trade: {e}")),
            },
        };
        if market.clm().cost(w, &target) > balance {
            return self.budgeted(market, p, w, frozen, balance);
        }
        finish(market, p, w, target)
    }

    fn budgeted(&self, market: &MarketHandle, p: &Belief, w: &[f64], frozen: &BTreeSet<usize>, budget: f64) -> Action {
        if !(budget > 0.0) {
            return pass("no budget");
        }
        let target = match market {
            MarketHandle::Learning(spec) => {
                let set = budget_set(spec, w, budget).unwrap_or_else(|| spec.hypothesis_space().clone());
                let set = pinned(set, w, frozen);
                match minimize_expected_loss_over(spec.gsr().as_ref(), p, &set, &self.solver_options(w)) {
                    Ok(t) => shrink_to_budget(spec, w, pin_coordinates(t, w, frozen), budget),
                    Err(e) => return pass(format!("solver failed: {e}")),
                }
            }
            MarketHandle::Shares(clm) => match clm.apmm().at(w.to_vec()).optimal_trade(p, budget) {
                Ok(r) => shrink_to_budget(clm, w, w.iter().zip(r).map(|(s, d)| s + d).collect(), budget),
                Err(e) => return pass(format!("no optimal trade: {e}")),
            },
        };
        finish(market, p, w, target)
    }

    fn noise(&mut self, market: &MarketHandle, w: &[f64], frozen: &BTreeSet<usize>, step: f64, balance: f64) -> Action {
        let clm = market.clm();
        let moved: Vec<f64> = w
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                v + step * z
            })
            .collect();
        let target = pin_coordinates(clm.hypothesis_space().project(&moved), w, frozen);
        let target = shrink_to_budget(clm, w, target, balance);
        if target == w || !clm.cost(w, &target).is_finite() {
            return pass("no affordable step");
        }
        Action::Bid { to: target, expected_profit: None }
    }

    fn solver_options(&self, w: &[f64]) -> SolverOptions {
        SolverOptions::with_seed(rng::stream_seed(self.seed, &format!("agent-solver:{}", self.id))).starting_at(w.to_vec())
    }
}

fn finish(market: &MarketHandle, p: &Belief, w: &[f64], target: Vec<f64>) -> Action {
    if target.iter().any(|v| !v.is_finite()) {
        return pass("optimal bid is not finite");
    }
    let gain = market.expected_profit(p, w, &target);
    if !(gain > MIN_EXPECTED_GAIN) {
        return pass("no expected gain");
    }
    Action::Bid { to: target, expected_profit: Some(gain) }
}

/// Restricts `set` so the `frozen` coordinates keep their values in `w`.
fn pinned(set: FeasibleSet, w: &[f64], frozen: &BTreeSet<usize>) -> FeasibleSet {
    if frozen.is_empty() {
        return set;
    }
    let lo = (0..w.len()).map(|k| if frozen.contains(&k) { w[k] } else { f64::NEG_INFINITY }).collect();
    let hi = (0..w.len()).map(|k| if frozen.contains(&k) { w[k] } else { f64::INFINITY }).collect();
    FeasibleSet::Intersection(vec![set, FeasibleSet::Box { lo, hi }])
}

fn pin_coordinates(mut target: Vec<f64>, w: &[f64], frozen: &BTreeSet<usize>) -> Vec<f64> {
    for &k in frozen {
        target[k] = w[k];
    }
    target
}

/// The point on the segment from `w` to `target` farthest from `w` whose
/// cost is within `budget`. Costs are non-decreasing along the segment for
/// every rule used here.
pub fn shrink_to_budget(clm: &dyn Clm, w: &[f64], target: Vec<f64>, budget: f64) -> Vec<f64> {
    if clm.cost(w, &target) <= budget {
        return target;
    }
    let along = |t: f64| -> Vec<f64> { w.iter().zip(&target).map(|(a, b)| a + t * (b - a)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if clm.cost(w, &along(mid)) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        w.to_vec()
    } else {
        along(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apmm::{Apmm, LmsrParams};
    use crate::markets::{CompressionMarket, LabelMarket};

    fn compression() -> MarketHandle {
        MarketHandle::Learning(CompressionMarket::uniform(2, 1.0, vec![0, 1, 1, 1]).clm().unwrap())
    }

    #[test]
    fn informed_agent_bids_its_belief() {
        let p = Belief::categorical(&[0.25, 0.75]).unwrap();
        let mut a = TraderAgent::new("a", Strategy::Informed { belief: p.clone() }, 0);
        match a.act(&compression(), &[0.5, 0.5], &BTreeSet::new(), f64::INFINITY) {
            Action::Bid { to, expected_profit } => {
                assert_eq!(to, vec![0.25, 0.75]);
                assert!((expected_profit.unwrap() - 0.130812).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(a.act(&compression(), &[0.25, 0.75], &BTreeSet::new(), f64::INFINITY), Action::Pass { .. }));
    }

    #[test]
    fn unaffordable_informed_bid_falls_back_to_budget() {
        let p = Belief::categorical(&[0.25, 0.75]).unwrap();
        let market = compression();
        let mut a = TraderAgent::new("a", Strategy::Informed { belief: p }, 0);
        match a.act(&market, &[0.5, 0.5], &BTreeSet::new(), 0.1) {
            Action::Bid { to, .. } => assert!(market.clm().cost(&[0.5, 0.5], &to) <= 0.1 + 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_budget_passes() {
        let p = Belief::categorical(&[0.25, 0.75]).unwrap();
        let mut a = TraderAgent::new("a", Strategy::BudgetOptimizer { belief: p, budget: 0.0 }, 0);
        assert!(matches!(a.act(&compression(), &[0.5, 0.5], &BTreeSet::new(), 10.0), Action::Pass { .. }));
    }

    #[test]
    fn budget_optimizer_respects_its_budget() {
        let p = Belief::categorical(&[0.1, 0.9]).unwrap();
        let market = compression();
        let mut a = TraderAgent::new("a", Strategy::BudgetOptimizer { belief: p, budget: 0.2 }, 0);
        match a.act(&market, &[0.5, 0.5], &BTreeSet::new(), f64::INFINITY) {
            Action::Bid { to, expected_profit } => {
                let cost = market.clm().cost(&[0.5, 0.5], &to);
                assert!(cost <= 0.2 + 1e-12 && cost > 0.19, "{cost}");
                assert!(expected_profit.unwrap() > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noise_bids_stay_in_the_hypothesis_space_and_respect_frozen_labels() {
        let m = LabelMarket::new(3, 0.0, 1.0, 1.0).unwrap();
        let market = MarketHandle::Learning(m.clm().unwrap());
        let mut a = TraderAgent::new("n", Strategy::Noise { step_scale: 2.0 }, 3);
        let frozen = BTreeSet::from([1]);
        let w = vec![0.5, 0.3, 0.5];
        for _ in 0..20 {
            if let Action::Bid { to, .. } = a.act(&market, &w, &frozen, f64::INFINITY) {
                assert!(market.clm().hypothesis_space().contains(&to));
                assert_eq!(to[1], 0.3);
            }
        }
    }

    #[test]
    fn lmsr_informed_agent_moves_prices_to_its_belief() {
        let apmm = Apmm::lmsr(LmsrParams { eta: 1.0, n: 3 }).unwrap();
        let market = MarketHandle::Shares(apmm.clm());
        let p = Belief::categorical(&[0.2, 0.3, 0.5]).unwrap();
        let mut a = TraderAgent::new("a", Strategy::Informed { belief: p }, 0);
        let Action::Bid { to, .. } = a.act(&market, &[0.0; 3], &BTreeSet::new(), f64::INFINITY) else {
            panic!("expected a bid");
        };
        let prices = apmm.prices_at(&to);
        for (q, e) in prices.iter().zip([0.2, 0.3, 0.5]) {
            assert!((q - e).abs() < 1e-9);
        }
    }
}
