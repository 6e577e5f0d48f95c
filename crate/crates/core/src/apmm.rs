//! Cost-function market makers.
//!
//! A market maker over share vectors `s` in `R^n` sells a bundle `r` for
//! `C(s + r) - C(s)` and pays `rho(X) . r` when the outcome is revealed.
//! `grad C(s)` are the instantaneous prices. The trader's profit on
//! `s -> s'` is
//!
//! ```text
//! rho(X).(s' - s) - C(s') + C(s) = D_{C*}(rho(X), p) - D_{C*}(rho(X), p')
//! ```
//!
//! with `p = grad C(s)`, so the market maker implements the divergence loss
//! `D_{C*}(rho(X), w)` in price space. Conversely every divergence loss with
//! potential `R` is implemented by the market maker with `C = R*`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{
    self, conjugate, dual_of, ConvexError, FeasibleSet, LogSumExp, PotentialRef, SquaredNorm,
};
use crate::gsr::{Belief, DivergenceGsr, GsrError, HypothesisMap, Outcome, OutcomeSpace, PayoffMap};
use crate::mechanism::{Clm, Ledger};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Error)]
pub enum ApmmError {
    #[error("price vector {price:?} is on the boundary of the conjugate's domain")]
    BoundaryPrice { price: Vec<f64> },
    #[error("invalid market maker: {0}")]
    Invalid(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Gsr(#[from] GsrError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

/// Parameters of the logarithmic market scoring rule
/// `C(s) = (1/eta) ln sum_i exp(eta s(i))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmsrParams {
    pub eta: f64,
    pub n: usize,
}

/// A share purchase as recorded by the market maker.
#[derive(Clone, Debug, PartialEq)]
pub struct ShareTrade {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct Apmm {
    outcomes: OutcomeSpace,
    rho: PayoffMap,
    cost: PotentialRef,
    quantity: Vec<f64>,
    translation_invariant: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl Apmm {
    /// Builds a market maker and checks that `rho` maps every audit outcome
    /// into the closure of the price space.
    pub fn new(
        outcomes: OutcomeSpace,
        rho: PayoffMap,
        cost: PotentialRef,
        quantity: Vec<f64>,
    ) -> Result<Self, ApmmError> {
        let n = cost.dim();
        if quantity.len() != n {
            return Err(ApmmError::Invalid(format!("expected {n} shares, got {}", quantity.len())));
        }
        let dual = dual_of(&cost);
        for x in outcomes.audit_outcomes(0).iter().take(200) {
            let r = rho.apply(x).ok_or_else(|| ApmmError::Invalid(format!("payoff undefined at {x:?}")))?;
            if r.len() != n || !dual.domain().contains_within(&r, 1e-9) {
                return Err(ApmmError::Invalid(format!("payoff {r:?} of {x:?} is outside the price space")));
            }
        }
        let translation_invariant = [0.0, 1.0, -2.0].iter().all(|&t| {
            let s: Vec<f64> = (0..n).map(|i| t * (i as f64 + 1.0) / n as f64).collect();
            let shifted: Vec<f64> = s.iter().map(|v| v + 1.0).collect();
            (cost.value(&shifted) - cost.value(&s) - 1.0).abs() <= 1e-9
        });
        Ok(Self { outcomes, rho, cost, quantity, translation_invariant })
    }

    /// LMSR over `n` Arrow-Debreu securities, starting from zero shares.
    pub fn lmsr(params: LmsrParams) -> Result<Self, ApmmError> {
        if !(params.eta > 0.0 && params.eta.is_finite()) || params.n == 0 {
            return Err(ApmmError::Invalid(format!("invalid LMSR parameters {params:?}")));
        }
        Self::new(
            OutcomeSpace::Finite { n: params.n },
            PayoffMap::Basis { n: params.n },
            std::sync::Arc::new(LogSumExp::new(params.n, params.eta)),
            vec![0.0; params.n],
        )
    }

    /// `C(s) = |s|^2 / 2` with `rho(y) = y` on label vectors in `[lo, hi]^n`.
    pub fn quadratic(n: usize, lo: f64, hi: f64) -> Self {
        Self::new(
            OutcomeSpace::LabelVector { m: n, lo, hi },
            PayoffMap::Identity,
            std::sync::Arc::new(SquaredNorm::half(n)),
            vec![0.0; n],
        )
        .expect("every label vector is a price of the quadratic cost")
    }

    pub fn share_dim(&self) -> usize {
        self.cost.dim()
    }

    pub fn outcomes(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    pub fn rho(&self) -> &PayoffMap {
        &self.rho
    }

    pub fn cost_function(&self) -> &PotentialRef {
        &self.cost
    }

    pub fn quantity(&self) -> &[f64] {
        &self.quantity
    }

    /// Whether `C(s + t 1) = C(s) + t`, as for the LMSR.
    pub fn is_translation_invariant(&self) -> bool {
        self.translation_invariant
    }

    /// The same market maker holding `quantity` outstanding shares.
    pub fn at(&self, quantity: Vec<f64>) -> Self {
        Self { quantity, ..self.clone() }
    }

    fn payoff(&self, x: &Outcome) -> Result<Vec<f64>, ApmmError> {
        self.outcomes.validate(x)?;
        self.rho.apply(x).ok_or_else(|| ApmmError::Invalid(format!("payoff undefined at {x:?}")))
    }

    /// `C(s + r) - C(s)` at the current state.
    pub fn bundle_cost(&self, r: &[f64]) -> f64 {
        self.cost.value(&add(&self.quantity, r)) - self.cost.value(&self.quantity)
    }

    /// Buys `r` and returns the trade with its cost.
    pub fn execute_trade(&mut self, r: &[f64]) -> ShareTrade {
        let cost = self.bundle_cost(r);
        let to = add(&self.quantity, r);
        let from = std::mem::replace(&mut self.quantity, to.clone());
        ShareTrade { from, to, cost }
    }

    /// Pays each participant `rho(X) . bundle`.
    pub fn settle_shares(
        &self,
        holdings: &BTreeMap<String, Vec<f64>>,
        x: &Outcome,
    ) -> Result<BTreeMap<String, f64>, ApmmError> {
        let r = self.payoff(x)?;
        Ok(holdings.iter().map(|(who, bundle)| (who.clone(), dot(&r, bundle))).collect())
    }

    pub fn instantaneous_prices(&self) -> Vec<f64> {
        self.cost.gradient(&self.quantity)
    }

    pub fn prices_at(&self, s: &[f64]) -> Vec<f64> {
        self.cost.gradient(s)
    }

    /// `rho(X).(s_to - s_from) - C(s_to) + C(s_from)`.
    pub fn direct_profit(&self, s_from: &[f64], s_to: &[f64], x: &Outcome) -> Result<f64, ApmmError> {
        let r = self.payoff(x)?;
        Ok(dot(&r, &sub(s_to, s_from)) - self.cost.value(s_to) + self.cost.value(s_from))
    }

    /// `D_{C*}(rho(X), grad C(s_from)) - D_{C*}(rho(X), grad C(s_to))`.
    pub fn profit_as_divergence(&self, s_from: &[f64], s_to: &[f64], x: &Outcome) -> Result<f64, ApmmError> {
        let r = self.payoff(x)?;
        let dual = dual_of(&self.cost);
        let divergence = |s: &[f64]| -> Result<f64, ApmmError> {
            let p = self.cost.gradient(s);
            if !dual.is_interior(&p) {
                return Err(ApmmError::BoundaryPrice { price: p });
            }
            Ok(convex::bregman_divergence(dual.as_ref(), &r, &p)?)
        };
        Ok(divergence(s_from)? - divergence(s_to)?)
    }

    /// `E_P[rho(X)] . r - (C(s + r) - C(s))`.
    pub fn expected_profit(&self, p: &Belief, r: &[f64]) -> Result<f64, ApmmError> {
        let mu = self.mean_payoff(p)?;
        Ok(dot(&mu, r) - self.bundle_cost(r))
    }

    fn mean_payoff(&self, p: &Belief) -> Result<Vec<f64>, ApmmError> {
        let mut mu = vec![0.0; self.share_dim()];
        for (w, x) in p.iter() {
            let r = self.payoff(x)?;
            mu.iter_mut().zip(r).for_each(|(m, v)| *m += w * v);
        }
        Ok(mu)
    }

    /// The bundle that maximizes expected profit under belief `p` among
    /// bundles costing at most `budget`.
    ///
    /// For translation-invariant costs the last coordinate of the bundle is
    /// fixed at zero, which makes the answer unique. When the unconstrained
    /// optimum is too expensive, the solution lies on the path
    /// `grad C(s + r) = mu / (1 + lambda)` and `lambda` is found by bisection
    /// on the cost.
    pub fn optimal_trade(&self, p: &Belief, budget: f64) -> Result<Vec<f64>, ApmmError> {
        if budget.is_nan() || budget < 0.0 {
            return Err(ApmmError::Invalid(format!("budget must be non-negative, got {budget}")));
        }
        let mu = self.mean_payoff(p)?;
        let dual = dual_of(&self.cost);
        let n = self.share_dim();
        let bundle_for = |lambda: f64| -> Vec<f64> {
            let scale = 1.0 / (1.0 + lambda);
            let target: Vec<f64> = if self.translation_invariant {
                let mut t: Vec<f64> = mu.iter().map(|m| m * scale).collect();
                t[n - 1] = 1.0 - t[..n - 1].iter().sum::<f64>();
                t
            } else {
                mu.iter().map(|m| m * scale).collect()
            };
            let mut r = sub(&dual.gradient(&target), &self.quantity);
            if self.translation_invariant {
                let anchor = r[n - 1];
                r.iter_mut().for_each(|v| *v -= anchor);
            }
            r
        };
        let unconstrained = bundle_for(0.0);
        if self.bundle_cost(&unconstrained) <= budget {
            return Ok(unconstrained);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.bundle_cost(&bundle_for(hi)) > budget {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return Ok(vec![0.0; n]);
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.bundle_cost(&bundle_for(mid)) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(bundle_for(hi))
    }

    /// The mechanism view: hypotheses are share vectors starting at the
    /// current quantity.
    pub fn clm(&self) -> ApmmClm {
        ApmmClm { apmm: self.clone(), space: FeasibleSet::all_of(self.share_dim()) }
    }
}

/// Net share bundle bought by each participant in a ledger of share trades.
pub fn holdings(ledger: &Ledger) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in ledger.trades() {
        let entry = out.entry(t.participant.clone()).or_insert_with(|| vec![0.0; t.to.len()]);
        entry.iter_mut().zip(sub(&t.to, &t.from)).for_each(|(a, b)| *a += b);
    }
    out
}

/// A market maker viewed as a crowdsourced learning mechanism on share
/// vectors: `Cost(s, s') = C(s') - C(s)` and `Payout(s, s'; X) = rho(X).(s' - s)`.
#[derive(Clone, Debug)]
pub struct ApmmClm {
    apmm: Apmm,
    space: FeasibleSet,
}

impl ApmmClm {
    pub fn apmm(&self) -> &Apmm {
        &self.apmm
    }

    /// `max_X C(s_0) - rho(X).s_0 + C*(rho(X))`, the most the market maker
    /// can lose over audit outcomes.
    pub fn worst_case_loss(&self) -> Result<f64, ApmmError> {
        let s0 = &self.apmm.quantity;
        let c0 = self.apmm.cost.value(s0);
        let mut worst: f64 = 0.0;
        for x in self.apmm.outcomes.audit_outcomes(0) {
            let r = self.apmm.payoff(&x)?;
            worst = worst.max(c0 - dot(&r, s0) + conjugate(self.apmm.cost.as_ref(), &r)?);
        }
        Ok(worst)
    }
}

impl Clm for ApmmClm {
    fn hypothesis_space(&self) -> &FeasibleSet {
        &self.space
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.apmm.outcomes
    }

    fn initial_hypothesis(&self) -> &[f64] {
        &self.apmm.quantity
    }

    fn alpha(&self) -> f64 {
        1.0
    }

    fn cost(&self, w: &[f64], w_new: &[f64]) -> f64 {
        self.apmm.cost.value(w_new) - self.apmm.cost.value(w)
    }

    fn payout(&self, w: &[f64], w_new: &[f64], x: &Outcome) -> f64 {
        match self.apmm.rho.apply(x) {
            Some(r) => dot(&r, &sub(w_new, w)),
            None => f64::NAN,
        }
    }

    /// `C(s) - rho(X).s`, which differs from `D_{C*}(rho(X), grad C(s))` by
    /// the outcome-only term `C*(rho(X))`.
    fn loss(&self, w: &[f64], x: &Outcome) -> f64 {
        match self.apmm.rho.apply(x) {
            Some(r) => self.apmm.cost.value(w) - dot(&r, w),
            None => f64::NAN,
        }
    }
}

fn random_shares<R: Rng + ?Sized>(rng: &mut R, n: usize, spread: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            spread * z
        })
        .collect()
}

fn check_close(what: &str, a: f64, b: f64, tol: f64) -> Result<(), ApmmError> {
    if (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())) {
        Ok(())
    } else {
        Err(ApmmError::Audit(format!("{what}: {a} vs {b}")))
    }
}

/// The divergence loss a market maker implements in price space:
/// `L(w; X) = D_{C*}(rho(X), w)` on `H = closure(grad C(R^n))`.
///
/// The implementation map `s -> grad C(s)` is audited on seeded trades.
pub fn gsr_of_apmm(a: &Apmm) -> Result<DivergenceGsr, ApmmError> {
    let dual = dual_of(&a.cost);
    let gsr = DivergenceGsr::new(
        format!("divergence({})", dual.name()),
        dual.domain().clone(),
        a.outcomes.clone(),
        dual,
        a.rho.clone(),
        HypothesisMap::Identity,
    )?;
    let mut rng = rng::stream(0, "apmm-audit");
    let outcomes = a.outcomes.audit_outcomes(0);
    for _ in 0..20 {
        let s = random_shares(&mut rng, a.share_dim(), 1.0);
        let s_new = random_shares(&mut rng, a.share_dim(), 1.0);
        for x in outcomes.iter().take(20) {
            let l_from = gsr.try_loss(&a.cost.gradient(&s), x);
            let l_to = gsr.try_loss(&a.cost.gradient(&s_new), x);
            if let (Ok(l_from), Ok(l_to)) = (l_from, l_to) {
                check_close("price-space implementation", a.direct_profit(&s, &s_new, x)?, l_from - l_to, 1e-8)?;
            }
        }
    }
    Ok(gsr)
}

/// The market maker `C = R*` implementing a divergence loss with potential
/// `R`, starting from zero shares.
///
/// Checks that `psi^{-1}(rho(X))` lies in the closure of `H` (within `1e-6`)
/// for audit outcomes, and audits that trader profit equals the loss
/// difference at `psi^{-1}(grad C(s))` on seeded trades.
pub fn apmm_of_gsr(l: &DivergenceGsr) -> Result<Apmm, ApmmError> {
    use crate::gsr::Gsr;
    let h = l.hypothesis_space();
    let outcomes = l.outcome_space().audit_outcomes(0);
    for x in outcomes.iter().take(200) {
        let r = l.rho().apply(x).ok_or_else(|| ApmmError::Invalid(format!("payoff undefined at {x:?}")))?;
        let w = l.psi().inverse(&r);
        if !h.contains_within(&w, 1e-6) {
            return Err(ApmmError::Invalid(format!(
                "payoff {r:?} of {x:?} is not in the image of the hypothesis space"
            )));
        }
    }
    let cost = dual_of(l.potential());
    let a = Apmm::new(l.outcome_space().clone(), l.rho().clone(), cost, vec![0.0; l.potential().dim()])?;
    let mut rng = rng::stream(0, "apmm-audit");
    for _ in 0..20 {
        let s = random_shares(&mut rng, a.share_dim(), 1.0);
        let s_new = random_shares(&mut rng, a.share_dim(), 1.0);
        let w = l.psi().inverse(&a.cost.gradient(&s));
        let w_new = l.psi().inverse(&a.cost.gradient(&s_new));
        for x in outcomes.iter().take(20) {
            if let (Ok(l_from), Ok(l_to)) = (l.try_loss(&w, x), l.try_loss(&w_new, x)) {
                check_close("implementation", a.direct_profit(&s, &s_new, x)?, l_from - l_to, 1e-8)?;
            }
        }
    }
    Ok(a)
}
