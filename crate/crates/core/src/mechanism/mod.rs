//! The bid/settle protocol.
//!
//! A mechanism publishes `w_0`. In each round a participant bids an update
//! `w_t -> w'`, pays `Cost(w_t, w')`, and the hypothesis becomes `w'`. When the
//! outcome `X` is revealed, the bid on `w_t -> w_{t+1}` receives
//! `Payout(w_t, w_{t+1}; X)`.
//!
//! An L-incentivized mechanism sets
//!
//! ```text
//! Payout(w, w'; X) = Cost(w, w') + alpha * (L(w; X) - L(w'; X))
//! ```
//!
//! so each participant's profit is the improvement they made to the loss and
//! the sum of profits telescopes to `alpha * (L(w_0; X) - L(w_T; X))`.

mod ledger;
mod wallet;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::convex::{minimize, FeasibleSet, FnObjective, SolverOptions};
use crate::gsr::{GsrError, GsrRef, Outcome, OutcomeSpace};
use crate::rng;

pub use ledger::{
    Ledger, LedgerEntry, LedgerHeader, LedgerStatus, MiniPayoutRecord, Settlement, TradeRecord,
};
pub use wallet::{Account, VoucherPool, Wallets};

/// Slack used when comparing currency amounts.
pub const CURRENCY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("bid rejected: {0}")]
    Rejected(String),
    #[error("ledger is already settled")]
    AlreadySettled,
    #[error("escrow violated: payout {payout} for bid {w:?} -> {w_new:?} at outcome {outcome:?}")]
    EscrowViolation { w: Vec<f64>, w_new: Vec<f64>, outcome: Outcome, payout: f64 },
    #[error("invalid mechanism: {0}")]
    InvalidSpec(String),
    #[error("cannot rescale: {0}")]
    Rescale(String),
    #[error("voucher issuance failed: {0}")]
    Voucher(String),
    #[error("mini-payout schedule error: {0}")]
    Schedule(String),
    #[error("ledger line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Gsr(#[from] GsrError),
}

/// A crowdsourced learning mechanism: cost and payout rules over a hypothesis
/// space.
pub trait Clm: Send + Sync + fmt::Debug {
    fn hypothesis_space(&self) -> &FeasibleSet;
    fn outcome_space(&self) -> &OutcomeSpace;
    fn initial_hypothesis(&self) -> &[f64];
    fn alpha(&self) -> f64;
    fn cost(&self, w: &[f64], w_new: &[f64]) -> f64;
    fn payout(&self, w: &[f64], w_new: &[f64], x: &Outcome) -> f64;
    /// The loss the mechanism implements, already scaled, so that
    /// `payout - cost = loss(w) - loss(w_new)`.
    fn loss(&self, w: &[f64], x: &Outcome) -> f64;

    fn profit(&self, w: &[f64], w_new: &[f64], x: &Outcome) -> f64 {
        self.payout(w, w_new, x) - self.cost(w, w_new)
    }

    /// Outcomes checked by escrow audits.
    fn audit_outcomes(&self) -> Vec<Outcome> {
        self.outcome_space().audit_outcomes(0)
    }

    /// Payout restricted to the coordinates in `block`, given their labels.
    /// Only mechanisms whose loss decomposes over coordinates support this.
    fn block_payout(&self, _w: &[f64], _w_new: &[f64], _block: &[usize], _labels: &[f64]) -> Option<f64> {
        None
    }
}

pub type CustomCost = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// How an L-incentivized mechanism prices a bid. Every rule is multiplied by
/// `alpha`.
#[derive(Clone)]
pub enum CostRule {
    /// `lambda * |w' - w|_2`, valid when `w -> L(w; X)` is `lambda`-Lipschitz
    /// for every outcome.
    Lipschitz { lambda: f64 },
    /// `max_i ln(q(i) / q'(i))` for distributions.
    LogRatio,
    /// `max` over audit outcomes of `L(w'; X) - L(w; X)`, clamped at zero.
    WorstCaseGap,
    Custom(CustomCost),
}

impl fmt::Debug for CostRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostRule::Lipschitz { lambda } => write!(f, "Lipschitz {{ lambda: {lambda} }}"),
            CostRule::LogRatio => write!(f, "LogRatio"),
            CostRule::WorstCaseGap => write!(f, "WorstCaseGap"),
            CostRule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// An L-incentivized mechanism built by [`make_l_clm`].
#[derive(Clone, Debug)]
pub struct ClmSpec {
    gsr: GsrRef,
    cost_rule: CostRule,
    w0: Vec<f64>,
    alpha: f64,
    audit: Vec<Outcome>,
}

/// `ln q(i) - ln q'(i)`, zero when the two agree (including both zero).
fn log_ratio(q: f64, q_new: f64) -> f64 {
    if q == q_new {
        0.0
    } else {
        q.ln() - q_new.ln()
    }
}

fn euclidean(w: &[f64], w_new: &[f64]) -> f64 {
    w.iter().zip(w_new).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

impl ClmSpec {
    pub fn gsr(&self) -> &GsrRef {
        &self.gsr
    }

    pub fn cost_rule(&self) -> &CostRule {
        &self.cost_rule
    }

    /// The same mechanism with a different scale.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, MechanismError> {
        make_l_clm(self.gsr.clone(), self.cost_rule.clone(), self.w0.clone(), alpha)
    }

    /// `L(w; X) - L(w'; X)` for the unscaled loss, averaged over samples.
    fn loss_gap(&self, w: &[f64], w_new: &[f64], x: &Outcome) -> f64 {
        x.average(&mut |atom| {
            let a = self.gsr.loss(w, atom);
            let b = self.gsr.loss(w_new, atom);
            if a == b {
                0.0
            } else {
                a - b
            }
        })
    }

    fn unscaled_cost(&self, w: &[f64], w_new: &[f64]) -> f64 {
        match &self.cost_rule {
            CostRule::Lipschitz { lambda } => lambda * euclidean(w, w_new),
            CostRule::LogRatio => w
                .iter()
                .zip(w_new)
                .map(|(a, b)| log_ratio(*a, *b))
                .fold(0.0, f64::max),
            CostRule::WorstCaseGap => self
                .audit
                .iter()
                .map(|x| -self.loss_gap(w, w_new, x))
                .fold(0.0, f64::max),
            CostRule::Custom(f) => f(w, w_new),
        }
    }
}

impl Clm for ClmSpec {
    fn hypothesis_space(&self) -> &FeasibleSet {
        self.gsr.hypothesis_space()
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        self.gsr.outcome_space()
    }

    fn initial_hypothesis(&self) -> &[f64] {
        &self.w0
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn cost(&self, w: &[f64], w_new: &[f64]) -> f64 {
        self.alpha * self.unscaled_cost(w, w_new)
    }

    fn payout(&self, w: &[f64], w_new: &[f64], x: &Outcome) -> f64 {
        let cost = self.cost(w, w_new);
        if let CostRule::LogRatio = self.cost_rule {
            // Exact form for log loss: the maximizing coordinate pays back zero.
            if let Some(p) = log_ratio_payout(self.alpha, cost, w, w_new, x) {
                return p;
            }
        }
        cost + self.alpha * self.loss_gap(w, w_new, x)
    }

    fn loss(&self, w: &[f64], x: &Outcome) -> f64 {
        self.alpha * self.gsr.loss(w, x)
    }

    fn profit(&self, w: &[f64], w_new: &[f64], x: &Outcome) -> f64 {
        self.payout(w, w_new, x) - self.cost(w, w_new)
    }

    fn audit_outcomes(&self) -> Vec<Outcome> {
        self.audit.clone()
    }

    fn block_payout(&self, w: &[f64], w_new: &[f64], block: &[usize], labels: &[f64]) -> Option<f64> {
        let before = self.gsr.block_loss(w, block, labels)?;
        let after = self.gsr.block_loss(w_new, block, labels)?;
        let l1: f64 = w.iter().zip(w_new).map(|(a, b)| (a - b).abs()).sum();
        let share = if l1 == 0.0 {
            0.0
        } else {
            block.iter().map(|&k| (w[k] - w_new[k]).abs()).sum::<f64>() / l1
        };
        Some(self.cost(w, w_new) * share + self.alpha * (before - after))
    }
}

fn log_ratio_payout(alpha: f64, cost: f64, w: &[f64], w_new: &[f64], x: &Outcome) -> Option<f64> {
    let mut ok = true;
    let p = x.average(&mut |atom| match atom {
        Outcome::Index(i) if *i < w.len() => cost - alpha * log_ratio(w[*i], w_new[*i]),
        _ => {
            ok = false;
            0.0
        }
    });
    ok.then_some(p)
}

/// Builds the L-incentivized mechanism for `gsr` and audits escrow on seeded
/// bids against every audit outcome.
pub fn make_l_clm(gsr: GsrRef, cost_rule: CostRule, w0: Vec<f64>, alpha: f64) -> Result<ClmSpec, MechanismError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MechanismError::InvalidSpec(format!("alpha must be positive and finite, got {alpha}")));
    }
    if let CostRule::Lipschitz { lambda } = cost_rule {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(MechanismError::InvalidSpec(format!("invalid Lipschitz constant {lambda}")));
        }
    }
    let h = gsr.hypothesis_space();
    if w0.len() != h.dim() || !h.contains(&w0) {
        return Err(MechanismError::InvalidSpec(format!("initial hypothesis {w0:?} is outside H")));
    }
    let audit = gsr.outcome_space().audit_outcomes(0);
    if audit.iter().any(|x| !gsr.loss(&w0, x).is_finite()) {
        return Err(MechanismError::InvalidSpec("initial loss is not finite on every outcome".into()));
    }
    let spec = ClmSpec { gsr, cost_rule, w0, alpha, audit };
    audit_escrow(&spec)?;
    Ok(spec)
}

fn audit_escrow(spec: &ClmSpec) -> Result<(), MechanismError> {
    let h = spec.hypothesis_space();
    let mut rng = rng::stream(0, "escrow-audit");
    let mut points = vec![spec.w0.clone()];
    points.extend((0..16).map(|_| h.sample(&mut rng, 1.0)));
    let outcomes: Vec<&Outcome> = spec.audit.iter().take(1000).collect();
    for w in &points {
        for w_new in &points {
            if !spec.cost(w, w_new).is_finite() {
                continue;
            }
            for x in &outcomes {
                let payout = spec.payout(w, w_new, x);
                if payout.is_nan() || payout < -CURRENCY_TOL {
                    return Err(MechanismError::EscrowViolation {
                        w: w.clone(),
                        w_new: w_new.clone(),
                        outcome: (*x).clone(),
                        payout,
                    });
                }
            }
        }
    }
    Ok(())
}

/// `max` over audit outcomes and hypotheses of `L(w_0; X) - L(w; X)` (scaled).
///
/// For each outcome the minimum of the loss over `H` is the better of a
/// solver run and the set's audit grid, so the result is a lower bound that is
/// exact for finite outcome spaces whenever the solver converges.
pub fn worst_case_loss(spec: &ClmSpec) -> f64 {
    let h = spec.hypothesis_space();
    let grid = h.audit_points(0);
    let gsr = spec.gsr();
    let mut worst: f64 = 0.0;
    for x in &spec.audit {
        let objective = FnObjective {
            value: |w: &[f64]| gsr.loss(w, x),
            gradient: |w: &[f64]| gsr.loss_gradient(w, x),
        };
        let opts = SolverOptions::with_seed(0).starting_at(spec.w0.clone());
        let mut best = gsr.loss(&spec.w0, x);
        if let Ok(m) = minimize(&objective, h, &opts) {
            best = best.min(m.value);
        }
        for w in &grid {
            best = best.min(gsr.loss(w, x));
        }
        worst = worst.max(spec.alpha * (gsr.loss(&spec.w0, x) - best));
    }
    worst
}

/// Rescales `alpha` so the audited worst-case loss equals `budget`.
pub fn rescale_to_budget(spec: &ClmSpec, budget: f64) -> Result<ClmSpec, MechanismError> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(MechanismError::Rescale(format!("budget must be positive and finite, got {budget}")));
    }
    let current = worst_case_loss(spec);
    if !(current > 0.0 && current.is_finite()) {
        return Err(MechanismError::Rescale(format!("worst-case loss is {current}")));
    }
    spec.with_alpha(spec.alpha * budget / current)
}

/// The mechanism's best bid from `w` for belief `p` under a cost budget, when
/// the cost rule admits an explicit budget set.
pub fn budget_set(spec: &ClmSpec, w: &[f64], budget: f64) -> Option<FeasibleSet> {
    let h = spec.hypothesis_space().clone();
    let scaled = budget / spec.alpha;
    match &spec.cost_rule {
        CostRule::Lipschitz { lambda } if *lambda > 0.0 => {
            let ball = FeasibleSet::ball_at(w.to_vec(), scaled / lambda);
            Some(FeasibleSet::Intersection(vec![h, ball]))
        }
        CostRule::LogRatio => {
            let shrink = (-scaled).exp();
            let floor = match &h {
                FeasibleSet::Simplex { lower } => lower.clone(),
                _ => return None,
            };
            let lower = w.iter().zip(floor).map(|(q, f)| (q * shrink).max(f)).collect();
            Some(FeasibleSet::Simplex { lower })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsr::{DataPoint, DivergenceGsr, SquaredErrorGsr};

    fn regression(d: usize, alpha: f64) -> ClmSpec {
        make_l_clm(Arc::new(SquaredErrorGsr::new(d)), CostRule::Lipschitz { lambda: 2.0 }, vec![0.0; d], alpha)
            .unwrap()
    }

    #[test]
    fn regression_cost_and_payout() {
        let spec = regression(1, 1.0);
        assert_eq!(spec.cost(&[0.0], &[1.0]), 2.0);
        let x = Outcome::Batch(vec![DataPoint { x: vec![1.0], y: 1.0 }]);
        assert_eq!(spec.payout(&[0.0], &[1.0], &x), 2.5);
        assert_eq!(spec.profit(&[0.0], &[1.0], &x), 0.5);
        assert_eq!(spec.cost(&[0.3], &[0.3]), 0.0);
        assert_eq!(spec.payout(&[0.3], &[0.3], &x), 0.0);
    }

    #[test]
    fn compression_log_ratio_rule() {
        let spec =
            make_l_clm(Arc::new(DivergenceGsr::compression(2)), CostRule::LogRatio, vec![0.5, 0.5], 1.0).unwrap();
        let (q, q_new) = ([0.5, 0.5], [0.75, 0.25]);
        assert!((spec.cost(&q, &q_new) - 2f64.ln()).abs() < 1e-15);
        // L-incentivized payouts: ln 3 when the up-weighted symbol occurs, 0 otherwise.
        assert!((spec.payout(&q, &q_new, &Outcome::Index(0)) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(spec.payout(&q, &q_new, &Outcome::Index(1)), 0.0);
        assert!(spec.cost(&q, &[1.0, 0.0]).is_infinite());
    }

    #[test]
    fn escrow_violation_is_reported_with_witness() {
        let err = make_l_clm(Arc::new(SquaredErrorGsr::new(1)), CostRule::Lipschitz { lambda: 0.1 }, vec![0.0], 1.0)
            .unwrap_err();
        assert!(matches!(err, MechanismError::EscrowViolation { payout, .. } if payout < 0.0));
    }

    #[test]
    fn worst_case_gap_rule_is_escrowed() {
        let spec =
            make_l_clm(Arc::new(SquaredErrorGsr::new(2)), CostRule::WorstCaseGap, vec![0.0, 0.0], 1.0).unwrap();
        let w_new = [0.6, -0.3];
        for x in spec.audit_outcomes() {
            assert!(spec.payout(&[0.0, 0.0], &w_new, &x) >= -CURRENCY_TOL);
        }
    }

    #[test]
    fn regression_worst_case_and_rescale() {
        for alpha in [1.0, 2.0] {
            let wcl = worst_case_loss(&regression(1, alpha));
            assert!((wcl - alpha / 2.0).abs() < 1e-9, "{wcl}");
        }
        let rescaled = rescale_to_budget(&regression(1, 1.0), 10.0).unwrap();
        assert!((rescaled.alpha() - 20.0).abs() < 1e-9);
        assert!((worst_case_loss(&rescaled) - 10.0).abs() < 1e-5);
    }

    #[test]
    fn constant_loss_has_zero_worst_case_and_cannot_rescale() {
        let spec = make_l_clm(Arc::new(SquaredErrorGsr::new(1)), CostRule::Lipschitz { lambda: 2.0 }, vec![0.0], 1.0)
            .unwrap();
        let flat = make_l_clm(
            Arc::new(DivergenceGsr::squared_distance(1, 0.0, 0.0, FeasibleSet::cube(1, 0.0, 0.0), 2.0)),
            CostRule::Lipschitz { lambda: 0.0 },
            vec![0.0],
            1.0,
        )
        .unwrap();
        assert_eq!(worst_case_loss(&flat), 0.0);
        assert!(matches!(rescale_to_budget(&flat, 1.0), Err(MechanismError::Rescale(_))));
        assert!(rescale_to_budget(&spec, 0.0).is_err());
    }

    #[test]
    fn compression_worst_case_with_floor() {
        let floor = 1e-6;
        let spec = make_l_clm(
            Arc::new(DivergenceGsr::compression_with_floor(2, floor)),
            CostRule::LogRatio,
            vec![0.5, 0.5],
            1.0,
        )
        .unwrap();
        let expected = 2f64.ln() + (1.0 - floor).ln();
        assert!((worst_case_loss(&spec) - expected).abs() < 1e-9);
        let rescaled = rescale_to_budget(&spec, 1.0).unwrap();
        assert!((rescaled.alpha() - 1.0 / expected).abs() < 1e-9);
    }

    #[test]
    fn budget_sets_bound_cost() {
        let spec = regression(2, 1.0);
        let set = budget_set(&spec, &[0.0, 0.0], 0.5).unwrap();
        let p = set.project(&[1.0, 1.0]);
        assert!(spec.cost(&[0.0, 0.0], &p) <= 0.5 + 1e-9);

        let comp =
            make_l_clm(Arc::new(DivergenceGsr::compression(3)), CostRule::LogRatio, vec![1.0 / 3.0; 3], 1.0).unwrap();
        let set = budget_set(&comp, &[1.0 / 3.0; 3], 0.2).unwrap();
        let p = set.project(&[1.0, 0.0, 0.0]);
        assert!(comp.cost(&[1.0 / 3.0; 3], &p) <= 0.2 + 1e-9);
    }
}
