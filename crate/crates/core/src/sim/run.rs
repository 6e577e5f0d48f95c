//! The simulation loop and its report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::agent::{Action, MarketHandle, Strategy, TraderAgent};
use super::config::{SettlementMode, SimConfig, StrategyKind};
use super::setup::MarketSetup;
use super::SimError;
use crate::markets::entropy;
use crate::mechanism::{Ledger, VoucherPool, Wallets, CURRENCY_TOL};
use crate::rng;

/// Tolerance of the accounting identities checked after every run.
pub const ACCOUNTING_TOL: f64 = 1e-9;

/// Step size of noise traders without an explicit `step_scale`.
pub const DEFAULT_STEP_SCALE: f64 = 0.1;

/// One line of a report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReportLine {
    Config { config: SimConfig, header_digest: String },
    Round(RoundRecord),
    Event(EventRecord),
    Agent(AgentSummary),
    Summary(Summary),
}

/// State after a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub hypothesis: Vec<f64>,
    /// Loss of the current hypothesis at the audit outcome.
    pub audit_loss: f64,
    pub bids: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Bid,
    Pass,
    Rejected,
    MiniPayout,
    Stopped,
    Settlement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub round: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_profit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payouts: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl EventRecord {
    fn new(round: u64, kind: EventKind) -> Self {
        Self { round, kind, agent: None, seq: None, cost: None, expected_profit: None, payouts: None, message: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: String,
    pub trades: u64,
    pub total_cost: f64,
    pub total_payout: f64,
    pub profit: f64,
    pub voucher_drawn: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub market_kind: String,
    pub rounds_run: u64,
    pub trades: u64,
    pub rejected_bids: u64,
    pub settlement: SettlementMode,
    pub initial_hypothesis: Vec<f64>,
    pub final_hypothesis: Vec<f64>,
    pub initial_audit_loss: f64,
    pub final_audit_loss: f64,
    /// `L(w_0; X) - L(w_T; X)` at the settlement outcome.
    pub mechanism_loss: f64,
    pub total_agent_profit: f64,
    /// Costs collected minus payouts made.
    pub mechanism_profit: f64,
    pub worst_case_loss: f64,
    pub voucher_liability: f64,
    pub voucher_drawn: f64,
    /// `m * C` for the configured voucher pool.
    pub voucher_bound: f64,
    /// For compression markets, the expected cost of encoding a character
    /// from the stream under the final distribution, mechanism payments
    /// included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_expected_cost: Option<f64>,
    /// For compression markets, the entropy of the stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_entropy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<ReportLine>,
}

impl Report {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&serde_json::to_string(line).expect("report lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, raw)| {
                serde_json::from_str(raw).map_err(|e| SimError::Report { line: i + 1, message: e.to_string() })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { lines })
    }

    pub fn summary(&self) -> Option<&Summary> {
        self.lines.iter().find_map(|l| match l {
            ReportLine::Summary(s) => Some(s),
            _ => None,
        })
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentSummary> {
        self.lines.iter().filter_map(|l| match l {
            ReportLine::Agent(a) => Some(a),
            _ => None,
        })
    }

    pub fn rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        self.lines.iter().filter_map(|l| match l {
            ReportLine::Round(r) => Some(r),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.lines.iter().filter_map(|l| match l {
            ReportLine::Event(e) => Some(e),
            _ => None,
        })
    }
}

/// The settled ledger and report of a run.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub ledger: Ledger,
    pub report: Report,
}

/// Runs the configured market for its rounds, settles it, checks the
/// accounting invariants, and writes the ledger and report to their
/// configured paths.
pub fn run_simulation(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let setup = MarketSetup::build(config)?;
    let clm = setup.clm();
    let seed = config.seed;
    let mut ledger = Ledger::open(setup.header(seed));
    let mut report = Report::default();
    report.lines.push(ReportLine::Config { config: config.echo(), header_digest: ledger.header().digest.clone() });

    let mut agents = Vec::with_capacity(config.agents.len());
    let mut funded = Wallets::new();
    let mut unlimited = Wallets::unlimited();
    for a in &config.agents {
        let belief = a.belief.as_ref().map(|b| setup.belief(b, &a.id, seed)).transpose()?;
        let strategy = match a.strategy {
            StrategyKind::Informed => Strategy::Informed { belief: belief.expect("validated") },
            StrategyKind::BudgetOptimizer => {
                Strategy::BudgetOptimizer { belief: belief.expect("validated"), budget: a.budget.expect("validated") }
            }
            StrategyKind::Noise => Strategy::Noise { step_scale: a.step_scale.unwrap_or(DEFAULT_STEP_SCALE) },
        };
        if let Some(cash) = a.cash {
            funded.fund(&a.id, cash);
        }
        agents.push(TraderAgent::new(a.id.clone(), strategy, seed));
    }
    let has_cash: BTreeSet<&str> = config.agents.iter().filter(|a| a.cash.is_some()).map(|a| a.id.as_str()).collect();
    let wallet_of = |id: &str| has_cash.contains(id);

    let mut pool = config.vouchers.as_ref().map(|v| VoucherPool::new(v.m, v.amount));
    if let Some(pool) = pool.as_mut() {
        for a in config.agents.iter().take(pool.m) {
            let wallets = if wallet_of(&a.id) { &mut funded } else { &mut unlimited };
            pool.issue_to(&a.id, wallets)?;
        }
    }

    let audit = &setup.audit_outcome;
    let w0 = clm.initial_hypothesis().to_vec();
    let initial_audit_loss = clm.loss(&w0, audit);
    let mut rejected = 0;
    let mut rounds_run = 0;
    let mut mini_payouts: BTreeMap<String, f64> = BTreeMap::new();
    let mut order: Vec<usize> = (0..agents.len()).collect();
    let mut scheduler_rng = rng::stream(seed, "scheduler");

    for round in 1..=config.rounds {
        rounds_run = round;
        ledger.set_clock(round);
        if config.scheduler == super::config::Scheduler::SeededShuffle {
            order.shuffle(&mut scheduler_rng);
        }
        let mut bids = 0;
        for &i in &order {
            let agent = &mut agents[i];
            let id = agent.id().to_string();
            let wallets = if wallet_of(&id) { &mut funded } else { &mut unlimited };
            let balance = wallets.balance(&id);
            let frozen = ledger.frozen().clone();
            let action = agent.act(&setup.handle, ledger.current(), &frozen, balance);
            let mut event = EventRecord::new(round, EventKind::Pass);
            event.agent = Some(id.clone());
            match action {
                Action::Pass { reason } => event.message = Some(reason),
                Action::Bid { to, expected_profit } => match ledger.post_bid(clm, &id, to, wallets) {
                    Ok(cost) => {
                        bids += 1;
                        event.kind = EventKind::Bid;
                        event.seq = ledger.trades().last().map(|t| t.seq);
                        event.cost = Some(cost);
                        event.expected_profit = expected_profit;
                    }
                    Err(e) => {
                        rejected += 1;
                        event.kind = EventKind::Rejected;
                        event.message = Some(e.to_string());
                    }
                },
            }
            report.lines.push(ReportLine::Event(event));
        }
        if let Some(label) = &setup.label {
            for (b, block) in label.schedule.iter().enumerate() {
                if block.after_round != round {
                    continue;
                }
                let payouts = label.market.mini_payout(&mut ledger, spec_of(&setup), b, &label.labels)?;
                for (who, v) in &payouts {
                    *mini_payouts.entry(who.clone()).or_default() += v;
                }
                let mut event = EventRecord::new(round, EventKind::MiniPayout);
                event.message = Some(format!("labels {:?}", block.indices));
                event.payouts = Some(payouts);
                report.lines.push(ReportLine::Event(event));
            }
        }
        report.lines.push(ReportLine::Round(RoundRecord {
            round,
            hypothesis: ledger.current().to_vec(),
            audit_loss: clm.loss(ledger.current(), audit),
            bids,
        }));
        if config.stop_when_idle && bids == 0 {
            let mut event = EventRecord::new(round, EventKind::Stopped);
            event.message = Some("no bids this round".into());
            report.lines.push(ReportLine::Event(event));
            break;
        }
    }

    let x = setup.settlement_outcome(config.settlement, seed);
    let settled = ledger.settle(clm, x.clone())?;
    let mut event = EventRecord::new(rounds_run, EventKind::Settlement);
    event.payouts = Some(settled.clone());
    report.lines.push(ReportLine::Event(event));

    let mut summaries = Vec::new();
    for a in &config.agents {
        let trades: Vec<_> = ledger.trades().filter(|t| t.participant == a.id).collect();
        let total_cost: f64 = trades.iter().map(|t| t.cost).sum();
        let total_payout = mini_payouts.get(&a.id).copied().unwrap_or(0.0) + settled.get(&a.id).copied().unwrap_or(0.0);
        let wallets = if wallet_of(&a.id) { &funded } else { &unlimited };
        summaries.push(AgentSummary {
            id: a.id.clone(),
            trades: trades.len() as u64,
            total_cost,
            total_payout,
            profit: total_payout - total_cost,
            voucher_drawn: wallets.account(&a.id).map_or(0.0, |acct| acct.voucher_drawn),
        });
    }

    let w_t = ledger.current().to_vec();
    let mechanism_loss = clm.loss(&w0, &x) - clm.loss(&w_t, &x);
    let total_agent_profit: f64 = summaries.iter().map(|s| s.profit).sum();
    let total_cost: f64 = summaries.iter().map(|s| s.total_cost).sum();
    let total_payout: f64 = summaries.iter().map(|s| s.total_payout).sum();
    let voucher_drawn: f64 = summaries.iter().map(|s| s.voucher_drawn).sum();
    let (voucher_liability, voucher_bound) =
        pool.as_ref().map_or((0.0, 0.0), |p| (p.liability(), p.added_operational_cost()));
    let (total_expected_cost, stream_entropy) = match &setup.compression {
        Some(m) => {
            let p = m.empirical_distribution()?;
            (Some(m.total_expected_cost(&w_t, &setup.truth)?), Some(entropy(&p)))
        }
        None => (None, None),
    };
    let summary = Summary {
        market_kind: setup.params.kind().to_string(),
        rounds_run,
        trades: ledger.trades().count() as u64,
        rejected_bids: rejected,
        settlement: config.settlement,
        initial_hypothesis: w0,
        final_audit_loss: clm.loss(&w_t, audit),
        final_hypothesis: w_t,
        initial_audit_loss,
        mechanism_loss,
        total_agent_profit,
        mechanism_profit: total_cost - total_payout,
        worst_case_loss: setup.worst_case_loss()?,
        voucher_liability,
        voucher_drawn,
        voucher_bound,
        total_expected_cost,
        stream_entropy,
    };

    check_invariants(&ledger, &setup, &x, &summary, &funded, &mini_payouts)?;

    report.lines.extend(summaries.into_iter().map(ReportLine::Agent));
    report.lines.push(ReportLine::Summary(summary));

    if let Some(path) = &config.ledger_path {
        write(path, &ledger.to_jsonl())?;
    }
    if let Some(path) = &config.report_path {
        write(path, &report.to_jsonl())?;
    }
    Ok(SimOutput { ledger, report })
}

fn spec_of(setup: &MarketSetup) -> &crate::mechanism::ClmSpec {
    match &setup.handle {
        super::agent::MarketHandle::Learning(spec) => spec,
        super::agent::MarketHandle::Shares(_) => unreachable!("label markets are L-incentivized"),
    }
}

fn invariant(what: &str, witness: String) -> SimError {
    SimError::Invariant { what: what.to_string(), witness }
}

fn check_invariants(
    ledger: &Ledger,
    setup: &MarketSetup,
    x: &crate::gsr::Outcome,
    summary: &Summary,
    funded: &Wallets,
    mini_payouts: &BTreeMap<String, f64>,
) -> Result<(), SimError> {
    let gap = summary.total_agent_profit - summary.mechanism_loss;
    if !(gap.abs() <= ACCOUNTING_TOL) {
        return Err(invariant(
            "agent profits do not telescope to the mechanism's loss",
            format!("sum of profits {} vs loss {}", summary.total_agent_profit, summary.mechanism_loss),
        ));
    }
    if !((summary.total_agent_profit + summary.mechanism_profit).abs() <= ACCOUNTING_TOL) {
        return Err(invariant(
            "accounts do not balance",
            format!("agents {} + mechanism {}", summary.total_agent_profit, summary.mechanism_profit),
        ));
    }
    // Share bundles that sell an outcome pay a negative amount on it, so the
    // per-trade payout bound only holds for learning markets.
    if let MarketHandle::Learning(_) = setup.handle {
        let per_trade = ledger.trade_payouts(setup.clm(), x)?;
        if let Some((t, p)) = ledger.trades().zip(per_trade).find(|(_, p)| !(*p >= -CURRENCY_TOL)) {
            return Err(invariant("escrow", format!("trade {} pays {p}", t.seq)));
        }
    }
    if let Some((who, p)) = mini_payouts.iter().find(|(_, p)| !(**p >= -CURRENCY_TOL)) {
        return Err(invariant("escrow", format!("mini-payouts to {who} total {p}")));
    }
    if summary.voucher_drawn > summary.voucher_bound + CURRENCY_TOL {
        return Err(invariant(
            "voucher draw exceeds the pool",
            format!("drawn {} > {}", summary.voucher_drawn, summary.voucher_bound),
        ));
    }
    for (id, acct) in funded.accounts() {
        if acct.cash + acct.voucher < -CURRENCY_TOL {
            return Err(invariant("negative balance", format!("{id}: {acct:?}")));
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), SimError> {
    let io = |source| SimError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}
