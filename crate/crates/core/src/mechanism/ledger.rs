//! The append-only trade ledger and its line-delimited JSON form.
//!
//! The file has one JSON object per line: a header, then trades and
//! mini-payouts in order, then an optional settlement. Numbers are written as
//! shortest round-trip decimals, so reloading reproduces every value exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Clm, MechanismError, Wallets};
use crate::gsr::Outcome;

/// Identifies the mechanism a ledger was written against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub market_kind: String,
    pub parameters: serde_json::Value,
    pub w0: Vec<f64>,
    pub alpha: f64,
    pub seed: u64,
    /// SHA-256 of the canonical encoding of the other fields.
    pub digest: String,
}

#[derive(Serialize)]
struct DigestBody<'a> {
    market_kind: &'a str,
    parameters: &'a serde_json::Value,
    w0: &'a [f64],
    alpha: f64,
    seed: u64,
}

impl LedgerHeader {
    pub fn new(
        market_kind: impl Into<String>,
        parameters: serde_json::Value,
        w0: Vec<f64>,
        alpha: f64,
        seed: u64,
    ) -> Self {
        let mut header = Self { market_kind: market_kind.into(), parameters, w0, alpha, seed, digest: String::new() };
        header.digest = header.compute_digest();
        header
    }

    pub fn compute_digest(&self) -> String {
        let body = DigestBody {
            market_kind: &self.market_kind,
            parameters: &self.parameters,
            w0: &self.w0,
            alpha: self.alpha,
            seed: self.seed,
        };
        let bytes = serde_json::to_vec(&body).expect("header fields serialize");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn digest_matches(&self) -> bool {
        self.digest == self.compute_digest()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub seq: u64,
    pub participant: String,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub cost: f64,
    /// Logical time (the simulation round) at which the bid was placed.
    pub timestamp: u64,
}

/// A partial settlement of the coordinates in `block`, which are frozen
/// afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniPayoutRecord {
    /// Number of trades recorded when the payout was made.
    pub after_seq: u64,
    pub block: Vec<usize>,
    pub labels: Vec<f64>,
    pub payouts: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub outcome: Outcome,
    pub payouts: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LedgerEntry {
    Trade(TradeRecord),
    MiniPayout(MiniPayoutRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LedgerStatus {
    Open,
    Settled(Settlement),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(LedgerHeader),
    Trade(TradeRecord),
    MiniPayout(MiniPayoutRecord),
    Settlement(Settlement),
}

/// The transcript of one run of the protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    header: LedgerHeader,
    entries: Vec<LedgerEntry>,
    status: LedgerStatus,
    current: Vec<f64>,
    frozen: BTreeSet<usize>,
    next_seq: u64,
    clock: u64,
}

impl Ledger {
    pub fn open(header: LedgerHeader) -> Self {
        let current = header.w0.clone();
        Self {
            header,
            entries: Vec::new(),
            status: LedgerStatus::Open,
            current,
            frozen: BTreeSet::new(),
            next_seq: 0,
            clock: 0,
        }
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn trades(&self) -> impl Iterator<Item = &TradeRecord> {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::Trade(t) => Some(t),
            LedgerEntry::MiniPayout(_) => None,
        })
    }

    pub fn mini_payouts(&self) -> impl Iterator<Item = &MiniPayoutRecord> {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::MiniPayout(m) => Some(m),
            LedgerEntry::Trade(_) => None,
        })
    }

    pub fn status(&self) -> &LedgerStatus {
        &self.status
    }

    pub fn is_settled(&self) -> bool {
        matches!(self.status, LedgerStatus::Settled(_))
    }

    /// The currently published hypothesis.
    pub fn current(&self) -> &[f64] {
        &self.current
    }

    /// Coordinates already paid out by mini-payouts.
    pub fn frozen(&self) -> &BTreeSet<usize> {
        &self.frozen
    }

    /// Sets the logical time stamped on subsequent trades.
    pub fn set_clock(&mut self, t: u64) {
        self.clock = t;
    }

    /// Charges `participant` for moving the hypothesis to `w_new` and records
    /// the trade. Rejected bids leave the ledger and wallets untouched.
    pub fn post_bid(
        &mut self,
        spec: &dyn Clm,
        participant: &str,
        w_new: Vec<f64>,
        wallets: &mut Wallets,
    ) -> Result<f64, MechanismError> {
        if self.is_settled() {
            return Err(MechanismError::AlreadySettled);
        }
        let h = spec.hypothesis_space();
        if w_new.len() != h.dim() || !h.contains(&w_new) {
            return Err(MechanismError::Rejected(format!("{w_new:?} is outside the hypothesis space")));
        }
        if let Some(k) = self.frozen.iter().find(|&&k| w_new[k] != self.current[k]) {
            return Err(MechanismError::Rejected(format!("coordinate {k} is frozen")));
        }
        let cost = spec.cost(&self.current, &w_new);
        if !cost.is_finite() {
            return Err(MechanismError::Rejected(format!("cost of moving to {w_new:?} is {cost}")));
        }
        wallets.debit(participant, cost)?;
        let record = TradeRecord {
            seq: self.next_seq,
            participant: participant.to_string(),
            from: std::mem::replace(&mut self.current, w_new.clone()),
            to: w_new,
            cost,
            timestamp: self.clock,
        };
        self.next_seq += 1;
        self.entries.push(LedgerEntry::Trade(record));
        Ok(cost)
    }

    /// Pays every trade so far for its effect on the coordinates in `block`,
    /// whose labels are now revealed, and freezes them.
    pub fn mini_payout(
        &mut self,
        spec: &dyn Clm,
        block: &[usize],
        labels: &[f64],
    ) -> Result<BTreeMap<String, f64>, MechanismError> {
        if self.is_settled() {
            return Err(MechanismError::AlreadySettled);
        }
        if block.len() != labels.len() {
            return Err(MechanismError::Schedule(format!(
                "{} indices but {} labels",
                block.len(),
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &k in block {
            if k >= self.current.len() || !seen.insert(k) {
                return Err(MechanismError::Schedule(format!("invalid or repeated index {k}")));
            }
            if self.frozen.contains(&k) {
                return Err(MechanismError::Schedule(format!("index {k} was already paid out")));
            }
        }
        if block.is_empty() {
            return Ok(BTreeMap::new());
        }
        let payouts = self.block_payouts(spec, block, labels)?;
        self.frozen.extend(block.iter().copied());
        self.entries.push(LedgerEntry::MiniPayout(MiniPayoutRecord {
            after_seq: self.next_seq,
            block: block.to_vec(),
            labels: labels.to_vec(),
            payouts: payouts.clone(),
        }));
        Ok(payouts)
    }

    fn block_payouts(
        &self,
        spec: &dyn Clm,
        block: &[usize],
        labels: &[f64],
    ) -> Result<BTreeMap<String, f64>, MechanismError> {
        let mut payouts = BTreeMap::new();
        for t in self.trades() {
            let p = spec.block_payout(&t.from, &t.to, block, labels).ok_or_else(|| {
                MechanismError::Schedule("this mechanism's loss does not decompose over coordinates".into())
            })?;
            *payouts.entry(t.participant.clone()).or_insert(0.0) += p;
        }
        Ok(payouts)
    }

    /// Per-trade payouts at outcome `x`, restricted to coordinates not yet
    /// paid out by mini-payouts.
    pub fn trade_payouts(&self, spec: &dyn Clm, x: &Outcome) -> Result<Vec<f64>, MechanismError> {
        spec.outcome_space().validate(x)?;
        if self.frozen.is_empty() {
            return Ok(self.trades().map(|t| spec.payout(&t.from, &t.to, x)).collect());
        }
        let Outcome::Labels(y) = x else {
            return Err(MechanismError::Schedule("mini-payouts require a label outcome".into()));
        };
        let rest: Vec<usize> = (0..self.current.len()).filter(|k| !self.frozen.contains(k)).collect();
        let labels: Vec<f64> = rest.iter().map(|&k| y[k]).collect();
        self.trades()
            .map(|t| {
                spec.block_payout(&t.from, &t.to, &rest, &labels).ok_or_else(|| {
                    MechanismError::Schedule("this mechanism's loss does not decompose over coordinates".into())
                })
            })
            .collect()
    }

    /// Pays every trade at outcome `x` and closes the ledger.
    pub fn settle(&mut self, spec: &dyn Clm, x: Outcome) -> Result<BTreeMap<String, f64>, MechanismError> {
        if self.is_settled() {
            return Err(MechanismError::AlreadySettled);
        }
        let payouts = self.settlement_payouts(spec, &x)?;
        self.status = LedgerStatus::Settled(Settlement { outcome: x, payouts: payouts.clone() });
        Ok(payouts)
    }

    /// What [`settle`](Self::settle) would pay, summed per participant in
    /// record order.
    pub fn settlement_payouts(&self, spec: &dyn Clm, x: &Outcome) -> Result<BTreeMap<String, f64>, MechanismError> {
        let per_trade = self.trade_payouts(spec, x)?;
        let mut payouts = BTreeMap::new();
        for (t, p) in self.trades().zip(per_trade) {
            *payouts.entry(t.participant.clone()).or_insert(0.0) += p;
        }
        Ok(payouts)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("ledger lines serialize"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for e in &self.entries {
            match e {
                LedgerEntry::Trade(t) => push(&Line::Trade(t.clone())),
                LedgerEntry::MiniPayout(m) => push(&Line::MiniPayout(m.clone())),
            }
        }
        if let LedgerStatus::Settled(s) = &self.status {
            push(&Line::Settlement(s.clone()));
        }
        out
    }

    /// Parses a ledger, checking only its structure. Use
    /// [`crate::sim::replay_verify`] to check it against its mechanism.
    pub fn from_jsonl(text: &str) -> Result<Self, MechanismError> {
        let err = |line: usize, message: String| MechanismError::Parse { line, message };
        let mut ledger: Option<Ledger> = None;
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line: Line = serde_json::from_str(raw).map_err(|e| err(line_no, e.to_string()))?;
            let Some(l) = ledger.as_mut() else {
                match line {
                    Line::Header(h) => {
                        ledger = Some(Ledger::open(h));
                        continue;
                    }
                    _ => return Err(err(line_no, "first line must be the header".into())),
                }
            };
            if l.is_settled() {
                return Err(err(line_no, "record after settlement".into()));
            }
            match line {
                Line::Header(_) => return Err(err(line_no, "duplicate header".into())),
                Line::Trade(t) => {
                    if t.seq != l.next_seq {
                        return Err(err(line_no, format!("expected seq {}, found {}", l.next_seq, t.seq)));
                    }
                    l.next_seq += 1;
                    l.clock = t.timestamp;
                    l.current = t.to.clone();
                    l.entries.push(LedgerEntry::Trade(t));
                }
                Line::MiniPayout(m) => {
                    l.frozen.extend(m.block.iter().copied());
                    l.entries.push(LedgerEntry::MiniPayout(m));
                }
                Line::Settlement(s) => l.status = LedgerStatus::Settled(s),
            }
        }
        ledger.ok_or_else(|| err(1, "empty ledger".into()))
    }

    pub fn write(&self, path: &Path) -> Result<(), MechanismError> {
        fs::write(path, self.to_jsonl()).map_err(|source| MechanismError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, MechanismError> {
        let text =
            fs::read_to_string(path).map_err(|source| MechanismError::Io { path: path.to_path_buf(), source })?;
        Self::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gsr::{DataPoint, DivergenceGsr, SquaredErrorGsr};
    use crate::mechanism::{make_l_clm, ClmSpec, CostRule};

    fn regression() -> ClmSpec {
        make_l_clm(Arc::new(SquaredErrorGsr::new(1)), CostRule::Lipschitz { lambda: 2.0 }, vec![0.0], 1.0).unwrap()
    }

    fn header(spec: &ClmSpec) -> LedgerHeader {
        LedgerHeader::new("regression", serde_json::json!({"d": 1}), spec.initial_hypothesis().to_vec(), 1.0, 7)
    }

    #[test]
    fn bid_and_settle_regression() {
        let spec = regression();
        let mut ledger = Ledger::open(header(&spec));
        let mut wallets = Wallets::unlimited();
        assert_eq!(ledger.post_bid(&spec, "a", vec![1.0], &mut wallets).unwrap(), 2.0);
        assert_eq!(ledger.current(), &[1.0]);
        let x = Outcome::Batch(vec![DataPoint { x: vec![1.0], y: 1.0 }]);
        let payouts = ledger.settle(&spec, x.clone()).unwrap();
        assert_eq!(payouts["a"], 2.5);
        assert!(matches!(ledger.settle(&spec, x), Err(MechanismError::AlreadySettled)));
    }

    #[test]
    fn empty_ledger_settles_to_nothing() {
        let spec = regression();
        let mut ledger = Ledger::open(header(&spec));
        let x = Outcome::Batch(vec![DataPoint { x: vec![0.5], y: 0.0 }]);
        assert!(ledger.settle(&spec, x).unwrap().is_empty());
    }

    #[test]
    fn rejected_bids_leave_ledger_untouched() {
        let spec =
            make_l_clm(Arc::new(DivergenceGsr::compression(2)), CostRule::LogRatio, vec![0.5, 0.5], 1.0).unwrap();
        let h = LedgerHeader::new("compression", serde_json::json!({}), vec![0.5, 0.5], 1.0, 0);
        let mut ledger = Ledger::open(h);
        let before = ledger.clone();
        let mut wallets = Wallets::new();
        wallets.fund("poor", 0.1);
        assert!(ledger.post_bid(&spec, "x", vec![1.0, 0.0], &mut Wallets::unlimited()).is_err());
        assert!(ledger.post_bid(&spec, "x", vec![0.9, 0.9], &mut Wallets::unlimited()).is_err());
        assert!(ledger.post_bid(&spec, "poor", vec![0.75, 0.25], &mut wallets).is_err());
        assert_eq!(ledger, before);
        assert_eq!(wallets.account("poor").unwrap().cash, 0.1);
        assert_eq!(ledger.post_bid(&spec, "x", vec![0.5, 0.5], &mut Wallets::unlimited()).unwrap(), 0.0);
        assert_eq!(ledger.trades().count(), 1);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let spec = regression();
        let mut ledger = Ledger::open(header(&spec));
        let mut wallets = Wallets::unlimited();
        for (who, w) in [("a", 0.1), ("b", -0.7), ("a", 1.0 / 3.0)] {
            ledger.post_bid(&spec, who, vec![w], &mut wallets).unwrap();
        }
        let x = Outcome::Batch(vec![DataPoint { x: vec![0.3], y: -0.2 }]);
        ledger.settle(&spec, x).unwrap();
        let text = ledger.to_jsonl();
        let back = Ledger::from_jsonl(&text).unwrap();
        assert_eq!(back, ledger);
        assert_eq!(back.to_jsonl(), text);
        assert!(back.header().digest_matches());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let spec = regression();
        let mut ledger = Ledger::open(header(&spec));
        ledger.post_bid(&spec, "a", vec![0.5], &mut Wallets::unlimited()).unwrap();
        let text = ledger.to_jsonl();
        let truncated = &text[..text.len() - 10];
        match Ledger::from_jsonl(truncated) {
            Err(MechanismError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
