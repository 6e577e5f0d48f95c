//! Re-executing a ledger against the mechanism named in its header.

use std::path::Path;

use serde::Serialize;

use super::SimError;
use crate::markets::spec_from_header;
use crate::mechanism::{Ledger, LedgerEntry, LedgerStatus, Wallets};

/// Where a ledger first disagrees with its recomputation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    /// The trade at fault, when the mismatch is in a trade.
    pub seq: Option<u64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayVerdict {
    pub trades: u64,
    pub mini_payouts: u64,
    pub settled: bool,
    pub mismatch: Option<Mismatch>,
}

impl ReplayVerdict {
    pub fn is_ok(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Reads and verifies a ledger file. See [`verify_ledger`].
pub fn replay_verify(path: &Path) -> Result<ReplayVerdict, SimError> {
    verify_ledger(&Ledger::read(path)?)
}

/// Rebuilds the mechanism from the header and recomputes every trade's chain
/// link and cost, every mini-payout, and the settlement payouts, comparing
/// them bit for bit with the recorded values.
///
/// A header whose digest or parameters do not describe a mechanism is an
/// error; any recorded value that disagrees with its recomputation is
/// reported in the verdict.
pub fn verify_ledger(ledger: &Ledger) -> Result<ReplayVerdict, SimError> {
    let spec = spec_from_header(ledger.header())?;
    let mut fresh = Ledger::open(ledger.header().clone());
    let mut wallets = Wallets::unlimited();
    let mut verdict = ReplayVerdict { trades: 0, mini_payouts: 0, settled: false, mismatch: None };
    let fail = |seq: Option<u64>, message: String| Mismatch { seq, message };
    let mut last_time = 0;
    for entry in ledger.entries() {
        match entry {
            LedgerEntry::Trade(t) => {
                if !same(&t.from, fresh.current()) {
                    verdict.mismatch = Some(fail(
                        Some(t.seq),
                        format!("starts from {:?} but the hypothesis was {:?}", t.from, fresh.current()),
                    ));
                    return Ok(verdict);
                }
                if t.timestamp < last_time {
                    verdict.mismatch = Some(fail(Some(t.seq), format!("timestamp {} goes backwards", t.timestamp)));
                    return Ok(verdict);
                }
                last_time = t.timestamp;
                fresh.set_clock(t.timestamp);
                match fresh.post_bid(spec.as_ref(), &t.participant, t.to.clone(), &mut wallets) {
                    Ok(cost) if cost.to_bits() == t.cost.to_bits() => verdict.trades += 1,
                    Ok(cost) => {
                        verdict.mismatch = Some(fail(Some(t.seq), format!("cost recorded as {} but is {cost}", t.cost)));
                        return Ok(verdict);
                    }
                    Err(e) => {
                        verdict.mismatch = Some(fail(Some(t.seq), e.to_string()));
                        return Ok(verdict);
                    }
                }
            }
            LedgerEntry::MiniPayout(m) => {
                let at = format!("mini-payout after {} trades", m.after_seq);
                if m.after_seq != verdict.trades {
                    verdict.mismatch = Some(fail(None, format!("{at} follows {} trades", verdict.trades)));
                    return Ok(verdict);
                }
                match fresh.mini_payout(spec.as_ref(), &m.block, &m.labels) {
                    Ok(p) if same_payouts(&p, &m.payouts) => verdict.mini_payouts += 1,
                    Ok(p) => {
                        verdict.mismatch = Some(fail(None, format!("{at}: recorded {:?}, recomputed {p:?}", m.payouts)));
                        return Ok(verdict);
                    }
                    Err(e) => {
                        verdict.mismatch = Some(fail(None, format!("{at}: {e}")));
                        return Ok(verdict);
                    }
                }
            }
        }
    }
    if let LedgerStatus::Settled(s) = ledger.status() {
        match fresh.settle(spec.as_ref(), s.outcome.clone()) {
            Ok(p) if same_payouts(&p, &s.payouts) => verdict.settled = true,
            Ok(p) => {
                verdict.mismatch = Some(fail(None, format!("settlement: recorded {:?}, recomputed {p:?}", s.payouts)));
            }
            Err(e) => verdict.mismatch = Some(fail(None, format!("settlement: {e}"))),
        }
    }
    Ok(verdict)
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_payouts(a: &std::collections::BTreeMap<String, f64>, b: &std::collections::BTreeMap<String, f64>) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.to_bits() == vb.to_bits())
}
