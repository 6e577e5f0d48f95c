//! Seeded agent simulations, reports, and ledger replay.
//!
//! A [`SimConfig`] names a market, a list of agents, and a number of rounds.
//! [`run_simulation`] lets every agent act once per round, pays scheduled
//! mini-payouts, settles the ledger, checks the accounting identities, and
//! writes the ledger and a line-delimited JSON report. All randomness comes
//! from named streams of the config's seed, so a config always reproduces
//! the same bytes. [`replay_verify`] re-executes a written ledger.

mod agent;
mod config;
mod replay;
mod run;
mod setup;

use std::path::PathBuf;

use thiserror::Error;

use crate::apmm::ApmmError;
use crate::gsr::GsrError;
use crate::markets::MarketError;
use crate::mechanism::MechanismError;

pub use agent::{shrink_to_budget, Action, MarketHandle, Strategy, TraderAgent, MIN_EXPECTED_GAIN};
pub use config::{
    AgentConfig, BatchData, BeliefConfig, MarketConfig, ScheduleBlock, Scheduler, SettlementMode, SimConfig,
    StrategyKind, StreamData, VoucherConfig,
};
pub use replay::{replay_verify, verify_ledger, Mismatch, ReplayVerdict};
pub use run::{
    run_simulation, AgentSummary, EventKind, EventRecord, Report, ReportLine, RoundRecord, SimOutput, Summary,
    ACCOUNTING_TOL, DEFAULT_STEP_SCALE,
};
pub use setup::{LabelSetup, MarketSetup};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
    #[error("invariant violated: {what} ({witness})")]
    Invariant { what: String, witness: String },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Apmm(#[from] ApmmError),
    #[error(transparent)]
    Gsr(#[from] GsrError),
}
