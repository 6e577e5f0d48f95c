//! Command-line front end: run simulations, settle and verify ledgers, and
//! preview bids.
//!
//! Every subcommand prints one JSON object on stdout. Exit status is 0 on
//! success, 1 when an invariant or a verification fails, and 2 for usage,
//! parse, and I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crowdlearn::gsr::Outcome;
use crowdlearn::markets::{spec_from_header, MarketError};
use crowdlearn::mechanism::{Ledger, MechanismError, CURRENCY_TOL};
use crowdlearn::sim::{run_simulation, verify_ledger, MarketSetup, SimConfig, SimError};

#[derive(Debug, Parser)]
#[command(name = "crowdlearn", version, about = "Crowdsourced learning mechanisms and prediction markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation and write its ledger and report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Settle an open ledger against an outcome.
    Settle {
        #[arg(long)]
        ledger: PathBuf,
        /// An outcome index such as `2`, or a JSON outcome such as
        /// `{"labels":[4.0,2.0]}`.
        #[arg(long)]
        outcome: String,
        /// Where to write the settled ledger. Defaults to `--ledger`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute every value in a ledger and report the first mismatch.
    Replay {
        #[arg(long)]
        ledger: PathBuf,
    },
    /// The most the configured market can pay out in total.
    WorstCase {
        #[arg(long)]
        config: PathBuf,
    },
    /// Price a bid and list its payout range over the audit outcomes.
    Quote {
        #[arg(long)]
        config: PathBuf,
        /// The proposed hypothesis, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        bid: String,
        /// Quote from this ledger's current hypothesis instead of the
        /// market's initial one.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn verification(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::Invariant { .. }
            | SimError::Market(MarketError::Header(_))
            | SimError::Mechanism(MechanismError::EscrowViolation { .. }) => 1,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        SimError::from(e).into()
    }
}

impl From<MechanismError> for Failure {
    fn from(e: MechanismError) -> Self {
        SimError::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Settle { ledger, outcome, out } => settle(&ledger, &outcome, out.as_deref()),
        Command::Replay { ledger } => replay(&ledger),
        Command::WorstCase { config } => worst_case(&config),
        Command::Quote { config, bid, ledger } => quote(&config, &bid, ledger.as_deref()),
    };
    match result {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(config: &Path) -> Result<serde_json::Value, Failure> {
    let config = SimConfig::load(config)?;
    let out = run_simulation(&config)?;
    let summary = out.report.summary().ok_or_else(|| Failure::verification("the report has no summary"))?;
    Ok(json!({
        "summary": summary,
        "ledger_path": config.ledger_path,
        "report_path": config.report_path,
    }))
}

fn settle(path: &Path, outcome: &str, out: Option<&Path>) -> Result<serde_json::Value, Failure> {
    let mut ledger = Ledger::read(path)?;
    let verdict = verify_ledger(&ledger)?;
    if let Some(m) = verdict.mismatch {
        return Err(Failure::verification(format!("refusing to settle a ledger that fails replay: {}", m.message)));
    }
    let x = parse_outcome(outcome)?;
    let spec = spec_from_header(ledger.header())?;
    let payouts = ledger.settle(spec.as_ref(), x.clone())?;
    let target = out.unwrap_or(path);
    ledger.write(target)?;
    Ok(json!({ "outcome": x, "payouts": payouts, "ledger_path": target }))
}

fn replay(path: &Path) -> Result<serde_json::Value, Failure> {
    let verdict = verify_ledger(&Ledger::read(path)?)?;
    match &verdict.mismatch {
        None => Ok(json!(verdict)),
        Some(m) => {
            let at = m.seq.map_or_else(String::new, |s| format!(" at seq {s}"));
            Err(Failure::verification(format!(
                "mismatch{at}: {}\n{}",
                m.message,
                serde_json::to_string(&verdict).expect("verdicts serialize")
            )))
        }
    }
}

fn worst_case(config: &Path) -> Result<serde_json::Value, Failure> {
    let config = SimConfig::load(config)?;
    let setup = MarketSetup::build(&config)?;
    Ok(json!({
        "market": setup.params,
        "alpha": setup.clm().alpha(),
        "worst_case_loss": setup.worst_case_loss()?,
    }))
}

fn quote(config: &Path, bid: &str, ledger: Option<&Path>) -> Result<serde_json::Value, Failure> {
    let config = SimConfig::load(config)?;
    let setup = MarketSetup::build(&config)?;
    let clm = setup.clm();
    let w_new = parse_bid(bid)?;
    let (w, frozen) = match ledger {
        Some(path) => {
            let l = Ledger::read(path)?;
            if l.header().digest != setup.header(config.seed).digest {
                return Err(Failure::usage(format!("{} was not written for this config", path.display())));
            }
            (l.current().to_vec(), l.frozen().clone())
        }
        None => (clm.initial_hypothesis().to_vec(), Default::default()),
    };
    if w_new.len() != w.len() {
        return Err(Failure::usage(format!("the bid has {} coordinates, the market has {}", w_new.len(), w.len())));
    }
    if !clm.hypothesis_space().contains(&w_new) {
        return Err(Failure::usage(format!("the bid {w_new:?} is outside the hypothesis space")));
    }
    if let Some(k) = frozen.iter().find(|&&k| w_new[k].to_bits() != w[k].to_bits()) {
        return Err(Failure::usage(format!("coordinate {k} is frozen by a mini-payout")));
    }
    let cost = clm.cost(&w, &w_new);
    let payouts: Vec<f64> = clm.audit_outcomes().iter().map(|x| clm.payout(&w, &w_new, x)).collect();
    let min = payouts.iter().copied().fold(f64::INFINITY, f64::min);
    let max = payouts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "from": w,
        "to": w_new,
        "cost": cost,
        "min_payout": min,
        "max_payout": max,
        "audit_outcomes": payouts.len(),
        "escrow_ok": min >= -CURRENCY_TOL,
    }))
}

fn parse_bid(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::usage(format!("bid coordinate {s:?} is not a finite number")))
        })
        .collect()
}

fn parse_outcome(text: &str) -> Result<Outcome, Failure> {
    if let Ok(i) = text.trim().parse::<usize>() {
        return Ok(Outcome::Index(i));
    }
    serde_json::from_str(text).map_err(|e| Failure::usage(format!("outcome {text:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcomes_parse_as_indices_or_json() {
        assert_eq!(parse_outcome("2").unwrap(), Outcome::Index(2));
        assert_eq!(parse_outcome(r#"{"labels":[1.0,2.5]}"#).unwrap(), Outcome::Labels(vec![1.0, 2.5]));
        assert_eq!(parse_outcome("-1").unwrap_err().code, 2);
    }

    #[test]
    fn bids_reject_non_numbers() {
        assert_eq!(parse_bid("0.25, 0.75").unwrap(), vec![0.25, 0.75]);
        assert_eq!(parse_bid("0.5,x").unwrap_err().code, 2);
        assert_eq!(parse_bid("NaN").unwrap_err().code, 2);
    }

    #[test]
    fn invariant_failures_exit_with_one() {
        let e = SimError::Invariant { what: "escrow".into(), witness: "trade 0".into() };
        assert_eq!(Failure::from(e).code, 1);
        assert_eq!(Failure::from(SimError::Config("bad".into())).code, 2);
    }
}
