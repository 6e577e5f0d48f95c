//! Simulation configuration, read from TOML. Unknown keys are errors.
//!
//! ```toml
//! rounds = 3
//! seed = 7
//!
//! [market]
//! kind = "compression"
//! n = 2
//! alpha = 1.0
//! data = { source = "inline", values = [0, 1, 1, 1] }
//!
//! [[agents]]
//! id = "alice"
//! strategy = "informed"
//! belief = { kind = "truth" }
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::gsr::DataPoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub market: MarketConfig,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    /// Number of rounds. In each round every agent gets one turn.
    pub rounds: u64,
    pub seed: u64,
    #[serde(default)]
    pub settlement: SettlementMode,
    #[serde(default)]
    pub scheduler: Scheduler,
    /// End the run after the first round in which nobody bids.
    #[serde(default)]
    pub stop_when_idle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vouchers: Option<VoucherConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger_path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_lo() -> f64 {
    crate::markets::DEFAULT_INTERVAL.0
}

fn default_hi() -> f64 {
    crate::markets::DEFAULT_INTERVAL.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketConfig {
    Compression {
        n: usize,
        /// Initial distribution; uniform when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q0: Option<Vec<f64>>,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
        data: StreamData,
        /// Rescale `alpha` so the worst-case loss equals this amount.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<f64>,
    },
    Regression {
        d: usize,
        #[serde(default = "one")]
        alpha: f64,
        data: BatchData,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<f64>,
    },
    Label {
        m: usize,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
        #[serde(default = "one")]
        alpha: f64,
        /// The true labels, revealed block by block.
        labels: Vec<f64>,
        #[serde(default)]
        schedule: Vec<ScheduleBlock>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<f64>,
    },
    Lmsr {
        n: usize,
        #[serde(default = "one")]
        eta: f64,
        data: StreamData,
        /// Set `eta` so the worst-case loss `ln n / eta` equals this amount.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<f64>,
    },
}

impl MarketConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            MarketConfig::Compression { .. } => "compression",
            MarketConfig::Regression { .. } => "regression",
            MarketConfig::Label { .. } => "label",
            MarketConfig::Lmsr { .. } => "lmsr",
        }
    }
}

/// Observed characters of a finite-outcome market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamData {
    Inline { values: Vec<usize> },
    /// `length` characters drawn from `p` with the market-data stream.
    Synthetic { p: Vec<f64>, length: usize },
}

/// The regression test batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum BatchData {
    Inline { points: Vec<DataPoint> },
    /// A CSV file with a header row, feature columns, then the label. A
    /// relative path is resolved against the config file's directory.
    Csv { path: PathBuf },
    /// `points` examples with features uniform in the unit ball and labels
    /// `clamp(w*.x + noise * z, -1, 1)` for a hidden `w*` in the unit ball.
    Synthetic {
        points: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
}

/// Labels paid out after a given round. Rounds are numbered from one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub after_round: u64,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: String,
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<BeliefConfig>,
    /// Per-bid spending limit of a budget optimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    /// Standard deviation of a noise trader's steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_scale: Option<f64>,
    /// Starting cash. Agents without cash have unlimited funds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cash: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Informed,
    BudgetOptimizer,
    Noise,
}

/// What an agent believes about the outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeliefConfig {
    /// The settlement outcome itself (the empirical distribution for
    /// stream markets).
    Truth,
    /// A distribution over the outcomes of a finite market.
    Weights { p: Vec<f64> },
    /// A point belief about the labels of a label market.
    Labels { values: Vec<f64> },
    /// The empirical distribution of `size` data items drawn without
    /// replacement from the market's data with the agent's own stream.
    Subsample { size: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementMode {
    /// Pay against all of the data at once.
    #[default]
    Empirical,
    /// Pay against one item drawn uniformly from the data.
    Sample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Agents act in config order.
    #[default]
    RoundRobin,
    /// Agents act in an order shuffled each round by the scheduler stream.
    SeededShuffle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoucherConfig {
    /// Vouchers go to the first `m` agents in config order.
    pub m: usize,
    pub amount: f64,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let config: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io { path: path.to_path_buf(), source })?;
        let mut config: SimConfig = toml::from_str(&text)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut config.report_path, &mut config.ledger_path].into_iter().flatten() {
            resolve(p);
        }
        if let MarketConfig::Regression { data: BatchData::Csv { path }, .. } = &mut config.market {
            resolve(path);
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks everything that does not need the market's data.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if a.id.is_empty() || !ids.insert(a.id.as_str()) {
                return bad(format!("agent id {:?} is empty or repeated", a.id));
            }
            if let Some(cash) = a.cash {
                if !(cash >= 0.0 && cash.is_finite()) {
                    return bad(format!("agent {}: cash must be non-negative", a.id));
                }
            }
            match a.strategy {
                StrategyKind::Informed | StrategyKind::BudgetOptimizer if a.belief.is_none() => {
                    return bad(format!("agent {}: this strategy needs a belief", a.id));
                }
                StrategyKind::BudgetOptimizer if !a.budget.is_some_and(|b| b >= 0.0) => {
                    return bad(format!("agent {}: a budget optimizer needs a non-negative budget", a.id));
                }
                StrategyKind::Noise if a.step_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) => {
                    return bad(format!("agent {}: step_scale must be positive", a.id));
                }
                _ => {}
            }
            self.check_belief(a)?;
        }
        if let Some(v) = &self.vouchers {
            if !(v.amount >= 0.0 && v.amount.is_finite()) {
                return bad("voucher amount must be non-negative".into());
            }
        }
        if let MarketConfig::Label { m, schedule, .. } = &self.market {
            let mut seen = BTreeSet::new();
            for block in schedule {
                if block.after_round == 0 || block.after_round > self.rounds {
                    return bad(format!("schedule block after round {} is outside 1..={}", block.after_round, self.rounds));
                }
                for &k in &block.indices {
                    if k >= *m || !seen.insert(k) {
                        return bad(format!("schedule index {k} is out of range or repeated"));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_belief(&self, a: &AgentConfig) -> Result<(), SimError> {
        let Some(belief) = &a.belief else { return Ok(()) };
        let kind = self.market.kind();
        let fits = match belief {
            BeliefConfig::Truth => true,
            BeliefConfig::Weights { .. } => matches!(kind, "compression" | "lmsr"),
            BeliefConfig::Labels { .. } => kind == "label",
            BeliefConfig::Subsample { size } => *size > 0 && kind != "label",
        };
        if fits {
            Ok(())
        } else {
            Err(SimError::Config(format!("agent {}: belief {belief:?} does not fit a {kind} market", a.id)))
        }
    }

    /// The config with output paths removed, as echoed in reports.
    pub fn echo(&self) -> SimConfig {
        SimConfig { report_path: None, ledger_path: None, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
        rounds = 2
        seed = 1
        [market]
        kind = "compression"
        n = 2
        data = { source = "inline", values = [0, 1, 1, 1] }
        [[agents]]
        id = "a"
        strategy = "informed"
        belief = { kind = "truth" }
    "#;

    #[test]
    fn parses_with_defaults() {
        let c = SimConfig::from_toml_str(BASIC).unwrap();
        assert_eq!(c.settlement, SettlementMode::Empirical);
        assert_eq!(c.scheduler, Scheduler::RoundRobin);
        match c.market {
            MarketConfig::Compression { alpha, q0, .. } => assert_eq!((alpha, q0), (1.0, None)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        for extra in ["colour = 1\n", "[market.extra]\n", ""] {
            let text = format!("{extra}{BASIC}");
            let parsed = SimConfig::from_toml_str(&text);
            assert_eq!(parsed.is_ok(), extra.is_empty(), "{extra}");
        }
        let agent_typo = BASIC.replace("strategy = \"informed\"", "strategy = \"informed\"\nbudgte = 1.0");
        assert!(SimConfig::from_toml_str(&agent_typo).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(SimConfig::from_toml_str(&BASIC.replace("rounds = 2", "rounds = 0")).is_err());
        let no_belief = BASIC.replace("belief = { kind = \"truth\" }", "");
        assert!(SimConfig::from_toml_str(&no_belief).is_err());
        let labels = BASIC.replace("kind = \"truth\"", "kind = \"labels\", values = [1.0]");
        assert!(SimConfig::from_toml_str(&labels).is_err());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.toml");
        fs::write(&path, format!("report_path = \"out/report.jsonl\"\n{BASIC}")).unwrap();
        let c = SimConfig::load(&path).unwrap();
        assert_eq!(c.report_path.unwrap(), dir.path().join("out/report.jsonl"));
        assert!(c.ledger_path.is_none());
    }
}
