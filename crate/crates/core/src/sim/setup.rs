//! Turning a [`MarketConfig`] into a mechanism, its data, and beliefs.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand_distr::StandardNormal;

use super::agent::MarketHandle;
use super::config::{BatchData, BeliefConfig, MarketConfig, ScheduleBlock, SettlementMode, SimConfig, StreamData};
use super::SimError;
use crate::apmm::{Apmm, LmsrParams};
use crate::convex::FeasibleSet;
use crate::gsr::{Belief, DataPoint, Outcome};
use crate::markets::{read_batch, CompressionMarket, LabelMarket, MarketParams, RegressionMarket, DEFAULT_FLOOR};
use crate::mechanism::{rescale_to_budget, worst_case_loss, Clm, LedgerHeader};
use crate::rng;

/// A market ready to trade, with the data it settles against.
#[derive(Clone, Debug)]
pub struct MarketSetup {
    pub handle: MarketHandle,
    pub params: MarketParams,
    /// The individual data items: stream characters, single test points, or
    /// the one label vector.
    pub atoms: Vec<Outcome>,
    /// The outcome paid under empirical settlement. The loss trajectory is
    /// measured against it.
    pub audit_outcome: Outcome,
    /// Belief matching the audit outcome.
    pub truth: Belief,
    pub compression: Option<CompressionMarket>,
    pub label: Option<LabelSetup>,
}

#[derive(Clone, Debug)]
pub struct LabelSetup {
    pub market: LabelMarket,
    pub labels: Vec<f64>,
    pub schedule: Vec<ScheduleBlock>,
}

impl MarketSetup {
    pub fn build(config: &SimConfig) -> Result<Self, SimError> {
        let seed = config.seed;
        match &config.market {
            MarketConfig::Compression { n, q0, alpha, floor, data, budget } => {
                let stream = stream_data(data, *n, seed)?;
                let q0 = q0.clone().unwrap_or_else(|| vec![1.0 / *n as f64; *n]);
                let mut market = CompressionMarket::new(q0, *alpha, stream, floor.unwrap_or(DEFAULT_FLOOR))?;
                if let Some(b) = budget {
                    let spec = rescale_to_budget(&market.clm()?, *b)?;
                    market = market.with_alpha(spec.alpha());
                }
                let spec = market.clm()?;
                let atoms: Vec<Outcome> = market.stream().iter().map(|&c| Outcome::Index(c)).collect();
                Ok(Self {
                    handle: MarketHandle::Learning(spec),
                    params: market.params(),
                    audit_outcome: market.empirical_outcome()?,
                    truth: market.empirical_belief()?,
                    atoms,
                    compression: Some(market),
                    label: None,
                })
            }
            MarketConfig::Regression { d, alpha, data, budget } => {
                let batch = batch_data(data, *d, seed)?;
                let mut market = RegressionMarket::new(*d, *alpha, batch)?;
                if let Some(b) = budget {
                    let spec = rescale_to_budget(&market.clm()?, *b)?;
                    market = market.with_alpha(spec.alpha());
                }
                let outcome = market.outcome()?;
                Ok(Self {
                    handle: MarketHandle::Learning(market.clm()?),
                    params: market.params(),
                    atoms: market.test_batch().iter().map(|p| Outcome::Batch(vec![p.clone()])).collect(),
                    truth: Belief::point(outcome.clone()),
                    audit_outcome: outcome,
                    compression: None,
                    label: None,
                })
            }
            MarketConfig::Label { m, lo, hi, alpha, labels, schedule, budget } => {
                let mut market = LabelMarket::new(*m, *lo, *hi, *alpha)?
                    .with_schedule(schedule.iter().map(|b| b.indices.clone()).collect())?;
                if let Some(b) = budget {
                    let spec = rescale_to_budget(&market.clm()?, *b)?;
                    market = market.with_alpha(spec.alpha());
                }
                let outcome = Outcome::Labels(labels.clone());
                market.clm()?.outcome_space().validate(&outcome)?;
                Ok(Self {
                    handle: MarketHandle::Learning(market.clm()?),
                    params: market.params(),
                    atoms: vec![outcome.clone()],
                    truth: Belief::point(outcome.clone()),
                    audit_outcome: outcome,
                    compression: None,
                    label: Some(LabelSetup { market, labels: labels.clone(), schedule: schedule.clone() }),
                })
            }
            MarketConfig::Lmsr { n, eta, data, budget } => {
                let stream = stream_data(data, *n, seed)?;
                if stream.is_empty() {
                    return Err(SimError::Config("the stream is empty".into()));
                }
                let eta = match budget {
                    Some(b) if *b > 0.0 && b.is_finite() => (*n as f64).ln() / b,
                    Some(b) => return Err(SimError::Config(format!("budget {b} must be positive"))),
                    None => *eta,
                };
                let apmm = Apmm::lmsr(LmsrParams { eta, n: *n })?;
                let atoms: Vec<Outcome> = stream.iter().map(|&c| Outcome::Index(c)).collect();
                let mut p = vec![0.0; *n];
                stream.iter().for_each(|&c| p[c] += 1.0 / stream.len() as f64);
                Ok(Self {
                    handle: MarketHandle::Shares(apmm.clm()),
                    params: MarketParams::Lmsr { n: *n, eta },
                    audit_outcome: Outcome::Sample(atoms.clone()),
                    truth: Belief::normalized((0..*n).map(Outcome::Index).collect(), p)?,
                    atoms,
                    compression: None,
                    label: None,
                })
            }
        }
    }

    pub fn clm(&self) -> &dyn Clm {
        self.handle.clm()
    }

    pub fn header(&self, seed: u64) -> LedgerHeader {
        self.params.header(self.clm(), seed)
    }

    /// The outcome the ledger is settled against.
    pub fn settlement_outcome(&self, mode: SettlementMode, seed: u64) -> Outcome {
        match mode {
            SettlementMode::Empirical => self.audit_outcome.clone(),
            SettlementMode::Sample => {
                let mut rng = rng::stream(seed, "settlement-sample");
                let i = rand::Rng::random_range(&mut rng, 0..self.atoms.len());
                self.atoms[i].clone()
            }
        }
    }

    /// The belief an agent starts with.
    pub fn belief(&self, config: &BeliefConfig, agent: &str, seed: u64) -> Result<Belief, SimError> {
        match config {
            BeliefConfig::Truth => Ok(self.truth.clone()),
            BeliefConfig::Weights { p } => {
                let n = self.clm().outcome_space().enumerate().map_or(0, |o| o.len());
                if p.len() != n {
                    return Err(SimError::Config(format!("agent {agent}: {} weights for {n} outcomes", p.len())));
                }
                Ok(Belief::categorical(p)?)
            }
            BeliefConfig::Labels { values } => {
                let x = Outcome::Labels(values.clone());
                self.clm().outcome_space().validate(&x)?;
                Ok(Belief::point(x))
            }
            BeliefConfig::Subsample { size } => {
                let mut rng = rng::stream(seed, &format!("belief:{agent}"));
                let k = (*size).min(self.atoms.len());
                let chosen: Vec<Outcome> =
                    index::sample(&mut rng, self.atoms.len(), k).into_iter().map(|i| self.atoms[i].clone()).collect();
                match &self.audit_outcome {
                    Outcome::Batch(_) => {
                        let points = chosen
                            .into_iter()
                            .flat_map(|o| match o {
                                Outcome::Batch(p) => p,
                                _ => Vec::new(),
                            })
                            .collect();
                        Ok(Belief::point(Outcome::Batch(points)))
                    }
                    _ => Ok(Belief::empirical(chosen)?),
                }
            }
        }
    }

    /// The most the mechanism can lose, from its audit.
    pub fn worst_case_loss(&self) -> Result<f64, SimError> {
        match &self.handle {
            MarketHandle::Learning(spec) => Ok(worst_case_loss(spec)),
            MarketHandle::Shares(clm) => Ok(clm.worst_case_loss()?),
        }
    }
}

fn stream_data(data: &StreamData, n: usize, seed: u64) -> Result<Vec<usize>, SimError> {
    match data {
        StreamData::Inline { values } => Ok(values.clone()),
        StreamData::Synthetic { p, length } => {
            if p.len() != n {
                return Err(SimError::Config(format!("synthetic p has {} entries for {n} outcomes", p.len())));
            }
            Belief::categorical(p)?;
            let dist = WeightedIndex::new(p).map_err(|e| SimError::Config(format!("synthetic p: {e}")))?;
            let mut rng = rng::stream(seed, "market-data");
            Ok((0..*length).map(|_| dist.sample(&mut rng)).collect())
        }
    }
}

fn batch_data(data: &BatchData, d: usize, seed: u64) -> Result<Vec<DataPoint>, SimError> {
    match data {
        BatchData::Inline { points } => Ok(points.clone()),
        BatchData::Csv { path } => {
            let batch = read_batch(path)?;
            if batch[0].x.len() != d {
                return Err(SimError::Config(format!(
                    "{} has {} feature columns but d = {d}",
                    path.display(),
                    batch[0].x.len()
                )));
            }
            Ok(batch)
        }
        BatchData::Synthetic { points, noise, weights } => {
            let ball = FeasibleSet::l2_ball(d, 1.0);
            let mut rng = rng::stream(seed, "market-data");
            let w_star = match weights {
                Some(w) if w.len() == d && ball.contains(w) => w.clone(),
                Some(w) => return Err(SimError::Config(format!("synthetic weights {w:?} are not in the unit ball"))),
                None => ball.sample(&mut rng, 1.0),
            };
            Ok((0..*points)
                .map(|_| {
                    let x = ball.sample(&mut rng, 1.0);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let y = (crate::convex::dot(&w_star, &x) + noise * z).clamp(-1.0, 1.0);
                    DataPoint { x, y }
                })
                .collect())
        }
    }
}
