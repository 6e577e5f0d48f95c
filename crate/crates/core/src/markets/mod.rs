//! Ready-to-run markets: stream compression, linear regression, direct label
//! betting, and an LMSR prediction market.
//!
//! Each market can describe itself as [`MarketParams`], which is what a ledger
//! header stores, and [`spec_from_header`] rebuilds the mechanism from a
//! header when a ledger is replayed.

mod compression;
mod label;
mod regression;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apmm::{Apmm, ApmmError, LmsrParams};
use crate::gsr::GsrError;
use crate::mechanism::{Clm, LedgerHeader, MechanismError};

pub use compression::{entropy, kl, CompressionMarket, DEFAULT_FLOOR};
pub use regression::read_batch;
pub use label::{LabelMarket, DEFAULT_INTERVAL};
pub use regression::RegressionMarket;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid market: {0}")]
    Invalid(String),
    #[error("{path}, line {line}: {message}")]
    Data { path: PathBuf, line: u64, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("ledger header does not describe this market: {0}")]
    Header(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Gsr(#[from] GsrError),
    #[error(transparent)]
    Apmm(#[from] ApmmError),
}

/// Everything needed to rebuild a market's mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketParams {
    Compression { n: usize, q0: Vec<f64>, alpha: f64, floor: f64 },
    Regression { d: usize, alpha: f64 },
    Label { m: usize, lo: f64, hi: f64, alpha: f64 },
    Lmsr { n: usize, eta: f64 },
}

impl MarketParams {
    pub fn kind(&self) -> &'static str {
        match self {
            MarketParams::Compression { .. } => "compression",
            MarketParams::Regression { .. } => "regression",
            MarketParams::Label { .. } => "label",
            MarketParams::Lmsr { .. } => "lmsr",
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Clm>, MarketError> {
        Ok(match self {
            MarketParams::Compression { n, q0, alpha, floor } => {
                let stream = Vec::new();
                let m = CompressionMarket::new(q0.clone(), *alpha, stream, *floor)?;
                if m.n() != *n {
                    return Err(MarketError::Invalid(format!("q0 has {} entries but n = {n}", m.n())));
                }
                Arc::new(m.clm()?)
            }
            MarketParams::Regression { d, alpha } => Arc::new(RegressionMarket::new(*d, *alpha, Vec::new())?.clm()?),
            MarketParams::Label { m, lo, hi, alpha } => Arc::new(LabelMarket::new(*m, *lo, *hi, *alpha)?.clm()?),
            MarketParams::Lmsr { n, eta } => Arc::new(Apmm::lmsr(LmsrParams { eta: *eta, n: *n })?.clm()),
        })
    }

    /// A ledger header for a run of this market.
    pub fn header(&self, spec: &dyn Clm, seed: u64) -> LedgerHeader {
        LedgerHeader::new(
            self.kind(),
            serde_json::to_value(self).expect("market parameters serialize"),
            spec.initial_hypothesis().to_vec(),
            spec.alpha(),
            seed,
        )
    }
}

/// Rebuilds the mechanism a ledger was written against and checks that the
/// header's digest, initial hypothesis, and scale agree with it.
pub fn spec_from_header(header: &LedgerHeader) -> Result<Arc<dyn Clm>, MarketError> {
    if !header.digest_matches() {
        return Err(MarketError::Header(format!(
            "digest {} does not match the header contents ({})",
            header.digest,
            header.compute_digest()
        )));
    }
    let params: MarketParams = serde_json::from_value(header.parameters.clone())
        .map_err(|e| MarketError::Header(format!("parameters: {e}")))?;
    if params.kind() != header.market_kind {
        return Err(MarketError::Header(format!(
            "market kind {} but parameters describe {}",
            header.market_kind,
            params.kind()
        )));
    }
    let spec = params.build()?;
    if spec.initial_hypothesis() != header.w0.as_slice() {
        return Err(MarketError::Header(format!(
            "w0 {:?} differs from the mechanism's {:?}",
            header.w0,
            spec.initial_hypothesis()
        )));
    }
    if spec.alpha().to_bits() != header.alpha.to_bits() {
        return Err(MarketError::Header(format!("alpha {} differs from the mechanism's {}", header.alpha, spec.alpha())));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_rebuild_their_mechanisms() {
        let cases = [
            MarketParams::Compression { n: 3, q0: vec![0.2, 0.3, 0.5], alpha: 0.5, floor: DEFAULT_FLOOR },
            MarketParams::Regression { d: 2, alpha: 2.0 },
            MarketParams::Label { m: 2, lo: 1.0, hi: 5.0, alpha: 1.0 },
            MarketParams::Lmsr { n: 3, eta: 2.0 },
        ];
        for params in cases {
            let spec = params.build().unwrap();
            let header = params.header(spec.as_ref(), 9);
            let rebuilt = spec_from_header(&header).unwrap();
            assert_eq!(rebuilt.initial_hypothesis(), spec.initial_hypothesis());
            let mut tampered = header.clone();
            tampered.alpha *= 2.0;
            assert!(matches!(spec_from_header(&tampered), Err(MarketError::Header(_))));
        }
    }

    #[test]
    fn unknown_parameter_keys_are_rejected() {
        let v = serde_json::json!({"kind": "regression", "d": 1, "alpha": 1.0, "extra": 3});
        assert!(serde_json::from_value::<MarketParams>(v).is_err());
    }
}
