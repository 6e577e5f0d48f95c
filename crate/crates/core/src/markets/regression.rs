//! Linear regression on the unit ball.
//!
//! Hypotheses are weight vectors `w` with `|w|_2 <= 1`, the outcome is a test
//! batch of points with `|x|_2 <= 1` and `y` in `[-1, 1]`, and the loss is
//! `(alpha / 2n) sum_i (w.x_i - y_i)^2`. The loss is `2 alpha`-Lipschitz in
//! `w`, so charging `2 alpha |w' - w|_2` keeps every payout non-negative, and
//! the most the mechanism can lose from `w_0 = 0` is `alpha / 2`.

use std::path::Path;
use std::sync::Arc;

use super::{MarketError, MarketParams};
use crate::gsr::{check_point, DataPoint, Outcome, SquaredErrorGsr};
use crate::mechanism::{make_l_clm, ClmSpec, CostRule, LedgerHeader};

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionMarket {
    d: usize,
    alpha: f64,
    test_batch: Vec<DataPoint>,
}

impl RegressionMarket {
    pub fn new(d: usize, alpha: f64, test_batch: Vec<DataPoint>) -> Result<Self, MarketError> {
        if d == 0 {
            return Err(MarketError::Invalid("dimension must be positive".into()));
        }
        for (i, p) in test_batch.iter().enumerate() {
            check_point(p, d).map_err(|e| MarketError::Invalid(format!("test point {i}: {e}")))?;
        }
        Ok(Self { d, alpha, test_batch })
    }

    /// Reads the test batch from a CSV file with a header row, feature
    /// columns, and the label in the last column. The dimension is the
    /// number of columns minus one.
    pub fn from_csv(path: &Path, alpha: f64) -> Result<Self, MarketError> {
        let batch = read_batch(path)?;
        let d = batch.first().map_or(0, |p| p.x.len());
        Self::new(d, alpha, batch)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn test_batch(&self) -> &[DataPoint] {
        &self.test_batch
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn clm(&self) -> Result<ClmSpec, MarketError> {
        Ok(make_l_clm(
            Arc::new(SquaredErrorGsr::new(self.d)),
            CostRule::Lipschitz { lambda: 2.0 },
            vec![0.0; self.d],
            self.alpha,
        )?)
    }

    /// The test batch as an outcome.
    pub fn outcome(&self) -> Result<Outcome, MarketError> {
        if self.test_batch.is_empty() {
            return Err(MarketError::Invalid("the test batch is empty".into()));
        }
        Ok(Outcome::Batch(self.test_batch.clone()))
    }

    pub fn params(&self) -> MarketParams {
        MarketParams::Regression { d: self.d, alpha: self.alpha }
    }

    pub fn header(&self, seed: u64) -> LedgerHeader {
        LedgerHeader::new(
            "regression",
            serde_json::to_value(self.params()).expect("parameters serialize"),
            vec![0.0; self.d],
            self.alpha,
            seed,
        )
    }
}

/// Parses `x_1, ..., x_d, y` rows. Rows violating `|x|_2 <= 1` or
/// `|y| <= 1` are rejected with their line number.
pub fn read_batch(path: &Path) -> Result<Vec<DataPoint>, MarketError> {
    let data_err = |line: u64, message: String| MarketError::Data { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => MarketError::Io { path: path.to_path_buf(), source },
            other => data_err(1, format!("{other:?}")),
        })?;
    let columns = reader.headers().map_err(|e| data_err(1, e.to_string()))?.len();
    if columns < 2 {
        return Err(data_err(1, "need at least one feature column and a label column".into()));
    }
    let mut batch = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let values: Vec<f64> = record
            .iter()
            .map(|field| field.parse::<f64>().map_err(|e| data_err(line, format!("{field:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        let (y, x) = values.split_last().expect("at least two columns");
        let point = DataPoint { x: x.to_vec(), y: *y };
        check_point(&point, columns - 1).map_err(|e| data_err(line, e))?;
        batch.push(point);
    }
    if batch.is_empty() {
        return Err(data_err(1, "no data rows".into()));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{worst_case_loss, Clm};

    #[test]
    fn cost_and_profit_example() {
        let m = RegressionMarket::new(1, 1.0, vec![DataPoint { x: vec![1.0], y: 1.0 }]).unwrap();
        let spec = m.clm().unwrap();
        let x = m.outcome().unwrap();
        assert_eq!(spec.loss(&[0.0], &x), 0.5);
        assert_eq!(spec.loss(&[1.0], &x), 0.0);
        assert_eq!(spec.cost(&[0.0], &[1.0]), 2.0);
        assert_eq!(spec.profit(&[0.0], &[1.0], &x), 0.5);
        assert_eq!(spec.profit(&[0.4], &[0.4], &x), 0.0);
    }

    #[test]
    fn worst_case_scales_with_alpha() {
        let m = RegressionMarket::new(2, 2.0, Vec::new()).unwrap();
        let wcl = worst_case_loss(&m.clm().unwrap());
        assert!((wcl - 1.0).abs() < 1e-9, "{wcl}");
    }

    #[test]
    fn csv_rows_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "x1,x2,y\n0.6,0.8,1\n0,0.5,-0.25\n").unwrap();
        let m = RegressionMarket::from_csv(&good, 1.0).unwrap();
        assert_eq!(m.d(), 2);
        assert_eq!(m.test_batch()[1], DataPoint { x: vec![0.0, 0.5], y: -0.25 });

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "x1,x2,y\n0.6,0.8,1\n0.9,0.9,0\n").unwrap();
        match RegressionMarket::from_csv(&bad, 1.0) {
            Err(MarketError::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a data error, got {other:?}"),
        }
        let label = dir.path().join("label.csv");
        std::fs::write(&label, "x,y\n0.5,2\n").unwrap();
        assert!(matches!(RegressionMarket::from_csv(&label, 1.0), Err(MarketError::Data { line: 2, .. })));
    }
}
