//! Generalized scoring rules.
//!
//! A loss `L(w; X)` over a convex hypothesis space `H` is a generalized scoring
//! rule when the minimizers of `E_{X~P}[L(w; X)]` form a non-empty convex set
//! for every belief `P`. Divergence-based losses have the form
//!
//! ```text
//! L(w; X) = D_R(rho(X), psi(w)) + f(X)
//! ```
//!
//! and their expected loss is minimized by `psi^{-1}(E[rho(X)])`.

mod outcome;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::convex::{
    self, bregman_divergence, minimize, ConvexError, FeasibleSet, FnObjective, NegEntropy, PotentialRef,
    SolverError, SolverOptions, SquaredNorm,
};

pub use outcome::{check_point, Belief, DataPoint, Outcome, OutcomeSpace};

#[derive(Debug, Error)]
pub enum GsrError {
    #[error("hypothesis {w:?} is outside the hypothesis space")]
    Domain { w: Vec<f64> },
    #[error("mean payoff {mean:?} is not in the image of the hypothesis map")]
    InfeasibleMean { mean: Vec<f64> },
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),
    #[error("invalid construction: {0}")]
    Construction(String),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// A loss over hypotheses and outcomes.
///
/// `loss` is evaluated on atomic outcomes and on [`Outcome::Sample`] (as the
/// average over its members). It returns `f64::INFINITY` where undefined.
pub trait Gsr: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn hypothesis_space(&self) -> &FeasibleSet;
    fn outcome_space(&self) -> &OutcomeSpace;
    fn loss(&self, w: &[f64], x: &Outcome) -> f64;
    fn loss_gradient(&self, w: &[f64], x: &Outcome) -> Vec<f64>;
    /// The divergence representation, when the loss has one.
    fn as_divergence(&self) -> Option<&DivergenceGsr> {
        None
    }
    /// The part of the loss contributed by the coordinates in `block`, for
    /// losses that are sums of per-coordinate terms.
    fn block_loss(&self, _w: &[f64], _block: &[usize], _labels: &[f64]) -> Option<f64> {
        None
    }
}

pub type GsrRef = Arc<dyn Gsr>;

/// The payoff map `rho: O -> H'`.
#[derive(Clone)]
pub enum PayoffMap {
    /// `rho(i) = e_i` on a finite outcome space.
    Basis { n: usize },
    /// `rho(y) = y` on label vectors.
    Identity,
    Custom(Arc<dyn Fn(&Outcome) -> Option<Vec<f64>> + Send + Sync>),
}

impl fmt::Debug for PayoffMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PayoffMap::Basis { n } => write!(f, "Basis {{ n: {n} }}"),
            PayoffMap::Identity => write!(f, "Identity"),
            PayoffMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl PayoffMap {
    /// `rho(X)`, averaged over the members of a sample.
    pub fn apply(&self, x: &Outcome) -> Option<Vec<f64>> {
        let mut failed = false;
        let v = x.average_vec(&mut |atom| match self.apply_atom(atom) {
            Some(v) => v,
            None => {
                failed = true;
                Vec::new()
            }
        });
        (!failed).then_some(v)
    }

    fn apply_atom(&self, x: &Outcome) -> Option<Vec<f64>> {
        match (self, x) {
            (PayoffMap::Basis { n }, Outcome::Index(i)) if i < n => {
                let mut e = vec![0.0; *n];
                e[*i] = 1.0;
                Some(e)
            }
            (PayoffMap::Identity, Outcome::Labels(y)) => Some(y.clone()),
            (PayoffMap::Custom(f), x) => f(x),
            _ => None,
        }
    }
}

/// The hypothesis map `psi: H -> H'`. Only one-to-one maps are supported, so
/// every variant has an inverse.
#[derive(Clone, Debug, PartialEq)]
pub enum HypothesisMap {
    Identity,
    /// `psi(w) = scale * w + shift`, with `scale != 0`.
    Affine { scale: f64, shift: Vec<f64> },
}

impl HypothesisMap {
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        match self {
            HypothesisMap::Identity => w.to_vec(),
            HypothesisMap::Affine { scale, shift } => w.iter().zip(shift).map(|(a, b)| scale * a + b).collect(),
        }
    }

    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        match self {
            HypothesisMap::Identity => v.to_vec(),
            HypothesisMap::Affine { scale, shift } => v.iter().zip(shift).map(|(a, b)| (a - b) / scale).collect(),
        }
    }

    /// `J^T g` for the Jacobian `J` of the map.
    fn pullback(&self, g: Vec<f64>) -> Vec<f64> {
        match self {
            HypothesisMap::Identity => g,
            HypothesisMap::Affine { scale, .. } => g.into_iter().map(|v| scale * v).collect(),
        }
    }
}

pub type OffsetFn = Arc<dyn Fn(&Outcome) -> f64 + Send + Sync>;

/// `L(w; X) = D_R(rho(X), psi(w)) + f(X)`.
#[derive(Clone)]
pub struct DivergenceGsr {
    name: String,
    hypothesis_space: FeasibleSet,
    outcomes: OutcomeSpace,
    potential: PotentialRef,
    rho: PayoffMap,
    psi: HypothesisMap,
    offset: Option<OffsetFn>,
    /// Set when the loss is `c * sum_k (w_k - y_k)^2`.
    separable_scale: Option<f64>,
}

impl fmt::Debug for DivergenceGsr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DivergenceGsr")
            .field("name", &self.name)
            .field("hypothesis_space", &self.hypothesis_space)
            .field("outcomes", &self.outcomes)
            .field("potential", &self.potential.name())
            .field("rho", &self.rho)
            .field("psi", &self.psi)
            .field("offset", &self.offset.is_some())
            .finish()
    }
}

impl DivergenceGsr {
    /// Builds the loss and checks that `rho` maps every audit outcome into the
    /// closure of the potential's domain.
    pub fn new(
        name: impl Into<String>,
        hypothesis_space: FeasibleSet,
        outcomes: OutcomeSpace,
        potential: PotentialRef,
        rho: PayoffMap,
        psi: HypothesisMap,
    ) -> Result<Self, GsrError> {
        if let HypothesisMap::Affine { scale, shift } = &psi {
            if *scale == 0.0 || !scale.is_finite() {
                return Err(GsrError::Construction("affine hypothesis map must have a non-zero scale".into()));
            }
            if shift.len() != potential.dim() {
                return Err(GsrError::Construction("affine shift has the wrong dimension".into()));
            }
        }
        if hypothesis_space.dim() != potential.dim() {
            return Err(GsrError::Construction(format!(
                "hypothesis space has dimension {} but the potential has dimension {}",
                hypothesis_space.dim(),
                potential.dim()
            )));
        }
        for x in outcomes.audit_outcomes(0).iter().take(2_000) {
            let Some(r) = rho.apply(x) else {
                return Err(GsrError::Construction(format!("payoff map undefined at {x:?}")));
            };
            if r.len() != potential.dim() || !potential.domain().contains_within(&r, 1e-9) {
                return Err(GsrError::Construction(format!(
                    "payoff {r:?} of {x:?} is outside the potential's domain"
                )));
            }
        }
        Ok(Self { name: name.into(), hypothesis_space, outcomes, potential, rho, psi, offset: None, separable_scale: None })
    }

    pub fn with_offset(mut self, f: OffsetFn) -> Self {
        self.offset = Some(f);
        self
    }

    /// Log loss `-ln q(i)` on the probability simplex.
    pub fn compression(n: usize) -> Self {
        Self::compression_on(n, FeasibleSet::simplex(n))
    }

    /// Log loss on the simplex with every probability at least `floor`.
    pub fn compression_with_floor(n: usize, floor: f64) -> Self {
        Self::compression_on(n, FeasibleSet::interior_simplex(n, floor))
    }

    fn compression_on(n: usize, h: FeasibleSet) -> Self {
        Self::new(
            "log-loss",
            h,
            OutcomeSpace::Finite { n },
            Arc::new(NegEntropy::new(n, 1.0)),
            PayoffMap::Basis { n },
            HypothesisMap::Identity,
        )
        .expect("basis vectors lie on the simplex")
    }

    /// `(scale/2) |y - w|^2` for label vectors `y` in `[lo, hi]^m`, over the
    /// given hypothesis space.
    pub fn squared_distance(m: usize, lo: f64, hi: f64, hypothesis_space: FeasibleSet, scale: f64) -> Self {
        let mut gsr = Self::new(
            "squared-distance",
            hypothesis_space,
            OutcomeSpace::LabelVector { m, lo, hi },
            Arc::new(SquaredNorm::new(m, scale)),
            PayoffMap::Identity,
            HypothesisMap::Identity,
        )
        .expect("squared norm is defined everywhere");
        gsr.separable_scale = Some(scale);
        gsr
    }

    pub fn potential(&self) -> &PotentialRef {
        &self.potential
    }

    pub fn rho(&self) -> &PayoffMap {
        &self.rho
    }

    pub fn psi(&self) -> &HypothesisMap {
        &self.psi
    }

    pub fn offset(&self, x: &Outcome) -> f64 {
        match &self.offset {
            Some(f) => x.average(&mut |atom| f(atom)),
            None => 0.0,
        }
    }

    /// `E_P[rho(X)]`.
    pub fn mean_payoff(&self, p: &Belief) -> Result<Vec<f64>, GsrError> {
        let mut mean = vec![0.0; self.potential.dim()];
        for (weight, x) in p.iter() {
            let r = self
                .rho
                .apply(x)
                .ok_or_else(|| GsrError::InvalidOutcome(format!("payoff map undefined at {x:?}")))?;
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += weight * v);
        }
        Ok(mean)
    }

    /// `D_R(rho(X), psi(w)) + f(X)`, with errors instead of infinities.
    pub fn try_loss(&self, w: &[f64], x: &Outcome) -> Result<f64, GsrError> {
        let r = self
            .rho
            .apply(x)
            .ok_or_else(|| GsrError::InvalidOutcome(format!("payoff map undefined at {x:?}")))?;
        let d = bregman_divergence(self.potential.as_ref(), &r, &self.psi.apply(w))?;
        Ok(d + self.offset(x))
    }
}

impl Gsr for DivergenceGsr {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn hypothesis_space(&self) -> &FeasibleSet {
        &self.hypothesis_space
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    fn loss(&self, w: &[f64], x: &Outcome) -> f64 {
        self.try_loss(w, x).unwrap_or(f64::INFINITY)
    }

    fn loss_gradient(&self, w: &[f64], x: &Outcome) -> Vec<f64> {
        // d/dy D_R(r, y) = -hess R(y) (r - y)
        let y = self.psi.apply(w);
        let Some(r) = self.rho.apply(x) else {
            return vec![f64::NAN; w.len()];
        };
        let diff: Vec<f64> = r.iter().zip(&y).map(|(a, b)| a - b).collect();
        let h = self.potential.hessian_vec(&y, &diff);
        self.psi.pullback(h.into_iter().map(|v| -v).collect())
    }

    fn as_divergence(&self) -> Option<&DivergenceGsr> {
        Some(self)
    }

    fn block_loss(&self, w: &[f64], block: &[usize], labels: &[f64]) -> Option<f64> {
        let scale = self.separable_scale?;
        if block.len() != labels.len() || block.iter().any(|&k| k >= w.len()) {
            return None;
        }
        Some(0.5 * scale * block.iter().zip(labels).map(|(&k, y)| (w[k] - y) * (w[k] - y)).sum::<f64>())
    }
}

/// Mean squared error `(1/2n) sum_i (w.x_i - y_i)^2` of a linear predictor on
/// the unit ball. This loss is not divergence-based.
#[derive(Clone, Debug)]
pub struct SquaredErrorGsr {
    hypothesis_space: FeasibleSet,
    outcomes: OutcomeSpace,
}

impl SquaredErrorGsr {
    pub fn new(dim: usize) -> Self {
        Self {
            hypothesis_space: FeasibleSet::l2_ball(dim, 1.0),
            outcomes: OutcomeSpace::DatasetBatch { dim, max_batch: 8 },
        }
    }

    pub fn dim(&self) -> usize {
        self.hypothesis_space.dim()
    }
}

impl Gsr for SquaredErrorGsr {
    fn name(&self) -> String {
        "mean-squared-error".into()
    }

    fn hypothesis_space(&self) -> &FeasibleSet {
        &self.hypothesis_space
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    fn loss(&self, w: &[f64], x: &Outcome) -> f64 {
        x.average(&mut |atom| match atom {
            Outcome::Batch(points) if !points.is_empty() => {
                let total: f64 = points.iter().map(|p| (convex::dot(w, &p.x) - p.y).powi(2)).sum();
                total / (2.0 * points.len() as f64)
            }
            _ => f64::INFINITY,
        })
    }

    fn loss_gradient(&self, w: &[f64], x: &Outcome) -> Vec<f64> {
        x.average_vec(&mut |atom| match atom {
            Outcome::Batch(points) if !points.is_empty() => {
                let mut g = vec![0.0; w.len()];
                for p in points {
                    let r = convex::dot(w, &p.x) - p.y;
                    g.iter_mut().zip(&p.x).for_each(|(gi, xi)| *gi += r * xi);
                }
                let n = points.len() as f64;
                g.into_iter().map(|v| v / n).collect()
            }
            _ => vec![f64::NAN; w.len()],
        })
    }
}

/// `E_P[L(w; X)]`.
pub fn expected_loss(l: &dyn Gsr, w: &[f64], p: &Belief) -> Result<f64, GsrError> {
    if !l.hypothesis_space().contains(w) {
        return Err(GsrError::Domain { w: w.to_vec() });
    }
    Ok(p.expect(|x| l.loss(w, x)))
}

fn expected_gradient(l: &dyn Gsr, w: &[f64], p: &Belief) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for (weight, x) in p.iter() {
        if weight == 0.0 {
            continue;
        }
        g.iter_mut().zip(l.loss_gradient(w, x)).for_each(|(a, b)| *a += weight * b);
    }
    g
}

/// One element of `argmin_{w in H} E_P[L(w; X)]`.
pub fn minimize_expected_loss(l: &dyn Gsr, p: &Belief, seed: u64) -> Result<Vec<f64>, GsrError> {
    minimize_expected_loss_with(l, p, &SolverOptions::with_seed(seed))
}

/// As [`minimize_expected_loss`] with explicit solver options.
pub fn minimize_expected_loss_with(l: &dyn Gsr, p: &Belief, opts: &SolverOptions) -> Result<Vec<f64>, GsrError> {
    minimize_expected_loss_over(l, p, l.hypothesis_space(), opts)
}

/// `argmin_{w in set} E_P[L(w; X)]` for a convex `set` inside the hypothesis
/// space, such as a budget set.
pub fn minimize_expected_loss_over(
    l: &dyn Gsr,
    p: &Belief,
    set: &FeasibleSet,
    opts: &SolverOptions,
) -> Result<Vec<f64>, GsrError> {
    let objective = FnObjective {
        value: |w: &[f64]| p.expect(|x| l.loss(w, x)),
        gradient: |w: &[f64]| expected_gradient(l, w, p),
    };
    Ok(minimize(&objective, set, opts)?.point)
}

/// `psi^{-1}(E_P[rho(X)])`.
pub fn mean_minimizer(l: &DivergenceGsr, p: &Belief) -> Result<Vec<f64>, GsrError> {
    let mean = l.mean_payoff(p)?;
    let w = l.psi.inverse(&mean);
    if !l.hypothesis_space.contains(&w) {
        return Err(GsrError::InfeasibleMean { mean });
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::PROB_FLOOR;
    use crate::rng;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn compression_expected_loss_examples() {
        let l = DivergenceGsr::compression(2);
        close(expected_loss(&l, &[0.5, 0.5], &Belief::point(Outcome::Index(1))).unwrap(), 2f64.ln(), 1e-15);
        let p = Belief::categorical(&[0.25, 0.75]).unwrap();
        let entropy = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        close(expected_loss(&l, &[0.25, 0.75], &p).unwrap(), entropy, 1e-15);
        close(entropy, 0.562335, 1e-6);
        assert!(matches!(expected_loss(&l, &[0.7, 0.7], &p), Err(GsrError::Domain { .. })));
    }

    #[test]
    fn divergence_loss_matches_direct_formula() {
        let l = DivergenceGsr::compression(3);
        let mut rng = rng::stream(5, "t");
        for _ in 0..200 {
            let w = l.hypothesis_space().sample(&mut rng, 1.0);
            let i = rng.random_range(0..3);
            if w[i] < PROB_FLOOR {
                continue;
            }
            close(l.loss(&w, &Outcome::Index(i)), -w[i].ln(), 1e-9);
        }
    }

    #[test]
    fn minimizers_of_examples() {
        let l = DivergenceGsr::compression(2);
        let p = Belief::categorical(&[0.25, 0.75]).unwrap();
        let w = minimize_expected_loss(&l, &p, 0).unwrap();
        close(w[0], 0.25, 1e-6);
        assert_eq!(mean_minimizer(&l, &p).unwrap(), vec![0.25, 0.75]);

        let reg = SquaredErrorGsr::new(1);
        let batch = Outcome::Batch(vec![DataPoint { x: vec![1.0], y: 1.0 }]);
        let w = minimize_expected_loss(&reg, &Belief::point(batch), 0).unwrap();
        close(w[0], 1.0, 1e-6);
        assert!(reg.as_divergence().is_none());

        let sq = DivergenceGsr::new(
            "half-squared",
            FeasibleSet::cube(2, 0.0, 1.0),
            OutcomeSpace::LabelVector { m: 2, lo: 0.0, hi: 1.0 },
            Arc::new(SquaredNorm::half(2)),
            PayoffMap::Identity,
            HypothesisMap::Identity,
        )
        .unwrap();
        let p = Belief::normalized(vec![Outcome::Labels(vec![0.0, 0.0]), Outcome::Labels(vec![1.0, 1.0])], vec![1.0, 1.0])
            .unwrap();
        let w = minimize_expected_loss(&sq, &p, 0).unwrap();
        close(w[0], 0.5, 1e-6);
        close(w[1], 0.5, 1e-6);
    }

    #[test]
    fn mean_minimizer_of_two_points() {
        let sq = DivergenceGsr::new(
            "half-squared",
            FeasibleSet::all_of(2),
            OutcomeSpace::LabelVector { m: 2, lo: 0.0, hi: 2.0 },
            Arc::new(SquaredNorm::half(2)),
            PayoffMap::Identity,
            HypothesisMap::Identity,
        )
        .unwrap();
        let p = Belief::normalized(vec![Outcome::Labels(vec![0.0, 0.0]), Outcome::Labels(vec![2.0, 0.0])], vec![1.0, 1.0])
            .unwrap();
        assert_eq!(mean_minimizer(&sq, &p).unwrap(), vec![1.0, 0.0]);
        let w = minimize_expected_loss(&sq, &p, 0).unwrap();
        close(expected_loss(&sq, &w, &p).unwrap(), expected_loss(&sq, &[1.0, 0.0], &p).unwrap(), 1e-10);
    }

    #[test]
    fn infeasible_mean_is_reported() {
        let h = FeasibleSet::interior_simplex(2, 0.1);
        let l = DivergenceGsr::compression_with_floor(2, 0.1);
        assert_eq!(l.hypothesis_space(), &h);
        let err = mean_minimizer(&l, &Belief::point(Outcome::Index(0))).unwrap_err();
        assert!(matches!(err, GsrError::InfeasibleMean { .. }));
    }

    #[test]
    fn affine_hypothesis_map_round_trips() {
        let psi = HypothesisMap::Affine { scale: 2.0, shift: vec![1.0, -1.0] };
        let w = vec![0.3, 0.7];
        for (a, b) in psi.inverse(&psi.apply(&w)).iter().zip(&w) {
            close(*a, *b, 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let l = DivergenceGsr::compression(3);
        let w = [0.2, 0.3, 0.5];
        let x = Outcome::Sample(vec![Outcome::Index(0), Outcome::Index(2)]);
        let g = l.loss_gradient(&w, &x);
        // Compare along directions tangent to the simplex.
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            let h = 1e-6;
            let mut wp = w;
            let mut wm = w;
            wp[a] += h;
            wp[b] -= h;
            wm[a] -= h;
            wm[b] += h;
            let fd = (l.loss(&wp, &x) - l.loss(&wm, &x)) / (2.0 * h);
            close(g[a] - g[b], fd, 1e-5);
        }
    }
}
