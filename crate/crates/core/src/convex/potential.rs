//! Strictly convex potentials with value, gradient, and conjugate access.
//!
//! Two families carry closed-form conjugates: negative entropy on the simplex
//! (dual to log-sum-exp, i.e. the LMSR cost) and scaled squared norms (dual to
//! squared norms with the reciprocal scale). Anything else falls back to a
//! numeric conjugate computed with [`minimize`](super::minimize).

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use super::set::FeasibleSet;
use super::solver::{minimize, FnObjective, SolverError, SolverOptions};
use super::ConvexError;

pub type PotentialRef = Arc<dyn ConvexPotential>;

/// Probabilities below this are treated as boundary points of the simplex.
pub const PROB_FLOOR: f64 = 1e-12;

pub trait ConvexPotential: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    /// Closure of the effective domain.
    fn domain(&self) -> &FeasibleSet;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Hessian-vector product. Defaults to central differences of the gradient.
    fn hessian_vec(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let h = 1e-6 * (1.0 + x.iter().map(|a| a.abs()).fold(0.0, f64::max));
        let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let gp = self.gradient(&plus);
        let gm = self.gradient(&minus);
        gp.iter().zip(gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// Whether the gradient exists at `y`.
    fn is_interior(&self, y: &[f64]) -> bool {
        y.len() == self.dim() && self.domain().contains(y)
    }

    fn closed_form_conjugate(&self, _g: &[f64]) -> Option<f64> {
        None
    }

    /// Gradient of the conjugate, i.e. the maximizing primal point.
    fn closed_form_conjugate_gradient(&self, _g: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// The conjugate as a potential in its own right, when registered.
    fn registered_dual(&self) -> Option<PotentialRef> {
        None
    }

    /// `R(x) - R(y) - grad R(y) . (x - y)`; callers check the domain first.
    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        let g = self.gradient(y);
        let lin: f64 = g.iter().zip(x.iter().zip(y)).map(|(gi, (a, b))| gi * (a - b)).sum();
        self.value(x) - self.value(y) - lin
    }
}

/// Bregman divergence `D_R(x, y)`.
pub fn bregman_divergence(r: &dyn ConvexPotential, x: &[f64], y: &[f64]) -> Result<f64, ConvexError> {
    check_dim(r.dim(), x.len())?;
    check_dim(r.dim(), y.len())?;
    if !r.is_interior(y) {
        return Err(ConvexError::NotInterior { point: y.to_vec() });
    }
    if !r.domain().contains(x) {
        return Err(ConvexError::OutsideDomain { point: x.to_vec() });
    }
    Ok(r.bregman(x, y))
}

/// `R*(g) = sup_x g.x - R(x)`, closed form when registered.
pub fn conjugate(r: &dyn ConvexPotential, g: &[f64]) -> Result<f64, ConvexError> {
    check_dim(r.dim(), g.len())?;
    if let Some(v) = r.closed_form_conjugate(g) {
        return Ok(v);
    }
    Ok(numeric_conjugate(r, g, &ConjugateOptions::default())?.value)
}

/// `grad R*(g)`, the primal maximizer.
pub fn conjugate_gradient(r: &dyn ConvexPotential, g: &[f64]) -> Result<Vec<f64>, ConvexError> {
    check_dim(r.dim(), g.len())?;
    if let Some(x) = r.closed_form_conjugate_gradient(g) {
        return Ok(x);
    }
    Ok(numeric_conjugate(r, g, &ConjugateOptions::default())?.argmax)
}

#[derive(Clone, Debug)]
pub struct ConjugateOptions {
    pub solver: SolverOptions,
    /// Iterates whose sup-norm passes this are treated as escaping along an
    /// improving ray.
    pub cap: f64,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        Self { solver: SolverOptions { tol: 1e-10, starts: 1, ..SolverOptions::default() }, cap: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugatePoint {
    pub value: f64,
    pub argmax: Vec<f64>,
}

/// Conjugate by direct maximization, ignoring any registered closed form.
pub fn numeric_conjugate(
    r: &dyn ConvexPotential,
    g: &[f64],
    opts: &ConjugateOptions,
) -> Result<ConjugatePoint, ConvexError> {
    check_dim(r.dim(), g.len())?;
    let escaped = Cell::new(false);
    let cap = opts.cap;
    let objective = FnObjective {
        value: |x: &[f64]| {
            if x.iter().any(|v| v.abs() > cap) {
                escaped.set(true);
                return f64::NAN;
            }
            r.value(x) - dot(g, x)
        },
        gradient: |x: &[f64]| r.gradient(x).iter().zip(g).map(|(a, b)| a - b).collect(),
    };
    let result = minimize(&objective, r.domain(), &opts.solver);
    let best = match result {
        Ok(m) => m,
        Err(SolverError::NonConvergence { best }) if escaped.get() => *best,
        Err(e) => return Err(e.into()),
    };
    let norm = best.point.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if escaped.get() && norm > 0.5 * cap {
        return Err(ConvexError::Unbounded { direction: best.point });
    }
    Ok(ConjugatePoint { value: -best.value, argmax: best.point })
}

/// Spot-checks that the conjugate is finite at `samples` random dual points of
/// scale `spread`. Passing does not certify global finiteness.
pub fn sampled_conjugate_finiteness(
    r: &dyn ConvexPotential,
    samples: usize,
    spread: f64,
    seed: u64,
) -> Result<(), ConvexError> {
    let mut rng = crate::rng::stream(seed, "conjugate-finiteness");
    let all = FeasibleSet::all_of(r.dim());
    for _ in 0..samples {
        let g = all.sample(&mut rng, spread);
        let v = conjugate(r, &g)?;
        if !v.is_finite() {
            return Err(ConvexError::Unbounded { direction: g });
        }
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<(), ConvexError> {
    if expected == got {
        Ok(())
    } else {
        Err(ConvexError::Shape { expected, got })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `ln sum exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|a| (a - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|a| a / total).collect()
}

/// `(1/eta) sum x ln x` on the simplex, with `0 ln 0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegEntropy {
    eta: f64,
    domain: FeasibleSet,
}

impl NegEntropy {
    pub fn new(n: usize, eta: f64) -> Self {
        assert!(eta > 0.0, "eta must be positive");
        Self { eta, domain: FeasibleSet::simplex(n) }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl ConvexPotential for NegEntropy {
    fn name(&self) -> String {
        format!("neg_entropy(n={}, eta={})", self.dim(), self.eta)
    }
    fn dim(&self) -> usize {
        self.domain.dim()
    }
    fn domain(&self) -> &FeasibleSet {
        &self.domain
    }
    fn value(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| *v < 0.0) {
            return f64::INFINITY;
        }
        x.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>() / self.eta
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v.max(PROB_FLOOR).ln() + 1.0) / self.eta).collect()
    }
    fn hessian_vec(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter().zip(v).map(|(a, b)| b / (self.eta * a.max(PROB_FLOOR))).collect()
    }
    fn is_interior(&self, y: &[f64]) -> bool {
        y.len() == self.dim() && self.domain.contains(y) && y.iter().all(|v| *v >= PROB_FLOOR)
    }
    fn closed_form_conjugate(&self, g: &[f64]) -> Option<f64> {
        let scaled: Vec<f64> = g.iter().map(|v| self.eta * v).collect();
        Some(log_sum_exp(&scaled) / self.eta)
    }
    fn closed_form_conjugate_gradient(&self, g: &[f64]) -> Option<Vec<f64>> {
        Some(softmax(&g.iter().map(|v| self.eta * v).collect::<Vec<_>>()))
    }
    fn registered_dual(&self) -> Option<PotentialRef> {
        Some(Arc::new(LogSumExp::new(self.dim(), self.eta)))
    }
    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        // KL(x; y)/eta plus the mass mismatch, which vanishes on the simplex.
        let kl: f64 = x
            .iter()
            .zip(y)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum();
        let mass: f64 = y.iter().sum::<f64>() - x.iter().sum::<f64>();
        (kl + mass) / self.eta
    }
}

/// LMSR cost `C(s) = (1/eta) ln sum exp(eta s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogSumExp {
    eta: f64,
    domain: FeasibleSet,
}

impl LogSumExp {
    pub fn new(n: usize, eta: f64) -> Self {
        assert!(eta > 0.0, "eta must be positive");
        Self { eta, domain: FeasibleSet::all_of(n) }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl ConvexPotential for LogSumExp {
    fn name(&self) -> String {
        format!("log_sum_exp(n={}, eta={})", self.dim(), self.eta)
    }
    fn dim(&self) -> usize {
        self.domain.dim()
    }
    fn domain(&self) -> &FeasibleSet {
        &self.domain
    }
    fn value(&self, s: &[f64]) -> f64 {
        log_sum_exp(&s.iter().map(|v| self.eta * v).collect::<Vec<_>>()) / self.eta
    }
    fn gradient(&self, s: &[f64]) -> Vec<f64> {
        softmax(&s.iter().map(|v| self.eta * v).collect::<Vec<_>>())
    }
    fn hessian_vec(&self, s: &[f64], v: &[f64]) -> Vec<f64> {
        let p = self.gradient(s);
        let pv = dot(&p, v);
        p.iter().zip(v).map(|(pi, vi)| self.eta * pi * (vi - pv)).collect()
    }
    fn is_interior(&self, y: &[f64]) -> bool {
        y.len() == self.dim() && y.iter().all(|v| v.is_finite())
    }
    fn closed_form_conjugate(&self, g: &[f64]) -> Option<f64> {
        let dual = NegEntropy::new(self.dim(), self.eta);
        if dual.domain.contains(g) {
            Some(dual.value(g))
        } else {
            Some(f64::INFINITY)
        }
    }
    fn closed_form_conjugate_gradient(&self, g: &[f64]) -> Option<Vec<f64>> {
        Some(NegEntropy::new(self.dim(), self.eta).gradient(g))
    }
    fn registered_dual(&self) -> Option<PotentialRef> {
        Some(Arc::new(NegEntropy::new(self.dim(), self.eta)))
    }
}

/// `(scale/2) |x|^2` on all of `R^dim`. `scale = 1` is the half-squared norm.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredNorm {
    scale: f64,
    domain: FeasibleSet,
}

impl SquaredNorm {
    pub fn new(dim: usize, scale: f64) -> Self {
        assert!(scale > 0.0, "scale must be positive");
        Self { scale, domain: FeasibleSet::all_of(dim) }
    }

    pub fn half(dim: usize) -> Self {
        Self::new(dim, 1.0)
    }
}

impl ConvexPotential for SquaredNorm {
    fn name(&self) -> String {
        format!("squared_norm(dim={}, scale={})", self.dim(), self.scale)
    }
    fn dim(&self) -> usize {
        self.domain.dim()
    }
    fn domain(&self) -> &FeasibleSet {
        &self.domain
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.scale * dot(x, x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.scale * v).collect()
    }
    fn hessian_vec(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.iter().map(|a| self.scale * a).collect()
    }
    fn closed_form_conjugate(&self, g: &[f64]) -> Option<f64> {
        Some(0.5 * dot(g, g) / self.scale)
    }
    fn closed_form_conjugate_gradient(&self, g: &[f64]) -> Option<Vec<f64>> {
        Some(g.iter().map(|v| v / self.scale).collect())
    }
    fn registered_dual(&self) -> Option<PotentialRef> {
        Some(Arc::new(SquaredNorm::new(self.dim(), 1.0 / self.scale)))
    }
    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * self.scale * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A user-supplied potential. Its conjugate is always numeric.
#[derive(Clone)]
pub struct CustomPotential {
    name: String,
    domain: FeasibleSet,
    value: ScalarFn,
    gradient: VectorFn,
}

impl CustomPotential {
    pub fn new(
        name: impl Into<String>,
        domain: FeasibleSet,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), domain, value: Arc::new(value), gradient: Arc::new(gradient) }
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential").field("name", &self.name).field("domain", &self.domain).finish()
    }
}

impl ConvexPotential for CustomPotential {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn dim(&self) -> usize {
        self.domain.dim()
    }
    fn domain(&self) -> &FeasibleSet {
        &self.domain
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

/// The conjugate of a potential without a registered closed form.
///
/// Values and gradients come from [`numeric_conjugate`]; its own conjugate is
/// the primal again.
#[derive(Clone, Debug)]
pub struct NumericConjugate {
    primal: PotentialRef,
    domain: FeasibleSet,
    opts: ConjugateOptions,
}

impl NumericConjugate {
    pub fn new(primal: PotentialRef) -> Self {
        let domain = FeasibleSet::all_of(primal.dim());
        Self { primal, domain, opts: ConjugateOptions::default() }
    }

    pub fn primal(&self) -> &PotentialRef {
        &self.primal
    }
}

impl ConvexPotential for NumericConjugate {
    fn name(&self) -> String {
        format!("conjugate({})", self.primal.name())
    }
    fn dim(&self) -> usize {
        self.primal.dim()
    }
    fn domain(&self) -> &FeasibleSet {
        &self.domain
    }
    fn value(&self, g: &[f64]) -> f64 {
        numeric_conjugate(self.primal.as_ref(), g, &self.opts).map_or(f64::INFINITY, |c| c.value)
    }
    fn gradient(&self, g: &[f64]) -> Vec<f64> {
        numeric_conjugate(self.primal.as_ref(), g, &self.opts)
            .map_or_else(|_| vec![f64::NAN; self.dim()], |c| c.argmax)
    }
    fn closed_form_conjugate(&self, x: &[f64]) -> Option<f64> {
        Some(if self.primal.domain().contains(x) { self.primal.value(x) } else { f64::INFINITY })
    }
    fn closed_form_conjugate_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.primal.gradient(x))
    }
    fn registered_dual(&self) -> Option<PotentialRef> {
        Some(self.primal.clone())
    }
}

/// The conjugate of `r` as a potential: registered when available, numeric
/// otherwise.
pub fn dual_of(r: &PotentialRef) -> PotentialRef {
    r.registered_dual().unwrap_or_else(|| Arc::new(NumericConjugate::new(r.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn bregman_examples() {
        let half = SquaredNorm::half(2);
        assert_eq!(bregman_divergence(&half, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        let ent = NegEntropy::new(2, 1.0);
        let d = bregman_divergence(&ent, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((d - LN_2).abs() < 1e-15);
        assert_eq!(bregman_divergence(&ent, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn bregman_errors() {
        let ent = NegEntropy::new(2, 1.0);
        assert!(matches!(bregman_divergence(&ent, &[0.5, 0.5], &[1.0, 0.0]), Err(ConvexError::NotInterior { .. })));
        assert!(matches!(
            bregman_divergence(&ent, &[0.5, 0.5, 0.0], &[0.5, 0.5]),
            Err(ConvexError::Shape { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn generic_formula_agrees_with_kl_override() {
        let ent = NegEntropy::new(3, 2.0);
        let x = [0.2, 0.0, 0.8];
        let y = [0.3, 0.3, 0.4];
        let g = ent.gradient(&y);
        let lin: f64 = g.iter().zip(x.iter().zip(&y)).map(|(gi, (a, b))| gi * (a - b)).sum();
        let generic = ent.value(&x) - ent.value(&y) - lin;
        assert!((generic - ent.bregman(&x, &y)).abs() < 1e-14);
    }

    #[test]
    fn conjugate_examples() {
        let ent = NegEntropy::new(2, 1.0);
        assert!((conjugate(&ent, &[0.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        let s = [0.3, -1.2, 2.0];
        let lse = log_sum_exp(&s);
        assert!((conjugate(&NegEntropy::new(3, 1.0), &s).unwrap() - lse).abs() < 1e-15);
        let g = [0.4, -2.0];
        assert!((conjugate(&SquaredNorm::half(2), &g).unwrap() - 0.5 * dot(&g, &g)).abs() < 1e-15);
    }

    #[test]
    fn numeric_conjugate_matches_closed_forms() {
        let ent = NegEntropy::new(3, 1.5);
        for g in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.2], [3.0, 0.0, -2.0]] {
            let num = numeric_conjugate(&ent, &g, &ConjugateOptions::default()).unwrap();
            let closed = ent.closed_form_conjugate(&g).unwrap();
            assert!((num.value - closed).abs() < 1e-6, "{g:?}: {} vs {closed}", num.value);
        }
        let sq = SquaredNorm::new(2, 3.0);
        let num = numeric_conjugate(&sq, &[1.0, 2.0], &ConjugateOptions::default()).unwrap();
        assert!((num.value - 5.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn numeric_conjugate_detects_unbounded_supremum() {
        // sqrt(1 + x^2) grows linearly, so its conjugate is +inf for |g| > 1.
        let huber = CustomPotential::new(
            "pseudo_huber",
            FeasibleSet::all_of(1),
            |x: &[f64]| (1.0 + x[0] * x[0]).sqrt(),
            |x: &[f64]| vec![x[0] / (1.0 + x[0] * x[0]).sqrt()],
        );
        assert!(matches!(conjugate(&huber, &[2.0]), Err(ConvexError::Unbounded { .. })));
        // Inside the dual domain the conjugate is -sqrt(1 - g^2).
        let v = conjugate(&huber, &[0.6]).unwrap();
        assert!((v + 0.8).abs() < 1e-6, "{v}");
    }

    #[test]
    fn duals_are_registered() {
        let ent: PotentialRef = Arc::new(NegEntropy::new(2, 1.0));
        let c = dual_of(&ent);
        assert_eq!(c.name(), "log_sum_exp(n=2, eta=1)");
        let back = dual_of(&c);
        assert_eq!(back.name(), ent.name());
    }
}
