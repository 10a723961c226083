//! Estimators of the true risk under exposure bias.
//!
//! Every estimator is an average of per-pair terms that depend on the
//! observed label `o`, the predicted link probability `ŷ` and the estimated
//! propensity `π̂`:
//!
//! | estimator | `o = 1`                         | `o = 0`             |
//! |-----------|---------------------------------|---------------------|
//! | naive     | `δ(1)`                          | `δ(0)`              |
//! | w         | `δ(1) / π̂`                      | `ψ δ(0)`            |
//! | pu        | `δ(1) / π̂ + (1 - 1/π̂) δ(0)`     | `δ(0)`              |
//! | ap        | `δ(1)`                          | `ψ δ(0) + τ δ(1)`   |
//!
//! with `ψ = (1 - ŷ) / (1 - π̂ ŷ)` and `τ = ŷ (1 - π̂) / (1 - π̂ ŷ) = 1 - ψ`.
//! Under the zero-one loss, `δ(u) = Δ·1(u ≠ ô)` with `ô = 1(ŷ ≥ 0.5)`; under
//! the log-loss `δ(u)` is the cross-entropy of `u` against `ŷ`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::PROPENSITY_FLOOR;

/// Clamp applied to probabilities inside the log-loss.
pub const LOG_LOSS_CLAMP: f64 = 1e-7;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Naive,
    W,
    Pu,
    Ap,
    True,
}

impl Estimator {
    /// The four estimators computable from observed data.
    pub const OBSERVABLE: [Estimator; 4] = [Estimator::Naive, Estimator::W, Estimator::Pu, Estimator::Ap];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Naive => "naive",
            Estimator::W => "w",
            Estimator::Pu => "pu",
            Estimator::Ap => "ap",
            Estimator::True => "true",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Estimator::Naive),
            "w" => Ok(Estimator::W),
            "pu" => Ok(Estimator::Pu),
            "ap" => Ok(Estimator::Ap),
            "true" => Ok(Estimator::True),
            other => Err(Error::config("estimator", format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    ZeroOne,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Scale of a zero-one mistake; ignored by the log-loss.
    pub delta: f64,
}

impl LossSpec {
    pub fn zero_one(delta: f64) -> Self {
        LossSpec {
            kind: LossKind::ZeroOne,
            delta,
        }
    }

    pub fn log() -> Self {
        LossSpec {
            kind: LossKind::Log,
            delta: 1.0,
        }
    }

    /// `δ(u, ·)` for a binary target `u`.
    pub fn eval(&self, u: bool, y_hat: f64) -> f64 {
        match self.kind {
            LossKind::ZeroOne => {
                if u != predicted_outcome(y_hat) {
                    self.delta
                } else {
                    0.0
                }
            }
            LossKind::Log => log_loss(u, y_hat),
        }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::zero_one(1.0)
    }
}

/// `ô = 1(ŷ ≥ 0.5)`; a tie goes to 1.
pub fn predicted_outcome(y_hat: f64) -> bool {
    y_hat >= 0.5
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP)
}

pub fn log_loss(u: bool, p: f64) -> f64 {
    let p = clamp_prob(p);
    if u {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `ψ = (1 - ŷ) / (1 - π̂ ŷ)`. At the corner `π̂ = ŷ = 1` the weight is 0.
pub fn psi(y_hat: f64, pi_hat: f64) -> f64 {
    let den = 1.0 - pi_hat * y_hat;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 - y_hat) / den
    }
}

/// `τ = ŷ (1 - π̂) / (1 - π̂ ŷ)`.
pub fn tau(y_hat: f64, pi_hat: f64) -> f64 {
    let den = 1.0 - pi_hat * y_hat;
    if den <= 0.0 {
        1.0
    } else {
        y_hat * (1.0 - pi_hat) / den
    }
}

/// Model outputs for every pair of a universe, in universe order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimates {
    pub y_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
}

impl PairEstimates {
    pub fn new(y_hat: Vec<f64>, pi_hat: Vec<f64>) -> Result<Self> {
        if y_hat.len() != pi_hat.len() {
            return Err(Error::Shape(format!(
                "{} link probabilities vs {} propensities",
                y_hat.len(),
                pi_hat.len()
            )));
        }
        if let Some(bad) = y_hat.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("predicted probability {bad} outside [0, 1]")));
        }
        if let Some(bad) = pi_hat.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Shape(format!("propensity {bad} outside (0, 1]")));
        }
        Ok(PairEstimates { y_hat, pi_hat })
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    pub fn o_hat(&self) -> Vec<bool> {
        self.y_hat.iter().map(|&y| predicted_outcome(y)).collect()
    }

    fn check_floor(&self, floor: f64) -> Result<()> {
        match self.pi_hat.iter().find(|&&p| p < floor) {
            Some(&value) => Err(Error::PropensityBelowFloor { value, floor }),
            None => Ok(()),
        }
    }
}

/// Generating probabilities `y` and `π` for every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub y: Vec<f64>,
    pub pi: Vec<f64>,
}

impl GroundTruth {
    pub fn new(y: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if y.len() != pi.len() {
            return Err(Error::Shape(format!("{} link probabilities vs {} propensities", y.len(), pi.len())));
        }
        if let Some(bad) = y.iter().chain(&pi).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("probability {bad} outside [0, 1]")));
        }
        Ok(GroundTruth { y, pi })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub estimator: Estimator,
    pub value: f64,
    pub n_pairs: usize,
    #[serde(skip)]
    pub per_pair_terms: Option<Vec<f64>>,
}

impl RiskReport {
    fn from_terms(estimator: Estimator, terms: Vec<f64>, keep: bool) -> Self {
        let n_pairs = terms.len();
        let value = chunked_sum(&terms) / n_pairs as f64;
        RiskReport {
            estimator,
            value,
            n_pairs,
            per_pair_terms: keep.then_some(terms),
        }
    }
}

/// Sum with a fixed chunking so the result does not depend on thread count.
pub fn chunked_sum(xs: &[f64]) -> f64 {
    let partial: Vec<f64> = xs.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    partial.iter().sum()
}

/// Per-pair estimator term for an observable estimator.
pub fn pair_term(which: Estimator, o: bool, y_hat: f64, pi_hat: f64, loss: &LossSpec) -> f64 {
    let l1 = || loss.eval(true, y_hat);
    let l0 = || loss.eval(false, y_hat);
    match (which, o) {
        (Estimator::Naive, true) | (Estimator::Ap, true) => l1(),
        (Estimator::Naive, false) | (Estimator::Pu, false) => l0(),
        (Estimator::W, true) => l1() / pi_hat,
        (Estimator::W, false) => weighted(psi(y_hat, pi_hat), l0()),
        (Estimator::Pu, true) => l1() / pi_hat + (1.0 - 1.0 / pi_hat) * l0(),
        (Estimator::Ap, false) => weighted(psi(y_hat, pi_hat), l0()) + weighted(tau(y_hat, pi_hat), l1()),
        (Estimator::True, _) => panic!("the true risk is not an observed-data estimator"),
    }
}

// A zero weight cancels the term even when the loss itself is large.
fn weighted(w: f64, l: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * l
    }
}

fn check_lengths(o: &[bool], est: &PairEstimates) -> Result<()> {
    if o.len() != est.len() {
        return Err(Error::Shape(format!("{} labels vs {} estimates", o.len(), est.len())));
    }
    if o.is_empty() {
        return Err(Error::Shape("no pairs".into()));
    }
    Ok(())
}

/// Evaluate an observable estimator, keeping per-pair terms when asked.
pub fn risk(which: Estimator, o: &[bool], est: &PairEstimates, loss: &LossSpec, keep_terms: bool) -> Result<RiskReport> {
    if which == Estimator::True {
        return Err(Error::config("estimator", "the true risk needs ground truth; use true_risk"));
    }
    check_lengths(o, est)?;
    if which != Estimator::Naive {
        est.check_floor(PROPENSITY_FLOOR)?;
    }
    let terms: Vec<f64> = o
        .par_iter()
        .zip(est.y_hat.par_iter().zip(&est.pi_hat))
        .map(|(&o, (&y, &p))| pair_term(which, o, y, p, loss))
        .collect();
    Ok(RiskReport::from_terms(which, terms, keep_terms))
}

pub fn risk_naive(o: &[bool], est: &PairEstimates, loss: &LossSpec) -> Result<RiskReport> {
    risk(Estimator::Naive, o, est, loss, true)
}

pub fn risk_w(o: &[bool], est: &PairEstimates, loss: &LossSpec) -> Result<RiskReport> {
    risk(Estimator::W, o, est, loss, true)
}

pub fn risk_pu(o: &[bool], est: &PairEstimates, loss: &LossSpec) -> Result<RiskReport> {
    risk(Estimator::Pu, o, est, loss, true)
}

pub fn risk_ap(o: &[bool], est: &PairEstimates, loss: &LossSpec) -> Result<RiskReport> {
    risk(Estimator::Ap, o, est, loss, true)
}

/// Risk on the fully exposed graph: mean of `y δ(1) + (1 - y) δ(0)`.
pub fn true_risk(truth: &GroundTruth, est: &PairEstimates, loss: &LossSpec) -> Result<RiskReport> {
    if truth.len() != est.len() {
        return Err(Error::Shape(format!("{} truths vs {} estimates", truth.len(), est.len())));
    }
    if truth.is_empty() {
        return Err(Error::Shape("no pairs".into()));
    }
    let terms: Vec<f64> = truth
        .y
        .iter()
        .zip(&est.y_hat)
        .map(|(&y, &yh)| y * loss.eval(true, yh) + (1.0 - y) * loss.eval(false, yh))
        .collect();
    Ok(RiskReport::from_terms(Estimator::True, terms, true))
}

/// Signed per-pair gap `R - E[R̂]` (in units of `Δ`) under the zero-one loss.
pub fn pair_bias_term(which: Estimator, y: f64, pi: f64, y_hat: f64, pi_hat: f64) -> f64 {
    let o_hat = if predicted_outcome(y_hat) { 1.0 } else { 0.0 };
    let positive_part = || 1.0 - y - (1.0 - y * pi) * psi(y_hat, pi_hat);
    match which {
        Estimator::Naive => y * (1.0 - pi) * (1.0 - 2.0 * o_hat),
        Estimator::W => (1.0 - o_hat) * y * (1.0 - pi / pi_hat) + o_hat * positive_part(),
        Estimator::Pu => y * (1.0 - pi / pi_hat) * (1.0 - 2.0 * o_hat),
        Estimator::Ap => {
            (1.0 - o_hat) * ((1.0 - pi) * y - (1.0 - pi * y) * tau(y_hat, pi_hat)) + o_hat * positive_part()
        }
        Estimator::True => 0.0,
    }
}

/// Per-pair variance (in units of `Δ²`) under the zero-one loss.
pub fn pair_variance_term(which: Estimator, y: f64, pi: f64, y_hat: f64, pi_hat: f64) -> f64 {
    let theta = y * pi;
    let base = theta * (1.0 - theta);
    let o_hat = predicted_outcome(y_hat);
    let factor = match which {
        Estimator::Naive => 1.0,
        Estimator::W => {
            if o_hat {
                psi(y_hat, pi_hat).powi(2)
            } else {
                1.0 / (pi_hat * pi_hat)
            }
        }
        Estimator::Pu => 1.0 / (pi_hat * pi_hat),
        Estimator::Ap => psi(y_hat, pi_hat).powi(2),
        Estimator::True => 0.0,
    };
    base * factor
}

fn zero_one_delta(loss: &LossSpec) -> Result<f64> {
    match loss.kind {
        LossKind::ZeroOne => Ok(loss.delta),
        LossKind::Log => Err(Error::RequiresZeroOne),
    }
}

fn check_truth(truth: &GroundTruth, est: &PairEstimates) -> Result<()> {
    if truth.len() != est.len() {
        return Err(Error::Shape(format!("{} truths vs {} estimates", truth.len(), est.len())));
    }
    if truth.is_empty() {
        return Err(Error::Shape("no pairs".into()));
    }
    Ok(())
}

/// `|E[R̂] - R|` from the closed form, over the full universe.
pub fn bias_closed_form(which: Estimator, truth: &GroundTruth, est: &PairEstimates, loss: &LossSpec) -> Result<f64> {
    let delta = zero_one_delta(loss)?;
    check_truth(truth, est)?;
    let terms: Vec<f64> = (0..truth.len())
        .map(|k| pair_bias_term(which, truth.y[k], truth.pi[k], est.y_hat[k], est.pi_hat[k]))
        .collect();
    Ok(delta * chunked_sum(&terms).abs() / truth.len() as f64)
}

/// `Var(R̂)` from the closed form; pairs are independent so terms add.
pub fn variance_closed_form(which: Estimator, truth: &GroundTruth, est: &PairEstimates, loss: &LossSpec) -> Result<f64> {
    let delta = zero_one_delta(loss)?;
    check_truth(truth, est)?;
    let terms: Vec<f64> = (0..truth.len())
        .map(|k| pair_variance_term(which, truth.y[k], truth.pi[k], est.y_hat[k], est.pi_hat[k]))
        .collect();
    let u = truth.len() as f64;
    Ok(delta * delta * chunked_sum(&terms) / (u * u))
}

/// Outcome of one strict-inequality comparison `lhs < rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Holds,
    /// Equal within tolerance; happens when no pair separates the two sides.
    Tied,
    Violated,
}

impl Comparison {
    fn of(lhs: f64, rhs: f64, tol: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        if (rhs - lhs).abs() <= tol * scale {
            Comparison::Tied
        } else if lhs < rhs {
            Comparison::Holds
        } else {
            Comparison::Violated
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceOrdering {
    pub var_naive: f64,
    pub var_w: f64,
    pub var_pu: f64,
    pub var_ap: f64,
    pub ap_lt_naive: Comparison,
    pub ap_lt_w: Comparison,
    pub w_lt_pu: Comparison,
    /// Every variance is zero (no pair has `0 < yπ < 1`).
    pub degenerate: bool,
}

impl VarianceOrdering {
    pub fn violated(&self) -> bool {
        [self.ap_lt_naive, self.ap_lt_w, self.w_lt_pu].contains(&Comparison::Violated)
    }

    pub fn all_strict(&self) -> bool {
        [self.ap_lt_naive, self.ap_lt_w, self.w_lt_pu]
            .iter()
            .all(|c| *c == Comparison::Holds)
    }
}

/// Compare the four closed-form variances. Comparisons within a relative
/// `1e-12` count as ties rather than violations.
pub fn check_variance_ordering(truth: &GroundTruth, est: &PairEstimates, delta: f64) -> Result<VarianceOrdering> {
    let loss = LossSpec::zero_one(delta);
    let var = |e| variance_closed_form(e, truth, est, &loss);
    let (var_naive, var_w, var_pu, var_ap) = (var(Estimator::Naive)?, var(Estimator::W)?, var(Estimator::Pu)?, var(Estimator::Ap)?);
    let tol = 1e-12;
    Ok(VarianceOrdering {
        var_naive,
        var_w,
        var_pu,
        var_ap,
        ap_lt_naive: Comparison::of(var_ap, var_naive, tol),
        ap_lt_w: Comparison::of(var_ap, var_w, tol),
        w_lt_pu: Comparison::of(var_w, var_pu, tol),
        degenerate: [var_naive, var_w, var_pu, var_ap].iter().all(|v| *v == 0.0),
    })
}

/// Biases with positive predictions dropped, summed over unlinked pairs only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSet {
    pub naive: f64,
    pub w: f64,
    pub pu: f64,
    pub ap: f64,
}

pub fn approximate_biases(truth: &GroundTruth, est: &PairEstimates, o: &[bool], delta: f64) -> Result<BiasSet> {
    check_truth(truth, est)?;
    if o.len() != truth.len() {
        return Err(Error::Shape(format!("{} labels vs {} pairs", o.len(), truth.len())));
    }
    let (mut naive, mut w, mut ap, mut count) = (0.0, 0.0, 0.0, 0usize);
    for k in (0..o.len()).filter(|&k| !o[k]) {
        let (y, pi, yh, ph) = (truth.y[k], truth.pi[k], est.y_hat[k], est.pi_hat[k]);
        naive += y * (1.0 - pi);
        w += y * (1.0 - pi / ph);
        ap += (1.0 - pi) * y - (1.0 - pi * y) * tau(yh, ph);
        count += 1;
    }
    if count == 0 {
        return Ok(BiasSet {
            naive: 0.0,
            w: 0.0,
            pu: 0.0,
            ap: 0.0,
        });
    }
    let scale = delta / count as f64;
    Ok(BiasSet {
        naive: scale * naive.abs(),
        w: scale * w.abs(),
        pu: scale * w.abs(),
        ap: scale * ap.abs(),
    })
}

pub fn exact_biases(truth: &GroundTruth, est: &PairEstimates, delta: f64) -> Result<BiasSet> {
    let loss = LossSpec::zero_one(delta);
    Ok(BiasSet {
        naive: bias_closed_form(Estimator::Naive, truth, est, &loss)?,
        w: bias_closed_form(Estimator::W, truth, est, &loss)?,
        pu: bias_closed_form(Estimator::Pu, truth, est, &loss)?,
        ap: bias_closed_form(Estimator::Ap, truth, est, &loss)?,
    })
}

/// Lower bound `π / (2 - π)` on `π̂` in the sufficient bias condition.
pub fn propensity_lower_bound(pi: f64) -> f64 {
    pi / (2.0 - pi)
}

/// Upper multiplier `c` in `ŷ < c·y` for the added-positive estimator.
pub fn ap_link_multiplier(pi: f64, y: f64, pi_hat: f64) -> f64 {
    2.0 * (1.0 - pi) / (1.0 - pi_hat - pi * y + (2.0 - pi) * pi_hat * y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConditionReport {
    /// Pairs violating `π/(2-π) < π̂ < 1`.
    pub flagged_propensity: Vec<usize>,
    /// Pairs violating `0 < ŷ < c·y`.
    pub flagged_link: Vec<usize>,
    pub propensity_condition: bool,
    pub ap_condition: bool,
    pub approximate: BiasSet,
    pub exact: BiasSet,
    /// `Some(ok)` when the propensity condition holds on every pair and some
    /// pair is unlinked, with `ok` = `B(w) = B(PU) < B(naive)` for the
    /// approximate biases.
    pub w_pu_below_naive: Option<bool>,
    /// `Some(ok)` when both conditions hold, with `ok` = `B(AP) < B(naive)`.
    pub ap_below_naive: Option<bool>,
}

impl BiasConditionReport {
    pub fn violated(&self) -> bool {
        self.w_pu_below_naive == Some(false) || self.ap_below_naive == Some(false)
    }
}

/// Evaluate the sufficient conditions for lower-than-naive bias and, when
/// they hold, whether the approximate biases are ordered accordingly.
pub fn check_bias_conditions(truth: &GroundTruth, est: &PairEstimates, o: &[bool], delta: f64) -> Result<BiasConditionReport> {
    check_truth(truth, est)?;
    let mut flagged_propensity = Vec::new();
    let mut flagged_link = Vec::new();
    for k in 0..truth.len() {
        let (y, pi, yh, ph) = (truth.y[k], truth.pi[k], est.y_hat[k], est.pi_hat[k]);
        if !(propensity_lower_bound(pi) < ph && ph < 1.0) {
            flagged_propensity.push(k);
        }
        if !(0.0 < yh && yh < ap_link_multiplier(pi, y, ph) * y) {
            flagged_link.push(k);
        }
    }
    let approximate = approximate_biases(truth, est, o, delta)?;
    let exact = exact_biases(truth, est, delta)?;
    // With every pair linked the approximate biases are all zero and there
    // is nothing to compare.
    let has_unlinked = o.iter().any(|&x| !x);
    let propensity_condition = flagged_propensity.is_empty();
    let ap_condition = propensity_condition && flagged_link.is_empty();
    let w_pu_below_naive = (propensity_condition && has_unlinked)
        .then_some(approximate.w == approximate.pu && approximate.w < approximate.naive);
    let ap_below_naive = (ap_condition && has_unlinked).then_some(approximate.ap < approximate.naive);
    Ok(BiasConditionReport {
        flagged_propensity,
        flagged_link,
        propensity_condition,
        ap_condition,
        approximate,
        exact,
        w_pu_below_naive,
        ap_below_naive,
    })
}

/// Empirical Rademacher complexity of an estimator over a finite family of
/// `(π̂, ŷ)` candidates; the supremum is taken by enumeration.
pub fn empirical_rademacher(
    o: &[bool],
    family: &[PairEstimates],
    which: Estimator,
    loss: &LossSpec,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if draws == 0 {
        return Err(Error::config("draws", "need at least one Rademacher draw"));
    }
    let terms: Vec<Vec<f64>> = family
        .iter()
        .map(|f| risk(which, o, f, loss, true).map(|r| r.per_pair_terms.unwrap_or_default()))
        .collect::<Result<_>>()?;
    let u = o.len() as f64;
    let mut rng = crate::rng_from_seed(seed);
    let mut sigma = vec![0.0; o.len()];
    let mut total = 0.0;
    for _ in 0..draws {
        for s in sigma.iter_mut() {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let best = terms
            .iter()
            .map(|t| t.iter().zip(&sigma).map(|(r, s)| r * s).sum::<f64>() / u)
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / draws as f64)
}

/// Concentration term `M = sqrt(4 η² log(2/δ) / (ε² |U|))`.
pub fn mcdiarmid_constant(eta: f64, epsilon: f64, n_pairs: usize, confidence: f64) -> f64 {
    (4.0 * eta * eta / (epsilon * epsilon * n_pairs as f64) * (2.0 / confidence).ln()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one(y_hat: f64, pi_hat: f64) -> PairEstimates {
        PairEstimates::new(vec![y_hat], vec![pi_hat]).unwrap()
    }

    fn truth1(y: f64, pi: f64) -> GroundTruth {
        GroundTruth::new(vec![y], vec![pi]).unwrap()
    }

    const ZO: LossSpec = LossSpec {
        kind: LossKind::ZeroOne,
        delta: 1.0,
    };

    #[test]
    fn true_risk_examples() {
        let est = PairEstimates::new(vec![0.1, 0.2], vec![1.0, 1.0]).unwrap();
        let t = GroundTruth::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(true_risk(&t, &est, &ZO).unwrap().value, 0.0);
        assert_abs_diff_eq!(true_risk(&truth1(0.8, 1.0), &one(0.2, 1.0), &ZO).unwrap().value, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(true_risk(&truth1(0.8, 1.0), &one(0.7, 1.0), &ZO).unwrap().value, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn naive_examples() {
        let est = PairEstimates::new(vec![0.9, 0.1], vec![1.0, 1.0]).unwrap();
        assert_eq!(risk_naive(&[true, false], &est, &ZO).unwrap().value, 0.0);
        assert_eq!(risk_naive(&[true], &one(0.1, 1.0), &ZO).unwrap().value, 1.0);
        let est = PairEstimates::new(vec![0.1, 0.1], vec![1.0, 1.0]).unwrap();
        assert_eq!(risk_naive(&[true, false], &est, &ZO).unwrap().value, 0.5);
    }

    #[test]
    fn w_examples() {
        assert_abs_diff_eq!(risk_w(&[true], &one(0.3, 0.8), &ZO).unwrap().value, 1.25, epsilon = 1e-15);
        // ŷ = 1 kills the negative weight.
        assert_eq!(risk_w(&[false], &one(1.0, 0.4), &ZO).unwrap().value, 0.0);
        assert_eq!(risk_w(&[false], &one(1.0, 0.4), &LossSpec::log()).unwrap().value, 0.0);
        assert_eq!(risk_w(&[false], &one(0.2, 0.4), &ZO).unwrap().value, 0.0);
    }

    #[test]
    fn w_rejects_low_propensity() {
        assert!(matches!(
            risk_w(&[true], &one(0.3, 1e-4), &ZO),
            Err(Error::PropensityBelowFloor { .. })
        ));
    }

    #[test]
    fn pu_examples() {
        assert_abs_diff_eq!(risk_pu(&[true], &one(0.7, 0.5), &ZO).unwrap().value, -1.0, epsilon = 1e-15);
        assert_eq!(risk_pu(&[false], &one(0.2, 0.5), &ZO).unwrap().value, 0.0);
        // π̂ = 1 and ŷ > 0.5 collapse PU onto naive with ô = 1.
        let o = [true, false, true, false];
        let est = PairEstimates::new(vec![0.6, 0.7, 0.8, 0.9], vec![1.0; 4]).unwrap();
        let pu = risk_pu(&o, &est, &ZO).unwrap().value;
        assert_eq!(pu, risk_naive(&o, &est, &ZO).unwrap().value);
        assert_eq!(risk_pu(&[true; 4], &est, &ZO).unwrap().value, 0.0);
        assert_eq!(risk_ap(&[true; 4], &est, &ZO).unwrap().value, 0.0);
    }

    #[test]
    fn ap_examples() {
        assert_abs_diff_eq!(psi(0.5, 0.5), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tau(0.5, 0.5), 1.0 / 3.0, epsilon = 1e-15);
        // ô = 1(0.5 ≥ 0.5) = 1, so δ(0, ô) = 1 and δ(1, ô) = 0.
        let v = risk_ap(&[false], &one(0.5, 0.5), &ZO).unwrap().value;
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-15);
        // Just below the threshold ô = 0 and only the added positive counts.
        let y = 0.5 - 1e-12;
        let v = risk_ap(&[false], &one(y, 0.5), &ZO).unwrap().value;
        assert_abs_diff_eq!(v, tau(y, 0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-11);
        assert_eq!(risk_ap(&[true], &one(0.9, 0.5), &ZO).unwrap().value, 0.0);
        // π̂ = 1 reduces AP to naive.
        let o = [true, false, false];
        let est = PairEstimates::new(vec![0.3, 0.6, 0.2], vec![1.0; 3]).unwrap();
        assert_eq!(
            risk_ap(&o, &est, &ZO).unwrap().value,
            risk_naive(&o, &est, &ZO).unwrap().value
        );
    }

    #[test]
    fn bias_examples() {
        let all_exposed = GroundTruth::new(vec![0.3, 0.9], vec![1.0, 1.0]).unwrap();
        let est = PairEstimates::new(vec![0.4, 0.6], vec![0.5, 0.5]).unwrap();
        assert_eq!(bias_closed_form(Estimator::Naive, &all_exposed, &est, &ZO).unwrap(), 0.0);
        assert_abs_diff_eq!(
            bias_closed_form(Estimator::Naive, &truth1(0.8, 0.6), &one(0.2, 0.6), &ZO).unwrap(),
            0.32,
            epsilon = 1e-15
        );
        let t = GroundTruth::new(vec![0.3, 0.7, 0.1], vec![0.2, 0.9, 0.5]).unwrap();
        let matched = PairEstimates::new(t.y.clone(), t.pi.clone()).unwrap();
        assert_abs_diff_eq!(bias_closed_form(Estimator::W, &t, &matched, &ZO).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bias_closed_form(Estimator::Ap, &t, &matched, &ZO).unwrap(), 0.0, epsilon = 1e-15);
        assert!(bias_closed_form(Estimator::W, &t, &matched, &LossSpec::log()).is_err());
    }

    #[test]
    fn variance_examples() {
        for e in Estimator::OBSERVABLE {
            assert_eq!(variance_closed_form(e, &truth1(0.0, 0.7), &one(0.3, 0.5), &ZO).unwrap(), 0.0);
        }
        assert_abs_diff_eq!(
            variance_closed_form(Estimator::Naive, &truth1(0.8, 0.5), &one(0.3, 0.5), &ZO).unwrap(),
            0.24,
            epsilon = 1e-15
        );
        let naive = variance_closed_form(Estimator::Naive, &truth1(0.8, 0.5), &one(0.7, 0.5), &ZO).unwrap();
        let pu = variance_closed_form(Estimator::Pu, &truth1(0.8, 0.5), &one(0.7, 0.5), &ZO).unwrap();
        assert_abs_diff_eq!(pu, naive / 0.25, epsilon = 1e-15);
        assert!(variance_closed_form(Estimator::Naive, &truth1(0.8, 0.5), &one(0.7, 0.5), &LossSpec::log()).is_err());
    }

    #[test]
    fn variance_ordering_degenerate_and_limit() {
        let r = check_variance_ordering(&truth1(0.0, 0.5), &one(0.3, 0.5), 1.0).unwrap();
        assert!(r.degenerate);
        assert!(!r.violated());
        // π̂ → 1: ψ → 1, so the orderings tighten towards equality.
        let t = GroundTruth::new(vec![0.4, 0.6], vec![0.5, 0.5]).unwrap();
        let est = PairEstimates::new(vec![0.3, 0.7], vec![1.0 - 1e-9, 1.0 - 1e-9]).unwrap();
        let r = check_variance_ordering(&t, &est, 1.0).unwrap();
        assert!(!r.violated());
        assert!((r.var_pu - r.var_ap) / r.var_pu < 1e-6);
    }

    #[test]
    fn bias_condition_examples() {
        assert_abs_diff_eq!(propensity_lower_bound(0.6), 0.6 / 1.4, epsilon = 1e-15);
        assert!(propensity_lower_bound(0.6) < 0.5);
        for pi in [0.1, 0.5, 0.9, 0.99] {
            assert!(propensity_lower_bound(pi) < pi);
        }
        let t = truth1(0.3, 0.6);
        let r = check_bias_conditions(&t, &one(0.2, 0.5), &[false], 1.0).unwrap();
        assert!(r.propensity_condition);
        assert_eq!(r.w_pu_below_naive, Some(true));
        let r = check_bias_conditions(&t, &one(0.2, 0.3), &[false], 1.0).unwrap();
        assert_eq!(r.flagged_propensity, vec![0]);
        assert_eq!(r.w_pu_below_naive, None);
    }

    #[test]
    fn rademacher_basics() {
        let o = vec![true, false, false, true];
        // ŷ = 1 with o ∈ {1, 0}: zero-one w-terms are all zero.
        let zero = PairEstimates::new(vec![1.0; 4], vec![0.5; 4]).unwrap();
        assert_eq!(empirical_rademacher(&o, &[zero], Estimator::W, &ZO, 50, 1).unwrap(), 0.0);
        assert!(matches!(
            empirical_rademacher(&o, &[], Estimator::W, &ZO, 5, 1),
            Err(Error::EmptyFamily)
        ));
        let a = PairEstimates::new(vec![0.2, 0.7, 0.4, 0.9], vec![0.5; 4]).unwrap();
        let b = PairEstimates::new(vec![0.6, 0.1, 0.8, 0.3], vec![0.3; 4]).unwrap();
        let dedup = empirical_rademacher(&o, &[a.clone(), b.clone()], Estimator::W, &ZO, 200, 9).unwrap();
        let dup = empirical_rademacher(&o, &[a.clone(), b.clone(), a, b], Estimator::W, &ZO, 200, 9).unwrap();
        assert_eq!(dedup, dup);
    }

    #[test]
    fn mcdiarmid_value() {
        let m = mcdiarmid_constant(1.0, 0.5, 100, 0.05);
        assert_abs_diff_eq!(m, (16.0 / 100.0 * 40f64.ln()).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn report_json_shape() {
        let r = risk_naive(&[true], &one(0.1, 1.0), &ZO).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v, serde_json::json!({"estimator": "naive", "value": 1.0, "n_pairs": 1}));
    }
}
