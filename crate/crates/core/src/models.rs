//! Link-probability and propensity models, and the combined training loss
//! with hand-derived gradients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{clamp_prob, log_loss, psi, Estimator, LossKind, PairEstimates, LOG_LOSS_CLAMP};
use crate::graph::{Graph, PairUniverse};
use crate::stats::sigmoid;
use crate::PROPENSITY_FLOOR;

/// `ŷ_ij = σ(wᵀ(h_i ⊙ h_j) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinkModel {
    pub fn zeros(dim: usize) -> Self {
        LinkModel { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn logit(&self, h_i: &[f64], h_j: &[f64]) -> f64 {
        self.w
            .iter()
            .zip(h_i.iter().zip(h_j))
            .map(|(w, (a, b))| w * a * b)
            .sum::<f64>()
            + self.b
    }

    pub fn predict_link_prob(&self, h_i: &[f64], h_j: &[f64]) -> Result<f64> {
        if h_i.len() != self.dim() || h_j.len() != self.dim() {
            return Err(Error::Shape(format!(
                "model dimension {} vs features {} and {}",
                self.dim(),
                h_i.len(),
                h_j.len()
            )));
        }
        Ok(sigmoid(self.logit(h_i, h_j)))
    }
}

/// Category-pair propensity table, `π̂(u, v) = clamp(σ(θ[u, v]), ε, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    categories: usize,
    /// Row-major `C × C` logits.
    logits: Vec<f64>,
}

impl PropensityModel {
    pub fn new(categories: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != categories * categories {
            return Err(Error::Shape(format!(
                "{} logits for {categories} categories",
                logits.len()
            )));
        }
        Ok(PropensityModel { categories, logits })
    }

    pub fn constant(categories: usize, logit: f64) -> Self {
        PropensityModel {
            categories,
            logits: vec![logit; categories * categories],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("propensity logits must be square".into()));
        }
        Ok(PropensityModel {
            categories: c,
            logits: rows.concat(),
        })
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.logits.chunks(self.categories.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn index(&self, cat_i: usize, cat_j: usize) -> Result<usize> {
        for c in [cat_i, cat_j] {
            if c >= self.categories {
                return Err(Error::CategoryOutOfRange {
                    category: c,
                    categories: self.categories,
                });
            }
        }
        Ok(cat_i * self.categories + cat_j)
    }

    pub fn predict_propensity(&self, cat_i: usize, cat_j: usize) -> Result<f64> {
        let k = self.index(cat_i, cat_j)?;
        Ok(clamp_propensity(sigmoid(self.logits[k])))
    }

    /// Matrix of clamped propensities.
    pub fn table(&self) -> Vec<Vec<f64>> {
        self.logits
            .chunks(self.categories.max(1))
            .map(|r| r.iter().map(|&t| clamp_propensity(sigmoid(t))).collect())
            .collect()
    }
}

pub fn clamp_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_FLOOR, 1.0)
}

/// Parameter-shaped gradients of the combined loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub d_w: Vec<f64>,
    pub d_b: f64,
    /// Row-major `C × C`.
    pub d_logits: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(dim: usize, categories: usize) -> Self {
        GradientBundle {
            d_w: vec![0.0; dim],
            d_b: 0.0,
            d_logits: vec![0.0; categories * categories],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_b.is_finite() && self.d_w.iter().chain(&self.d_logits).all(|g| g.is_finite())
    }
}

/// What the training loss is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Likelihood of `o` under `ŷ` alone; no propensity model.
    NoProp,
    /// Likelihood of `o` under `ŷ π̂`.
    Mle,
    W,
    Pu,
    Ap,
}

impl Objective {
    pub fn risk_estimator(self) -> Option<Estimator> {
        match self {
            Objective::W => Some(Estimator::W),
            Objective::Pu => Some(Estimator::Pu),
            Objective::Ap => Some(Estimator::Ap),
            Objective::NoProp | Objective::Mle => None,
        }
    }

    pub fn uses_propensity(self) -> bool {
        self != Objective::NoProp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_l: f64,
    pub lambda_r: f64,
    pub objective: Objective,
    /// Loss inside the risk term. Only the log-loss is differentiable.
    pub loss: LossKind,
    /// Treat estimator weights as constants when differentiating.
    pub detach_weights: bool,
}

impl LossConfig {
    pub fn new(objective: Objective, lambda_l: f64, lambda_r: f64) -> Self {
        LossConfig {
            lambda_l,
            lambda_r,
            objective,
            loss: LossKind::Log,
            detach_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l > 0.0) {
            return Err(Error::config("lambda_l", "must be > 0 to rule out trivial solutions"));
        }
        if !(self.lambda_r >= 0.0) {
            return Err(Error::config("lambda_r", "must be >= 0"));
        }
        if self.lambda_r > 0.0 && self.objective.risk_estimator().is_some() && self.loss != LossKind::Log {
            return Err(Error::config("loss", "training needs the differentiable log-loss"));
        }
        Ok(())
    }

    fn risk_term_active(&self) -> Option<Estimator> {
        if self.lambda_r > 0.0 {
            self.objective.risk_estimator()
        } else {
            None
        }
    }
}

/// One training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPair {
    pub src: usize,
    pub dst: usize,
    pub label: bool,
    /// Importance weight of the example within its batch.
    pub weight: f64,
    /// Known multiplicative exposure factor applied on top of `π̂` (1 when
    /// exposure is governed by the propensity table alone).
    pub exposure: f64,
}

impl BatchPair {
    pub fn new(src: usize, dst: usize, label: bool) -> Self {
        BatchPair {
            src,
            dst,
            label,
            weight: 1.0,
            exposure: 1.0,
        }
    }
}

/// Derivative of the clamped log-loss w.r.t. its probability argument.
fn d_log_loss(u: bool, p: f64) -> f64 {
    if p <= LOG_LOSS_CLAMP || p >= 1.0 - LOG_LOSS_CLAMP {
        return 0.0;
    }
    if u {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// `(∂ψ/∂ŷ, ∂ψ/∂π̂)`.
fn d_psi(y: f64, p: f64) -> (f64, f64) {
    let den = 1.0 - p * y;
    if den <= 0.0 {
        return (0.0, 0.0);
    }
    let den2 = den * den;
    ((p - 1.0) / den2, y * (1.0 - y) / den2)
}

/// Value and partials `(∂/∂ŷ, ∂/∂π̂)` of one pair's loss contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub d_y: f64,
    pub d_pi: f64,
}

/// Negative log-likelihood `-o log(ŷπ̂) - (1-o) log(1-ŷπ̂)`.
pub fn nll_pair(o: bool, y: f64, pi: f64) -> PairLoss {
    let s = y * pi;
    let g = d_log_loss(o, s);
    PairLoss {
        value: log_loss(o, s),
        d_y: g * pi,
        d_pi: g * y,
    }
}

/// Log-loss variant of an estimator's per-pair term.
pub fn risk_pair(which: Estimator, o: bool, y: f64, pi: f64, detach: bool) -> PairLoss {
    let (l1, l0) = (log_loss(true, y), log_loss(false, y));
    let (dl1, dl0) = (d_log_loss(true, y), d_log_loss(false, y));
    let keep = if detach { 0.0 } else { 1.0 };
    match (which, o) {
        (Estimator::Naive, true) | (Estimator::Ap, true) => PairLoss {
            value: l1,
            d_y: dl1,
            d_pi: 0.0,
        },
        (Estimator::Naive, false) | (Estimator::Pu, false) => PairLoss {
            value: l0,
            d_y: dl0,
            d_pi: 0.0,
        },
        (Estimator::W, true) => PairLoss {
            value: l1 / pi,
            d_y: dl1 / pi,
            d_pi: -keep * l1 / (pi * pi),
        },
        (Estimator::W, false) => {
            let s = psi(y, pi);
            let (sy, sp) = d_psi(y, pi);
            if s == 0.0 && detach {
                return PairLoss { value: 0.0, d_y: 0.0, d_pi: 0.0 };
            }
            PairLoss {
                value: if s == 0.0 { 0.0 } else { s * l0 },
                d_y: keep * sy * l0 + s * dl0,
                d_pi: keep * sp * l0,
            }
        }
        (Estimator::Pu, true) => PairLoss {
            value: l1 / pi + (1.0 - 1.0 / pi) * l0,
            d_y: dl1 / pi + (1.0 - 1.0 / pi) * dl0,
            d_pi: keep * (l0 - l1) / (pi * pi),
        },
        (Estimator::Ap, false) => {
            let s = psi(y, pi);
            let t = 1.0 - s;
            let (sy, sp) = d_psi(y, pi);
            PairLoss {
                value: if s == 0.0 { t * l1 } else { s * l0 + t * l1 },
                d_y: keep * sy * (l0 - l1) + s * dl0 + t * dl1,
                d_pi: keep * sp * (l0 - l1),
            }
        }
        (Estimator::True, _) => PairLoss {
            value: 0.0,
            d_y: 0.0,
            d_pi: 0.0,
        },
    }
}

/// Combined objective `λ_L ℒ + λ_R R̂`, averaged over the batch with its
/// importance weights, together with its exact gradient.
pub fn loss_and_gradients(
    link: &LinkModel,
    prop: &PropensityModel,
    batch: &[BatchPair],
    g: &Graph,
    cfg: &LossConfig,
) -> Result<(f64, GradientBundle)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::config("batch", "batch is empty"));
    }
    if link.dim() != g.dim() {
        return Err(Error::Shape(format!("model dimension {} vs graph {}", link.dim(), g.dim())));
    }
    let risk_term = cfg.risk_term_active();
    let use_prop = cfg.objective.uses_propensity();
    let mut grads = GradientBundle::zeros(link.dim(), prop.categories());
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for p in batch {
        let (hi, hj) = (g.features(p.src), g.features(p.dst));
        let y = sigmoid(link.logit(hi, hj));
        let (pi, cell, d_pi_d_theta) = if use_prop {
            let cell = prop.index(g.category(p.src), g.category(p.dst))?;
            let s = sigmoid(prop.logits[cell]);
            let raw = p.exposure * s;
            let pi = clamp_propensity(raw);
            let deriv = if raw > PROPENSITY_FLOOR && raw < 1.0 {
                p.exposure * s * (1.0 - s)
            } else {
                0.0
            };
            (pi, Some(cell), deriv)
        } else {
            (1.0, None, 0.0)
        };
        let nll = nll_pair(p.label, y, pi);
        let mut value = cfg.lambda_l * nll.value;
        let mut d_y = cfg.lambda_l * nll.d_y;
        let mut d_pi = cfg.lambda_l * nll.d_pi;
        if let Some(which) = risk_term {
            let r = risk_pair(which, p.label, y, pi, cfg.detach_weights);
            value += cfg.lambda_r * r.value;
            d_y += cfg.lambda_r * r.d_y;
            d_pi += cfg.lambda_r * r.d_pi;
        }
        let w = p.weight;
        total += w * value;
        weight_sum += w;
        let d_z = w * d_y * y * (1.0 - y);
        for ((gw, a), b) in grads.d_w.iter_mut().zip(hi).zip(hj) {
            *gw += d_z * a * b;
        }
        grads.d_b += d_z;
        if let Some(cell) = cell {
            grads.d_logits[cell] += w * d_pi * d_pi_d_theta;
        }
    }
    if !(weight_sum > 0.0) {
        return Err(Error::config("batch", "importance weights must sum to a positive value"));
    }
    let inv = 1.0 / weight_sum;
    grads.d_w.iter_mut().for_each(|v| *v *= inv);
    grads.d_b *= inv;
    grads.d_logits.iter_mut().for_each(|v| *v *= inv);
    let loss = total * inv;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} or its gradient")));
    }
    Ok((loss, grads))
}

/// Model outputs on every ordered pair of `g`, in universe order.
pub fn pair_estimates(g: &Graph, link: &LinkModel, prop: Option<&PropensityModel>) -> Result<PairEstimates> {
    let u = PairUniverse::new(g.n())?;
    let mut y_hat = Vec::with_capacity(u.len());
    let mut pi_hat = Vec::with_capacity(u.len());
    for (i, j) in u.iter() {
        y_hat.push(sigmoid(link.logit(g.features(i), g.features(j))));
        pi_hat.push(match prop {
            Some(p) => p.predict_propensity(g.category(i), g.category(j))?,
            None => 1.0,
        });
    }
    PairEstimates::new(y_hat, pi_hat)
}

/// `ŷ` on every ordered pair (clamped away from 0 and 1 for log-losses).
pub fn link_probabilities(g: &Graph, link: &LinkModel) -> Result<Vec<f64>> {
    let u = PairUniverse::new(g.n())?;
    Ok(u.iter()
        .map(|(i, j)| clamp_prob(sigmoid(link.logit(g.features(i), g.features(j)))))
        .collect())
}

/// On-disk checkpoint `{"w": [...], "b": ..., "theta": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub w: Vec<f64>,
    pub b: f64,
    pub theta: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(link: &LinkModel, prop: &PropensityModel) -> Self {
        Checkpoint {
            w: link.w.clone(),
            b: link.b,
            theta: prop.rows(),
        }
    }

    pub fn into_models(self) -> Result<(LinkModel, PropensityModel)> {
        let prop = PropensityModel::from_rows(&self.theta)?;
        Ok((LinkModel { w: self.w, b: self.b }, prop))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
