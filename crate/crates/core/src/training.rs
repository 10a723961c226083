//! Minibatch training of the link and propensity models.
//!
//! Each batch holds `batch_size` positives drawn from the observed edges and
//! `k` negatives per positive drawn uniformly from the unlinked pairs. The
//! negatives carry importance weight `(|U| - |E|) / (k |E|)` so the weighted
//! batch mean is an unbiased estimate of the mean over the whole universe.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LossKind;
use crate::graph::{Graph, PairUniverse};
use crate::models::{loss_and_gradients, nll_pair, BatchPair, LinkModel, LossConfig, Objective, PropensityModel};
use crate::stats::sigmoid;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Risk estimator used in the training objective. `None` trains the link
/// model alone on the observed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainEstimator {
    None,
    W,
    Pu,
    Ap,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    10
}
fn default_lambda_l() -> f64 {
    1.0
}
fn default_lambda_r() -> f64 {
    10.0
}
fn default_k() -> usize {
    4
}
fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Positives per batch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lambda_l")]
    pub lambda_l: f64,
    #[serde(default = "default_lambda_r")]
    pub lambda_r: f64,
    /// Absent means maximum likelihood (`lambda_r` must then be 0).
    #[serde(default)]
    pub estimator: Option<TrainEstimator>,
    #[serde(default = "default_k")]
    pub negatives_per_positive: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub detach_weights: bool,
    /// Stop after this many epochs without validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Keep the propensity table at its initial value.
    #[serde(default)]
    pub freeze_propensity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            lambda_l: default_lambda_l(),
            lambda_r: default_lambda_r(),
            estimator: Some(TrainEstimator::W),
            negatives_per_positive: default_k(),
            seed: 0,
            optimizer: Optimizer::Adam,
            detach_weights: false,
            patience: None,
            freeze_propensity: false,
        }
    }
}

impl TrainConfig {
    /// Maximum-likelihood baseline: propensity-aware likelihood, no risk term.
    pub fn mle() -> Self {
        TrainConfig {
            estimator: None,
            lambda_r: 0.0,
            ..Default::default()
        }
    }

    pub fn no_prop() -> Self {
        TrainConfig {
            estimator: Some(TrainEstimator::None),
            lambda_r: 0.0,
            ..Default::default()
        }
    }

    pub fn weighted(estimator: TrainEstimator) -> Self {
        TrainConfig {
            estimator: Some(estimator),
            ..Default::default()
        }
    }

    pub fn objective(&self) -> Objective {
        match self.estimator {
            None => Objective::Mle,
            Some(TrainEstimator::None) => Objective::NoProp,
            Some(TrainEstimator::W) => Objective::W,
            Some(TrainEstimator::Pu) => Objective::Pu,
            Some(TrainEstimator::Ap) => Objective::Ap,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        let objective = self.objective();
        let lambda_r = if objective.risk_estimator().is_some() { self.lambda_r } else { 0.0 };
        LossConfig {
            lambda_l: self.lambda_l,
            lambda_r,
            objective,
            loss: LossKind::Log,
            detach_weights: self.detach_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be a positive finite number"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::config("negatives_per_positive", "must be >= 1"));
        }
        if !(self.lambda_l >= 0.0) {
            return Err(Error::config("lambda_l", "must be >= 0"));
        }
        if !(self.lambda_r >= 0.0) {
            return Err(Error::config("lambda_r", "must be >= 0"));
        }
        if self.lambda_r > 0.0 && !(self.lambda_l > 0.0) {
            return Err(Error::config("lambda_l", "must be > 0 when lambda_r > 0"));
        }
        if !(self.lambda_l > 0.0) {
            return Err(Error::config("lambda_l", "the likelihood term is required"));
        }
        if self.estimator.is_none() && self.lambda_r != 0.0 {
            return Err(Error::config("lambda_r", "must be 0 when no estimator is given (maximum likelihood)"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience", "must be >= 1"));
        }
        Ok(())
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g;
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Negative weight `(|U| - |E|) / (k |E|)`.
pub fn negative_weight(universe: usize, edges: usize, k: usize) -> f64 {
    (universe - edges) as f64 / (k * edges) as f64
}

/// Everything the trainer reads: the observed graph, an optional known
/// exposure factor per pair (universe order) and an optional validation graph.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub graph: &'a Graph,
    pub exposure: Option<&'a [f64]>,
    pub validation: Option<&'a Graph>,
}

impl<'a> TrainData<'a> {
    pub fn new(graph: &'a Graph) -> Self {
        TrainData {
            graph,
            exposure: None,
            validation: None,
        }
    }
}

struct Sampler<'a> {
    data: TrainData<'a>,
    universe: PairUniverse,
    neg_weight: f64,
    k: usize,
}

impl<'a> Sampler<'a> {
    fn new(data: TrainData<'a>, k: usize) -> Result<Self> {
        let g = data.graph;
        let universe = PairUniverse::new(g.n())?;
        if g.edge_count() == 0 {
            return Err(Error::NoEdges);
        }
        if let Some(e) = data.exposure {
            if e.len() != universe.len() {
                return Err(Error::Shape(format!("{} exposures for {} pairs", e.len(), universe.len())));
            }
        }
        Ok(Sampler {
            data,
            universe,
            neg_weight: negative_weight(universe.len(), g.edge_count(), k),
            k,
        })
    }

    fn pair(&self, src: usize, dst: usize, label: bool, weight: f64) -> BatchPair {
        let exposure = self
            .data
            .exposure
            .map_or(1.0, |e| e[self.universe.index_of(src, dst)]);
        BatchPair {
            src,
            dst,
            label,
            weight,
            exposure,
        }
    }

    fn push_negatives(&self, batch: &mut Vec<BatchPair>, rng: &mut Rng) {
        let g = self.data.graph;
        if self.universe.len() == g.edge_count() {
            return;
        }
        for _ in 0..self.k {
            loop {
                let (i, j) = self.universe.pair_at(rng.random_range(0..self.universe.len()));
                if !g.has_edge(i, j) {
                    batch.push(self.pair(i, j, false, self.neg_weight));
                    break;
                }
            }
        }
    }

    fn batch_from(&self, positives: &[(usize, usize)], rng: &mut Rng) -> Vec<BatchPair> {
        let mut batch = Vec::with_capacity(positives.len() * (1 + self.k));
        for &(i, j) in positives {
            batch.push(self.pair(i, j, true, 1.0));
            self.push_negatives(&mut batch, rng);
        }
        batch
    }
}

/// One batch of `cfg.batch_size` positives drawn uniformly (with
/// replacement) from `E`, each followed by `k` weighted negatives.
pub fn sample_batch(g: &Graph, cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<BatchPair>> {
    if cfg.negatives_per_positive == 0 {
        return Err(Error::config("negatives_per_positive", "must be >= 1"));
    }
    let sampler = Sampler::new(TrainData::new(g), cfg.negatives_per_positive)?;
    let edges = g.edges();
    let positives: Vec<_> = (0..cfg.batch_size)
        .map(|_| edges[rng.random_range(0..edges.len())])
        .collect();
    Ok(sampler.batch_from(&positives, rng))
}

/// Mean likelihood term over every pair of `g`.
pub fn full_nll(g: &Graph, link: &LinkModel, prop: &PropensityModel, objective: Objective, exposure: Option<&[f64]>) -> Result<f64> {
    let u = PairUniverse::new(g.n())?;
    let mut total = 0.0;
    for (k, (i, j)) in u.iter().enumerate() {
        let y = sigmoid(link.logit(g.features(i), g.features(j)));
        let pi = if objective.uses_propensity() {
            let s = sigmoid(prop.logits()[prop.index(g.category(i), g.category(j))?]);
            crate::models::clamp_propensity(exposure.map_or(1.0, |e| e[k]) * s)
        } else {
            1.0
        };
        total += nll_pair(g.has_edge(i, j), y, pi).value;
    }
    Ok(total / u.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Validation likelihood per epoch, when a validation graph was given.
    pub validation_trace: Vec<f64>,
    pub link: LinkModel,
    pub propensity: PropensityModel,
    pub epochs_run: usize,
    pub seed: u64,
}

/// Small symmetric initialisation, `U(-0.01, 0.01)` for every parameter.
pub fn init_models(dim: usize, categories: usize, rng: &mut Rng) -> (LinkModel, PropensityModel) {
    let mut draw = || rng.random_range(-0.01..0.01);
    let w = (0..dim).map(|_| draw()).collect();
    let b = draw();
    let logits = (0..categories * categories).map(|_| draw()).collect();
    (
        LinkModel { w, b },
        PropensityModel::new(categories, logits).expect("square"),
    )
}

fn pack(link: &LinkModel, prop: &PropensityModel) -> Vec<f64> {
    let mut p = link.w.clone();
    p.push(link.b);
    p.extend_from_slice(prop.logits());
    p
}

fn unpack(params: &[f64], link: &mut LinkModel, prop: &mut PropensityModel) {
    let d = link.w.len();
    link.w.copy_from_slice(&params[..d]);
    link.b = params[d];
    prop.logits_mut().copy_from_slice(&params[d + 1..]);
}

pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    train_from(TrainData::new(g), cfg, None)
}

/// Train from `init` (or a fresh seeded initialisation).
pub fn train_from(data: TrainData<'_>, cfg: &TrainConfig, init: Option<(LinkModel, PropensityModel)>) -> Result<TrainReport> {
    cfg.validate()?;
    let loss_cfg = cfg.loss_config();
    loss_cfg.validate()?;
    let g = data.graph;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let (mut link, mut prop) = match init {
        Some(models) => models,
        None => init_models(g.dim(), g.categories(), &mut rng),
    };
    if link.dim() != g.dim() || prop.categories() < g.categories() {
        return Err(Error::Shape("initial models do not match the graph".into()));
    }
    let mut report = TrainReport {
        loss_trace: Vec::new(),
        validation_trace: Vec::new(),
        link: link.clone(),
        propensity: prop.clone(),
        epochs_run: 0,
        seed: cfg.seed,
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let sampler = Sampler::new(data, cfg.negatives_per_positive)?;
    let mut params = pack(&link, &prop);
    let mut adam = AdamState::new(params.len());
    let mut flat = vec![0.0; params.len()];
    let mut positives = g.edges().to_vec();
    let mut best: Option<(f64, LinkModel, PropensityModel)> = None;
    let mut stale = 0usize;
    for epoch in 0..cfg.epochs {
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in positives.chunks(cfg.batch_size) {
            let batch = sampler.batch_from(chunk, &mut rng);
            let (loss, grads) = loss_and_gradients(&link, &prop, &batch, g, &loss_cfg).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {batches}: {msg}")),
                other => other,
            })?;
            let d = grads.d_w.len();
            flat[..d].copy_from_slice(&grads.d_w);
            flat[d] = grads.d_b;
            if cfg.freeze_propensity {
                flat[d + 1..].iter_mut().for_each(|v| *v = 0.0);
            } else {
                flat[d + 1..].copy_from_slice(&grads.d_logits);
            }
            match cfg.optimizer {
                Optimizer::Adam => adam_step(&mut params, &flat, &mut adam, cfg.learning_rate)?,
                Optimizer::Sgd => params
                    .iter_mut()
                    .zip(&flat)
                    .for_each(|(p, g)| *p -= cfg.learning_rate * g),
            }
            unpack(&params, &mut link, &mut prop);
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: mean loss {mean}")));
        }
        report.loss_trace.push(mean);
        report.epochs_run = epoch + 1;
        if let Some(val) = data.validation {
            let v = full_nll(val, &link, &prop, loss_cfg.objective, None)?;
            report.validation_trace.push(v);
            if let Some(patience) = cfg.patience {
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, link.clone(), prop.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, l, p)) = best {
        link = l;
        prop = p;
    }
    report.link = link;
    report.propensity = prop;
    Ok(report)
}
