//! Feedback-loop simulation.
//!
//! The stylised process tracks the simplex `κ` of recommendation shares per
//! category. At each step `n·κ_v` recommendations go to category `v`, users
//! link with probability `q_v = π_v y_v`, the recommender re-estimates
//! category scores from the links and draws the next `κ` from a multinomial.
//! The full pipeline replaces the stylised estimator by a trained model.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PairUniverse;
use crate::models::{link_probabilities, LinkModel, PropensityModel};
use crate::synthesis::{generate_world, sample_observed, GroundTruthWorld, SyntheticSpec};
use crate::training::{init_models, train_from, TrainConfig, TrainData, TrainEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Naive,
    Corrected,
}

/// Starting point of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKappa {
    Uniform,
    ProportionalToQ,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    /// `q_v = π_v y_v` for each category.
    pub q: Vec<f64>,
    /// Link probabilities per category; required in corrected mode.
    #[serde(default)]
    pub y: Option<Vec<f64>>,
    /// Recommendations per step.
    pub n: u64,
    pub steps: usize,
    pub mode: FeedbackMode,
    #[serde(default)]
    pub seed: u64,
    /// Mix the next-step distribution with the uniform one at this rate.
    #[serde(default)]
    pub exploration: f64,
    #[serde(default = "default_initial")]
    pub initial: InitialKappa,
}

fn default_initial() -> InitialKappa {
    InitialKappa::Uniform
}

impl FeedbackConfig {
    pub fn naive(q: Vec<f64>, n: u64, steps: usize, seed: u64) -> Self {
        FeedbackConfig {
            q,
            y: None,
            n,
            steps,
            mode: FeedbackMode::Naive,
            seed,
            exploration: 0.0,
            initial: InitialKappa::Uniform,
        }
    }

    pub fn corrected(q: Vec<f64>, y: Vec<f64>, n: u64, steps: usize, seed: u64) -> Self {
        FeedbackConfig {
            y: Some(y),
            mode: FeedbackMode::Corrected,
            ..FeedbackConfig::naive(q, n, steps, seed)
        }
    }

    pub fn categories(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() {
            return Err(Error::config("q", "at least one category is required"));
        }
        if self.q.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::config("q", "entries must lie in (0, 1)"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::config("exploration", "must lie in [0, 1]"));
        }
        match (&self.y, self.mode) {
            (None, FeedbackMode::Corrected) => {
                return Err(Error::config("y", "corrected mode needs per-category link probabilities"));
            }
            (Some(y), _) => {
                if y.len() != self.q.len() {
                    return Err(Error::config("y", "must have one entry per category"));
                }
                if y.iter().zip(&self.q).any(|(&y, &q)| !(y > 0.0 && y <= 1.0) || q > y) {
                    return Err(Error::config("y", "entries must lie in (0, 1] and satisfy q <= y"));
                }
            }
            _ => {}
        }
        if let InitialKappa::Explicit(k) = &self.initial {
            if k.len() != self.q.len() || k.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::config("initial", "must be one non-negative share per category"));
            }
            if (k.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::config("initial", "shares must sum to 1"));
            }
        }
        Ok(())
    }

    pub fn initial_kappa(&self) -> Vec<f64> {
        let c = self.categories();
        match &self.initial {
            InitialKappa::Uniform => vec![1.0 / c as f64; c],
            InitialKappa::ProportionalToQ => normalise(&self.q).expect("q is positive"),
            InitialKappa::Explicit(k) => k.clone(),
        }
    }
}

fn normalise(xs: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = xs.iter().sum();
    (s > 0.0).then(|| xs.iter().map(|x| x / s).collect())
}

/// Recommendation shares at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexState {
    pub kappa: Vec<f64>,
    pub t: usize,
}

/// Integer allocation of `n` proportional to `shares`, rounding with the
/// largest-remainder rule so the counts sum to `n`.
pub fn allocate(n: u64, shares: &[f64]) -> Vec<u64> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &v in order.iter().take(n.saturating_sub(assigned) as usize) {
        counts[v] += 1;
    }
    counts
}

fn binomial(trials: u64, p: f64, rng: &mut crate::Rng) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    Binomial::new(trials, p).expect("valid binomial").sample(rng)
}

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial(n: u64, probs: &[f64], rng: &mut crate::Rng) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = vec![0; probs.len()];
    for (v, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if v + 1 == probs.len() {
            out[v] = left;
            break;
        }
        let k = binomial(left, (p / mass).clamp(0.0, 1.0), rng);
        out[v] = k;
        left -= k;
        mass -= p;
    }
    out
}

/// What one step observed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: SimplexState,
    /// Recommendations per category at the current step.
    pub recommended: Vec<u64>,
    /// Links formed per category.
    pub linked: Vec<u64>,
    pub q_hat: Vec<f64>,
    /// Recommendations per category at the next step.
    pub next_counts: Vec<u64>,
}

fn step(state: &SimplexState, cfg: &FeedbackConfig, rng: &mut crate::Rng) -> Result<StepOutcome> {
    let c = cfg.categories();
    if state.kappa.len() != c {
        return Err(Error::Shape(format!("simplex has {} entries for {c} categories", state.kappa.len())));
    }
    let n = cfg.n;
    let recommended = allocate(n, &state.kappa);
    let linked: Vec<u64> = recommended
        .iter()
        .zip(&cfg.q)
        .map(|(&m, &q)| binomial(m, q, rng))
        .collect();
    let q_hat: Vec<f64> = match cfg.mode {
        FeedbackMode::Naive => linked.iter().map(|&k| k as f64 / n as f64).collect(),
        FeedbackMode::Corrected => {
            let y = cfg.y.as_ref().expect("validated");
            linked
                .iter()
                .zip(cfg.q.iter().zip(y))
                .map(|(&k, (&q, &y))| k as f64 * y / (n as f64 * q))
                .collect()
        }
    };
    let e_hat = if c == 1 {
        vec![1.0]
    } else {
        normalise(&q_hat).ok_or_else(|| Error::Degenerate {
            t: state.t,
            msg: "no recommendation produced a link, so every estimated score is zero".into(),
        })?
    };
    let e_hat: Vec<f64> = e_hat
        .iter()
        .map(|e| (1.0 - cfg.exploration) * e + cfg.exploration / c as f64)
        .collect();
    let next_counts = multinomial(n, &e_hat, rng);
    let kappa = next_counts.iter().map(|&k| k as f64 / n as f64).collect();
    Ok(StepOutcome {
        next: SimplexState { kappa, t: state.t + 1 },
        recommended,
        linked,
        q_hat,
        next_counts,
    })
}

/// One step of the uncorrected process: `q̂_v = n_v / n`.
pub fn feedback_step(state: &SimplexState, cfg: &FeedbackConfig, rng: &mut crate::Rng) -> Result<StepOutcome> {
    if cfg.mode != FeedbackMode::Naive {
        return Err(Error::config("mode", "feedback_step runs the naive process"));
    }
    step(state, cfg, rng)
}

/// One step with the propensity divided out: `q̂_v = n_v / (n π_v)`, so the
/// expected score of category `v` is `κ_v y_v`.
pub fn corrected_step(state: &SimplexState, cfg: &FeedbackConfig, rng: &mut crate::Rng) -> Result<StepOutcome> {
    if cfg.mode != FeedbackMode::Corrected || cfg.y.is_none() {
        return Err(Error::config("mode", "corrected_step needs corrected mode with known y"));
    }
    step(state, cfg, rng)
}

/// Limit of `κ_vw^(t)` as `n → ∞` for score ratio `c`: `1 - 1/(1 + c^t)`.
pub fn asymptotic_kappa(c: f64, t: u32) -> f64 {
    1.0 - 1.0 / (1.0 + c.powi(t as i32))
}

/// Relative share `κ_v / (κ_v + κ_w)` (one half when both are zero).
pub fn relative_share(kappa: &[f64], v: usize, w: usize) -> f64 {
    let s = kappa[v] + kappa[w];
    if s > 0.0 {
        kappa[v] / s
    } else {
        0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SimplexState>,
    /// Recommendation counts per step; each row sums to `n`.
    pub counts: Vec<Vec<u64>>,
    /// Links per step (one row fewer than `states`).
    pub linked: Vec<Vec<u64>>,
    pub q_hat: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn kappa_vw(&self, v: usize, w: usize) -> Vec<f64> {
        self.states.iter().map(|s| relative_share(&s.kappa, v, w)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "t,category,kappa,count,q_hat").map_err(io)?;
        for (t, s) in self.states.iter().enumerate() {
            for (v, k) in s.kappa.iter().enumerate() {
                let q = self.q_hat.get(t).map_or(String::new(), |q| format!("{:?}", q[v]));
                writeln!(out, "{t},{v},{k:?},{},{q}", self.counts[t][v]).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }
}

pub fn run_trajectory(cfg: &FeedbackConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut state = SimplexState {
        kappa: cfg.initial_kappa(),
        t: 0,
    };
    let mut traj = Trajectory {
        states: vec![state.clone()],
        counts: vec![allocate(cfg.n, &state.kappa)],
        linked: Vec::new(),
        q_hat: Vec::new(),
    };
    for _ in 0..cfg.steps {
        let out = step(&state, cfg, &mut rng)?;
        traj.linked.push(out.linked);
        traj.q_hat.push(out.q_hat);
        traj.counts.push(out.next_counts);
        state = out.next;
        traj.states.push(state.clone());
    }
    Ok(traj)
}

/// Runs seeds `seed, seed + 1, ...` in parallel.
pub fn run_many(cfg: &FeedbackConfig, seeds: usize) -> Result<Vec<Trajectory>> {
    (0..seeds)
        .into_par_iter()
        .map(|s| {
            let cfg = FeedbackConfig {
                seed: cfg.seed.wrapping_add(s as u64),
                ..cfg.clone()
            };
            run_trajectory(&cfg)
        })
        .collect()
}

/// Whether every pair with `q_v > q_w` moved towards `v` between two states.
pub fn skew_event(q: &[f64], before: &[f64], after: &[f64]) -> bool {
    let c = q.len();
    (0..c).all(|v| {
        (0..c)
            .filter(|&w| q[v] > q[w])
            .all(|w| relative_share(after, v, w) > relative_share(before, v, w))
    })
}

/// Which model drives recommendations in the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Link model trained on the observed graph alone.
    Naive,
    /// Link model trained with the weighted estimator and exposure-aware
    /// propensities.
    Weighted,
}

fn default_recs() -> usize {
    20
}
fn default_iterations() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub world: SyntheticSpec,
    pub train: TrainConfig,
    pub pipeline: Pipeline,
    #[serde(default = "default_recs")]
    pub rec_per_node: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Fix the propensity table of the weighted pipeline at the true values
    /// instead of learning it.
    #[serde(default = "default_true")]
    pub known_propensity: bool,
    /// Optimizer steps per retrain. Overrides `train.epochs` so that the
    /// small interaction graphs of later iterations get the same budget as
    /// the first one.
    #[serde(default)]
    pub steps_per_iteration: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

/// Same-category recommendation share per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// `same_category[t][c]`: expected share of recommendations made to
    /// category-`c` sources that point into category `c`.
    pub same_category: Vec<Vec<f64>>,
    /// Share pooled over all sources.
    pub overall: Vec<f64>,
    /// Training edges available at each iteration.
    pub edges: Vec<usize>,
}

impl PipelineReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "iteration,category,same_category_fraction,edges").map_err(io)?;
        for (t, row) in self.same_category.iter().enumerate() {
            for (c, f) in row.iter().enumerate() {
                writeln!(out, "{t},{c},{f:?},{}", self.edges[t]).map_err(io)?;
            }
            writeln!(out, "{t},all,{:?},{}", self.overall[t], self.edges[t]).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Inclusion probabilities `r_ij = min(1, k ŷ_ij / Σ_j ŷ_ij)` per source,
/// in universe order.
pub fn recommendation_probabilities(u: &PairUniverse, y_hat: &[f64], k: usize) -> Vec<f64> {
    let n = u.n();
    let mut r = vec![0.0; u.len()];
    for i in 0..n {
        let row = i * (n - 1)..(i + 1) * (n - 1);
        let total: f64 = y_hat[row.clone()].iter().sum();
        for idx in row {
            r[idx] = if total > 0.0 {
                (k as f64 * y_hat[idx] / total).min(1.0)
            } else {
                (k as f64 / (n - 1) as f64).min(1.0)
            };
        }
    }
    r
}

fn same_category_shares(world: &GroundTruthWorld, u: &PairUniverse, r: &[f64]) -> (Vec<f64>, f64) {
    let c = world.categories();
    let mut same = vec![0.0; c];
    let mut total = vec![0.0; c];
    for (idx, (i, j)) in u.iter().enumerate() {
        let ci = world.nodes[i].category;
        total[ci] += r[idx];
        if world.nodes[j].category == ci {
            same[ci] += r[idx];
        }
    }
    let overall = same.iter().sum::<f64>() / total.iter().sum::<f64>();
    let per = same.iter().zip(&total).map(|(s, t)| if *t > 0.0 { s / t } else { 0.0 }).collect();
    (per, overall)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Train, recommend, simulate interactions with the true `π` and `y`,
/// retrain; `iterations` times.
pub fn feedback_with_trained_model(cfg: &PipelineConfig) -> Result<PipelineReport> {
    if cfg.rec_per_node == 0 {
        return Err(Error::config("rec_per_node", "must be >= 1"));
    }
    let world = generate_world(&cfg.world)?;
    let u = PairUniverse::new(world.n())?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut graph = sample_observed(&world, &mut rng)?;
    let mut exposure: Option<Vec<f64>> = None;
    let mut report = PipelineReport {
        same_category: Vec::new(),
        overall: Vec::new(),
        edges: Vec::new(),
    };
    for iteration in 0..=cfg.iterations {
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = cfg.seed.wrapping_add(1 + iteration as u64);
        if let Some(steps) = cfg.steps_per_iteration {
            let batches = graph.edge_count().div_ceil(train_cfg.batch_size.max(1));
            train_cfg.epochs = steps.div_ceil(batches).max(1);
        }
        let mut init_rng = crate::rng_from_seed(train_cfg.seed);
        let (link, mut prop) = init_models(graph.dim(), graph.categories(), &mut init_rng);
        match cfg.pipeline {
            Pipeline::Naive => {
                train_cfg.estimator = Some(TrainEstimator::None);
                train_cfg.lambda_r = 0.0;
            }
            Pipeline::Weighted => {
                train_cfg.estimator = Some(TrainEstimator::W);
                if cfg.known_propensity {
                    prop = PropensityModel::from_rows(
                        &world.pi.iter().map(|r| r.iter().map(|&p| logit(p)).collect()).collect::<Vec<_>>(),
                    )?;
                    train_cfg.freeze_propensity = true;
                }
            }
        }
        let data = TrainData {
            graph: &graph,
            exposure: match cfg.pipeline {
                Pipeline::Naive => None,
                Pipeline::Weighted => exposure.as_deref(),
            },
            validation: None,
        };
        let trained = train_from(data, &train_cfg, Some((link, prop)))?;
        let link: LinkModel = trained.link;
        let y_hat = link_probabilities(&graph, &link)?;
        let r = recommendation_probabilities(&u, &y_hat, cfg.rec_per_node);
        let (per, overall) = same_category_shares(&world, &u, &r);
        report.same_category.push(per);
        report.overall.push(overall);
        report.edges.push(graph.edge_count());
        if iteration == cfg.iterations {
            break;
        }
        let mut edges = Vec::new();
        for (idx, (i, j)) in u.iter().enumerate() {
            let shown = rng.random::<f64>() < r[idx];
            let exposed = rng.random::<f64>() < world.propensity(i, j);
            let relevant = rng.random::<f64>() < world.y(i, j);
            if shown && exposed && relevant {
                edges.push((i, j));
            }
        }
        graph = world.graph_with(edges)?;
        if graph.edge_count() == 0 {
            return Err(Error::Degenerate {
                t: iteration + 1,
                msg: "the simulated users formed no links".into(),
            });
        }
        exposure = Some(r);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_step() {
        // Counts [48, 16] out of n = 100 give q̂ = [0.48, 0.16], ê = [0.75, 0.25].
        let q_hat = [48.0 / 100.0, 16.0 / 100.0];
        let e = normalise(&q_hat).unwrap();
        assert!((e[0] - 0.75).abs() < 1e-15 && (e[1] - 0.25).abs() < 1e-15);
        assert_eq!(allocate(100, &[0.6, 0.4]), vec![60, 40]);
    }

    #[test]
    fn allocation_sums_to_n() {
        assert_eq!(allocate(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(allocate(7, &[0.5, 0.25, 0.25]).iter().sum::<u64>(), 7);
    }

    #[test]
    fn absorbing_category_stays_empty() {
        let mut cfg = FeedbackConfig::naive(vec![0.5, 0.9], 1000, 5, 1);
        cfg.initial = InitialKappa::Explicit(vec![1.0, 0.0]);
        let t = run_trajectory(&cfg).unwrap();
        assert!(t.states.iter().all(|s| s.kappa == vec![1.0, 0.0]));
    }

    #[test]
    fn single_category_is_fixed() {
        let cfg = FeedbackConfig::corrected(vec![0.3], vec![0.6], 100, 4, 0);
        let t = run_trajectory(&cfg).unwrap();
        assert!(t.states.iter().all(|s| s.kappa == vec![1.0]));
    }

    #[test]
    fn asymptotic_examples() {
        assert_eq!(asymptotic_kappa(1.0, 7), 0.5);
        assert_eq!(asymptotic_kappa(3.0, 0), 0.5);
        assert!((asymptotic_kappa(2.0, 5) - 32.0 / 33.0).abs() < 1e-15);
    }

    #[test]
    fn states_are_simplices_and_counts_sum_to_n() {
        let cfg = FeedbackConfig::naive(vec![0.2, 0.5, 0.7], 997, 6, 3);
        let t = run_trajectory(&cfg).unwrap();
        for (s, c) in t.states.iter().zip(&t.counts) {
            assert!((s.kappa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(c.iter().sum::<u64>(), 997);
        }
        assert_eq!(t.linked.len(), 6);
    }

    #[test]
    fn all_zero_scores_halt() {
        let cfg = FeedbackConfig::naive(vec![1e-9, 1e-9], 10, 3, 0);
        assert!(matches!(run_trajectory(&cfg), Err(Error::Degenerate { t: 0, .. })));
    }

    #[test]
    fn uniform_q_does_not_drift() {
        let cfg = FeedbackConfig::naive(vec![0.5, 0.5], 100_000, 1, 5);
        let t = run_trajectory(&cfg).unwrap();
        assert!((t.states[1].kappa[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn zero_steps_csv_has_initial_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        run_trajectory(&FeedbackConfig::naive(vec![0.8, 0.4], 100, 0, 0))
            .unwrap()
            .write_csv(&path)
            .unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "t,category,kappa,count,q_hat\n0,0,0.5,50,\n0,1,0.5,50,\n");
    }

    #[test]
    fn multinomial_preserves_total() {
        let mut rng = crate::rng_from_seed(2);
        for _ in 0..100 {
            let d = multinomial(1234, &[0.1, 0.0, 0.6, 0.3], &mut rng);
            assert_eq!(d.iter().sum::<u64>(), 1234);
            assert_eq!(d[1], 0);
        }
    }
}
