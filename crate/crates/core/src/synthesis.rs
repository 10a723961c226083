//! Semi-synthetic worlds with known link probabilities and propensities.
//!
//! A world fixes the node skeleton (categories and features), the true
//! category-pair propensity table `π` and the true link-probability function
//! `y(i, j)`. Observed graphs are drawn from it by the generative process
//! `o = o'·a` with `o' ~ Ber(y)` and `a ~ Ber(π)`.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{risk, true_risk, Estimator, GroundTruth, LossSpec, PairEstimates};
use crate::graph::{Graph, Node, NodeId, PairUniverse};
use crate::stats::{mean, sigmoid, std_dev};

fn default_dim() -> usize {
    16
}
fn default_diag() -> [f64; 2] {
    [0.7, 1.0]
}
fn default_offdiag() -> [f64; 2] {
    [0.1, 0.3]
}
fn default_target() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub categories: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_diag")]
    pub diag_range: [f64; 2],
    #[serde(default = "default_offdiag")]
    pub offdiag_range: [f64; 2],
    /// Explicit propensity table; overrides the ranges when given.
    #[serde(default)]
    pub pi: Option<Vec<Vec<f64>>>,
    /// Explicit link truth; drawn and calibrated when absent.
    #[serde(default)]
    pub link: Option<LinkTruth>,
    /// Mean link probability targeted when calibrating the bias.
    #[serde(default = "default_target")]
    pub target_mean_y: f64,
    /// Append a one-hot category block to every feature vector.
    #[serde(default)]
    pub category_features: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, categories: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            categories,
            dim: default_dim(),
            diag_range: default_diag(),
            offdiag_range: default_offdiag(),
            pi: None,
            link: None,
            target_mean_y: default_target(),
            category_features: false,
            seed,
        }
    }

    /// Two equal blocks with `π_same`/`π_cross` and a constant link probability.
    pub fn two_block(per_block: usize, pi_same: f64, pi_cross: f64, y: f64, seed: u64) -> Self {
        SyntheticSpec {
            pi: Some(vec![vec![pi_same, pi_cross], vec![pi_cross, pi_same]]),
            link: Some(LinkTruth::Constant { y }),
            dim: 1,
            ..SyntheticSpec::new(2 * per_block, 2, seed)
        }
    }

    /// Total feature dimension, including the optional category block.
    pub fn feature_dim(&self) -> usize {
        self.dim + if self.category_features { self.categories } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("n", "at least two nodes are required"));
        }
        if self.categories == 0 {
            return Err(Error::config("categories", "must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        for (field, r) in [("diag_range", self.diag_range), ("offdiag_range", self.offdiag_range)] {
            if !(0.0..=1.0).contains(&r[0]) || !(0.0..=1.0).contains(&r[1]) || r[0] > r[1] {
                return Err(Error::config(field, format!("[{}, {}] is not an interval within [0, 1]", r[0], r[1])));
            }
        }
        if let Some(pi) = &self.pi {
            if pi.len() != self.categories || pi.iter().any(|r| r.len() != self.categories) {
                return Err(Error::config("pi", format!("must be {0}x{0}", self.categories)));
            }
            if pi.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("pi", "entries must lie in [0, 1]"));
            }
        }
        if !(self.target_mean_y > 0.0 && self.target_mean_y < 1.0) {
            return Err(Error::config("target_mean_y", "must lie in (0, 1)"));
        }
        match &self.link {
            Some(LinkTruth::Logistic { w, b }) => {
                if w.len() != self.feature_dim() {
                    return Err(Error::config("link", format!("w has {} entries, expected {}", w.len(), self.feature_dim())));
                }
                if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("link", "parameters must be finite"));
                }
            }
            Some(LinkTruth::Constant { y }) if !(0.0..=1.0).contains(y) => {
                return Err(Error::config("link", "constant y must lie in [0, 1]"));
            }
            Some(LinkTruth::CategoryTable { y }) => {
                if y.len() != self.categories || y.iter().any(|r| r.len() != self.categories) {
                    return Err(Error::config("link", format!("table must be {0}x{0}", self.categories)));
                }
                if y.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::config("link", "table entries must lie in [0, 1]"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// The true link-probability function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkTruth {
    /// `y_ij = σ(wᵀ(h_i ⊙ h_j) + b)`.
    Logistic { w: Vec<f64>, b: f64 },
    Constant { y: f64 },
    /// `y` depends only on the category pair.
    CategoryTable { y: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWorld {
    pub spec: SyntheticSpec,
    pub nodes: Vec<Node>,
    pub pi: Vec<Vec<f64>>,
    pub link: LinkTruth,
}

/// Balanced contiguous blocks: node `i` gets category `i·C / n`.
pub fn block_category(i: usize, n: usize, categories: usize) -> usize {
    i * categories / n
}

fn logistic_y(w: &[f64], b: f64, hi: &[f64], hj: &[f64]) -> f64 {
    let z: f64 = w.iter().zip(hi).zip(hj).map(|((w, a), c)| w * a * c).sum();
    sigmoid(z + b)
}

/// Bias `b` such that the mean of `σ(z + b)` over `zs` equals `target`.
fn calibrate_bias(zs: &[f64], target: f64) -> f64 {
    let mean_y = |b: f64| zs.iter().map(|z| sigmoid(z + b)).sum::<f64>() / zs.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_y(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const CALIBRATION_PAIRS: usize = 50_000;

pub fn generate_world(spec: &SyntheticSpec) -> Result<GroundTruthWorld> {
    spec.validate()?;
    let mut rng = crate::rng_from_seed(spec.seed);
    let c = spec.categories;
    let pi = match &spec.pi {
        Some(pi) => pi.clone(),
        None => {
            let mut table = vec![vec![0.0; c]; c];
            for (a, row) in table.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    let [lo, hi] = if a == b { spec.diag_range } else { spec.offdiag_range };
                    *cell = lo + (hi - lo) * rng.random::<f64>();
                }
            }
            table
        }
    };
    let nodes: Vec<Node> = (0..spec.n)
        .map(|i| {
            let category = block_category(i, spec.n, c);
            let mut features: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if spec.category_features {
                features.extend((0..c).map(|k| if k == category { 1.0 } else { 0.0 }));
            }
            Node {
                id: NodeId(i),
                category,
                features,
            }
        })
        .collect();
    let link = match &spec.link {
        Some(link) => link.clone(),
        None => {
            let scale = 1.0 / (spec.dim as f64).sqrt();
            let mut w: Vec<f64> = (0..spec.dim)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            if spec.category_features {
                w.extend(std::iter::repeat_n(0.0, c));
            }
            let u = PairUniverse::new(spec.n)?;
            let zs: Vec<f64> = if u.len() <= CALIBRATION_PAIRS {
                u.iter().map(|(i, j)| logistic_y_logit(&w, &nodes[i].features, &nodes[j].features)).collect()
            } else {
                (0..CALIBRATION_PAIRS)
                    .map(|_| {
                        let (i, j) = u.pair_at(rng.random_range(0..u.len()));
                        logistic_y_logit(&w, &nodes[i].features, &nodes[j].features)
                    })
                    .collect()
            };
            let b = calibrate_bias(&zs, spec.target_mean_y);
            LinkTruth::Logistic { w, b }
        }
    };
    Ok(GroundTruthWorld {
        spec: spec.clone(),
        nodes,
        pi,
        link,
    })
}

fn logistic_y_logit(w: &[f64], hi: &[f64], hj: &[f64]) -> f64 {
    w.iter().zip(hi).zip(hj).map(|((w, a), c)| w * a * c).sum()
}

impl GroundTruthWorld {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn categories(&self) -> usize {
        self.pi.len()
    }

    pub fn y(&self, i: usize, j: usize) -> f64 {
        match &self.link {
            LinkTruth::Logistic { w, b } => logistic_y(w, *b, &self.nodes[i].features, &self.nodes[j].features),
            LinkTruth::Constant { y } => *y,
            LinkTruth::CategoryTable { y } => y[self.nodes[i].category][self.nodes[j].category],
        }
    }

    pub fn propensity(&self, i: usize, j: usize) -> f64 {
        self.pi[self.nodes[i].category][self.nodes[j].category]
    }

    /// `y` and `π` on every pair, in universe order.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.ground_truth_on(&(0..self.n()).collect::<Vec<_>>())
    }

    /// Ground truth on the pairs of the subgraph induced by `ids` (in the
    /// order the subgraph relabels them).
    pub fn ground_truth_on(&self, ids: &[usize]) -> Result<GroundTruth> {
        let u = PairUniverse::new(ids.len())?;
        let (y, pi) = u
            .iter()
            .map(|(a, b)| (self.y(ids[a], ids[b]), self.propensity(ids[a], ids[b])))
            .unzip();
        GroundTruth::new(y, pi)
    }

    /// The node skeleton without edges.
    pub fn skeleton(&self) -> Result<Graph> {
        Graph::new(self.nodes.clone(), [])?.with_categories(self.categories())
    }

    pub fn graph_with(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        Graph::new(self.nodes.clone(), edges)?.with_categories(self.categories())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::graph::write_nodes(&dir.join("nodes.jsonl"), &self.nodes)?;
        let pi_path = dir.join("pi.csv");
        let csv: String = self
            .pi
            .iter()
            .map(|row| row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        std::fs::write(&pi_path, csv).map_err(|e| Error::io(&pi_path, e))?;
        let truth = TruthFile {
            link: self.link.clone(),
            spec: self.spec.clone(),
        };
        let truth_path = dir.join("truth.json");
        let text = serde_json::to_string_pretty(&truth)?;
        std::fs::write(&truth_path, text + "\n").map_err(|e| Error::io(&truth_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let nodes = crate::graph::read_nodes(&dir.join("nodes.jsonl"))?;
        let pi = read_matrix(&dir.join("pi.csv"))?;
        let truth_path = dir.join("truth.json");
        let text = std::fs::read_to_string(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
        let truth: TruthFile = serde_json::from_str(&text)?;
        let world = GroundTruthWorld {
            spec: truth.spec,
            nodes,
            pi,
            link: truth.link,
        };
        world.skeleton()?;
        if world.nodes.iter().any(|n| n.category >= world.categories()) {
            return Err(Error::Shape("node category outside the propensity table".into()));
        }
        Ok(world)
    }
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    link: LinkTruth,
    spec: SyntheticSpec,
}

/// Read a dense comma-separated matrix.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "matrix is not square".into(),
        });
    }
    Ok(rows)
}

/// Draw observed labels for every pair of `truth`: `o = o'·a`.
pub fn sample_outcomes(truth: &GroundTruth, rng: &mut crate::Rng) -> Vec<bool> {
    truth
        .y
        .iter()
        .zip(&truth.pi)
        .map(|(&y, &pi)| {
            let o_prime = rng.random::<f64>() < y;
            let a = rng.random::<f64>() < pi;
            o_prime && a
        })
        .collect()
}

/// Sample an observed graph from the world.
pub fn sample_observed(world: &GroundTruthWorld, rng: &mut crate::Rng) -> Result<Graph> {
    let u = PairUniverse::new(world.n())?;
    let mut edges = Vec::new();
    for (i, j) in u.iter() {
        let o_prime = rng.random::<f64>() < world.y(i, j);
        let a = rng.random::<f64>() < world.propensity(i, j);
        if o_prime && a {
            edges.push((i, j));
        }
    }
    world.graph_with(edges)
}

/// Exact mean and variance of a per-pair term by enumerating the four
/// `(o', a)` outcomes.
pub fn exact_pair_moments(y: f64, pi: f64, term: impl Fn(bool) -> f64) -> (f64, f64) {
    let outcomes = [
        (true, true, y * pi),
        (true, false, y * (1.0 - pi)),
        (false, true, (1.0 - y) * pi),
        (false, false, (1.0 - y) * (1.0 - pi)),
    ];
    let values: Vec<(f64, f64)> = outcomes
        .iter()
        .map(|&(o_prime, a, p)| (term(o_prime && a), p))
        .collect();
    let mean: f64 = values.iter().map(|(v, p)| v * p).sum();
    let var: f64 = values.iter().map(|(v, p)| p * (v - mean) * (v - mean)).sum();
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDistribution {
    pub mean: f64,
    pub std: f64,
    pub samples: Vec<f64>,
}

impl McDistribution {
    pub fn std_error(&self) -> f64 {
        self.std / (self.samples.len() as f64).sqrt()
    }
}

pub const MIN_TRIALS: usize = 100;

/// Resample the observations `trials` times and recompute `which`. Trial `t`
/// uses the seed `seed + t`, so the result does not depend on thread count.
pub fn monte_carlo_risk_distribution(
    truth: &GroundTruth,
    est: &PairEstimates,
    which: Estimator,
    loss: &LossSpec,
    trials: usize,
    seed: u64,
) -> Result<McDistribution> {
    if trials < MIN_TRIALS {
        return Err(Error::config("trials", format!("must be >= {MIN_TRIALS}")));
    }
    if truth.len() != est.len() {
        return Err(Error::Shape(format!("{} truth pairs vs {} estimates", truth.len(), est.len())));
    }
    if which == Estimator::True {
        let r = true_risk(truth, est, loss)?.value;
        return Ok(McDistribution {
            mean: r,
            std: 0.0,
            samples: vec![r; trials],
        });
    }
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = crate::rng_from_seed(seed.wrapping_add(t as u64));
            let o = sample_outcomes(truth, &mut rng);
            risk(which, &o, est, loss, false).map(|r| r.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McDistribution {
        mean: mean(&samples),
        std: std_dev(&samples),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propensity_ranges() {
        for seed in 0..20 {
            let w = generate_world(&SyntheticSpec::new(20, 2, seed)).unwrap();
            assert_eq!(w.pi.len(), 2);
            for a in 0..2 {
                for b in 0..2 {
                    let v = w.pi[a][b];
                    if a == b {
                        assert!((0.7..=1.0).contains(&v));
                    } else {
                        assert!((0.1..=0.3).contains(&v));
                    }
                }
            }
        }
    }

    #[test]
    fn seeds_reproduce_worlds() {
        let spec = SyntheticSpec::new(30, 3, 9);
        assert_eq!(generate_world(&spec).unwrap(), generate_world(&spec).unwrap());
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let spec = SyntheticSpec {
            dim: 4,
            link: Some(LinkTruth::Logistic { w: vec![0.0; 4], b: 0.0 }),
            ..SyntheticSpec::new(6, 2, 1)
        };
        let w = generate_world(&spec).unwrap();
        assert!(w.ground_truth().unwrap().y.iter().all(|&y| y == 0.5));
    }

    #[test]
    fn calibrated_mean_y() {
        let w = generate_world(&SyntheticSpec::new(120, 2, 4)).unwrap();
        let y = w.ground_truth().unwrap().y;
        assert!((mean(&y) - 0.2).abs() < 1e-6);
    }

    #[test]
    fn invalid_ranges_name_the_field() {
        let spec = SyntheticSpec {
            diag_range: [0.9, 0.7],
            ..SyntheticSpec::new(10, 2, 0)
        };
        assert!(matches!(generate_world(&spec), Err(Error::Config { field: "diag_range", .. })));
        let spec = SyntheticSpec::new(1, 2, 0);
        assert!(matches!(generate_world(&spec), Err(Error::Config { field: "n", .. })));
    }

    #[test]
    fn extreme_worlds() {
        let mut spec = SyntheticSpec::two_block(3, 0.0, 0.0, 0.5, 0);
        let mut rng = crate::rng_from_seed(0);
        let g = sample_observed(&generate_world(&spec).unwrap(), &mut rng).unwrap();
        assert_eq!(g.edge_count(), 0);
        spec = SyntheticSpec::two_block(3, 1.0, 1.0, 1.0, 0);
        let g = sample_observed(&generate_world(&spec).unwrap(), &mut rng).unwrap();
        assert_eq!(g.edge_count(), 30);
    }

    #[test]
    fn pair_moment_examples() {
        let (m, v) = exact_pair_moments(0.8, 0.6, |o| if o { 1.0 } else { 0.0 });
        assert!((m - 0.48).abs() < 1e-15);
        assert!((v - 0.2496).abs() < 1e-15);
        let (m, v) = exact_pair_moments(0.0, 0.6, |o| if o { 3.0 } else { 7.0 });
        assert_eq!((m, v), (7.0, 0.0));
    }

    #[test]
    fn world_roundtrips_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&SyntheticSpec::new(12, 3, 2)).unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(GroundTruthWorld::load(dir.path()).unwrap(), w);
    }

    #[test]
    fn naive_without_exposure_bias_is_unbiased() {
        let spec = SyntheticSpec {
            pi: Some(vec![vec![1.0; 2]; 2]),
            dim: 3,
            ..SyntheticSpec::new(10, 2, 3)
        };
        let truth = generate_world(&spec).unwrap().ground_truth().unwrap();
        let est = PairEstimates::new(truth.y.clone(), vec![1.0; truth.len()]).unwrap();
        let loss = LossSpec::zero_one(1.0);
        let mc = monte_carlo_risk_distribution(&truth, &est, Estimator::Naive, &loss, 4000, 11).unwrap();
        let r = true_risk(&truth, &est, &loss).unwrap().value;
        assert!((mc.mean - r).abs() < 4.0 * mc.std_error(), "{} vs {r}", mc.mean);
    }
}
