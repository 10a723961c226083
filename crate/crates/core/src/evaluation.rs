//! Classification and ranking metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::average_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// `None` when either class is absent.
    pub auc: Option<f64>,
}

/// Threshold metrics at `threshold` (scores `>= threshold` count as positive)
/// and the rank-statistic AUC, with ties contributing one half.
pub fn classification_metrics(labels: &[bool], scores: &[f64], threshold: f64) -> Result<Classification> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!("{} labels vs {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score is NaN".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(Classification {
        precision,
        recall,
        f1,
        auc: auc(labels, scores),
    })
}

/// Mann-Whitney AUC computed from average ranks.
pub fn auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Candidates for one source, scored; `relevant` marks true positives.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub relevant: Vec<bool>,
}

impl RankedList {
    /// Positions (1-based) of the relevant candidates after sorting by
    /// descending score, ties broken by candidate id.
    pub fn relevant_ranks(&self) -> Vec<usize> {
        let order = self.order();
        order
            .iter()
            .enumerate()
            .filter(|(_, &k)| self.relevant[k])
            .map(|(pos, _)| pos + 1)
            .collect()
    }

    /// Indices into `candidates`, best first.
    pub fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(self.candidates[a].cmp(&self.candidates[b]))
        });
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub map: f64,
    pub recall_at_k: f64,
    pub mean_rank: f64,
    pub k: usize,
    /// Sources with at least one relevant candidate.
    pub sources: usize,
    /// Sources skipped because they had no relevant candidate.
    pub excluded: usize,
}

pub fn average_precision(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks
        .iter()
        .enumerate()
        .map(|(hit, &r)| (hit + 1) as f64 / r as f64)
        .sum::<f64>()
        / ranks.len() as f64
}

pub fn ranking_metrics(lists: &[RankedList], k: usize) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if lists.iter().any(|l| l.candidates.is_empty()) {
        return Err(Error::Shape("a source has no candidates".into()));
    }
    let per: Vec<Option<(f64, f64, f64)>> = lists
        .par_iter()
        .map(|l| {
            let ranks = l.relevant_ranks();
            if ranks.is_empty() {
                return None;
            }
            let ap = average_precision(&ranks);
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            let recall = hits as f64 / ranks.len() as f64;
            let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
            Some((ap, recall, mean_rank))
        })
        .collect();
    let kept: Vec<_> = per.iter().flatten().collect();
    let sources = kept.len();
    if sources == 0 {
        return Err(Error::Shape("no source has a relevant candidate".into()));
    }
    let avg = |f: fn(&(f64, f64, f64)) -> f64| kept.iter().map(|t| f(t)).sum::<f64>() / sources as f64;
    Ok(Ranking {
        map: avg(|t| t.0),
        recall_at_k: avg(|t| t.1),
        mean_rank: avg(|t| t.2),
        k,
        sources,
        excluded: lists.len() - sources,
    })
}

/// Shannon entropy (natural log) of a category histogram; empty is 0.
pub fn category_entropy(categories: &[usize]) -> f64 {
    if categories.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &c in categories {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let n = categories.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mean over sources of the entropy of the categories of the relevant
/// candidates found in the top `k`.
pub fn entropy_at_k(lists: &[RankedList], category_of: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if lists.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = lists
        .iter()
        .map(|l| {
            let cats: Vec<usize> = l
                .order()
                .into_iter()
                .take(k)
                .filter(|&idx| l.relevant[idx])
                .map(|idx| category_of[l.candidates[idx]])
                .collect();
            category_entropy(&cats)
        })
        .sum();
    Ok(total / lists.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Observed,
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub map: f64,
    pub recall_at_k: f64,
    pub mean_rank: f64,
    pub entropy_at_k: f64,
    pub k: usize,
    pub target: Target,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "target,k,precision,recall,f1,auc,map,recall_at_k,mean_rank,entropy_at_k";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        let target = match self.target {
            Target::Observed => "observed",
            Target::True => "true",
        };
        format!(
            "{target},{},{},{},{},{},{:?},{:?},{:?},{:?}",
            self.k,
            opt(self.precision),
            opt(self.recall),
            opt(self.f1),
            opt(self.auc),
            self.map,
            self.recall_at_k,
            self.mean_rank,
            self.entropy_at_k
        )
    }
}

/// Every metric for one scored universe. `scores` and `labels` are in
/// universe order over `n` nodes; each source ranks all other nodes.
pub fn evaluate_universe(
    n: usize,
    scores: &[f64],
    labels: &[bool],
    category_of: &[usize],
    k: usize,
    target: Target,
) -> Result<MetricReport> {
    let u = crate::graph::PairUniverse::new(n)?;
    if scores.len() != u.len() || labels.len() != u.len() || category_of.len() != n {
        return Err(Error::Shape("scores, labels and categories must cover the universe".into()));
    }
    let cls = classification_metrics(labels, scores, 0.5)?;
    let lists: Vec<RankedList> = (0..n)
        .map(|i| {
            let row = i * (n - 1)..(i + 1) * (n - 1);
            RankedList {
                candidates: (0..n).filter(|&j| j != i).collect(),
                scores: scores[row.clone()].to_vec(),
                relevant: labels[row].to_vec(),
            }
        })
        .collect();
    let ranking = ranking_metrics(&lists, k)?;
    let entropy = entropy_at_k(&lists, category_of, k)?;
    Ok(MetricReport {
        precision: cls.precision,
        recall: cls.recall,
        f1: cls.f1,
        auc: cls.auc,
        map: ranking.map,
        recall_at_k: ranking.recall_at_k,
        mean_rank: ranking.mean_rank,
        entropy_at_k: entropy,
        k,
        target,
    })
}
