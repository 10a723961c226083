//! Directed graphs with categorical, featured nodes.
//!
//! Nodes are stored densely by id. The edge set is kept both as a sorted
//! vector (for deterministic output) and as a hash set (for label lookups).

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub category: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
    categories: usize,
    dim: usize,
}

impl Graph {
    /// Validates and builds a graph. Nodes may arrive in any order but their
    /// ids must cover `0..n` exactly once. Duplicate edges are merged.
    pub fn new(mut nodes: Vec<Node>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        for (expected, node) in nodes.iter().enumerate() {
            if node.id.0 < expected {
                return Err(Error::DuplicateNode(node.id.0));
            }
            if node.id.0 > expected {
                return Err(Error::MissingNode(expected));
            }
        }
        let dim = nodes.first().map_or(0, |n| n.features.len());
        for node in &nodes {
            if node.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    node: node.id.0,
                    expected: dim,
                    got: node.features.len(),
                });
            }
        }
        let categories = nodes.iter().map(|n| n.category + 1).max().unwrap_or(0);
        let n = nodes.len();
        let mut sorted = BTreeSet::new();
        for (src, dst) in edges {
            if src == dst {
                return Err(Error::SelfLoop(src));
            }
            if src >= n || dst >= n {
                return Err(Error::DanglingEdge { src, dst, n });
            }
            sorted.insert((src, dst));
        }
        let edges: Vec<_> = sorted.into_iter().collect();
        let edge_set = edges.iter().copied().collect();
        Ok(Graph {
            nodes,
            edges,
            edge_set,
            categories,
            dim,
        })
    }

    /// Declare more categories than the nodes happen to use.
    pub fn with_categories(mut self, categories: usize) -> Result<Self> {
        if categories < self.categories {
            return Err(Error::CategoryOutOfRange {
                category: self.categories - 1,
                categories,
            });
        }
        self.categories = categories;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn category(&self, id: usize) -> usize {
        self.nodes[id].category
    }

    pub fn features(&self, id: usize) -> &[f64] {
        &self.nodes[id].features
    }

    /// Edges in ascending `(src, dst)` order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edge_set.contains(&(src, dst))
    }

    /// `o_ij`: whether the link `i -> j` was observed.
    pub fn observed_label(&self, i: NodeId, j: NodeId) -> Result<bool> {
        let n = self.n();
        for id in [i, j] {
            if id.0 >= n {
                return Err(Error::InvalidNode { id: id.0, n });
            }
        }
        if i == j {
            return Err(Error::SelfLoop(i.0));
        }
        Ok(self.has_edge(i.0, j.0))
    }

    pub fn pair_universe(&self) -> Result<PairUniverse> {
        PairUniverse::new(self.n())
    }

    /// Observed labels in universe order.
    pub fn label_vector(&self) -> Vec<bool> {
        let u = PairUniverse { n: self.n() };
        u.iter().map(|(i, j)| self.has_edge(i, j)).collect()
    }

    /// Subgraph on `ids` (in the given order), re-indexed to `0..ids.len()`.
    pub fn induced_subgraph(&self, ids: &[usize]) -> Result<Graph> {
        let mut remap = vec![usize::MAX; self.n()];
        let mut nodes = Vec::with_capacity(ids.len());
        for (new, &old) in ids.iter().enumerate() {
            if old >= self.n() {
                return Err(Error::InvalidNode { id: old, n: self.n() });
            }
            if remap[old] != usize::MAX {
                return Err(Error::DuplicateNode(old));
            }
            remap[old] = new;
            let src = &self.nodes[old];
            nodes.push(Node {
                id: NodeId(new),
                category: src.category,
                features: src.features.clone(),
            });
        }
        let edges = self.edges.iter().filter_map(|&(s, d)| {
            let (s, d) = (remap[s], remap[d]);
            (s != usize::MAX && d != usize::MAX).then_some((s, d))
        });
        Graph::new(nodes, edges)?.with_categories(self.categories)
    }

    /// Same nodes, different edges.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        Graph::new(self.nodes.clone(), edges)?.with_categories(self.categories)
    }

    /// Order in which every cited node precedes the nodes citing it
    /// (an edge `i -> j` puts `j` first). Ties go to the smaller id.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.n();
        let mut pending = vec![0usize; n];
        let mut citers: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            pending[s] += 1;
            citers[d].push(s);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&v| pending[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &s in &citers[v] {
                pending[s] -= 1;
                if pending[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Shape("graph contains a directed cycle".into()));
        }
        Ok(order)
    }

    /// Read `nodes.jsonl` and `edges.tsv`.
    pub fn load(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<Graph> {
        let nodes = read_nodes(nodes_path.as_ref())?;
        let edges = read_edges(edges_path.as_ref())?;
        Graph::new(nodes, edges)
    }

    pub fn save(&self, nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<()> {
        write_nodes(nodes_path.as_ref(), &self.nodes)?;
        write_edges(edges_path.as_ref(), &self.edges)
    }
}

pub fn read_nodes(path: &Path) -> Result<Vec<Node>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut nodes = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let node: Node = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        nodes.push(node);
    }
    Ok(nodes)
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let mut cols = line.split('\t');
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(bad("expected two tab-separated columns"));
        };
        let src = a.trim().parse().map_err(|_| bad("source is not a node id"))?;
        let dst = b.trim().parse().map_err(|_| bad("target is not a node id"))?;
        edges.push((src, dst));
    }
    Ok(edges)
}

pub fn write_nodes(path: &Path, nodes: &[Node]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for node in nodes {
        serde_json::to_writer(&mut out, node)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_edges(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (s, d) in edges {
        writeln!(out, "{s}\t{d}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// All ordered pairs `(i, j)`, `i != j`, in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairUniverse {
    n: usize,
}

impl PairUniverse {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewNodes(n));
        }
        Ok(PairUniverse { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * (self.n - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of `(i, j)` in iteration order.
    pub fn index_of(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i < self.n && j < self.n);
        i * (self.n - 1) + if j < i { j } else { j - 1 }
    }

    pub fn pair_at(&self, idx: usize) -> (usize, usize) {
        let i = idx / (self.n - 1);
        let r = idx % (self.n - 1);
        (i, if r < i { r } else { r + 1 })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }
}

/// Node split fractions for train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Cut an ordering into consecutive train/validation/test chunks.
pub fn split_ordered(order: &[usize], fractions: SplitFractions) -> Result<NodeSplit> {
    let total = fractions.train + fractions.validation + fractions.test;
    if [fractions.train, fractions.validation, fractions.test]
        .iter()
        .any(|f| !(0.0..=1.0).contains(f))
        || (total - 1.0).abs() > 1e-9
    {
        return Err(Error::config("split", "fractions must be in [0,1] and sum to 1"));
    }
    let n = order.len();
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_val = ((fractions.validation * n as f64).round() as usize).min(n - n_train);
    Ok(NodeSplit {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Uniformly shuffled node split; each part is returned in ascending id order.
pub fn random_split(n: usize, fractions: SplitFractions, rng: &mut crate::Rng) -> Result<NodeSplit> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut split = split_ordered(&order, fractions)?;
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: usize, category: usize, features: Vec<f64>) -> Node {
        Node {
            id: NodeId(id),
            category,
            features,
        }
    }

    fn three_nodes() -> Vec<Node> {
        (0..3).map(|i| node(i, i % 2, vec![i as f64, 1.0])).collect()
    }

    #[test]
    fn builds_small_graph() {
        let g = Graph::new(three_nodes(), [(0, 1), (1, 2)]).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.categories(), 2);
        assert_eq!(g.dim(), 2);
    }

    #[test]
    fn rejects_self_loop() {
        assert!(matches!(Graph::new(three_nodes(), [(0, 0)]), Err(Error::SelfLoop(0))));
    }

    #[test]
    fn rejects_dangling_edge() {
        assert!(matches!(
            Graph::new(three_nodes(), [(0, 7)]),
            Err(Error::DanglingEdge { .. })
        ));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let nodes = vec![node(0, 0, vec![0.0; 4]), node(1, 0, vec![0.0; 5])];
        assert!(matches!(
            Graph::new(nodes, []),
            Err(Error::DimensionMismatch { node: 1, expected: 4, got: 5 })
        ));
    }

    #[test]
    fn rejects_duplicate_and_missing_ids() {
        let nodes = vec![node(0, 0, vec![]), node(0, 0, vec![])];
        assert!(matches!(Graph::new(nodes, []), Err(Error::DuplicateNode(0))));
        let nodes = vec![node(0, 0, vec![]), node(2, 0, vec![])];
        assert!(matches!(Graph::new(nodes, []), Err(Error::MissingNode(1))));
    }

    #[test]
    fn duplicate_edges_merge() {
        let g = Graph::new(three_nodes(), [(0, 1), (0, 1), (2, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (2, 0)]);
    }

    #[test]
    fn observed_labels() {
        let g = Graph::new(three_nodes(), [(0, 1)]).unwrap();
        assert!(g.observed_label(NodeId(0), NodeId(1)).unwrap());
        assert!(!g.observed_label(NodeId(1), NodeId(0)).unwrap());
        assert!(!g.observed_label(NodeId(0), NodeId(2)).unwrap());
        assert!(g.observed_label(NodeId(0), NodeId(3)).is_err());
    }

    #[test]
    fn universe_sizes() {
        assert_eq!(PairUniverse::new(2).unwrap().iter().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert_eq!(PairUniverse::new(3).unwrap().len(), 6);
        assert!(matches!(PairUniverse::new(1), Err(Error::TooFewNodes(1))));
    }

    #[test]
    fn universe_iteration_matches_count_for_all_small_n() {
        for n in 2..=50 {
            let u = PairUniverse::new(n).unwrap();
            let pairs: Vec<_> = u.iter().collect();
            assert_eq!(pairs.len(), n * (n - 1));
            assert!(pairs.iter().all(|(i, j)| i != j));
            let unique: HashSet<_> = pairs.iter().collect();
            assert_eq!(unique.len(), pairs.len());
            for (k, &(i, j)) in pairs.iter().enumerate() {
                assert_eq!(u.index_of(i, j), k);
                assert_eq!(u.pair_at(k), (i, j));
            }
        }
        // n = 10 counted by brute-force double loop.
        let brute = (0..10).flat_map(|i| (0..10).map(move |j| (i, j))).filter(|(i, j)| i != j).count();
        assert_eq!(brute, 90);
        assert_eq!(PairUniverse::new(10).unwrap().len(), brute);
    }

    #[test]
    fn topological_order_puts_cited_first() {
        // 2 cites 0, 1 cites 2.
        let g = Graph::new(three_nodes(), [(2, 0), (1, 2)]).unwrap();
        assert_eq!(g.topological_order().unwrap(), vec![0, 2, 1]);
        let cyc = Graph::new(three_nodes(), [(0, 1), (1, 0)]).unwrap();
        assert!(cyc.topological_order().is_err());
    }

    #[test]
    fn induced_subgraph_reindexes() {
        let g = Graph::new(three_nodes(), [(0, 1), (1, 2), (2, 0)]).unwrap();
        let sub = g.induced_subgraph(&[2, 0]).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.edges(), &[(0, 1)]);
        assert_eq!(sub.features(0), g.features(2));
    }

    #[test]
    fn split_sizes() {
        let order: Vec<usize> = (0..10).collect();
        let s = split_ordered(&order, SplitFractions::default()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
        let bad = SplitFractions {
            train: 0.9,
            validation: 0.3,
            test: 0.0,
        };
        assert!(split_ordered(&order, bad).is_err());
    }
}
