//! CART classification tree with Gini splits over per-node quantile bins.
//!
//! Routing is `x[feature] < threshold` to the left, otherwise right. Leaves
//! are numbered `0..m` in depth-first, left-first order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DteError, Result};

/// Gini decreases at or below this are treated as no improvement. Also the
/// margin a candidate must beat the incumbent by, so that ties resolve to
/// the lowest feature and then the lowest threshold.
const GAIN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub min_leaf_size: usize,
    pub num_bins: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { min_leaf_size: 10, num_bins: 30, max_depth: None }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf_size == 0 {
            return Err(DteError::validation("min leaf size must be at least 1"));
        }
        if self.num_bins < 2 {
            return Err(DteError::validation("number of bins must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub id: usize,
    /// Training rows per class.
    pub histogram: Vec<usize>,
    /// Most frequent class, lowest id on ties.
    pub majority: usize,
}

impl Leaf {
    fn new(id: usize, histogram: Vec<usize>) -> Self {
        let majority =
            histogram.iter().enumerate().fold((0, 0), |best, (c, &n)| if n > best.1 { (c, n) } else { best }).0;
        Leaf { id, histogram, majority }
    }

    pub fn size(&self) -> usize {
        self.histogram.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(Leaf),
}

/// A fitted tree. Nodes live in an arena with the root at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeRepr", try_from = "TreeRepr")]
pub struct DecisionTree {
    nodes: Vec<Node>,
    /// Arena index of each leaf, by leaf id.
    leaf_nodes: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    config: TreeConfig,
}

impl DecisionTree {
    pub fn n_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> + '_ {
        self.leaf_nodes.iter().map(|&i| match &self.nodes[i] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!("leaf index points at a split"),
        })
    }

    pub fn leaf(&self, id: usize) -> &Leaf {
        match &self.nodes[self.leaf_nodes[id]] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!("leaf index points at a split"),
        }
    }

    fn route(&self, x: impl Fn(usize) -> f64) -> &Leaf {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x(*feature) < *threshold { *left } else { *right }
                }
                Node::Leaf(l) => return l,
            }
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.n_features {
            return Err(DteError::DimensionMismatch { expected: self.n_features, got });
        }
        Ok(())
    }

    /// Leaf id reached by `x`.
    pub fn apply(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len())?;
        Ok(self.route(|j| x[j]).id)
    }

    /// Majority class of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len())?;
        Ok(self.route(|j| x[j]).majority)
    }

    /// Leaf id of every row of `x`.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.check_dim(x.ncols())?;
        Ok((0..x.nrows()).map(|i| self.route(|j| x[(i, j)]).id).collect())
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.check_dim(x.ncols())?;
        Ok((0..x.nrows()).map(|i| self.route(|j| x[(i, j)]).majority).collect())
    }

    /// Training rows per leaf, recovered by routing `x`.
    pub fn leaf_members(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<usize>>> {
        let mut members = vec![Vec::new(); self.n_leaves()];
        for (i, leaf) in self.apply_rows(x)?.into_iter().enumerate() {
            members[leaf].push(i);
        }
        Ok(members)
    }
}

pub fn fit_tree(ds: &Dataset, cfg: &TreeConfig) -> Result<DecisionTree> {
    fit_tree_with_members(ds, cfg).map(|(tree, _)| tree)
}

/// Fits a tree and also returns the training rows that ended in each leaf.
pub fn fit_tree_with_members(ds: &Dataset, cfg: &TreeConfig) -> Result<(DecisionTree, Vec<Vec<usize>>)> {
    cfg.validate()?;
    let x = ds.features();
    let (n, p) = x.shape();
    let sorted: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let col = x.column(j);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            idx
        })
        .collect();
    let mut grower = Grower {
        x,
        labels: ds.labels(),
        n_classes: ds.n_classes(),
        cfg,
        sorted,
        go_left: vec![false; n],
        scratch: Vec::with_capacity(n),
        nodes: Vec::new(),
        leaf_nodes: Vec::new(),
        members: Vec::new(),
    };
    grower.grow(0, n, 0);
    let Grower { nodes, leaf_nodes, members, .. } = grower;
    let tree = DecisionTree { nodes, leaf_nodes, n_features: p, n_classes: ds.n_classes(), config: cfg.clone() };
    Ok((tree, members))
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Rows going left.
    cut: usize,
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    labels: &'a [usize],
    n_classes: usize,
    cfg: &'a TreeConfig,
    /// Per feature, row indices sorted by that feature. Each node owns the
    /// same contiguous range in every list.
    sorted: Vec<Vec<usize>>,
    go_left: Vec<bool>,
    scratch: Vec<usize>,
    nodes: Vec<Node>,
    leaf_nodes: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Grower<'_> {
    fn grow(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let at = self.nodes.len();
        // placeholder, overwritten below
        self.nodes.push(Node::Leaf(Leaf::new(0, Vec::new())));

        let mut hist = vec![0usize; self.n_classes];
        for &i in &self.sorted[0][lo..hi] {
            hist[self.labels[i]] += 1;
        }
        let n = hi - lo;
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);

        let split =
            if pure || depth_capped || n < 2 * self.cfg.min_leaf_size { None } else { self.best_split(lo, hi, &hist) };

        match split {
            None => {
                let id = self.leaf_nodes.len();
                self.leaf_nodes.push(at);
                let mut rows = self.sorted[0][lo..hi].to_vec();
                rows.sort_unstable();
                self.members.push(rows);
                self.nodes[at] = Node::Leaf(Leaf::new(id, hist));
            }
            Some(c) => {
                self.partition(lo, hi, c.feature, c.threshold);
                let left = self.grow(lo, lo + c.cut, depth + 1);
                let right = self.grow(lo + c.cut, hi, depth + 1);
                self.nodes[at] = Node::Split { feature: c.feature, threshold: c.threshold, left, right };
            }
        }
        at
    }

    fn best_split(&self, lo: usize, hi: usize, hist: &[usize]) -> Option<Candidate> {
        let n = hi - lo;
        let min_leaf = self.cfg.min_leaf_size;
        let parent_ss: f64 = hist.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64;
        let mut best: Option<Candidate> = None;
        let mut left = vec![0usize; self.n_classes];
        let mut values = Vec::with_capacity(n);

        for (feature, order) in self.sorted.iter().enumerate() {
            let rows = &order[lo..hi];
            let col = self.x.column(feature);
            values.clear();
            values.extend(rows.iter().map(|&i| col[i]));
            let cuts = candidate_cuts(&values, self.cfg.num_bins);

            left.iter_mut().for_each(|c| *c = 0);
            let mut filled = 0;
            for cut in cuts {
                if cut < min_leaf || n - cut < min_leaf {
                    continue;
                }
                for &i in &rows[filled..cut] {
                    left[self.labels[i]] += 1;
                }
                filled = cut;
                let (mut ls, mut rs) = (0.0, 0.0);
                for (l, t) in left.iter().zip(hist) {
                    let r = t - l;
                    ls += (l * l) as f64;
                    rs += (r * r) as f64;
                }
                let gain = (ls / cut as f64 + rs / (n - cut) as f64 - parent_ss) / n as f64;
                if gain <= GAIN_EPS {
                    continue;
                }
                if best.as_ref().is_none_or(|b| gain > b.gain + GAIN_EPS) {
                    best = Some(Candidate { gain, feature, threshold: midpoint(values[cut - 1], values[cut]), cut });
                }
            }
        }
        best
    }

    /// Stable partition of every feature's range by `x[feature] < threshold`.
    fn partition(&mut self, lo: usize, hi: usize, feature: usize, threshold: f64) {
        let col = self.x.column(feature);
        for &i in &self.sorted[feature][lo..hi] {
            self.go_left[i] = col[i] < threshold;
        }
        for order in &mut self.sorted {
            let range = &mut order[lo..hi];
            self.scratch.clear();
            let mut w = 0;
            for k in 0..range.len() {
                let i = range[k];
                if self.go_left[i] {
                    range[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            range[w..].copy_from_slice(&self.scratch);
        }
    }
}

/// Threshold strictly above `lo` and no larger than `hi`, for `lo < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Candidate cut positions over sorted `values`: a cut at `k` sends
/// `values[..k]` left. With at most `num_bins` distinct values every change
/// point is a candidate; otherwise the equiprobable bin edges at ranks
/// `k n / num_bins` are used, each moved forward to the next change point.
pub(crate) fn candidate_cuts(values: &[f64], num_bins: usize) -> Vec<usize> {
    let n = values.len();
    let changes: Vec<usize> = (1..n).filter(|&k| values[k - 1] < values[k]).collect();
    if changes.len() < num_bins {
        return changes;
    }
    let mut cuts = Vec::with_capacity(num_bins - 1);
    let mut c = 0;
    for k in 1..num_bins {
        let rank = (k * n / num_bins).max(1);
        while c < changes.len() && changes[c] < rank {
            c += 1;
        }
        match changes.get(c) {
            Some(&cut) if cuts.last() != Some(&cut) => cuts.push(cut),
            Some(_) => {}
            None => break,
        }
    }
    cuts
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Split { feature: usize, threshold: f64, left: Box<NodeRepr>, right: Box<NodeRepr> },
    Leaf { leaf_id: usize, histogram: Vec<usize> },
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    n_features: usize,
    n_classes: usize,
    config: TreeConfig,
    root: NodeRepr,
}

impl From<DecisionTree> for TreeRepr {
    fn from(tree: DecisionTree) -> Self {
        fn nest(nodes: &[Node], at: usize) -> NodeRepr {
            match &nodes[at] {
                Node::Split { feature, threshold, left, right } => NodeRepr::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(nest(nodes, *left)),
                    right: Box::new(nest(nodes, *right)),
                },
                Node::Leaf(l) => NodeRepr::Leaf { leaf_id: l.id, histogram: l.histogram.clone() },
            }
        }
        TreeRepr {
            n_features: tree.n_features,
            n_classes: tree.n_classes,
            root: nest(&tree.nodes, 0),
            config: tree.config,
        }
    }
}

impl TryFrom<TreeRepr> for DecisionTree {
    type Error = DteError;

    fn try_from(repr: TreeRepr) -> Result<Self> {
        fn flatten(node: NodeRepr, nodes: &mut Vec<Node>, leaves: &mut Vec<(usize, usize)>) -> usize {
            let at = nodes.len();
            match node {
                NodeRepr::Leaf { leaf_id, histogram } => {
                    leaves.push((leaf_id, at));
                    nodes.push(Node::Leaf(Leaf::new(leaf_id, histogram)));
                }
                NodeRepr::Split { feature, threshold, left, right } => {
                    nodes.push(Node::Leaf(Leaf::new(0, Vec::new())));
                    let l = flatten(*left, nodes, leaves);
                    let r = flatten(*right, nodes, leaves);
                    nodes[at] = Node::Split { feature, threshold, left: l, right: r };
                }
            }
            at
        }
        let mut nodes = Vec::new();
        let mut leaves = Vec::new();
        flatten(repr.root, &mut nodes, &mut leaves);
        leaves.sort_unstable();
        if leaves.iter().enumerate().any(|(k, &(id, _))| k != id) {
            return Err(DteError::validation("leaf ids must be 0..m without gaps"));
        }
        for node in &nodes {
            match node {
                Node::Split { feature, threshold, .. } => {
                    if *feature >= repr.n_features || !threshold.is_finite() {
                        return Err(DteError::validation("invalid split in serialized tree"));
                    }
                }
                Node::Leaf(l) => {
                    if l.histogram.len() != repr.n_classes {
                        return Err(DteError::validation("leaf histogram has wrong class count"));
                    }
                }
            }
        }
        Ok(DecisionTree {
            nodes,
            leaf_nodes: leaves.into_iter().map(|(_, at)| at).collect(),
            n_features: repr.n_features,
            n_classes: repr.n_classes,
            config: repr.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[&[f64]], labels: &[usize]) -> Dataset {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Dataset::from_rows(&rows, labels.to_vec()).unwrap()
    }

    fn cfg(min_leaf: usize) -> TreeConfig {
        TreeConfig { min_leaf_size: min_leaf, ..TreeConfig::default() }
    }

    /// Gini decrease of every threshold between consecutive distinct values.
    fn brute_force_best(x: &[f64], y: &[usize], k: usize) -> (f64, f64) {
        let gini = |labels: &[usize]| {
            let n = labels.len() as f64;
            1.0 - (0..k).map(|c| (labels.iter().filter(|&&l| l == c).count() as f64 / n).powi(2)).sum::<f64>()
        };
        let mut cands: Vec<f64> = x.to_vec();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let parent = gini(y);
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        for w in cands.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let l: Vec<usize> = x.iter().zip(y).filter(|(v, _)| **v < t).map(|(_, &c)| c).collect();
            let r: Vec<usize> = x.iter().zip(y).filter(|(v, _)| **v >= t).map(|(_, &c)| c).collect();
            let n = y.len() as f64;
            let dec = parent - l.len() as f64 / n * gini(&l) - r.len() as f64 / n * gini(&r);
            if dec > best.0 {
                best = (dec, t);
            }
        }
        best
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let d = ds(&[&[1.0], &[2.0], &[3.0]], &[0, 0, 0]);
        let t = fit_tree(&d, &cfg(1)).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.apply(&[100.0]).unwrap(), 0);
    }

    #[test]
    fn single_threshold_split() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0, 0, 1, 1];
        let (best_gain, best_t) = brute_force_best(&x, &y, 2);
        assert_eq!(best_gain, 0.5);
        let d = ds(&[&[1.0], &[2.0], &[3.0], &[4.0]], &y);
        let t = fit_tree(&d, &cfg(1)).unwrap();
        assert_eq!(t.n_leaves(), 2);
        match &t.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!(*threshold > 2.0 && *threshold <= 3.0);
                assert_eq!(*threshold, best_t);
            }
            Node::Leaf(_) => panic!("expected a split"),
        }
        assert!(t.leaves().all(|l| l.histogram.iter().filter(|&&c| c > 0).count() == 1));
    }

    #[test]
    fn split_matches_brute_force_on_small_data() {
        // distinct values below the bin count, so every threshold is a candidate
        let x = [0.3, 1.2, 0.7, 2.5, 1.9, 0.1, 3.3, 2.2, 1.4, 0.9];
        let y = [0, 1, 0, 1, 1, 0, 0, 1, 0, 1];
        let (best_gain, best_t) = brute_force_best(&x, &y, 2);
        let rows: Vec<&[f64]> = x.iter().map(std::slice::from_ref).collect();
        let t = fit_tree(&ds(&rows, &y), &TreeConfig { max_depth: Some(1), ..cfg(1) }).unwrap();
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert!((*threshold - best_t).abs() < 1e-12),
            Node::Leaf(_) => panic!("expected a split"),
        }
        assert!(best_gain > 0.0);
    }

    #[test]
    fn boundary_goes_right() {
        let d = ds(&[&[1.0], &[2.0], &[3.0], &[4.0]], &[0, 0, 1, 1]);
        let t = fit_tree(&d, &cfg(1)).unwrap();
        let theta = match &t.nodes()[0] {
            Node::Split { threshold, .. } => *threshold,
            Node::Leaf(_) => unreachable!(),
        };
        let right = t.apply(&[4.0]).unwrap();
        assert_eq!(t.apply(&[theta]).unwrap(), right);
        assert_ne!(t.apply(&[theta - 1e-9]).unwrap(), right);
    }

    #[test]
    fn tie_predicts_lowest_class() {
        let d = ds(&[&[1.0], &[1.0], &[1.0], &[1.0], &[1.0], &[1.0]], &[1, 0, 1, 0, 1, 0]);
        let t = fit_tree(&d, &cfg(1)).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.leaf(0).histogram, vec![3, 3]);
        assert_eq!(t.predict(&[1.0]).unwrap(), 0);
    }

    #[test]
    fn small_n_is_single_leaf() {
        let d = ds(&[&[1.0], &[2.0], &[3.0]], &[0, 1, 0]);
        let t = fit_tree(&d, &cfg(10)).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.leaf(0).size(), 3);
    }

    #[test]
    fn dimension_mismatch() {
        let d = ds(&[&[1.0, 0.0], &[2.0, 0.0]], &[0, 1]);
        let t = fit_tree(&d, &cfg(1)).unwrap();
        assert!(matches!(t.apply(&[1.0]), Err(DteError::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn config_validation() {
        assert!(TreeConfig { min_leaf_size: 0, ..TreeConfig::default() }.validate().is_err());
        assert!(TreeConfig { num_bins: 1, ..TreeConfig::default() }.validate().is_err());
    }

    #[test]
    fn cuts_respect_bin_count() {
        let values: Vec<f64> = (0..100).map(f64::from).collect();
        let cuts = candidate_cuts(&values, 4);
        assert_eq!(cuts, vec![25, 50, 75]);
        let few = [1.0, 1.0, 2.0, 3.0, 3.0];
        assert_eq!(candidate_cuts(&few, 30), vec![2, 3]);
        // heavy ties move the edge to the next change point
        let tied = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(candidate_cuts(&tied, 3), vec![6]);
        assert!(candidate_cuts(&[5.0, 5.0], 30).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i * 13 % 11) as f64]).collect();
        let labels = (0..60).map(|i| (i % 7 + i % 3) % 3).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        let t = fit_tree(&d, &cfg(3)).unwrap();
        assert!(t.n_leaves() > 2);
        let text = serde_json::to_string(&t).unwrap();
        let back: DecisionTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        assert!(text.contains("\"leaf_id\""));
        assert!(text.contains("\"threshold\""));
    }

    #[test]
    fn max_depth_caps_growth() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let labels = (0..64).map(|i| (i / 4) % 2).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        let t = fit_tree(&d, &TreeConfig { max_depth: Some(2), ..cfg(1) }).unwrap();
        assert!(t.n_leaves() <= 4);
    }
}
