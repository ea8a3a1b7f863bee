//! Leaf-mean anchor embeddings.
//!
//! Each leaf of a fitted tree contributes one anchor, the mean of the
//! training rows it holds. An input `x` maps to `Z_j(x) = x·μ_j + b_j` for
//! every anchor `μ_j`; with the default intercept `b_j = -½‖μ_j‖²` this is
//! `½‖x‖² - ½‖x - μ_j‖²`, so the largest coordinate names the nearest anchor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{bootstrap, Dataset};
use crate::error::{DteError, Result};
use crate::linalg::{from_rows, to_rows};
use crate::rng::derive_seed;
use crate::tree::{fit_tree_with_members, DecisionTree, TreeConfig};

const FORMAT_VERSION: u32 = 1;

/// How the intercept of each anchor is derived from its squared norm.
///
/// All three differ from one another by a constant per-coordinate shift, so
/// a translation-invariant downstream classifier (LDA) predicts the same
/// labels under each of them. Only [`InterceptConvention::NegHalfSquaredNorm`]
/// makes the embedding's argmax coincide with the nearest anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptConvention {
    /// `b_j = -½‖μ_j‖²`
    #[default]
    NegHalfSquaredNorm,
    /// `b_j = -‖μ_j‖²`
    NegSquaredNorm,
    /// `b_j = +‖μ_j‖²`
    PosSquaredNorm,
}

impl InterceptConvention {
    pub fn intercept(self, squared_norm: f64) -> f64 {
        match self {
            InterceptConvention::NegHalfSquaredNorm => -0.5 * squared_norm,
            InterceptConvention::NegSquaredNorm => -squared_norm,
            InterceptConvention::PosSquaredNorm => squared_norm,
        }
    }
}

/// The affine map `X ↦ X Wᵀ + 1 bᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorMap {
    weights: DMatrix<f64>,
    intercepts: DVector<f64>,
}

impl AnchorMap {
    pub fn new(weights: DMatrix<f64>, intercepts: DVector<f64>) -> Result<Self> {
        if weights.nrows() != intercepts.len() {
            return Err(DteError::DimensionMismatch { expected: weights.nrows(), got: intercepts.len() });
        }
        Ok(AnchorMap { weights, intercepts })
    }

    /// One coordinate per row of `anchors`.
    pub fn from_anchors(anchors: DMatrix<f64>, convention: InterceptConvention) -> Self {
        let intercepts =
            DVector::from_iterator(anchors.nrows(), anchors.row_iter().map(|r| convention.intercept(r.norm_squared())));
        AnchorMap { weights: anchors, intercepts }
    }

    /// `m x p` anchor matrix.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn intercepts(&self) -> &DVector<f64> {
        &self.intercepts
    }

    /// Embedding dimension `m`.
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(DteError::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let mut z = x * self.weights.transpose();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.intercepts[j]);
        }
        Ok(z)
    }

    pub fn project_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.project(&row)?.iter().copied().collect())
    }
}

/// Concatenated leaf-mean embedding of one or more trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "EmbeddingRepr", try_from = "EmbeddingRepr")]
pub struct Embedding {
    map: AnchorMap,
    convention: InterceptConvention,
    leaf_counts: Vec<usize>,
    trees: Vec<DecisionTree>,
}

impl Embedding {
    pub fn map(&self) -> &AnchorMap {
        &self.map
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        self.map.weights()
    }

    pub fn intercepts(&self) -> &DVector<f64> {
        self.map.intercepts()
    }

    pub fn convention(&self) -> InterceptConvention {
        self.convention
    }

    /// Total number of leaves over all trees.
    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_counts(&self) -> &[usize] {
        &self.leaf_counts
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Same anchors under another intercept convention.
    pub fn with_convention(&self, convention: InterceptConvention) -> Embedding {
        Embedding {
            map: AnchorMap::from_anchors(self.weights().clone(), convention),
            convention,
            leaf_counts: self.leaf_counts.clone(),
            trees: self.trees.clone(),
        }
    }

    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.map.project(x)
    }

    /// Column range of tree `s` inside the concatenated embedding.
    pub fn tree_columns(&self, s: usize) -> std::ops::Range<usize> {
        let start: usize = self.leaf_counts[..s].iter().sum();
        start..start + self.leaf_counts[s]
    }
}

/// Mean of each row group. Groups must be nonempty.
pub fn group_means(x: &DMatrix<f64>, groups: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let mut means = DMatrix::zeros(groups.len(), x.ncols());
    for (g, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            return Err(DteError::validation(format!("leaf {g} holds no rows")));
        }
        for &i in rows {
            for j in 0..x.ncols() {
                means[(g, j)] += x[(i, j)];
            }
        }
        let inv = 1.0 / rows.len() as f64;
        means.row_mut(g).scale_mut(inv);
    }
    Ok(means)
}

/// `m x p` matrix whose row `j` is the mean of the rows of `ds` routed to
/// leaf `j`.
pub fn leaf_means(ds: &Dataset, tree: &DecisionTree) -> Result<DMatrix<f64>> {
    group_means(ds.features(), &tree.leaf_members(ds.features())?)
}

/// Single-tree embedding with the default intercept convention.
pub fn dte1(ds: &Dataset, cfg: &TreeConfig) -> Result<(DMatrix<f64>, Embedding)> {
    dte_t(ds, cfg, 1, 0)
}

pub fn dte_t(ds: &Dataset, cfg: &TreeConfig, t: usize, seed: u64) -> Result<(DMatrix<f64>, Embedding)> {
    dte_t_with(ds, cfg, t, seed, InterceptConvention::default())
}

/// Tree 0 is fitted on `ds`; trees `1..t` on bootstrap resamples whose seeds
/// derive from `seed` and the tree index. A bootstrap tree's anchors are
/// means over its resample, duplicates counted. The returned `Z` projects
/// the rows of `ds` itself.
pub fn dte_t_with(
    ds: &Dataset,
    cfg: &TreeConfig,
    t: usize,
    seed: u64,
    convention: InterceptConvention,
) -> Result<(DMatrix<f64>, Embedding)> {
    if t == 0 {
        return Err(DteError::validation("need at least one tree"));
    }
    let mut trees = Vec::with_capacity(t);
    let mut blocks = Vec::with_capacity(t);
    for s in 0..t {
        let (tree, means) = if s == 0 {
            let (tree, members) = fit_tree_with_members(ds, cfg)?;
            let means = group_means(ds.features(), &members)?;
            (tree, means)
        } else {
            let sample = bootstrap(ds.n_rows(), derive_seed(seed, &[s as u64]))?;
            let resampled = ds.select(&sample.indices);
            let (tree, members) = fit_tree_with_members(&resampled, cfg)?;
            let means = group_means(resampled.features(), &members)?;
            (tree, means)
        };
        trees.push(tree);
        blocks.push(means);
    }
    let leaf_counts: Vec<usize> = blocks.iter().map(DMatrix::nrows).collect();
    let m = leaf_counts.iter().sum();
    let mut w = DMatrix::zeros(m, ds.n_features());
    let mut at = 0;
    for b in &blocks {
        w.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    let emb = Embedding { map: AnchorMap::from_anchors(w, convention), convention, leaf_counts, trees };
    let z = emb.project(ds.features())?;
    Ok((z, emb))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRepr {
    version: u32,
    t: usize,
    leaf_counts: Vec<usize>,
    intercept_convention: InterceptConvention,
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    b: Vec<f64>,
    trees: Vec<DecisionTree>,
}

impl From<Embedding> for EmbeddingRepr {
    fn from(e: Embedding) -> Self {
        EmbeddingRepr {
            version: FORMAT_VERSION,
            t: e.trees.len(),
            weights: to_rows(e.map.weights()),
            b: e.map.intercepts().iter().copied().collect(),
            leaf_counts: e.leaf_counts,
            intercept_convention: e.convention,
            trees: e.trees,
        }
    }
}

impl TryFrom<EmbeddingRepr> for Embedding {
    type Error = DteError;

    fn try_from(r: EmbeddingRepr) -> Result<Self> {
        if r.version != FORMAT_VERSION {
            return Err(DteError::validation(format!("unsupported embedding version {}", r.version)));
        }
        let p = r.trees.first().map_or(0, DecisionTree::n_features);
        let w = from_rows(&r.weights, p)?;
        let consistent = r.t == r.trees.len()
            && r.leaf_counts.len() == r.t
            && r.leaf_counts.iter().sum::<usize>() == w.nrows()
            && r.trees.iter().zip(&r.leaf_counts).all(|(t, &m)| t.n_leaves() == m);
        if !consistent {
            return Err(DteError::validation("embedding leaf counts disagree with its trees"));
        }
        let map = AnchorMap::new(w, DVector::from_vec(r.b))?;
        Ok(Embedding { map, convention: r.intercept_convention, leaf_counts: r.leaf_counts, trees: r.trees })
    }
}
