//! Population-level checks on exactly enumerable distributions, and the
//! synthetic generators used by the simulation study.
//!
//! A [`DiscreteJoint`] puts mass on finitely many support points, so every
//! population quantity (region means, `P(Y | region)`, expected error) is a
//! finite weighted sum and can be compared with tight tolerances.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::embed::{AnchorMap, InterceptConvention};
use crate::error::{DteError, Result};
use crate::linalg::argmax;
use crate::rng::rng_for;

/// Tolerance on the theorem checks.
pub const CHECK_TOL: f64 = 1e-12;

/// Finite-support joint law of `(X, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    points: DMatrix<f64>,
    probs: Vec<f64>,
    /// `N x K`, row `i` is `P(Y | X = x_i)`.
    conditionals: DMatrix<f64>,
}

impl DiscreteJoint {
    pub fn new(points: DMatrix<f64>, probs: Vec<f64>, conditionals: DMatrix<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 || probs.len() != n || conditionals.nrows() != n || conditionals.ncols() == 0 {
            return Err(DteError::validation("support, masses and conditionals must align"));
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(DteError::validation("support masses must be positive"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > CHECK_TOL {
            return Err(DteError::validation("support masses must sum to 1"));
        }
        for (i, row) in conditionals.row_iter().enumerate() {
            if row.iter().any(|&v| v < 0.0) || (row.sum() - 1.0).abs() > CHECK_TOL {
                return Err(DteError::validation(format!("conditional row {i} is not a distribution")));
            }
        }
        Ok(DiscreteJoint { points, probs, conditionals })
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.conditionals.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn conditionals(&self) -> &DMatrix<f64> {
        &self.conditionals
    }
}

/// Assignment of support points to regions `0..m`, none empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    n_regions: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, n_regions: usize) -> Result<Self> {
        let mut seen = vec![false; n_regions];
        for &r in &assignment {
            if r >= n_regions {
                return Err(DteError::validation(format!("region {r} outside 0..{n_regions}")));
            }
            seen[r] = true;
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(DteError::validation(format!("region {r} is empty")));
        }
        Ok(Partition { assignment, n_regions })
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn region_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_regions];
        for (i, &r) in self.assignment.iter().enumerate() {
            out[r].push(i);
        }
        out
    }
}

fn check_sizes(joint: &DiscreteJoint, part: &Partition) -> Result<()> {
    if part.assignment.len() != joint.n_points() {
        return Err(DteError::validation(format!(
            "partition covers {} points, support has {}",
            part.assignment.len(),
            joint.n_points()
        )));
    }
    Ok(())
}

fn l1(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Homogeneity {
    pub per_region: Vec<f64>,
    pub epsilon: f64,
}

/// Largest L1 distance between conditionals of two points sharing a region.
pub fn epsilon_homogeneity(joint: &DiscreteJoint, part: &Partition) -> Result<Homogeneity> {
    check_sizes(joint, part)?;
    let c = &joint.conditionals;
    let per_region: Vec<f64> = part
        .members()
        .iter()
        .map(|rows| {
            let mut eps: f64 = 0.0;
            for (a, &i) in rows.iter().enumerate() {
                for &k in &rows[a + 1..] {
                    eps = eps.max(l1(c.row(i).iter().copied(), c.row(k).iter().copied()));
                }
            }
            eps
        })
        .collect();
    let epsilon = per_region.iter().copied().fold(0.0, f64::max);
    Ok(Homogeneity { per_region, epsilon })
}

/// Probability mass of each region.
pub fn region_masses(joint: &DiscreteJoint, part: &Partition) -> Result<Vec<f64>> {
    check_sizes(joint, part)?;
    let mut mass = vec![0.0; part.n_regions];
    for (i, &r) in part.assignment.iter().enumerate() {
        mass[r] += joint.probs[i];
    }
    Ok(mass)
}

/// `m x K`, row `j` is `P(Y | X ∈ R_j)`: the mass-weighted mixture of the
/// conditionals in region `j`. Accumulated as offsets from the region's
/// first conditional, so a region with identical conditionals reproduces
/// them exactly.
pub fn region_conditionals(joint: &DiscreteJoint, part: &Partition) -> Result<DMatrix<f64>> {
    let mass = region_masses(joint, part)?;
    let k = joint.n_classes();
    let c = &joint.conditionals;
    let mut out = DMatrix::zeros(part.n_regions, k);
    for (r, rows) in part.members().iter().enumerate() {
        let base = rows[0];
        for col in 0..k {
            let offset: f64 = rows.iter().map(|&i| joint.probs[i] / mass[r] * (c[(i, col)] - c[(base, col)])).sum();
            out[(r, col)] = c[(base, col)] + offset;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationEmbedding {
    /// Anchors `μ_j = E[X | X ∈ R_j]` with their intercepts.
    pub map: AnchorMap,
    pub region_mass: Vec<f64>,
    /// Embedding of every support point, `N x m`.
    pub z: DMatrix<f64>,
}

pub fn population_embedding(
    joint: &DiscreteJoint,
    part: &Partition,
    convention: InterceptConvention,
) -> Result<PopulationEmbedding> {
    let mass = region_masses(joint, part)?;
    if let Some(r) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(DteError::validation(format!("region {r} has zero mass")));
    }
    let p = joint.points.ncols();
    let mut means = DMatrix::zeros(part.n_regions, p);
    for (i, &r) in part.assignment.iter().enumerate() {
        let w = joint.probs[i] / mass[r];
        for j in 0..p {
            means[(r, j)] += w * joint.points[(i, j)];
        }
    }
    let map = AnchorMap::from_anchors(means, convention);
    let z = map.project(&joint.points)?;
    Ok(PopulationEmbedding { map, region_mass: mass, z })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub epsilon: f64,
    /// `max_x ‖P(Y|X=x) − P(Y|Z(x))‖₁` over the support.
    pub deviation: f64,
    pub bound_ok: bool,
}

/// Compares `P(Y|X)` with `P(Y|Z)`, the latter taken as `P(Y | R(X))`.
pub fn verify_theorem1(joint: &DiscreteJoint, part: &Partition) -> Result<Theorem1Report> {
    let eps = epsilon_homogeneity(joint, part)?.epsilon;
    let given_region = region_conditionals(joint, part)?;
    let c = &joint.conditionals;
    let deviation = (0..joint.n_points())
        .map(|i| l1(c.row(i).iter().copied(), given_region.row(part.region_of(i)).iter().copied()))
        .fold(0.0, f64::max);
    Ok(Theorem1Report { epsilon: eps, deviation, bound_ok: deviation <= eps + CHECK_TOL })
}

/// Classifies an embedding by the class owning its best coordinate: each
/// leaf votes for its majority class and class `c` scores
/// `max_{j ∈ J_c} z_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorRule {
    /// Majority class per leaf, lowest id on ties.
    pub leaf_class: Vec<usize>,
    /// `J_c`: leaves per class.
    pub class_leaves: Vec<Vec<usize>>,
}

impl IndicatorRule {
    /// From an `m x K` matrix of per-leaf class probabilities or counts.
    pub fn from_leaf_distributions(dist: &DMatrix<f64>) -> Self {
        let k = dist.ncols();
        let leaf_class: Vec<usize> = dist.row_iter().map(|r| argmax(r.iter().copied()).unwrap_or(0)).collect();
        let mut class_leaves = vec![Vec::new(); k];
        for (j, &c) in leaf_class.iter().enumerate() {
            class_leaves[c].push(j);
        }
        IndicatorRule { leaf_class, class_leaves }
    }

    /// Indicator vector `γ_c`.
    pub fn gamma(&self, c: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.leaf_class.len()];
        for &j in &self.class_leaves[c] {
            g[j] = 1.0;
        }
        g
    }

    pub fn classify(&self, z: &[f64]) -> usize {
        argmax(self.class_leaves.iter().map(|leaves| leaves.iter().map(|&j| z[j]).fold(f64::NEG_INFINITY, f64::max)))
            .unwrap_or(0)
    }

    /// The literal `argmax_c γ_cᵀ z`. Kept for comparison; it does not
    /// reduce to the owning leaf once a class holds several leaves.
    pub fn classify_by_sum(&self, z: &[f64]) -> usize {
        argmax((0..self.class_leaves.len()).map(|c| {
            if self.class_leaves[c].is_empty() {
                f64::NEG_INFINITY
            } else {
                self.class_leaves[c].iter().map(|&j| z[j]).sum()
            }
        }))
        .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Report {
    /// Expected error of the indicator rule, enumerated over the support.
    pub lg_classifier: f64,
    /// `Σ_j P(R_j) l_j`.
    pub lg_formula: f64,
    /// Expected error of the sum form of the rule.
    pub lg_sum_rule: f64,
    /// Every support point strictly nearer its own region mean.
    pub hypothesis_ok: bool,
    pub equal: bool,
}

pub fn verify_theorem2(joint: &DiscreteJoint, part: &Partition) -> Result<Theorem2Report> {
    verify_theorem2_with(joint, part, InterceptConvention::default())
}

pub fn verify_theorem2_with(
    joint: &DiscreteJoint,
    part: &Partition,
    convention: InterceptConvention,
) -> Result<Theorem2Report> {
    let emb = population_embedding(joint, part, convention)?;
    let given_region = region_conditionals(joint, part)?;
    let rule = IndicatorRule::from_leaf_distributions(&given_region);
    let means = emb.map.weights();
    let c = &joint.conditionals;

    let mut hypothesis_ok = true;
    let mut lg_classifier = 0.0;
    let mut lg_sum_rule = 0.0;
    for i in 0..joint.n_points() {
        let x = joint.points.row(i);
        let own = part.region_of(i);
        let d_own = (x - means.row(own)).norm_squared();
        for r in (0..part.n_regions).filter(|&r| r != own) {
            if (x - means.row(r)).norm_squared() <= d_own {
                hypothesis_ok = false;
            }
        }
        let z: Vec<f64> = emb.z.row(i).iter().copied().collect();
        lg_classifier += joint.probs[i] * (1.0 - c[(i, rule.classify(&z))]);
        lg_sum_rule += joint.probs[i] * (1.0 - c[(i, rule.classify_by_sum(&z))]);
    }
    let lg_formula: f64 =
        given_region.row_iter().zip(&emb.region_mass).map(|(row, &mass)| mass * (1.0 - row.max())).sum();
    Ok(Theorem2Report {
        lg_classifier,
        lg_formula,
        lg_sum_rule,
        hypothesis_ok,
        equal: (lg_classifier - lg_formula).abs() <= CHECK_TOL,
    })
}

/// One line of the verification output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub family: InstanceFamily,
    pub instance_seed: u64,
    pub epsilon: f64,
    pub deviation: f64,
    pub bound_ok: bool,
    #[serde(rename = "Lg_classifier")]
    pub lg_classifier: f64,
    #[serde(rename = "Lg_formula")]
    pub lg_formula: f64,
    #[serde(rename = "Lg_sum_rule")]
    pub lg_sum_rule: f64,
    pub hypothesis_ok: bool,
    pub lg_equal: bool,
}

impl VerificationReport {
    /// The bound must hold everywhere; the error identity only where its
    /// geometric hypothesis holds.
    pub fn passed(&self) -> bool {
        self.bound_ok && (!self.hypothesis_ok || self.lg_equal)
    }
}

pub fn verify_instance(
    family: InstanceFamily,
    seed: u64,
    joint: &DiscreteJoint,
    part: &Partition,
    convention: InterceptConvention,
) -> Result<VerificationReport> {
    let t1 = verify_theorem1(joint, part)?;
    let t2 = verify_theorem2_with(joint, part, convention)?;
    Ok(VerificationReport {
        family,
        instance_seed: seed,
        epsilon: t1.epsilon,
        deviation: t1.deviation,
        bound_ok: t1.bound_ok,
        lg_classifier: t2.lg_classifier,
        lg_formula: t2.lg_formula,
        lg_sum_rule: t2.lg_sum_rule,
        hypothesis_ok: t2.hypothesis_ok,
        lg_equal: t2.equal,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceFamily {
    /// Arbitrary partition, random conditionals.
    RandomPartition,
    /// Arbitrary partition, one conditional per region (`ε = 0`).
    Homogeneous,
    /// Partition at a fixed point of weighted Lloyd iterations, so every
    /// point is nearest its own region mean.
    NearestMean,
    /// Nearest-mean partition with one-hot conditionals per region.
    PureNearestMean,
}

/// Shape of generated instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InstanceShape {
    pub points: usize,
    pub dim: usize,
    pub classes: usize,
    pub regions: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape { points: 20, dim: 2, classes: 3, regions: 3 }
    }
}

fn simplex_point<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

fn random_masses<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut m = simplex_point(rng, n);
    // renormalise so the sum is as close to 1 as rounding allows
    let s: f64 = m.iter().sum();
    m.iter_mut().for_each(|v| *v /= s);
    m
}

fn random_points<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
}

/// Instance of the requested family. Nearest-mean families retry until
/// the Lloyd iteration settles with no empty region and no distance ties.
pub fn generate_instance(
    family: InstanceFamily,
    shape: InstanceShape,
    seed: u64,
) -> Result<(DiscreteJoint, Partition)> {
    let InstanceShape { points: n, dim: p, classes: k, regions: m } = shape;
    if m == 0 || m > n || k == 0 || p == 0 {
        return Err(DteError::validation("instance needs 1 <= regions <= points"));
    }
    for attempt in 0..1000u64 {
        let mut rng = rng_for(seed, &[family as u64, attempt]);
        let points = random_points(&mut rng, n, p);
        let probs = random_masses(&mut rng, n);
        let assignment = match family {
            InstanceFamily::RandomPartition | InstanceFamily::Homogeneous => {
                let mut a: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.random_range(0..m) }).collect();
                a.shuffle(&mut rng);
                a
            }
            InstanceFamily::NearestMean | InstanceFamily::PureNearestMean => {
                match lloyd(&points, &probs, m, &mut rng) {
                    Some(a) => a,
                    None => continue,
                }
            }
        };
        let region_dist: Vec<Vec<f64>> = (0..m)
            .map(|r| match family {
                InstanceFamily::PureNearestMean => {
                    let mut v = vec![0.0; k];
                    v[(r + rng.random_range(0..k)) % k] = 1.0;
                    v
                }
                _ => simplex_point(&mut rng, k),
            })
            .collect();
        let conditionals = DMatrix::from_fn(n, k, |i, c| match family {
            InstanceFamily::RandomPartition | InstanceFamily::NearestMean => 0.0,
            _ => region_dist[assignment[i]][c],
        });
        let conditionals = match family {
            InstanceFamily::RandomPartition | InstanceFamily::NearestMean => {
                let rows: Vec<Vec<f64>> = (0..n).map(|_| simplex_point(&mut rng, k)).collect();
                DMatrix::from_fn(n, k, |i, c| rows[i][c])
            }
            _ => conditionals,
        };
        let joint = DiscreteJoint::new(points, probs, conditionals)?;
        let part = Partition::new(assignment, m)?;
        return Ok((joint, part));
    }
    Err(DteError::validation("could not generate a nearest-mean instance"))
}

/// Weighted Lloyd iterations to a fixed point where each point is strictly
/// nearest its own region's weighted mean.
fn lloyd<R: Rng>(points: &DMatrix<f64>, probs: &[f64], m: usize, rng: &mut R) -> Option<Vec<usize>> {
    let n = points.nrows();
    let mut start: Vec<usize> = (0..n).collect();
    start.shuffle(rng);
    let mut centres = points.select_rows(&start[..m]);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..200 {
        let mut changed = false;
        for i in 0..n {
            let d: Vec<f64> = (0..m).map(|r| (points.row(i) - centres.row(r)).norm_squared()).collect();
            let best = argmax(d.iter().map(|v| -v))?;
            if d.iter().enumerate().any(|(r, &v)| r != best && v <= d[best]) {
                return None;
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut mass = vec![0.0; m];
        let mut sums = DMatrix::zeros(m, points.ncols());
        for i in 0..n {
            mass[assign[i]] += probs[i];
            let mut row = sums.row_mut(assign[i]);
            row += points.row(i) * probs[i];
        }
        if mass.contains(&0.0) {
            return None;
        }
        for r in 0..m {
            let mut row = centres.row_mut(r);
            row.copy_from(&(sums.row(r) / mass[r]));
        }
        if !changed {
            return Some(assign);
        }
    }
    None
}

/// `X | Y=1 ~ U[-1, 0]`, `X | Y=2 ~ U[0, 1]` with equal priors, put on
/// `grid` midpoints of `[-1, 1]`, split at `split`.
pub fn uniform_split_example(grid: usize, split: f64) -> Result<(DiscreteJoint, Partition)> {
    let h = 2.0 / grid as f64;
    let xs: Vec<f64> = (0..grid).map(|i| -1.0 + (i as f64 + 0.5) * h).collect();
    let points = DMatrix::from_column_slice(grid, 1, &xs);
    let probs = vec![1.0 / grid as f64; grid];
    let conditionals = DMatrix::from_fn(grid, 2, |i, c| {
        let class = usize::from(xs[i] >= 0.0);
        if c == class {
            1.0
        } else {
            0.0
        }
    });
    let assignment = xs.iter().map(|&x| usize::from(x >= split)).collect();
    Ok((DiscreteJoint::new(points, probs, conditionals)?, Partition::new(assignment, 2)?))
}

/// Isotropic Gaussian mixture; classes pick a component uniformly among
/// their own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub component_class: Vec<usize>,
    pub class_priors: Vec<f64>,
}

impl GaussianMixtureSpec {
    /// Two classes, three clusters in the plane: class 1 at (0,0) and
    /// (0,3), class 2 at (1,2), σ = 0.3, priors 2/3 and 1/3.
    pub fn three_clusters() -> Self {
        GaussianMixtureSpec {
            means: vec![vec![0.0, 0.0], vec![0.0, 3.0], vec![1.0, 2.0]],
            sigma: 0.3,
            component_class: vec![0, 0, 1],
            class_priors: vec![2.0 / 3.0, 1.0 / 3.0],
        }
    }

    /// `k` equiprobable classes in `p` dimensions, class `c` centred at
    /// `separation · e_c` with unit variance.
    pub fn separated_blobs(p: usize, k: usize, separation: f64) -> Self {
        GaussianMixtureSpec {
            means: (0..k).map(|c| (0..p).map(|j| if j == c % p { separation } else { 0.0 }).collect()).collect(),
            sigma: 1.0,
            component_class: (0..k).collect(),
            class_priors: vec![1.0 / k as f64; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        let k = self.class_priors.len();
        if self.means.is_empty() || p == 0 || self.means.iter().any(|m| m.len() != p) {
            return Err(DteError::validation("component means must share one dimension"));
        }
        if self.component_class.len() != self.means.len() || self.component_class.iter().any(|&c| c >= k) {
            return Err(DteError::validation("every component needs a valid class"));
        }
        if (0..k).any(|c| !self.component_class.contains(&c)) {
            return Err(DteError::validation("every class needs a component"));
        }
        if self.class_priors.iter().any(|&p| !(p > 0.0)) || (self.class_priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DteError::validation("class priors must be positive and sum to 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(DteError::validation("sigma must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.class_priors.len()
    }

    fn components_of(&self, c: usize) -> Vec<usize> {
        (0..self.means.len()).filter(|&k| self.component_class[k] == c).collect()
    }

    pub fn anchors(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.means.len(), self.dim(), |k, j| self.means[k][j])
    }

    /// Class with the highest posterior at `x`, lowest id on ties.
    pub fn posterior_class(&self, x: &[f64]) -> usize {
        let scores = (0..self.n_classes()).map(|c| {
            let comps = self.components_of(c);
            let w = (1.0 / comps.len() as f64).ln() + self.class_priors[c].ln();
            let logs: Vec<f64> = comps
                .iter()
                .map(|&k| {
                    let d2: f64 = x.iter().zip(&self.means[k]).map(|(a, b)| (a - b) * (a - b)).sum();
                    if self.sigma > 0.0 {
                        -d2 / (2.0 * self.sigma * self.sigma)
                    } else if d2 == 0.0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            w + top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
        });
        argmax(scores).unwrap_or(0)
    }
}

fn draw<R: Rng>(spec: &GaussianMixtureSpec, rng: &mut R, cum: &[f64]) -> (usize, usize, Vec<f64>) {
    let u: f64 = rng.random();
    let class = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
    let comps = spec.components_of(class);
    let comp = comps[rng.random_range(0..comps.len())];
    let x = spec.means[comp]
        .iter()
        .map(|&m| {
            let e: f64 = StandardNormal.sample(rng);
            m + spec.sigma * e
        })
        .collect();
    (class, comp, x)
}

fn cumulative(priors: &[f64]) -> Vec<f64> {
    priors
        .iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    sample_mixture_with_components(spec, n, seed).map(|(ds, _)| ds)
}

/// Also returns the generating component of every row.
pub fn sample_mixture_with_components(
    spec: &GaussianMixtureSpec,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let mut rng = rng_for(seed, &[0x5A4D]);
    let cum = cumulative(&spec.class_priors);
    let p = spec.dim();
    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        let (c, k, row) = draw(spec, &mut rng, &cum);
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        labels.push(c);
        comps.push(k);
    }
    let ds = Dataset::new(x, labels, Schema::numeric(p, spec.n_classes()))?;
    Ok((ds, comps))
}

/// Embedding with the true component means as anchors.
pub fn oracle_embedding(
    spec: &GaussianMixtureSpec,
    x: &DMatrix<f64>,
    convention: InterceptConvention,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    AnchorMap::from_anchors(spec.anchors(), convention).project(x)
}

/// Monte Carlo accuracy of the posterior-argmax rule.
pub fn bayes_accuracy(spec: &GaussianMixtureSpec, n_mc: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    if n_mc == 0 {
        return Err(DteError::validation("need at least one Monte Carlo draw"));
    }
    let mut rng = rng_for(seed, &[0xBA7E5]);
    let cum = cumulative(&spec.class_priors);
    let hits = (0..n_mc)
        .filter(|_| {
            let (c, _, x) = draw(spec, &mut rng, &cum);
            spec.posterior_class(&x) == c
        })
        .count();
    Ok(hits as f64 / n_mc as f64)
}
