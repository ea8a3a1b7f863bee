//! End-to-end classifier, the repeated cross-validation benchmark, the
//! mixture simulation and the runtime sweep.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_folds, Dataset, Schema};
use crate::embed::{dte_t_with, Embedding, InterceptConvention};
use crate::error::{DteError, Result};
use crate::lda::{fit_lda, LdaModel};
use crate::oracle::{oracle_embedding, sample_mixture, GaussianMixtureSpec};
use crate::rng::derive_seed;
use crate::tree::{fit_tree, TreeConfig};

/// Leaf count above which LDA on the embedding gets noticeably slower.
pub const DEFAULT_MAX_LEAVES_WARNING: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DteParams {
    pub tree: TreeConfig,
    /// Number of trees `t`.
    pub trees: usize,
    pub seed: u64,
    #[serde(default)]
    pub intercept: InterceptConvention,
    #[serde(default = "default_cap")]
    pub max_leaves_warning: usize,
}

fn default_cap() -> usize {
    DEFAULT_MAX_LEAVES_WARNING
}

impl Default for DteParams {
    fn default() -> Self {
        DteParams {
            tree: TreeConfig::default(),
            trees: 1,
            seed: 42,
            intercept: InterceptConvention::default(),
            max_leaves_warning: DEFAULT_MAX_LEAVES_WARNING,
        }
    }
}

/// Fitted embedding and the LDA model on top of it.
#[derive(Clone, Debug, PartialEq)]
pub struct DteClassifier {
    pub embedding: Embedding,
    pub lda: LdaModel,
    pub params: DteParams,
}

impl DteClassifier {
    pub fn fit(ds: &Dataset, params: &DteParams) -> Result<Self> {
        ds.require_all_classes()?;
        let (z, embedding) = dte_t_with(ds, &params.tree, params.trees, params.seed, params.intercept)?;
        for (s, &m) in embedding.leaf_counts().iter().enumerate() {
            if m > params.max_leaves_warning {
                log::warn!(
                    "tree {s} has {m} leaves (cap {}); the LDA step scales with the cube of the total",
                    params.max_leaves_warning
                );
            }
        }
        let lda = fit_lda(&z, ds.labels(), ds.n_classes())?;
        Ok(DteClassifier { embedding, lda, params: params.clone() })
    }

    /// Rebuild from stored parts, checking that they fit together.
    pub fn from_parts(embedding: Embedding, lda: LdaModel, params: DteParams) -> Result<Self> {
        lda.validate()?;
        if lda.dim() != embedding.dim() {
            return Err(DteError::DimensionMismatch { expected: embedding.dim(), got: lda.dim() });
        }
        Ok(DteClassifier { embedding, lda, params })
    }

    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.embedding.project(x)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.lda.predict(&self.embed(x)?)
    }
}

pub const MODEL_FORMAT: &str = "dte-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk model: the fitted classifier plus the schema needed to encode
/// new rows and name the predicted classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format: String,
    pub version: u32,
    pub schema: Schema,
    pub params: DteParams,
    pub embedding: Embedding,
    pub lda: LdaModel,
}

impl SavedModel {
    pub fn new(clf: &DteClassifier, schema: &Schema) -> Self {
        SavedModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            schema: schema.clone(),
            params: clf.params.clone(),
            embedding: clf.embedding.clone(),
            lda: clf.lda.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // nested tree nodes may exceed the default depth limit
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let model = SavedModel::deserialize(&mut de)?;
        de.end()?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(DteError::validation(format!("unsupported model {} v{}", model.format, model.version)));
        }
        if model.embedding.map().input_dim() != model.schema.width()
            || model.lda.n_classes() != model.schema.n_classes()
        {
            return Err(DteError::validation("model does not match its schema"));
        }
        Ok(model)
    }

    pub fn classifier(&self) -> Result<DteClassifier> {
        DteClassifier::from_parts(self.embedding.clone(), self.lda.clone(), self.params.clone())
    }
}

pub fn error_rate(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    wrong as f64 / truth.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// `t` trees plus LDA.
    Dte { trees: usize },
    /// The tree alone, majority vote per leaf.
    Tree,
    /// Most frequent training class.
    Majority,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Dte { trees } => format!("DTE-{trees}"),
            Method::Tree => "Tree".into(),
            Method::Majority => "Majority".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        let upper = s.trim().to_ascii_uppercase();
        if let Some(t) = upper.strip_prefix("DTE-") {
            return match t.parse::<usize>() {
                Ok(trees) if trees > 0 => Ok(Method::Dte { trees }),
                _ => Err(DteError::validation(format!("bad tree count in {s:?}"))),
            };
        }
        match upper.as_str() {
            "TREE" => Ok(Method::Tree),
            "MAJORITY" => Ok(Method::Majority),
            _ => Err(DteError::validation(format!("unknown method {s:?}, expected DTE-<t>, Tree or Majority"))),
        }
    }

    /// Fit on `train` and return predictions for `test` with the total
    /// leaf count (0 for the majority baseline).
    fn run(
        &self,
        train: &Dataset,
        test: &DMatrix<f64>,
        cfg: &TreeConfig,
        seed: u64,
    ) -> Result<(Vec<usize>, usize, f64, f64)> {
        match *self {
            Method::Dte { trees } => {
                let params = DteParams { tree: cfg.clone(), trees, seed, ..DteParams::default() };
                let t0 = Instant::now();
                let clf = DteClassifier::fit(train, &params)?;
                let train_ms = ms(t0);
                let t1 = Instant::now();
                let pred = clf.predict(test)?;
                Ok((pred, clf.embedding.dim(), train_ms, ms(t1)))
            }
            Method::Tree => {
                let t0 = Instant::now();
                let tree = fit_tree(train, cfg)?;
                let train_ms = ms(t0);
                let t1 = Instant::now();
                let pred = tree.predict_rows(test)?;
                Ok((pred, tree.n_leaves(), train_ms, ms(t1)))
            }
            Method::Majority => {
                let t0 = Instant::now();
                let counts = train.class_counts();
                let best = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
                let train_ms = ms(t0);
                Ok((vec![best; test.nrows()], 0, train_ms, 0.0))
            }
        }
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub replicate: usize,
    pub fold: usize,
    pub error: f64,
    pub train_ms: f64,
    pub test_ms: f64,
    pub leaves: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub method: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub mean_error: f64,
    /// Sample standard deviation over all replicate-fold errors.
    pub std_error: f64,
    pub mean_train_ms: f64,
    pub mean_test_ms: f64,
}

impl CvReport {
    fn from_folds(dataset: &str, method: &Method, ds: &Dataset, folds: Vec<FoldResult>) -> Self {
        let errors: Vec<f64> = folds.iter().map(|f| f.error).collect();
        let (mean_error, std_error) = mean_std(&errors);
        let count = folds.len().max(1) as f64;
        CvReport {
            dataset: dataset.into(),
            method: method.name(),
            n: ds.n_rows(),
            p: ds.n_features(),
            k: ds.n_classes(),
            mean_train_ms: folds.iter().map(|f| f.train_ms).sum::<f64>() / count,
            mean_test_ms: folds.iter().map(|f| f.test_ms).sum::<f64>() / count,
            folds,
            mean_error,
            std_error,
        }
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.folds.iter().map(|f| f.leaves).collect()
    }

    /// Same fields with timings zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> CvReport {
        let mut r = self.clone();
        r.mean_train_ms = 0.0;
        r.mean_test_ms = 0.0;
        for f in &mut r.folds {
            f.train_ms = 0.0;
            f.test_ms = 0.0;
        }
        r
    }
}

/// Mean and sample standard deviation; the latter is 0 for fewer than two
/// values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Repeated stratified cross-validation of several methods on one shared
/// fold plan. The seed for replicate `r`, fold `f` derives from `seed`
/// alone, so results do not depend on which methods run alongside.
pub fn cross_validate(
    ds: &Dataset,
    dataset: &str,
    methods: &[Method],
    replicates: usize,
    folds: usize,
    seed: u64,
    cfg: &TreeConfig,
) -> Result<Vec<CvReport>> {
    cfg.validate()?;
    ds.require_all_classes()?;
    let plan = stratified_folds(ds, replicates, folds, seed)?;
    let mut results: Vec<Vec<FoldResult>> = vec![Vec::new(); methods.len()];
    for r in 0..replicates {
        for f in 0..folds {
            let (train_idx, test_idx) = plan.split(r, f);
            let train = ds.select(&train_idx);
            let test = ds.select(&test_idx);
            let fold_seed = derive_seed(seed, &[r as u64, f as u64]);
            for (mi, method) in methods.iter().enumerate() {
                let (pred, leaves, train_ms, test_ms) = method.run(&train, test.features(), cfg, fold_seed)?;
                results[mi].push(FoldResult {
                    replicate: r,
                    fold: f,
                    error: error_rate(&pred, test.labels()),
                    train_ms,
                    test_ms,
                    leaves,
                });
            }
        }
    }
    Ok(methods.iter().zip(results).map(|(m, folds)| CvReport::from_folds(dataset, m, ds, folds)).collect())
}

pub const CV_CSV_HEADER: [&str; 7] = ["dataset", "method", "replicate", "fold", "error", "train_ms", "test_ms"];

/// One row per replicate and fold of every report.
pub fn write_cv_csv<W: Write>(reports: &[CvReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CV_CSV_HEADER)?;
    for r in reports {
        for f in &r.folds {
            w.write_record([
                r.dataset.clone(),
                r.method.clone(),
                f.replicate.to_string(),
                f.fold.to_string(),
                f.error.to_string(),
                format!("{:.4}", f.train_ms),
                format!("{:.4}", f.test_ms),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub seed: u64,
    pub leaves: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub oracle_train_accuracy: f64,
    pub oracle_test_accuracy: f64,
    #[serde(skip)]
    pub train: Dataset,
    /// Training embedding.
    #[serde(skip)]
    pub z_train: DMatrix<f64>,
    #[serde(skip)]
    pub z_oracle_train: DMatrix<f64>,
}

/// Draws training and test sets from `spec`, fits one tree plus LDA and
/// compares it with LDA on the embedding built from the true component
/// means.
pub fn simulate(
    spec: &GaussianMixtureSpec,
    n_train: usize,
    n_test: usize,
    cfg: &TreeConfig,
    seed: u64,
) -> Result<SimulationResult> {
    let train = sample_mixture(spec, n_train, derive_seed(seed, &[1]))?;
    let test = sample_mixture(spec, n_test, derive_seed(seed, &[2]))?;
    let params = DteParams { tree: cfg.clone(), seed, ..DteParams::default() };
    let clf = DteClassifier::fit(&train, &params)?;
    let z_train = clf.embed(train.features())?;
    let accuracy = |pred: &[usize], truth: &[usize]| 1.0 - error_rate(pred, truth);
    let train_accuracy = accuracy(&clf.lda.predict(&z_train)?, train.labels());
    let test_accuracy = accuracy(&clf.predict(test.features())?, test.labels());

    let conv = params.intercept;
    let z_oracle_train = oracle_embedding(spec, train.features(), conv)?;
    let oracle = fit_lda(&z_oracle_train, train.labels(), train.n_classes())?;
    let oracle_train_accuracy = accuracy(&oracle.predict(&z_oracle_train)?, train.labels());
    let oracle_test_accuracy =
        accuracy(&oracle.predict(&oracle_embedding(spec, test.features(), conv)?)?, test.labels());
    Ok(SimulationResult {
        seed,
        leaves: clf.embedding.dim(),
        train_accuracy,
        test_accuracy,
        oracle_train_accuracy,
        oracle_test_accuracy,
        train,
        z_train,
        z_oracle_train,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub n: usize,
    pub train_secs: f64,
    pub test_secs: f64,
    pub leaves: usize,
}

/// Fit and predict times at each size. Each size is timed `repeats` times
/// and the fastest run kept.
pub fn timing_sweep<F>(mut generate: F, sizes: &[usize], params: &DteParams, repeats: usize) -> Result<Vec<TimingRow>>
where
    F: FnMut(usize) -> Result<Dataset>,
{
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DteError::validation("sweep sizes must be strictly ascending"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let ds = generate(n)?;
        let mut best: Option<TimingRow> = None;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            let clf = DteClassifier::fit(&ds, params)?;
            let train_secs = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let pred = clf.predict(ds.features())?;
            let test_secs = t1.elapsed().as_secs_f64();
            debug_assert_eq!(pred.len(), n);
            let row = TimingRow { n, train_secs, test_secs, leaves: clf.embedding.dim() };
            best = Some(match best {
                Some(b) if b.train_secs <= row.train_secs => {
                    TimingRow { test_secs: b.test_secs.min(row.test_secs), ..b }
                }
                Some(b) => TimingRow { test_secs: b.test_secs.min(row.test_secs), ..row },
                None => row,
            });
        }
        rows.extend(best);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lda::fit_lda;

    fn blobs(n: usize, seed: u64) -> Dataset {
        sample_mixture(&GaussianMixtureSpec::separated_blobs(2, 2, 10.0), n, seed).unwrap()
    }

    #[test]
    fn separable_training_error_is_zero() {
        let ds = blobs(200, 1);
        let clf = DteClassifier::fit(&ds, &DteParams::default()).unwrap();
        let pred = clf.predict(ds.features()).unwrap();
        assert_eq!(error_rate(&pred, ds.labels()), 0.0);
    }

    #[test]
    fn pipeline_is_the_composition() {
        let ds = sample_mixture(&GaussianMixtureSpec::three_clusters(), 150, 4).unwrap();
        let params = DteParams::default();
        let clf = DteClassifier::fit(&ds, &params).unwrap();
        let (z, _) = dte_t_with(&ds, &params.tree, 1, params.seed, params.intercept).unwrap();
        let lda = fit_lda(&z, ds.labels(), 2).unwrap();
        assert_eq!(clf.predict(ds.features()).unwrap(), lda.predict(&z).unwrap());
        assert_eq!(clf.lda.dim(), clf.embedding.dim());
    }

    #[test]
    fn single_row_matches_batch() {
        let ds = sample_mixture(&GaussianMixtureSpec::three_clusters(), 120, 5).unwrap();
        let clf = DteClassifier::fit(&ds, &DteParams::default()).unwrap();
        let batch = clf.predict(ds.features()).unwrap();
        for i in 0..ds.n_rows() {
            let one = DMatrix::from_row_slice(1, 2, &ds.row(i));
            assert_eq!(clf.predict(&one).unwrap()[0], batch[i]);
        }
    }

    #[test]
    fn majority_baseline_is_chance_on_balanced_data() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let ds = Dataset::from_rows(&rows, labels).unwrap();
        let r = cross_validate(&ds, "toy", &[Method::Majority], 3, 5, 0, &TreeConfig::default()).unwrap();
        assert!((r[0].mean_error - 0.5).abs() < 0.05, "{}", r[0].mean_error);
    }

    #[test]
    fn cv_accounting_and_reproducibility() {
        let ds = sample_mixture(&GaussianMixtureSpec::three_clusters(), 120, 6).unwrap();
        let methods = [Method::Dte { trees: 1 }, Method::Dte { trees: 3 }, Method::Tree];
        let cfg = TreeConfig::default();
        let a = cross_validate(&ds, "sim", &methods, 2, 5, 9, &cfg).unwrap();
        let b = cross_validate(&ds, "sim", &methods, 2, 5, 9, &cfg).unwrap();
        let strip = |v: &[CvReport]| v.iter().map(CvReport::without_timings).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        for r in &a {
            assert_eq!(r.folds.len(), 10);
            let errors: Vec<f64> = r.folds.iter().map(|f| f.error).collect();
            assert!(errors.iter().all(|e| (0.0..=1.0).contains(e)));
            let (m, s) = mean_std(&errors);
            assert_eq!(r.mean_error, m);
            assert_eq!(r.std_error, s);
        }
        // DTE-1 alone reproduces its own column of the joint run
        let solo = cross_validate(&ds, "sim", &methods[..1], 2, 5, 9, &cfg).unwrap();
        assert_eq!(solo[0].without_timings(), a[0].without_timings());
    }

    #[test]
    fn csv_output_columns() {
        let ds = blobs(60, 2);
        let r = cross_validate(&ds, "blobs", &[Method::Tree], 1, 3, 0, &TreeConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_cv_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("dataset,method,replicate,fold,error,train_ms,test_ms"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Dte { trees: 1 }, Method::Dte { trees: 3 }, Method::Tree, Method::Majority] {
            assert_eq!(Method::parse(&m.name()).unwrap(), m);
        }
        assert!(Method::parse("DTE-0").is_err());
        assert!(Method::parse("forest").is_err());
    }

    #[test]
    fn sweep_shape() {
        let spec = GaussianMixtureSpec::separated_blobs(3, 3, 6.0);
        let rows = timing_sweep(|n| sample_mixture(&spec, n, n as u64), &[200, 400], &DteParams::default(), 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.train_secs > 0.0 && r.test_secs > 0.0));
        assert!(timing_sweep(|n| sample_mixture(&spec, n, 0), &[400, 200], &DteParams::default(), 1).is_err());
    }

    #[test]
    fn missing_class_is_rejected() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let ds = Dataset::new(x, vec![0, 0, 0, 0], Schema::numeric(1, 2)).unwrap();
        assert!(DteClassifier::fit(&ds, &DteParams::default()).is_err());
    }

    #[test]
    fn saved_model_round_trip() {
        let ds = blobs(100, 8);
        let clf = DteClassifier::fit(&ds, &DteParams::default()).unwrap();
        let text = SavedModel::new(&clf, ds.schema()).to_json().unwrap();
        let back = SavedModel::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        let restored = back.classifier().unwrap();
        assert_eq!(restored.predict(ds.features()).unwrap(), clf.predict(ds.features()).unwrap());
        assert!(SavedModel::from_json(&text.replace("dte-model", "other")).is_err());
    }

    #[test]
    fn parts_must_agree() {
        let ds = blobs(100, 3);
        let a = DteClassifier::fit(&ds, &DteParams::default()).unwrap();
        let b = DteClassifier::fit(&ds, &DteParams { trees: 2, ..DteParams::default() }).unwrap();
        assert!(
            DteClassifier::from_parts(a.embedding.clone(), b.lda.clone(), a.params.clone()).is_err()
                || a.embedding.dim() == b.lda.dim()
        );
        assert!(DteClassifier::from_parts(a.embedding.clone(), a.lda.clone(), a.params.clone()).is_ok());
    }
}
