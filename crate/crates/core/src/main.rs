use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dte::data::{load_csv, read_features, LabelColumn};
use dte::oracle::{
    generate_instance, verify_instance, GaussianMixtureSpec, InstanceFamily, InstanceShape, VerificationReport,
};
use dte::pipeline::{cross_validate, mean_std, simulate, write_cv_csv, DteClassifier, DteParams, Method, SavedModel};
use dte::rng::derive_seed;
use dte::{DteError, InterceptConvention, TreeConfig};

/// Decision tree embedding classifier.
///
/// Exit codes: 0 success, 1 verification failure, 2 usage, validation or
/// I/O error.
#[derive(Parser, Debug)]
#[command(name = "dte", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model on a labelled CSV and write it as JSON.
    Train(TrainArgs),
    /// Predict labels for a feature CSV. Output has one column, `prediction`.
    Predict(PredictArgs),
    /// Repeated stratified cross-validation.
    ///
    /// CSV columns: dataset,method,replicate,fold,error,train_ms,test_ms.
    Benchmark(BenchmarkArgs),
    /// Mixture simulation comparing the fitted embedding with the one built
    /// on the true cluster means.
    ///
    /// Embedding CSV columns: x1..xp,label,z1..zm,zstar1..zstarK.
    Simulate(SimulateArgs),
    /// Check the population bounds on random discrete instances.
    VerifyTheory(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct TreeArgs {
    /// Minimum rows per leaf.
    #[arg(long = "min-leaf", default_value_t = 10)]
    min_leaf: usize,
    /// Candidate thresholds per feature and node.
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Optional depth limit.
    #[arg(long)]
    max_depth: Option<usize>,
}

impl TreeArgs {
    fn config(&self) -> TreeConfig {
        TreeConfig { min_leaf_size: self.min_leaf, num_bins: self.bins, max_depth: self.max_depth }
    }
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Label column: header name, or zero-based index with --no-header.
    #[arg(long, default_value = "class")]
    label: String,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<dte::Dataset, DteError> {
        let label = LabelColumn::parse(&self.label, !self.no_header);
        load_csv(&self.data, &label, !self.no_header)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tree: TreeArgs,
    /// Number of trees.
    #[arg(long, default_value_t = 1)]
    trees: usize,
    /// Random seed.
    #[arg(long, env = "DTE_SEED", default_value_t = 42)]
    seed: u64,
    /// Model output path.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV; the label column may be present and is ignored.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    no_header: bool,
    /// Output path; standard output if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tree: TreeArgs,
    /// Dataset name in the reports; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    /// Comma-separated methods: DTE-<t>, Tree, Majority.
    #[arg(long, default_value = "DTE-1,DTE-3,Tree", value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, env = "DTE_SEED", default_value_t = 42)]
    seed: u64,
    /// Per-fold CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full JSON report output.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    tree: TreeArgs,
    /// Training rows.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Test rows.
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    /// Cluster standard deviation.
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// Independent runs, seeded from --seed.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, env = "DTE_SEED", default_value_t = 42)]
    seed: u64,
    /// Training embedding of the first run as CSV.
    #[arg(long)]
    embedding_out: Option<PathBuf>,
    /// Report path; standard output if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Instances per family.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Support points per instance.
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 3)]
    regions: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Use within-region constant conditionals, so every deviation is 0.
    #[arg(long)]
    epsilon_zero: bool,
    /// Intercept of each anchor: neg-half-squared-norm, neg-squared-norm
    /// or pos-squared-norm.
    #[arg(long, default_value = "neg-half-squared-norm", value_parser = parse_convention)]
    intercept: InterceptConvention,
    #[arg(long, env = "DTE_SEED", default_value_t = 42)]
    seed: u64,
    /// Report path; standard output if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_convention(s: &str) -> Result<InterceptConvention, String> {
    match s {
        "neg-half-squared-norm" => Ok(InterceptConvention::NegHalfSquaredNorm),
        "neg-squared-norm" => Ok(InterceptConvention::NegSquaredNorm),
        "pos-squared-norm" => Ok(InterceptConvention::PosSquaredNorm),
        _ => Err(format!("unknown intercept convention {s:?}")),
    }
}

enum Failure {
    Verification(String),
    Error(DteError),
}

impl From<DteError> for Failure {
    fn from(e: DteError) -> Self {
        Failure::Error(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Simulate(a) => run_simulation(a),
        Command::VerifyTheory(a) => verify(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(DteError::from)?;
    s.push('\n');
    Ok(s)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let ds = a.data.load()?;
    let tree = a.tree.config();
    tree.validate()?;
    let params = DteParams { tree, trees: a.trees, seed: a.seed, ..DteParams::default() };
    let clf = DteClassifier::fit(&ds, &params)?;
    log::info!("fitted {} tree(s), {} leaves, on {} rows", clf.embedding.n_trees(), clf.embedding.dim(), ds.n_rows());
    let mut text = SavedModel::new(&clf, ds.schema()).to_json()?;
    text.push('\n');
    fs::write(&a.out, text)?;
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), Failure> {
    let model = SavedModel::from_json(&fs::read_to_string(&a.model)?)?;
    let clf = model.classifier()?;
    let file = fs::File::open(&a.data)?;
    let x = read_features(file, &model.schema, !a.no_header)?;
    let mut buf = Vec::new();
    if x.nrows() > 0 {
        let pred = clf.predict(&x)?;
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["prediction"]).map_err(DteError::from)?;
        for c in pred {
            w.write_record([&model.schema.class_names[c]]).map_err(DteError::from)?;
        }
        w.flush()?;
    }
    match &a.out {
        Some(p) => fs::write(p, &buf)?,
        None => io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<(), Failure> {
    let ds = a.data.load()?;
    let methods = a.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>, _>>()?;
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| a.data.data.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned()));
    let reports = cross_validate(&ds, &name, &methods, a.replicates, a.folds, a.seed, &a.tree.config())?;
    if let Some(p) = &a.csv {
        write_cv_csv(&reports, fs::File::create(p)?)?;
    }
    if let Some(p) = &a.json {
        fs::write(p, json(&reports)?)?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "dataset,method,n,p,k,mean_error,std_error,mean_train_ms,mean_test_ms")?;
    for r in &reports {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{:.4},{:.4}",
            r.dataset, r.method, r.n, r.p, r.k, r.mean_error, r.std_error, r.mean_train_ms, r.mean_test_ms
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    runs: usize,
    n_train: usize,
    n_test: usize,
    sigma: f64,
    mean_train_accuracy: f64,
    mean_test_accuracy: f64,
    mean_oracle_train_accuracy: f64,
    mean_oracle_test_accuracy: f64,
    std_test_accuracy: f64,
    results: Vec<dte::pipeline::SimulationResult>,
}

fn run_simulation(a: SimulateArgs) -> Result<(), Failure> {
    if a.runs == 0 {
        return Err(DteError::Validation("need at least one run".into()).into());
    }
    let spec = GaussianMixtureSpec { sigma: a.sigma, ..GaussianMixtureSpec::three_clusters() };
    let cfg = a.tree.config();
    cfg.validate()?;
    let results = (0..a.runs)
        .map(|r| simulate(&spec, a.n, a.n_test, &cfg, derive_seed(a.seed, &[r as u64])))
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(p) = &a.embedding_out {
        let first = &results[0];
        let mut w = csv::Writer::from_path(p).map_err(DteError::from)?;
        let p_dim = first.train.n_features();
        let mut header: Vec<String> = (1..=p_dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        header.extend((1..=first.z_train.ncols()).map(|j| format!("z{j}")));
        header.extend((1..=first.z_oracle_train.ncols()).map(|j| format!("zstar{j}")));
        w.write_record(&header).map_err(DteError::from)?;
        for i in 0..first.train.n_rows() {
            let mut row: Vec<String> = first.train.row(i).iter().map(f64::to_string).collect();
            row.push(first.train.schema().class_names[first.train.labels()[i]].clone());
            row.extend(first.z_train.row(i).iter().map(f64::to_string));
            row.extend(first.z_oracle_train.row(i).iter().map(f64::to_string));
            w.write_record(&row).map_err(DteError::from)?;
        }
        w.flush()?;
    }

    let mean =
        |f: fn(&dte::pipeline::SimulationResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let test: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
    let summary = SimulationSummary {
        runs: a.runs,
        n_train: a.n,
        n_test: a.n_test,
        sigma: a.sigma,
        mean_train_accuracy: mean(|r| r.train_accuracy),
        mean_test_accuracy: mean(|r| r.test_accuracy),
        mean_oracle_train_accuracy: mean(|r| r.oracle_train_accuracy),
        mean_oracle_test_accuracy: mean(|r| r.oracle_test_accuracy),
        std_test_accuracy: mean_std(&test).1,
        results,
    };
    write_output(a.out.as_deref(), &json(&summary)?)
}

fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let shape = InstanceShape { points: a.points, dim: a.dim, classes: a.classes, regions: a.regions };
    let families: &[InstanceFamily] = if a.epsilon_zero {
        &[InstanceFamily::Homogeneous]
    } else {
        &[InstanceFamily::RandomPartition, InstanceFamily::NearestMean, InstanceFamily::PureNearestMean]
    };
    let mut reports: Vec<VerificationReport> = Vec::new();
    for &family in families {
        for i in 0..a.instances {
            let seed = derive_seed(a.seed, &[i as u64]);
            let (joint, part) = generate_instance(family, shape, seed)?;
            reports.push(verify_instance(family, seed, &joint, &part, a.intercept)?);
        }
    }
    write_output(a.out.as_deref(), &json(&reports)?)?;

    let mut failures: Vec<String> =
        reports.iter().filter(|r| !r.passed()).map(|r| format!("{:?} seed {}", r.family, r.instance_seed)).collect();
    if a.epsilon_zero {
        failures.extend(
            reports
                .iter()
                .filter(|r| r.deviation != 0.0)
                .map(|r| format!("nonzero deviation at seed {}", r.instance_seed)),
        );
    }
    failures.extend(
        reports
            .iter()
            .filter(|r| r.family == InstanceFamily::NearestMean && !r.hypothesis_ok)
            .map(|r| format!("hypothesis not met at seed {}", r.instance_seed)),
    );
    failures.extend(
        reports
            .iter()
            .filter(|r| r.family == InstanceFamily::PureNearestMean && r.lg_classifier != 0.0)
            .map(|r| format!("pure instance with nonzero error at seed {}", r.instance_seed)),
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failures.join("; ")))
    }
}
