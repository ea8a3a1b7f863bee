use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dte::data::{load_csv, LabelColumn};
use dte::pipeline::{DteClassifier, DteParams, SavedModel};
use dte::TreeConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dte"));
    c.env_remove("DTE_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn iris() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(name);
    let o = run(bin().args(["train", "--data"]).arg(iris()).arg("--out").arg(&out).args(extra));
    (o, out)
}

#[test]
fn train_writes_a_model_matching_the_tree() {
    let dir = tempfile::tempdir().unwrap();
    let (o, path) = train(dir.path(), "m.json", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = SavedModel::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(model.embedding.n_trees(), 1);
    assert_eq!(model.lda.dim(), model.embedding.trees()[0].n_leaves());
    assert_eq!(model.schema.class_names, vec!["setosa", "versicolor", "virginica"]);
    assert_eq!(model.params.tree, TreeConfig::default());
    assert_eq!(model.params.seed, 42);

    let ds = load_csv(iris(), &LabelColumn::Name("class".into()), true).unwrap();
    let direct = DteClassifier::fit(&ds, &DteParams::default()).unwrap();
    assert_eq!(direct.embedding, model.embedding);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = train(dir.path(), "a.json", &["--trees", "3", "--seed", "7"]);
    let (_, b) = train(dir.path(), "b.json", &["--trees", "3", "--seed", "7"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let (_, c) = train(dir.path(), "c.json", &["--trees", "3", "--seed", "8"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = train(dir.path(), "a.json", &["--trees", "2", "--seed", "5"]);
    let b = dir.path().join("b.json");
    let o = run(bin().env("DTE_SEED", "5").args(["train", "--trees", "2", "--data"]).arg(iris()).arg("--out").arg(&b));
    assert!(o.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn missing_label_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = train(dir.path(), "m.json", &["--label", "species"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("species"), "{}", stderr(&o));
}

#[test]
fn bad_flag_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = train(dir.path(), "m.json", &["--min-leaf", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = train(dir.path(), "m.json", &["--trees", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["predict", "--model", "/nonexistent.json", "--data", "/nonexistent.csv"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_round_trips_in_process_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = train(dir.path(), "m.json", &[]);
    let o = run(bin().arg("predict").arg("--model").arg(&model).arg("--data").arg(iris()));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("prediction"));
    let got: Vec<&str> = lines.collect();

    let ds = load_csv(iris(), &LabelColumn::Name("class".into()), true).unwrap();
    let clf = DteClassifier::fit(&ds, &DteParams::default()).unwrap();
    let want: Vec<&str> =
        clf.predict(ds.features()).unwrap().into_iter().map(|c| ds.schema().class_names[c].as_str()).collect();
    assert_eq!(got, want);
}

#[test]
fn predict_without_label_column_and_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = train(dir.path(), "m.json", &[]);
    let text = fs::read_to_string(iris()).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.pop();
            f.reverse();
            f.join(",") + "\n"
        })
        .collect();
    let input = dir.path().join("features.csv");
    fs::write(&input, stripped).unwrap();
    let out = dir.path().join("pred.csv");
    let o = run(bin().arg("predict").arg("--model").arg(&model).arg("--data").arg(&input).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let full = run(bin().arg("predict").arg("--model").arg(&model).arg("--data").arg(iris()));
    assert_eq!(fs::read_to_string(out).unwrap(), stdout(&full));
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = train(dir.path(), "m.json", &[]);
    let input = dir.path().join("empty.csv");
    fs::write(&input, "").unwrap();
    let o = run(bin().arg("predict").arg("--model").arg(&model).arg("--data").arg(&input));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = train(dir.path(), "m.json", &[]);
    let text = fs::read_to_string(iris()).unwrap();
    let extra: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l},colour\n") } else { format!("{l},1\n") })
        .collect();
    let input = dir.path().join("extra.csv");
    fs::write(&input, extra).unwrap();
    let o = run(bin().arg("predict").arg("--model").arg(&model).arg("--data").arg(&input));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn benchmark_rows_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("cv.csv");
    let json_path = dir.path().join("cv.json");
    let o =
        run(bin().args(["benchmark", "--data"]).arg(iris()).arg("--csv").arg(&csv_path).arg("--json").arg(&json_path));
    assert!(o.status.success(), "{}", stderr(&o));

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["dataset", "method", "replicate", "fold", "error", "train_ms", "test_ms"]
    );
    let mut errors: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], "iris");
        errors.entry(rec[1].to_string()).or_default().push(rec[4].parse().unwrap());
    }
    assert_eq!(errors.len(), 3);
    for v in errors.values() {
        assert_eq!(v.len(), 50);
    }

    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    for r in reports.as_array().unwrap() {
        let v = &errors[r["method"].as_str().unwrap()];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((r["mean_error"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((r["std_error"].as_f64().unwrap() - var.sqrt()).abs() < 1e-12);
    }
    let summary = stdout(&o);
    assert!(summary.lines().any(|l| l.starts_with("iris,DTE-1,150,4,3,")));
}

#[test]
fn simulate_reports_both_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let z_path = dir.path().join("z.csv");
    let o = run(bin().args(["simulate", "--embedding-out"]).arg(&z_path));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["mean_test_accuracy", "mean_oracle_test_accuracy", "mean_train_accuracy"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let leaves = report["results"][0]["leaves"].as_u64().unwrap() as usize;
    let mut reader = csv::Reader::from_path(&z_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header.len(), 2 + 1 + leaves + 3);
    assert_eq!(&header[..3], ["x1", "x2", "label"]);
    assert_eq!(header.last().unwrap(), "zstar3");
    assert_eq!(reader.records().count(), 100);
}

#[test]
fn simulate_depends_on_seed() {
    let a = run(bin().args(["simulate", "--seed", "1"]));
    let b = run(bin().args(["simulate", "--seed", "1"]));
    let c = run(bin().args(["simulate", "--seed", "2"]));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_point_masses() {
    // With σ = 0 the class-separating direction has no within-class
    // scatter, so the pseudoinverse drops it and LDA predicts the majority
    // class for every row.
    let o = run(bin().args(["simulate", "--sigma", "0"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let r = &report["results"][0];
    let train_acc = r["train_accuracy"].as_f64().unwrap();
    assert!((0.5..1.0).contains(&train_acc), "{train_acc}");
    assert_eq!(train_acc, r["oracle_train_accuracy"].as_f64().unwrap());
}

#[test]
fn verify_theory_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let o = run(bin().args(["verify-theory", "--out"]).arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(reports.len(), 600);
    for r in &reports {
        for key in ["instance_seed", "epsilon", "deviation", "bound_ok", "Lg_classifier", "Lg_formula", "hypothesis_ok"]
        {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r["bound_ok"], true);
    }
}

#[test]
fn verify_theory_epsilon_zero() {
    let o = run(bin().args(["verify-theory", "--epsilon-zero", "--instances", "50"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports.len(), 50);
    assert!(reports.iter().all(|r| r["deviation"].as_f64() == Some(0.0) && r["epsilon"].as_f64() == Some(0.0)));
}

#[test]
fn verify_theory_fails_under_full_norm_intercept() {
    let o = run(bin().args(["verify-theory", "--instances", "50", "--intercept", "neg-squared-norm"]));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("verification failed"));
    let o = run(bin().args(["verify-theory", "--intercept", "bogus"]));
    assert_eq!(o.status.code(), Some(2));
}
