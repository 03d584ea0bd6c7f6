//! End-to-end tests that drive the compiled binary through the full
//! synth -> train -> predict -> eval pipeline and check error reporting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_firmclass"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("failed to spawn binary");
    assert!(
        out.status.success(),
        "command failed.\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("binary was killed by a signal")
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    data: PathBuf,
}

impl Fixture {
    /// Generates a small, easily separable dataset: 4 leaves under 2 sectors,
    /// 6 firms per leaf, 2 training periods plus a held-out truth period.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        run_ok(bin().args([
            "synth",
            "--out-dir",
            data.to_str().unwrap(),
            "--branching",
            "2,2",
            "--dimension",
            "8",
            "--firms-per-leaf",
            "6",
            "--periods",
            "2",
            "--noise",
            "0.3",
            "--seed",
            "5",
        ]));
        Fixture { dir, data }
    }

    fn data_args(&self) -> Vec<String> {
        let p = |name: &str| self.data.join(name).to_str().unwrap().to_string();
        vec![
            "--taxonomy".into(),
            p("taxonomy.tsv"),
            "--assignments".into(),
            p("assignments.csv"),
            "--firm-embeddings".into(),
            p("firm_embeddings.csv"),
            "--definitions".into(),
            p("definitions.csv"),
        ]
    }

    fn train(&self, out: &Path, extra: &[&str]) -> String {
        let defaults = [
            ("--epochs", "40"),
            ("--dimension", "8"),
            ("--learning-rate", "0.01"),
            ("--seed", "0"),
        ];
        let mut cmd = bin();
        cmd.arg("train")
            .args(self.data_args())
            .args(["--out", out.to_str().unwrap()]);
        for (flag, value) in defaults {
            if !extra.contains(&flag) {
                cmd.args([flag, value]);
            }
        }
        cmd.args(extra);
        run_ok(&mut cmd)
    }

    fn predict(&self, checkpoint: &Path, out: &Path, extra: &[&str]) -> String {
        let p = |name: &str| self.data.join(name).to_str().unwrap().to_string();
        let mut cmd = bin();
        cmd.arg("predict")
            .args(["--checkpoint", checkpoint.to_str().unwrap()])
            .args(["--taxonomy", &p("taxonomy.tsv")])
            .args(["--firm-embeddings", &p("firm_embeddings.csv")])
            .args(["--definitions", &p("definitions.csv")])
            .args(["--out", out.to_str().unwrap()])
            .args(extra);
        run_ok(&mut cmd)
    }
}

#[test]
fn round_trip_pipeline() {
    let fx = Fixture::new();
    let model = fx.data.join("model.json");
    let preds = fx.data.join("predictions.csv");

    let train_out = fx.train(&model, &[]);
    assert!(train_out.contains("trained full model"), "{train_out}");
    assert!(model.exists());
    assert!(fx.data.join("model.losses.csv").exists());

    fx.predict(&model, &preds, &[]);
    let pred_text = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(pred_text.lines().count(), 25); // header + 24 firms
    assert!(pred_text.starts_with("firm_id,period,predicted_code,probability"));

    let eval_out = run_ok(bin().args([
        "eval",
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        fx.data.join("truth.csv").to_str().unwrap(),
        "--taxonomy",
        fx.data.join("taxonomy.tsv").to_str().unwrap(),
        "--tree-distance",
        "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&eval_out).unwrap();
    assert_eq!(report["cases"], 24);
    assert_eq!(report["focal_level"], 2);
    // This dataset is cleanly separable; training should nail it.
    assert!(report["accuracy"].as_f64().unwrap() >= 0.9, "{eval_out}");
    assert!(report["mean_tree_distance"].as_f64().unwrap() <= 0.5);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let fx = Fixture::new();
    let a = fx.data.join("a.json");
    let b = fx.data.join("b.json");
    fx.train(&a, &[]);
    fx.train(&b, &[]);
    assert_eq!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&b).unwrap(),
        "same seed must reproduce the checkpoint byte for byte"
    );

    let c = fx.data.join("c.json");
    fx.train(&c, &["--seed", "1"]);
    assert_ne!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&c).unwrap(),
        "a different seed should change the weights"
    );
}

#[test]
fn explain_conditionals_multiply_to_probability() {
    let fx = Fixture::new();
    let model = fx.data.join("model.json");
    let preds = fx.data.join("predictions.csv");
    fx.train(&model, &[]);
    fx.predict(&model, &preds, &["--explain"]);

    let text = std::fs::read_to_string(&preds).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "firm_id,period,predicted_code,probability,cond_level_1,cond_level_2"
    );
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let probability: f64 = fields[3].parse().unwrap();
        let product: f64 = fields[4..].iter().map(|f| f.parse::<f64>().unwrap()).product();
        assert!(
            (probability - product).abs() < 1e-9,
            "conditionals must multiply to the reported probability: {line}"
        );
    }
}

#[test]
fn flat_variant_reports_single_conditional() {
    let fx = Fixture::new();
    let model = fx.data.join("model.json");
    let preds = fx.data.join("predictions.csv");
    let out = fx.train(&model, &["--model", "no-ha"]);
    assert!(out.contains("trained no-ha model"), "{out}");
    fx.predict(&model, &preds, &["--explain"]);

    let text = std::fs::read_to_string(&preds).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[4], "1"); // no sector-level decision in the flat model
        assert_eq!(fields[3], fields[5]);
    }
}

#[test]
fn config_file_is_applied_and_flags_override_it() {
    let fx = Fixture::new();
    let cfg = fx.data.join("train.conf");
    std::fs::write(&cfg, "epochs = 2\ndimension = 8\nseed = 0\n").unwrap();

    let model = fx.data.join("model.json");
    let out = run_ok(
        bin()
            .arg("train")
            .args(fx.data_args())
            .args(["--out", model.to_str().unwrap()])
            .args(["--config", cfg.to_str().unwrap()]),
    );
    assert!(out.contains("over 2 epochs"), "{out}");

    let out = run_ok(
        bin()
            .arg("train")
            .args(fx.data_args())
            .args(["--out", model.to_str().unwrap()])
            .args(["--config", cfg.to_str().unwrap()])
            .args(["--epochs", "3"]),
    );
    assert!(out.contains("over 3 epochs"), "{out}");
}

#[test]
fn ablate_reports_all_variants_per_seed() {
    let fx = Fixture::new();
    let runs = fx.data.join("runs.csv");
    let out = run_ok(
        bin()
            .arg("ablate")
            .args(fx.data_args())
            .args(["--truth", fx.data.join("truth.csv").to_str().unwrap()])
            .args(["--seeds", "0..2", "--parallel-seeds"])
            .args(["--epochs", "5", "--dimension", "8"])
            .args(["--out", runs.to_str().unwrap()]),
    );
    assert!(out.contains("variant,mean_accuracy,mean_macro_f1,accuracy_delta_vs_full"));
    for variant in ["full", "no-ha", "no-ha-no-dir"] {
        assert!(out.contains(variant), "summary missing {variant}: {out}");
    }
    let runs_text = std::fs::read_to_string(&runs).unwrap();
    assert_eq!(runs_text.lines().count(), 7); // header + 2 seeds x 3 variants
}

#[test]
fn missing_input_file_exits_2_with_path() {
    let fx = Fixture::new();
    let out = bin()
        .arg("train")
        .args([
            "--taxonomy",
            fx.data.join("taxonomy.tsv").to_str().unwrap(),
            "--assignments",
            "/nonexistent/assignments.csv",
            "--firm-embeddings",
            fx.data.join("firm_embeddings.csv").to_str().unwrap(),
            "--definitions",
            fx.data.join("definitions.csv").to_str().unwrap(),
            "--out",
            fx.data.join("model.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("/nonexistent/assignments.csv"),
        "error should name the missing file: {stderr}"
    );
}

#[test]
fn checkpoint_taxonomy_mismatch_exits_2() {
    let fx = Fixture::new();
    let model = fx.data.join("model.json");
    fx.train(&model, &["--epochs", "1"]);

    // A structurally different taxonomy must be rejected at load time.
    let other = fx.data.join("other_taxonomy.tsv");
    std::fs::write(&other, "code\tlevel\tparent\ttitle\n99\t1\t\tOther\n").unwrap();
    let out = bin()
        .args([
            "predict",
            "--checkpoint",
            model.to_str().unwrap(),
            "--taxonomy",
            other.to_str().unwrap(),
            "--firm-embeddings",
            fx.data.join("firm_embeddings.csv").to_str().unwrap(),
            "--definitions",
            fx.data.join("definitions.csv").to_str().unwrap(),
            "--out",
            fx.data.join("p.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_rejects_misaligned_firm_ids() {
    let fx = Fixture::new();
    let model = fx.data.join("model.json");
    let preds = fx.data.join("predictions.csv");
    fx.train(&model, &["--epochs", "1"]);
    fx.predict(&model, &preds, &[]);

    // Drop one firm from the predictions file.
    let text = std::fs::read_to_string(&preds).unwrap();
    let truncated: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    std::fs::write(&preds, truncated.join("\n")).unwrap();

    let out = bin()
        .args([
            "eval",
            "--predictions",
            preds.to_str().unwrap(),
            "--truth",
            fx.data.join("truth.csv").to_str().unwrap(),
            "--taxonomy",
            fx.data.join("taxonomy.tsv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing from predictions"), "{stderr}");
}

#[test]
fn eval_production_rates_and_cost() {
    let fx = Fixture::new();
    let model = fx.data.join("model.json");
    let preds = fx.data.join("predictions.csv");
    fx.train(&model, &[]);
    fx.predict(&model, &preds, &[]);

    // Rate table covering every focal-level industry, plus per-firm incomes.
    let etr = fx.data.join("etr.csv");
    std::fs::write(&etr, "code,rate\n11,0.10\n12,0.20\n21,0.15\n22,0.25\n").unwrap();
    let income = fx.data.join("income.csv");
    let truth_text = std::fs::read_to_string(fx.data.join("truth.csv")).unwrap();
    let mut income_csv = String::from("firm_id,income\n");
    for line in truth_text.lines().skip(1) {
        let firm = line.split(',').next().unwrap();
        income_csv.push_str(&format!("{firm},1000\n"));
    }
    std::fs::write(&income, income_csv).unwrap();

    let out = run_ok(bin().args([
        "eval",
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        fx.data.join("truth.csv").to_str().unwrap(),
        "--taxonomy",
        fx.data.join("taxonomy.tsv").to_str().unwrap(),
        "--production-rates",
        "0.5,1.0",
        "--cost",
        "--etr",
        etr.to_str().unwrap(),
        "--income",
        income.to_str().unwrap(),
        "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let curve = report["production_rate_accuracy"].as_array().unwrap();
    assert_eq!(curve.len(), 2);
    // Rate 1.0 classifies everything, so it matches plain accuracy.
    assert_eq!(curve[1][1], report["accuracy"]);
    // The rate-0.5 slice keeps the most confident half, which can't be worse.
    assert!(curve[0][1].as_f64().unwrap() >= report["accuracy"].as_f64().unwrap());
    assert!(report["misclassification_cost"].as_f64().is_some());
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        run_ok(bin().args([
            "synth",
            "--out-dir",
            dir.path().join(sub).to_str().unwrap(),
            "--branching",
            "2,3",
            "--dimension",
            "8",
            "--periods",
            "2",
            "--drift",
            "0.2",
            "--churn",
            "0.1",
            "--seed",
            "9",
        ]));
    }
    for name in [
        "taxonomy.tsv",
        "assignments.csv",
        "truth.csv",
        "firm_embeddings.csv",
        "definitions.csv",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(name)).unwrap(),
            std::fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name} differs between identical-seed runs"
        );
    }
}

#[test]
fn invalid_synth_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // dimension smaller than the industry count is rejected up front
    let out = bin()
        .args([
            "synth",
            "--out-dir",
            dir.path().join("d").to_str().unwrap(),
            "--branching",
            "3,4",
            "--dimension",
            "4",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
