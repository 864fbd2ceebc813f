use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kkl::lipnet::LipNetParams;
use kkl::observer::{DatasetMeta, PairedDataset};
use kkl::training::{mse, split_for_config, TrainConfig};
use serde_json::Value;

fn kkl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kkl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kkl(args);
    assert!(
        out.status.success(),
        "kkl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Short window and few epochs keep the CLI tests quick.
const SMALL: [&str; 6] = ["--m", "500", "--set", "data.t_end=100", "--epochs", "20"];

fn small(out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = SMALL.iter().map(|a| a.to_string()).collect();
    v.extend(["--out".to_string(), s(out).to_string()]);
    v.extend(extra.iter().map(|a| a.to_string()));
    v
}

fn run(cmd: &str, args: &[String]) -> Output {
    let mut all = vec![cmd];
    all.extend(args.iter().map(String::as_str));
    kkl(&all)
}

fn read_all(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn ok_run(cmd: &str, args: &[String]) {
    let out = run(cmd, args);
    assert!(
        out.status.success(),
        "kkl {cmd} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_default_window_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path();
    let files = ["dataset.csv", "dataset.json", "trajectory.csv"];
    ok(&["simulate", "--sigma", "0", "--seed", "7", "--out", s(a)]);
    let first = read_all(a, &files);
    ok(&["simulate", "--sigma", "0", "--seed", "7", "--out", s(a)]);
    assert!(
        first == read_all(a, &files),
        "rerun changed simulate outputs"
    );
    let text = std::fs::read_to_string(a.join("dataset.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,x3,z1,z2,z3,z4");
    let times: Vec<f64> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(times.len(), 2000);
    assert!(times.iter().all(|&t| t > 20.0 && t <= 500.0 + 1e-9));
    let side = json(&a.join("dataset.json"));
    assert_eq!(side["config"]["seed"], 7);
    assert_eq!(side["meta"]["sigma"], 0.0);
    assert!(!text.contains('\r'));
}

#[test]
fn simulate_rejects_oversized_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = kkl(&["simulate", "--m", "10000000", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("48000"), "{err}");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rte": 0.1}}"#).unwrap();
    let out = kkl(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
    let out = kkl(&[
        "simulate",
        "--set",
        "observer.b=[1,1]",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = kkl(&[
        "observe",
        "--model",
        s(&dir.path().join("missing.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_report_is_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--sigma", "0", "--seed", "3", "--out", s(d)]);
    ok(&[
        "train",
        "--dataset",
        s(&d.join("dataset.csv")),
        "--gamma",
        "10",
        "--sigma",
        "0",
        "--seed",
        "3",
        "--out",
        s(d),
    ]);
    let report = json(&d.join("report.json"));
    assert_eq!(report["param_count"], 292);
    let emp = report["emp_lipschitz"].as_f64().unwrap();
    assert!(emp > 0.0 && emp <= 10.0 * (1.0 + 1e-6), "{emp}");

    let model =
        LipNetParams::from_json(&std::fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    let meta: DatasetMeta =
        serde_json::from_value(json(&d.join("dataset.json"))["meta"].clone()).unwrap();
    let ds = PairedDataset::read_csv(
        &std::fs::read_to_string(d.join("dataset.csv")).unwrap(),
        meta,
    )
    .unwrap();
    let cfg: TrainConfig = serde_json::from_value(report["config"]["train"].clone()).unwrap();
    let (train_set, _) = split_for_config(&ds, &cfg).unwrap();
    assert_eq!(
        mse(&model, &train_set).unwrap(),
        report["train_loss"].as_f64().unwrap()
    );

    let history = std::fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss");
    assert_eq!(history.lines().count(), 301);
}

#[test]
fn train_rejects_observer_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_run("simulate", &small(d, &[]));
    let out = run(
        "train",
        &small(
            d,
            &[
                "--dataset",
                s(&d.join("dataset.csv")),
                "--set",
                r#"observer.a={"diag":[-1,-2]}"#,
                "--set",
                "observer.b=[1,1]",
            ],
        ),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_z"));
}

fn train_small(d: &Path, extra: &[&str]) -> PathBuf {
    ok_run("train", &small(d, extra));
    d.join("model.json")
}

#[test]
fn observe_episode_shape_and_noise_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "train",
        "--m",
        "500",
        "--set",
        "data.t_end=100",
        "--gamma",
        "10",
        "--epochs",
        "100",
        "--out",
        s(d),
    ]);
    let model = d.join("model.json");
    let mut mses = Vec::new();
    for sigma in ["0.1", "3.0"] {
        let o = d.join(format!("obs{sigma}"));
        ok(&[
            "observe",
            "--model",
            s(&model),
            "--sigma-eval",
            sigma,
            "--set",
            "data.t_end=100",
            "--out",
            s(&o),
        ]);
        let text = std::fs::read_to_string(o.join("estimates.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x1,x2,x3,xhat1,xhat2,xhat3");
        assert_eq!(text.lines().count(), 1 + 1001);
        mses.push(json(&o.join("estimates.json"))["mse"].as_f64().unwrap());
    }
    assert!(mses[0] < mses[1], "{mses:?}");
}

#[test]
fn observe_zero_model_gives_zero_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let zero = LipNetParams::zeros(&[4, 8, 8, 3], 10.0).unwrap();
    let path = d.join("zero.json");
    std::fs::write(&path, zero.to_json().unwrap()).unwrap();
    ok(&[
        "observe",
        "--model",
        s(&path),
        "--set",
        "observe.horizon=1",
        "--set",
        "data.t_end=50",
        "--out",
        s(d),
    ]);
    let text = std::fs::read_to_string(d.join("estimates.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 101);
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(f[4..].iter().all(|&v| v == 0.0));
    }

    let narrow = LipNetParams::zeros(&[2, 3, 3], 1.0).unwrap();
    std::fs::write(&path, narrow.to_json().unwrap()).unwrap();
    let out = kkl(&["observe", "--model", s(&path), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bound_components_and_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_run("simulate", &small(d, &[]));
    let csv = d.join("dataset.csv");
    let model = train_small(d, &["--dataset", s(&csv)]);
    let bound = |extra: &[&str]| {
        let o = d.join("b");
        let mut args = small(&o, &["--model", s(&model), "--dataset", s(&csv)]);
        args.extend(extra.iter().map(|a| a.to_string()));
        let out = run("bound", &args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        json(&o.join("bound.json"))
    };

    let isolated = bound(&["--epsilon", "0", "--l-s", "0", "--l-t", "0"]);
    let c = &isolated["components"];
    assert!(c["hoeffding"].as_f64().unwrap() > 0.0);
    for k in ["noise_quadratic", "noise_linear", "transient"] {
        assert_eq!(c[k].as_f64().unwrap(), 0.0, "{k}");
    }
    let r_hat = isolated["inputs"]["r_hat"].as_f64().unwrap();
    let delta = isolated["delta"].as_f64().unwrap();
    assert_eq!(isolated["bound"].as_f64().unwrap(), r_hat + delta);

    let full = bound(&[]);
    let sum: f64 = ["hoeffding", "noise_quadratic", "noise_linear", "transient"]
        .iter()
        .map(|k| full["components"][k].as_f64().unwrap())
        .sum();
    assert_eq!(full["delta"].as_f64().unwrap(), sum);
    assert_eq!(full["sources"]["l_t"], "estimated");
    assert!(full["inputs"]["l_t"].as_f64().unwrap() > 0.0);

    let loose = bound(&["--alpha", "0.01"])["bound"].as_f64().unwrap();
    let tight = bound(&["--alpha", "0.05"])["bound"].as_f64().unwrap();
    assert!(loose > tight);

    let out = run(
        "bound",
        &small(
            &d.join("x"),
            &["--model", s(&model), "--dataset", s(&csv), "--sigma", "1"],
        ),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
}

#[test]
fn bound_with_noisy_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_run("simulate", &small(d, &["--sigma", "1"]));
    let csv = d.join("dataset.csv");
    let model = train_small(d, &["--dataset", s(&csv), "--sigma", "1"]);
    let out = run(
        "bound",
        &small(
            d,
            &["--model", s(&model), "--dataset", s(&csv), "--sigma", "1"],
        ),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let b = json(&d.join("bound.json"));
    assert!(b["components"]["noise_quadratic"].as_f64().unwrap() > 0.0);
    assert_eq!(b["inputs"]["sigma"], 1.0);
}

#[test]
fn singleton_sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path();
    let sweep = || {
        let out = run(
            "sweep",
            &small(
                o,
                &[
                    "--set",
                    "analysis.gammas=[10]",
                    "--set",
                    "analysis.sigmas_train=[0]",
                    "--set",
                    "analysis.sigmas_eval=[0]",
                    "--svg",
                ],
            ),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let files = [
        "sweep.csv",
        "sweep_eval.csv",
        "gamma_trend.csv",
        "eval_trend.csv",
        "sweep.json",
        "loss_vs_gamma.svg",
    ];
    sweep();
    let first = read_all(o, &files);
    sweep();
    assert!(first == read_all(o, &files), "rerun changed sweep outputs");
    let a = o;
    let rows = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert_eq!(
        rows.lines().next().unwrap(),
        "gamma,sigma_train,sigma_eval,train_loss,val_loss,emp_lipschitz,seed"
    );
    assert_eq!(rows.lines().count(), 2);
    assert_eq!(
        std::fs::read_to_string(a.join("sweep_eval.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    assert!(a.join("cells").join("model_gamma10_sigma0.json").exists());
    let trend = std::fs::read_to_string(a.join("gamma_trend.csv")).unwrap();
    assert!(trend.starts_with("gamma,log10_gamma,"));
    assert!(trend
        .lines()
        .nth(1)
        .unwrap()
        .contains(",1.0000000000000000e0,"));
}

#[test]
fn sweep_failures_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path();
    let out = run(
        "sweep",
        &small(
            o,
            &[
                "--set",
                "analysis.gammas=[1000]",
                "--set",
                "analysis.sigmas_train=[0]",
                "--set",
                "analysis.sigmas_eval=[]",
                "--set",
                "train.learning_rate=1e6",
            ],
        ),
    );
    assert_eq!(out.status.code(), Some(3));
    let rows = std::fs::read_to_string(o.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.contains("NaN"));
    assert_eq!(
        json(&o.join("sweep.json"))["failures"]
            .as_array()
            .unwrap()
            .len(),
        1
    );
}
