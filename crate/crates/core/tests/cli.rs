use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcm::cli::{read_dataset_file, FitReport};
use pcm::synthgen::{generate, Region, SynthSpec};
use serde_json::Value;

fn pcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, name: &str, spec: &SynthSpec) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(spec).unwrap()).unwrap();
    p
}

fn gen(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let p = dir.join(format!("data_{n}_{seed}.csv"));
    let out = pcm(&["generate", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&p)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn generate_writes_header_plus_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), 100, 0);
    let text = fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().next().unwrap(), "x1,x2,t,y,ybar,c_true");
}

#[test]
fn generate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        assert_eq!(code(&pcm(&["generate", "--n", "500", "--seed", "7", "--out", s(p)])), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn generated_file_round_trips_to_memory() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), 2000, 11);
    let from_file = read_dataset_file(&p).unwrap();
    let spec = SynthSpec {
        n: 2000,
        seed: 11,
        ..SynthSpec::default()
    };
    assert_eq!(from_file, generate(&spec).unwrap());
}

#[test]
fn generate_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&pcm(&["generate", "--n", "0", "--out", s(&out)])), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&pcm(&["generate", "--spec", s(&bad), "--out", s(&out)])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&pcm(&["generate", "--spec", s(&missing), "--out", s(&out)])), 3);
    let invalid = SynthSpec {
        p_treat: 1.5,
        ..SynthSpec::default()
    };
    let p = write_spec(dir.path(), "invalid.json", &invalid);
    assert_eq!(code(&pcm(&["generate", "--spec", s(&p), "--out", s(&out)])), 2);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&pcm(&["fit"])), 2);
    assert_eq!(code(&pcm(&["no-such-command"])), 2);
    let v = pcm(&["--version"]);
    assert_eq!(code(&v), 0);
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn default_spec_round_trips() {
    let out = pcm(&["default-spec"]);
    assert_eq!(code(&out), 0);
    let spec: SynthSpec = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(spec, SynthSpec::default());
}

#[test]
fn fit_box_and_kmeans_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 5000, 1);
    for mode in ["box", "kmeans"] {
        let model = dir.path().join(format!("{mode}.json"));
        let assign = dir.path().join(format!("{mode}.csv"));
        let out = pcm(&[
            "fit", "--data", s(&data), "--cf", "given", "--precluster", mode, "--em-iters", "1",
            "--out-model", s(&model), "--out-assignments", s(&assign),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report: FitReport = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
        assert_eq!(report.dataset_rows, 5000);
        assert_eq!(report.ell_hat, report.mu_hat.len());
        assert!(report.mu_hat.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(report.level_sizes.iter().sum::<usize>(), 5000);
        assert!(!report.err_curve.is_empty());
        let rows = fs::read_to_string(&assign).unwrap();
        assert_eq!(rows.lines().next().unwrap(), "index,level,ite,smoothed_ite,cluster");
        assert_eq!(rows.lines().count(), 5001);
    }
}

#[test]
fn fit_given_without_counterfactuals_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("noybar.csv");
    let mut text = String::from("x1,x2,t,y\n");
    for i in 0..50 {
        text.push_str(&format!("{},{},{},{}\n", i as f64 / 50.0, 0.5, i % 2, i));
    }
    fs::write(&data, text).unwrap();
    let model = dir.path().join("m.json");
    let out = pcm(&["fit", "--data", s(&data), "--cf", "given", "--out-model", s(&model)]);
    assert_eq!(code(&out), 2);
    // the same file is fine without counterfactuals
    let out = pcm(&["fit", "--data", s(&data), "--cf", "control-diff", "--out-model", s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = pcm(&["fit", "--data", s(&data), "--cf", "knn", "--knn-k", "3", "--out-model", s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_flag_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 200, 0);
    let model = dir.path().join("m.json");
    for bad in [
        vec!["--tau-multiplier", "0"],
        vec!["--k-max", "0"],
        vec!["--cf", "knn", "--knn-k", "zero"],
        vec!["--precluster", "hex"],
    ] {
        let mut args = vec!["fit", "--data", s(&data), "--out-model", s(&model)];
        args.extend(bad.iter().copied());
        assert_eq!(code(&pcm(&args)), 2, "{bad:?}");
    }
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&pcm(&["fit", "--data", s(&missing), "--out-model", s(&model)])), 3);
}

/// Single-level trial without noise: every subject's effect is exactly 1.
fn flat_spec() -> SynthSpec {
    SynthSpec {
        regions: vec![],
        mu: pcm::synthgen::OutcomeMeans {
            control: vec![0.5],
            treated: vec![1.5],
        },
        sigma: 0.0,
        n: 3000,
        seed: 2,
        ..SynthSpec::default()
    }
}

#[test]
fn eval_of_a_perfect_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "flat.json", &flat_spec());
    let data = dir.path().join("d.csv");
    assert_eq!(code(&pcm(&["generate", "--spec", s(&spec), "--out", s(&data)])), 0);
    let model = dir.path().join("m.json");
    let assign = dir.path().join("a.csv");
    let out = pcm(&["fit", "--data", s(&data), "--out-model", s(&model), "--out-assignments", s(&assign)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = dir.path().join("eval.json");
    let out = pcm(&[
        "eval", "--data", s(&data), "--model", s(&model), "--assignments", s(&assign),
        "--out", s(&report), "--spec", s(&spec),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["mae"]["mean"], 0.0);
    assert_eq!(v["mae"]["std"], 0.0);
    assert_eq!(v["ell_hat"], 1);
    assert_eq!(v["homogeneity"], 1.0);
    for side in ["confusion", "histogram", "effects"] {
        assert!(dir.path().join(format!("eval.{side}.csv")).exists(), "{side}");
    }
    let hist = fs::read_to_string(dir.path().join("eval.histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 101);
}

/// Hand-written model that matches the truth exactly.
#[test]
fn eval_scores_a_hand_made_perfect_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 300, 5);
    let ds = read_dataset_file(&data).unwrap();
    let fit_json = dir.path().join("fit.json");
    let assign = dir.path().join("a.csv");
    let model = dir.path().join("m.json");
    assert_eq!(
        code(&pcm(&["fit", "--data", s(&data), "--out-model", s(&fit_json)])),
        0
    );
    let mut report: FitReport = serde_json::from_str(&fs::read_to_string(&fit_json).unwrap()).unwrap();
    report.mu_hat = vec![0.0, 1.0, 2.0];
    report.ell_hat = 3;
    fs::write(&model, serde_json::to_string(&report).unwrap()).unwrap();
    let mut rows = String::from("index,level\n");
    for (i, subj) in ds.subjects.iter().enumerate() {
        rows.push_str(&format!("{i},{}\n", subj.c_true.unwrap()));
    }
    fs::write(&assign, rows).unwrap();
    let out_path = dir.path().join("e.json");
    let out = pcm(&[
        "eval", "--data", s(&data), "--model", s(&model), "--assignments", s(&assign),
        "--out", s(&out_path), "--true-mu", "0,1,2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["mae"]["mean"], 0.0);
    let conf = v["confusion"].as_array().unwrap();
    for (a, row) in conf.iter().enumerate() {
        for (b, x) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(x.as_f64().unwrap(), if a == b { 1.0 } else { 0.0 });
        }
    }
    // no ite column: no baseline block
    assert!(v["baseline"].is_null());
}

#[test]
fn eval_includes_baseline_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 2000, 3);
    let other = gen(dir.path(), 1000, 3);
    let model = dir.path().join("m.json");
    let assign = dir.path().join("a.csv");
    assert_eq!(
        code(&pcm(&["fit", "--data", s(&data), "--out-model", s(&model), "--out-assignments", s(&assign)])),
        0
    );
    let out_path = dir.path().join("e.json");
    let base = |d: &Path| -> Vec<String> {
        ["eval", "--data", s(d), "--model", s(&model), "--assignments", s(&assign), "--out", s(&out_path)]
            .iter()
            .map(|x| x.to_string())
            .collect()
    };
    let mut args = base(&data);
    args.extend(["--true-mu".into(), "0,1,2".into()]);
    let out = Command::new(env!("CARGO_BIN_EXE_pcm")).args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(v["baseline"]["raw_ite_mae"]["mean"].as_f64().unwrap() > 0.0);

    // row-count mismatch
    let mut args = base(&other);
    args.extend(["--true-mu".into(), "0,1,2".into()]);
    let out = Command::new(env!("CARGO_BIN_EXE_pcm")).args(&args).output().unwrap();
    assert_eq!(code(&out), 2);

    // no truth supplied
    let out = Command::new(env!("CARGO_BIN_EXE_pcm")).args(base(&data)).output().unwrap();
    assert_eq!(code(&out), 2);

    // missing c_true
    let stripped = dir.path().join("stripped.csv");
    let text = fs::read_to_string(&data).unwrap();
    let cut: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    fs::write(&stripped, cut).unwrap();
    let mut args = base(&stripped);
    args.extend(["--true-mu".into(), "0,1,2".into()]);
    let out = Command::new(env!("CARGO_BIN_EXE_pcm")).args(&args).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn fit_json_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 4000, 8);
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["diagnostics"].as_object_mut().unwrap().remove("stage_ms");
        serde_json::to_string(&v).unwrap()
    };
    for mode in ["box", "kmeans"] {
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        for p in [&a, &b] {
            let out = pcm(&["fit", "--data", s(&data), "--precluster", mode, "--seed", "4", "--out-model", s(p)]);
            assert_eq!(code(&out), 0);
        }
        assert_eq!(strip(&a), strip(&b));
    }
}

#[test]
fn sweep_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = pcm(&[
        "sweep", "--n", "2000,8000", "--seeds", "3", "--modes", "box,kmeans", "--out-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        headers,
        [
            "n", "seed", "mode", "mae_mean", "mae_std", "ell_hat", "homogeneity", "diag0", "diag1",
            "diag2", "mu_hat0", "mu_hat1", "mu_hat2", "wall_ms", "error"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert!(r[13].parse::<f64>().unwrap() > 0.0);
        assert!(r[14].is_empty(), "cell failed: {:?}", r);
    }
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn sweep_with_only_failures_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcm(&["sweep", "--n", "2", "--seeds", "1", "--out-dir", s(&dir.path().join("s"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn non_default_geometry_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        d: 3,
        regions: vec![Region {
            lo: vec![0.0, 0.0, 0.0],
            hi: vec![0.5, 1.0, 1.0],
            level: 1,
        }],
        mu: pcm::synthgen::OutcomeMeans {
            control: vec![0.0, 0.0],
            treated: vec![0.0, 3.0],
        },
        n: 1000,
        sigma: 1.0,
        ..SynthSpec::default()
    };
    let p = write_spec(dir.path(), "d3.json", &spec);
    let data = dir.path().join("d3.csv");
    assert_eq!(code(&pcm(&["generate", "--spec", s(&p), "--out", s(&data)])), 0);
    let text = fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,x3,t,y,ybar,c_true");
}
