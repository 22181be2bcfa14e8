use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covproto_core::data::{load_embeddings, LoadOptions};
use serde_json::Value;

fn covproto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covproto"))
        .args(args)
        .env_remove("CAM_THREADS")
        .output()
        .expect("binary runs")
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec![
        "gen",
        "--classes",
        "4",
        "--dim",
        "8",
        "--per-class",
        "12",
        "--out",
        path.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = covproto(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn gen_writes_loadable_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.camf", &["--seed", "1"]);
    let b = gen(dir.path(), "b.camf", &["--seed", "1"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let set = load_embeddings(&a, LoadOptions { normalize: false }).unwrap();
    assert_eq!((set.len(), set.dim(), set.class_count()), (48, 8, 4));
    let c = gen(dir.path(), "c.csv", &["--seed", "1"]);
    assert_eq!(
        load_embeddings(&c, LoadOptions { normalize: false }).unwrap(),
        set
    );
}

#[test]
fn gen_rejects_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.camf");
    let o = covproto(&["gen", "--classes", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = covproto(&[
        "gen",
        "--cond-range",
        "5",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn train_report_is_reproducible_and_uses_shot_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 8, "heads": 2, "seeds": [1, 2]}"#).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = covproto(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--shots",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        report(&out)
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(without_timings(a.clone()), without_timings(b));
    assert_eq!(a["schema_version"], 1);
    assert_eq!(a["cells"].as_array().unwrap().len(), 3);
    let cell = &a["cells"][0]["config"];
    assert_eq!(cell["shrinkage"]["gamma1"], 600.0);
    assert_eq!(cell["shrinkage"]["gamma2"], 100.0);
    assert_eq!(a["cells"][0]["per_seed"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"epochs": 8, "beta": "high"}"#).unwrap();
    let o = covproto(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`beta`"));
    std::fs::write(&cfg, r#"{"epochs": 8, "gamma": 3}"#).unwrap();
    let o = covproto(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let d = data.to_str().unwrap();
    assert_eq!(covproto(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(covproto(&["train"]).status.code(), Some(1));
    assert_eq!(
        covproto(&["train", "--data", "/no/such/file"])
            .status
            .code(),
        Some(2)
    );
    let junk = dir.path().join("junk.csv");
    std::fs::write(&junk, "label,f0\n0,abc\n").unwrap();
    assert_eq!(
        covproto(&["train", "--data", junk.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        covproto(&["train", "--data", d, "--shots", "12"])
            .status
            .code(),
        Some(2)
    );
    let o = covproto(&[
        "train",
        "--data",
        d,
        "--shots",
        "2",
        "--epochs",
        "8",
        "--lr",
        "1e300",
        "--adapter",
        "--no-normalize",
        "--seeds",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(covproto(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_with_empty_grid_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let o = covproto(&[
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--shots",
        "2",
        "--alpha-grid",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_records_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let out = dir.path().join("s.json");
    let o = covproto(&[
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--shots",
        "2,16",
        "--seeds",
        "1-2",
        "--epochs",
        "8",
        "--mode",
        "euclidean,mahalanobis",
        "--beta-grid",
        "0.01,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let cells = r["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2 * 2 * 2);
    for c in cells {
        let failures = c["failures"].as_u64().unwrap();
        if c["shots"] == 16 {
            assert_eq!(failures, 2);
            assert!(c["mean"].is_null());
        } else {
            assert_eq!(failures, 0);
        }
    }
}

#[test]
fn ablation_rows_and_baseline_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let d = data.to_str().unwrap();
    let ab = dir.path().join("ab.json");
    let o = covproto(&[
        "ablate",
        "--data",
        d,
        "--shots",
        "2",
        "--seeds",
        "1,2",
        "--epochs",
        "8",
        "--out",
        ab.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    let labels: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(
        labels,
        ["baseline", "ca", "ca+intra", "ca+da", "ca+intra+da", "full"]
    );
    let ab = report(&ab);
    for c in ab["cells"].as_array().unwrap() {
        assert!(c["config"].is_object());
        assert!(c["std"].is_number());
    }

    let tr = dir.path().join("tr.json");
    let o = covproto(&[
        "train",
        "--data",
        d,
        "--shots",
        "2",
        "--seeds",
        "1,2",
        "--epochs",
        "8",
        "--mode",
        "euclidean",
        "--heads",
        "1",
        "--alpha",
        "0",
        "--beta",
        "0",
        "--out",
        tr.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let tr = report(&tr);
    assert_eq!(tr["cells"][0]["per_seed"], ab["cells"][0]["per_seed"]);
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.camf", &[]);
    let run = |threads: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_covproto"));
        cmd.args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--epochs",
            "8",
            "--out",
            out.to_str().unwrap(),
        ]);
        match threads {
            Some(t) => cmd.env("CAM_THREADS", t),
            None => cmd.env_remove("CAM_THREADS"),
        };
        let o = cmd.output().unwrap();
        (
            o.status.code(),
            if o.status.success() {
                Some(without_timings(report(&out)))
            } else {
                None
            },
        )
    };
    let (code, one) = run(Some("1"), "one.json");
    assert_eq!(code, Some(0));
    let (_, many) = run(Some("3"), "many.json");
    assert_eq!(one, many);
    assert_eq!(run(Some("0"), "zero.json").0, Some(1));
}

#[test]
fn isotropic_data_gives_no_covariance_advantage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("iso.json");
    let o = covproto(&[
        "train",
        "--synthetic",
        "--cond-range",
        "1",
        "1",
        "--per-class",
        "40",
        "--seeds",
        "1-10",
        "--epochs",
        "10",
        "--mode",
        "euclidean,mahalanobis",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let eu = r["cells"][0]["mean"].as_f64().unwrap();
    let ma = r["cells"][1]["mean"].as_f64().unwrap();
    assert!((ma - eu).abs() < 0.02, "euclidean {eu} mahalanobis {ma}");
    assert_eq!(r["dataset"]["source"], "synthetic");
}
