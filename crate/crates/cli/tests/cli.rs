use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use weaver_cli::bench::{run_point, BenchOptions, PointResult, HEADER};
use weaver_cli::verify::{self, Kernels, Suite};
use weaver_cli::{cmd_verify, VerifyArgs};
use weaver_core::data::{synth_series, write_csv};
use weaver_core::kron::FactorChain;
use weaver_core::model::Checkpoint;
use weaver_core::{Tensor, WeaverConfig, WeaverModel};

fn weaver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weaver"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_kron_passes() {
    let o = weaver(&["verify", "--suite", "kron"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("6 of 6 properties passed"));
}

#[test]
fn verify_rejects_unknown_suite() {
    let o = weaver(&["verify", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

fn perturbed(f: &FactorChain<Tensor>, v: &Tensor) -> weaver_core::Result<Tensor> {
    let y = verify::pkmv_columns(f, v)?;
    Ok(y.map(|x| x * (1.0 + 1e-9)))
}

#[test]
fn perturbed_kernel_is_caught() {
    let args = VerifyArgs {
        suite: Suite::Kron,
        seed: 0,
        out: None,
        csv: false,
    };
    let mut out = Vec::new();
    let passed = cmd_verify(
        &args,
        &Kernels {
            efficient: perturbed,
        },
        &mut out,
    )
    .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(!passed);
    assert!(text.contains("FAIL kron.oracle_order2"), "{text}");
    assert!(text.contains("failing: kron.oracle_order2"), "{text}");
}

#[test]
fn verify_all_emits_one_csv_row_per_property() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verify.csv");
    let o = weaver(&[
        "verify",
        "--suite",
        "all",
        "--csv",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let mut r = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec![
            "suite",
            "property",
            "status",
            "cases",
            "elapsed_ms",
            "detail"
        ]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let names = verify::property_names(Suite::All);
    assert_eq!(rows.len(), names.len());
    for (row, name) in rows.iter().zip(&names) {
        assert_eq!(&row[1], *name);
        assert_eq!(&row[2], "pass");
    }
    assert_eq!(stdout(&o).lines().count(), names.len() + 1);
}

#[test]
fn bench_point_is_equivalent_and_reproducible() {
    let opts = BenchOptions {
        trials: 1,
        warmup: 0,
        ..BenchOptions::default()
    };
    let a = run_point(&opts, 64, 2, 4, 9).unwrap();
    let b = run_point(&opts, 64, 2, 4, 9).unwrap();
    match (a, b) {
        (PointResult::Timed(a), PointResult::Timed(b)) => {
            assert!(a.max_abs_diff <= 1e-10 && a.speedup > 0.0);
            assert_eq!((a.p, a.e, a.trials), (12, 32 * 4, 1));
            assert_eq!(
                (a.max_abs_diff, a.max_rel_diff),
                (b.max_abs_diff, b.max_rel_diff)
            );
        }
        other => panic!("expected timed points, got {other:?}"),
    }
}

#[test]
fn bench_cli_smoke() {
    let o = weaver(&[
        "bench-kmv",
        "--nodes",
        "8,16",
        "--heads",
        "2",
        "--d-head",
        "4",
        "--trials",
        "1",
        "--warmup",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), HEADER.join(","));
    assert_eq!(lines.count(), 2);
    assert_eq!(
        weaver(&["bench-kmv", "--trials", "0"]).status.code(),
        Some(2)
    );
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--synthetic",
        "--days",
        "3",
        "--seed",
        "7",
        "--out",
        out,
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = weaver(&train_args(out, &["--epochs", "0"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = Checkpoint::load(&dir.path().join("checkpoint.wvr")).unwrap();
    let init = WeaverModel::init(WeaverConfig::desk(), 7).unwrap();
    assert_eq!(ckpt.config, init.config);
    assert_eq!(ckpt.params, init.params);
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn training_log_is_bit_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = weaver(&train_args(d.path().to_str().unwrap(), &["--epochs", "2"]));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(
        read(a.path(), "train_log.csv"),
        read(b.path(), "train_log.csv")
    );
    assert_eq!(
        read(a.path(), "checkpoint.wvr"),
        read(b.path(), "checkpoint.wvr")
    );
}

#[test]
fn config_data_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.kv");
    fs::write(&cfg, "# node count disagrees with the data\nnodes=5\n").unwrap();
    let out = dir.path().join("run");
    let o = weaver(&train_args(
        out.to_str().unwrap(),
        &["--epochs", "1", "--config", cfg.to_str().unwrap()],
    ));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("N=6"), "{}", stderr(&o));
}

#[test]
fn forecast_is_deterministic_and_checks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = weaver(&train_args(run.to_str().unwrap(), &["--epochs", "1"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = run.join("checkpoint.wvr");

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = weaver(&[
            "forecast",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push((
            fs::read(out.join("predictions.csv")).unwrap(),
            fs::read(out.join("metrics.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let metrics = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(metrics.starts_with("model,horizon,mae,rmse,mape\n"));
    assert!(metrics.contains("weaver,all,") && metrics.contains("persistence,all,"));
    assert!(metrics.contains("weaver,20min,"));

    // too short for a single test window
    let short = synth_series(6, 1, 3).unwrap().slice(0..40).unwrap();
    let csv_path = dir.path().join("short.csv");
    write_csv(&short, fs::File::create(&csv_path).unwrap()).unwrap();
    let o = weaver(&[
        "forecast",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        csv_path.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = weaver(&[
        "forecast",
        "--checkpoint",
        "/nonexistent/ckpt.wvr",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn report_merges_and_rejects_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    };
    let head = HEADER.join(",");
    let a = write(
        "machine_a.csv",
        &format!("{head}\n8,12,128,2,4,1,10.0,5.0,2.0,0e0,0e0\n"),
    );
    let b = write(
        "machine_b.csv",
        &format!("{head}\n8,12,128,2,4,1,12.0,4.0,3.0,0e0,0e0\n"),
    );
    let o = weaver(&["report", &a, &b]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "source,n,p,e,h,d_head,trials,t_basic_ns,t_efficient_ns,speedup,max_abs_diff,max_rel_diff"
    );
    assert!(lines[1].starts_with("machine_a,8,") && lines[2].starts_with("machine_b,8,"));

    let single = write("single.csv", " Model , Horizon ,MAE\nweaver,all,1.5\n");
    let o = weaver(&["report", &single]);
    assert_eq!(
        stdout(&o),
        "source,model,horizon,mae\nsingle,weaver,all,1.5\n"
    );

    let clash = write(
        "clash.csv",
        "model,horizon,mae\nweaver,all,1.5\nweaver,all,1.7\n",
    );
    let o = weaver(&["report", &clash]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("conflicting duplicate keys: clash: weaver/all"),
        "{}",
        stderr(&o)
    );
}
