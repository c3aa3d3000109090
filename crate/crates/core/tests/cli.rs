use std::path::Path;
use std::process::Command;

use drmim::cli::{run, CommandRegistry};

fn call(args: &[&str]) -> (i32, String, String) {
    let argv: Vec<String> = std::iter::once("drmim").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn registry_lists_every_subcommand() {
    let r = CommandRegistry::with_builtin();
    let names: Vec<&str> = r.names().collect();
    for n in ["train", "track", "eval", "prune-report", "synth", "selftest", "bench", "sweep"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn prune_report_halves_prunable_channels() {
    let (code, out, _) = call(&["prune-report", "--mu", "0.5"]);
    assert_eq!(code, 0);
    let row = out.lines().find(|l| l.starts_with("backbone.conv1\t")).unwrap();
    let cols: Vec<usize> = row.split('\t').skip(1).map(|c| c.parse().unwrap()).collect();
    assert_eq!(cols[1], cols[0].div_ceil(2));
    let total = out.lines().find(|l| l.starts_with("total")).unwrap();
    assert!(total.ends_with("\t176776"), "{total}");
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["frobnicate"][..], &["eval", "--bogus"], &[]] {
        let (code, _, err) = call(args);
        assert_eq!(code, 2, "{args:?}");
        assert!(err.lines().last().unwrap().starts_with("error: "), "{err}");
    }
    assert_eq!(call(&["--help"]).0, 0);
}

#[test]
fn runtime_errors_exit_with_one() {
    let (code, _, err) = call(&["eval", "--pred", "/nonexistent/a.txt", "--gt", "/nonexistent/b.txt"]);
    assert_eq!(code, 1);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: eval: "), "{err}");
    let (code, _, err) = call(&["prune-report", "--set", "nonsense=1"]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn identical_prediction_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("seq.txt");
    std::fs::write(&gt, "1,2,30,40\n5,6,30,40\n9,9,31,41\n").unwrap();
    let report = dir.path().join("report");
    let (code, out, err) = call(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&report)]);
    assert_eq!(code, 0, "{err}");
    let row = out.lines().nth(1).unwrap();
    assert!(row.starts_with("seq,3,1.000000,"), "{row}");
    assert!(report.join("precision_plot.svg").exists() && report.join("success_plot.svg").exists());
}

#[test]
fn selftest_passes() {
    let (code, out, err) = call(&["selftest", "--instances", "2"]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn synth_train_track_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let run_dir = dir.path().join("run");
    let small = ["--set", "search_size=176", "--set", "batch=2", "--set", "steps=2", "--set", "train_sequences=2"];

    let (code, _, err) = call(&["synth", "--set", "length=5", "--seed", "3", "--out", p(&seq)]);
    assert_eq!(code, 0, "{err}");
    assert!(seq.join("groundtruth.txt").exists() && seq.join("000005.ppm").exists());

    let mut args = vec!["train", "--out", p(&run_dir), "--set", "train_length=10"];
    args.extend(small);
    let (code, _, err) = call(&args);
    assert_eq!(code, 0, "{err}");
    for f in ["config.txt", "model.ckpt", "train_log.csv"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let config = run_dir.join("config.txt");
    assert!(std::fs::read_to_string(&config).unwrap().contains("search_size = 176"));

    let result = dir.path().join("result.txt");
    let ckpt = run_dir.join("model.ckpt");
    let (code, _, err) =
        call(&["track", "--config", p(&config), "--checkpoint", p(&ckpt), "--sequence", p(&seq), "--out", p(&result)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read_to_string(&result).unwrap().lines().count(), 5);

    let (code, out, err) = call(&["eval", "--pred", p(&result), "--gt", p(&seq), "--out", p(&dir.path().join("rep"))]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().nth(1).unwrap().starts_with("seq,5,"));

    // A checkpoint for the default geometry does not load into this one.
    let (code, _, _) = call(&["track", "--checkpoint", p(&ckpt), "--sequence", p(&seq), "--out", p(&result)]);
    assert_eq!(code, 1);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_drmim");
    let ok = Command::new(bin).args(["prune-report", "--mu", "0.2"]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("451872"));
    let bad = Command::new(bin).arg("nope").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
