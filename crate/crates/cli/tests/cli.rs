use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mldrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mldrnet")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["synth", "--count", "48", "--size", "32", "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = mldrnet(&args);
    assert!(o.status.success(), "{}", text(&o));
    path
}

// a narrow 32-pixel model that trains in well under a second per epoch
const SMALL: &[&str] = &[
    "--input-size", "32", "--trunk-channels", "3,4,4,4", "--branch-hidden", "6",
    "--reduce-channels", "5", "--batch-size", "16", "--lr", "0.01",
];

fn train(data: &Path, out: &Path, epochs: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--train-data", data.to_str().unwrap(), "--test-data", data.to_str().unwrap(),
        "--epochs", epochs, "--out-dir", out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    mldrnet(&args)
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.mlds", &["--seed", "4"]);
    let b = synth(dir.path(), "b.mlds", &["--seed", "4"]);
    let c = synth(dir.path(), "c.mlds", &["--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn bad_cue_mix_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.mlds");
    let o = mldrnet(&["synth", "--cue-mix", "0.3,0.3,0.3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(!out.exists());
}

#[test]
fn epochs_must_be_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let o = train(&data, &dir.path().join("run"), "0", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("epochs"), "{}", text(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let o = train(&data, &dir.path().join("run"), "1", &["--set", "learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("learning_rate"), "{}", text(&o));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let run = dir.path().join("run");
    let o = train(&data, &run, "2", &[]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["checkpoint.mldr", "report.csv", "config.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let report = dir.path().join("eval.jsonl");
    let ckpt = run.join("checkpoint.mldr");
    let o = mldrnet(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--crops", "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("accuracy"));
    let parsed = mldrnet::metrics::read_report(&report, mldrnet::metrics::ReportFormat::JsonLines).unwrap();
    assert_eq!(parsed.confusion.unwrap().total(), 48);
}

#[test]
fn eval_rejects_a_class_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let run = dir.path().join("run");
    assert!(train(&data, &run, "1", &[]).status.success());
    let mut ds: mldrnet::DatasetF64 = mldrnet::data::load(&data).unwrap();
    ds.class_names.truncate(4);
    for s in &mut ds.samples {
        s.label %= 4;
    }
    let four = dir.path().join("four.mlds");
    mldrnet::data::store(&ds, &four).unwrap();
    let ckpt = run.join("checkpoint.mldr");
    let o = mldrnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", four.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("classes"), "{}", text(&o));
}

#[test]
fn corrupt_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.mlds");
    fs::write(&bogus, b"this is certainly not a dataset file").unwrap();
    let o = train(&bogus, &dir.path().join("run"), "1", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("magic"), "{}", text(&o));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let (full, half, rest) = (dir.path().join("full"), dir.path().join("half"), dir.path().join("rest"));
    assert!(train(&data, &full, "3", &[]).status.success());
    assert!(train(&data, &half, "1", &[]).status.success());
    let ckpt = half.join("checkpoint.mldr");
    let o = train(&data, &rest, "3", &["--resume", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(
        fs::read(full.join("checkpoint.mldr")).unwrap(),
        fs::read(rest.join("checkpoint.mldr")).unwrap()
    );
    // a different configuration cannot resume from this checkpoint
    let o = train(&data, &dir.path().join("x"), "3", &["--resume", ckpt.to_str().unwrap(), "--lr", "0.5"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let run = dir.path().join("run");
    let mut reports = Vec::new();
    for _ in 0..2 {
        assert!(train(&data, &run, "2", &["--report-format", "jsonl"]).status.success());
        reports.push(fs::read_to_string(run.join("report.jsonl")).unwrap());
        fs::remove_dir_all(&run).unwrap();
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn gradcheck_catches_a_broken_backward_pass() {
    let o = mldrnet(&["gradcheck", "--fusion", "mean", "--no-layers", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("FAIL"));
    let o = mldrnet(&["gradcheck", "--epsilon", "0.5"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.mlds", &[]);
    let out = dir.path().join("abl");
    let mut args = vec![
        "ablate", "--axis", "fusion", "--variants", "max,concat", "--train-data", data.to_str().unwrap(),
        "--test-data", data.to_str().unwrap(), "--epochs", "1", "--out-dir", out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    let o = mldrnet(&args);
    assert!(o.status.success(), "{}", text(&o));
    let r = mldrnet::metrics::read_report(out.join("ablate-fusion.csv"), mldrnet::metrics::ReportFormat::Csv).unwrap();
    let variants: Vec<_> = r.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(variants, ["max", "concat"]);
    assert_ne!(r.rows[0].config_hash, r.rows[1].config_hash);
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(mldrnet(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mldrnet(&["ablate", "--axis", "width", "--epochs", "1"]).status.code(), Some(1));
    assert_eq!(mldrnet(&["--help"]).status.code(), Some(0));
}
