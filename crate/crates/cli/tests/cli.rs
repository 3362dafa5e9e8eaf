use std::path::Path;
use std::process::{Command, Output};

fn warpseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpseg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("WARPSEG_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL_DATA: [&str; 10] = [
    "--set",
    "data.train=24",
    "--set",
    "data.eval=4",
    "--set",
    "data.height=32",
    "--set",
    "data.width=32",
    "--set",
    "data.seed=3",
];

fn gen_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["gen-data"];
    args.extend(SMALL_DATA);
    args.extend(extra);
    warpseg(dir, &args)
}

fn train(dir: &Path, out: &str, mode: &str, iterations: usize, extra: &[&str]) -> Output {
    let mode = format!("train.mode={mode}");
    let iters = format!("train.iterations={iterations}");
    let out_dir = format!("out_dir={out}");
    let mut args = vec![
        "--threads",
        "1",
        "train",
        "--set",
        &mode,
        "--set",
        &iters,
        "--set",
        &out_dir,
        "--set",
        "train.labeled_batch=4",
        "--set",
        "train.unlabeled_batch=4",
        "--set",
        "train.labeled_fraction=0.25",
        "--set",
        "train.eval_interval=0",
        "--set",
        "dump_images=1",
    ];
    args.extend(extra);
    warpseg(dir, &args)
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn gen_data_refuses_to_overwrite_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let first = gen_small(tmp.path(), &[]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let samples = std::fs::read_dir(tmp.path().join("data/samples")).unwrap().count();
    assert_eq!(samples, 28);
    assert!(tmp.path().join("data/run.toml").exists());
    let manifest = std::fs::read(tmp.path().join("data/manifest.txt")).unwrap();

    assert_eq!(code(&gen_small(tmp.path(), &[])), 2);
    assert_eq!(code(&gen_small(tmp.path(), &["--force"])), 0);
    assert_eq!(std::fs::read(tmp.path().join("data/manifest.txt")).unwrap(), manifest);
}

#[test]
fn supervised_run_logs_zero_gated_columns() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(tmp.path(), &[])), 0);
    let out = train(tmp.path(), "sup", "supervised", 50, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("best"));
    let rows = csv_rows(&tmp.path().join("sup/metrics.csv"));
    assert_eq!(rows.len(), 50);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0] as usize, i);
        // ce_b and every consistency, stabilization, adversarial and gate column
        assert!(r[3..15].iter().all(|&v| v == 0.0), "row {i}: {r:?}");
    }
    let echoed = std::fs::read_to_string(tmp.path().join("sup/run.toml")).unwrap();
    assert!(echoed.contains("mode = \"supervised\""));
    assert!(tmp.path().join("sup/checkpoint/manifest.txt").exists());
}

#[test]
fn resumed_run_continues_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(tmp.path(), &[])), 0);
    assert_eq!(code(&train(tmp.path(), "ads", "ads", 4, &[])), 0);
    let out = train(tmp.path(), "ads", "ads", 7, &["--resume"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let iters: Vec<usize> = csv_rows(&tmp.path().join("ads/metrics.csv"))
        .iter()
        .map(|r| r[0] as usize)
        .collect();
    assert_eq!(iters, (0..7).collect::<Vec<_>>());
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(tmp.path(), &[])), 0);
    assert_eq!(code(&train(tmp.path(), "a", "ads", 5, &[])), 0);
    assert_eq!(code(&train(tmp.path(), "b", "ads", 5, &[])), 0);
    for f in ["metrics.csv", "eval.csv", "checkpoint/state.ndb"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(tmp.path(), &[])), 0);
    assert_eq!(code(&train(tmp.path(), "o", "supervised", 2, &[])), 0);
    assert_eq!(code(&train(tmp.path(), "o", "supervised", 2, &[])), 2);
    assert_eq!(code(&train(tmp.path(), "o", "supervised", 2, &["--force"])), 0);
}

#[test]
fn eval_reports_checkpoint_models_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(tmp.path(), &[])), 0);
    assert_eq!(code(&train(tmp.path(), "ds", "dual-student", 3, &[])), 0);
    let args = ["eval", "--checkpoint", "ds/checkpoint", "--data", "data"];
    let a = warpseg(tmp.path(), &args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let text = stdout(&a);
    assert!(text.contains("student_a") && text.contains("student_b") && text.contains("best"));
    assert_eq!(stdout(&warpseg(tmp.path(), &args)), text);
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let no_ckpt = warpseg(tmp.path(), &["eval", "--checkpoint", "nowhere", "--data", "data"]);
    assert_eq!(code(&no_ckpt), 2);
    assert!(String::from_utf8_lossy(&no_ckpt.stderr).contains("nowhere"));
    let no_data = train(tmp.path(), "x", "ads", 2, &[]);
    assert_eq!(code(&no_data), 2);
    assert!(String::from_utf8_lossy(&no_data.stderr).contains("gen-data"));
}

#[test]
fn bad_invocations_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&warpseg(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&warpseg(tmp.path(), &["train", "--set", "train.lamda1=2"])), 1);
    assert_eq!(code(&warpseg(tmp.path(), &["verify", "--fault", "nope"])), 1);
    assert_eq!(code(&warpseg(tmp.path(), &["--help"])), 0);
}

#[test]
fn zero_sigma_warp_demo_copies_the_image() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["warp-demo", "--out", "demo", "--sigma-s", "0", "--sigma-d", "0"];
    assert_eq!(code(&warpseg(tmp.path(), &args)), 0);
    let input = std::fs::read(tmp.path().join("demo/input.ppm")).unwrap();
    assert_eq!(std::fs::read(tmp.path().join("demo/warped.ppm")).unwrap(), input);

    let args = [
        "warp-demo",
        "--input",
        "demo/input.ppm",
        "--out",
        "again",
        "--seed",
        "4",
    ];
    let first = warpseg(tmp.path(), &args);
    assert_eq!(code(&first), 0);
    assert!(stdout(&first).contains("13 control pairs"));
    let warped = std::fs::read(tmp.path().join("again/warped.ppm")).unwrap();
    assert_ne!(warped, input);
    assert_eq!(code(&warpseg(tmp.path(), &args)), 0);
    assert_eq!(std::fs::read(tmp.path().join("again/warped.ppm")).unwrap(), warped);
}

#[test]
fn verify_passes_and_catches_a_corrupted_backward() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = warpseg(tmp.path(), &["verify", "--configs", "2"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let bad = warpseg(
        tmp.path(),
        &["verify", "--configs", "2", "--fault", "bilinear-upsample"],
    );
    assert_eq!(code(&bad), 2);
    assert!(stdout(&bad).contains("FAIL gradient bilinear-upsample"));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bilinear-upsample"));
}

#[test]
fn protocol_config_matches_the_acceptance_protocol() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/protocol.toml");
    let text = std::fs::read_to_string(path).unwrap();
    let table: toml::Table = text.parse().unwrap();
    let train: warpseg_train::TrainConfig = table["train"].clone().try_into().unwrap();
    assert_eq!(train, warpseg_verify::experiment::Protocol::base_config());
}
