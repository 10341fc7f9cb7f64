use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use advmt::eval::EvalReport;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SMALL_TRAIN: &str = r#"{"epochs": 1, "windows_per_epoch": 8, "validation_windows": 2}"#;

fn advmt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advmt"))
        .current_dir(dir)
        .env_remove("ADVMT_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stdout:\n{}\nstderr:\n{}", stdout(&out), stderr(&out));
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn digest(path: &Path) -> String {
    format!("{:x}", Sha256::digest(fs::read(path).unwrap()))
}

/// Relative path and digest of every file under `dir` except the run
/// manifest, sorted.
fn tree_digests(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), digest(&p)));
            }
        }
    }
    out.sort();
    out
}

/// A generated corpus plus a one-epoch training run, shared setup of the
/// eval and predict tests.
fn trained(tmp: &TempDir) -> PathBuf {
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus"]));
    fs::write(d.join("small.json"), SMALL_TRAIN).unwrap();
    ok(advmt(d, &["train", "--config", "small.json", "--data", "corpus", "--out", "run"]));
    d.join("run/encoder_epoch_0001.ckpt")
}

#[test]
fn generate_twice_gives_identical_corpora() {
    let tmp = TempDir::new().unwrap();
    ok(advmt(tmp.path(), &["generate", "--out", "a", "--seed", "4"]));
    ok(advmt(tmp.path(), &["generate", "--out", "b", "--seed", "4"]));
    let a = tree_digests(&tmp.path().join("a"));
    assert_eq!(a.len(), 2 + 120);
    assert_eq!(a, tree_digests(&tmp.path().join("b")));
}

#[test]
fn missing_config_exits_2_with_usage() {
    let tmp = TempDir::new().unwrap();
    let out = advmt(tmp.path(), &["generate", "--config", "absent.json", "--out", "c"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent.json"));
    assert!(stderr(&out).contains("Usage: advmt generate"));
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn unknown_config_field_exits_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"frames": 80, "colour": "red"}"#).unwrap();
    let out = advmt(tmp.path(), &["generate", "--config", "bad.json", "--out", "c"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn failed_generation_removes_partial_outputs() {
    let tmp = TempDir::new().unwrap();
    let topo = r#"{"joint_names": ["root", "tip"], "parent": [null, 0]}"#;
    fs::write(tmp.path().join("topo.json"), topo).unwrap();
    fs::write(tmp.path().join("gen.json"), r#"{"topology": "topo.json"}"#).unwrap();
    let out = advmt(tmp.path(), &["generate", "--config", "gen.json", "--out", "c"]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("rest offsets"), "{}", stderr(&out));
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn seed_priority_is_flag_then_config_then_env() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("seeded.json"), r#"{"seed": 3, "frames": 2}"#).unwrap();
    fs::write(d.join("plain.json"), r#"{"frames": 2}"#).unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_advmt"));
        cmd.current_dir(d).env_remove("ADVMT_SEED").args(args);
        if let Some(v) = env {
            cmd.env("ADVMT_SEED", v);
        }
        ok(cmd.output().unwrap());
    };
    run(&["generate", "--config", "seeded.json", "--seed", "5", "--out", "flag"], Some("7"));
    run(&["generate", "--config", "seeded.json", "--out", "config"], Some("7"));
    run(&["generate", "--config", "plain.json", "--out", "env"], Some("7"));
    run(&["generate", "--config", "plain.json", "--out", "default"], None);
    for (dir, seed) in [("flag", 5), ("config", 3), ("env", 7), ("default", 0)] {
        let m = manifest(&d.join(dir));
        assert_eq!(m["seed"], seed, "{dir}");
        assert_eq!(m["seed_source"], dir);
        assert_eq!(m["config"]["seed"], seed);
    }
}

#[test]
fn manifest_reruns_reproduce_the_corpus() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "a", "--seed", "9", "--frames", "80"]));
    let m = manifest(&d.join("a"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["command"], "generate");
    assert!(m["started_at"].is_string() && m["finished_at"].is_string());
    assert!(m["build"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let recorded: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    assert!(recorded.contains(&"corpus.json") && recorded.contains(&"test/seq_0119.csv"));
    ok(advmt(d, &["generate", "--config", "a/run_manifest.json", "--out", "b"]));
    assert_eq!(tree_digests(&d.join("a")), tree_digests(&d.join("b")));
    let out = advmt(d, &["train", "--config", "a/run_manifest.json", "--data", "a", "--out", "t"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn validate_accepts_generated_corpus_and_rejects_a_stretched_bone() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus", "--frames", "10"]));
    let out = ok(advmt(d, &["validate", "--data", "corpus"]));
    assert!(stdout(&out).contains("120 sequences"));

    let csv = fs::read_to_string(d.join("corpus/test/seq_0100.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_owned).collect();
    let mut fields: Vec<f64> = lines[3].split(',').map(|f| f.parse().unwrap()).collect();
    fields[3 * 4 + 2] += 5.0;
    lines[3] = fields.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    fs::write(d.join("stretched.csv"), lines.join("\n") + "\n").unwrap();
    let out = advmt(d, &["validate", "--data", "stretched.csv"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("above the tolerance"));
}

#[test]
fn validate_reports_parse_errors_with_coordinates() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus", "--frames", "4"]));
    let csv = fs::read_to_string(d.join("corpus/train/seq_0000.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_owned).collect();
    let mut fields: Vec<String> = lines[3].split(',').map(str::to_owned).collect();
    fields[6] = "NaN".into();
    lines[3] = fields.join(",");
    fs::write(d.join("nan.csv"), lines.join("\n") + "\n").unwrap();
    let out = advmt(d, &["validate", "--data", "nan.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("row 3, column 7"), "{}", stderr(&out));
}

#[test]
fn one_epoch_train_writes_one_log_row_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let ckpt = trained(&tmp);
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("epoch,mpjpe,bone,adversarial,total,disc_loss,val_mpjpe_160ms"));
    assert!(d.join("run/discriminator_epoch_0001.ckpt").exists());
    assert!(!d.join("run/.advmt.lock").exists());

    ok(advmt(d, &["train", "--config", "small.json", "--data", "corpus", "--out", "again"]));
    assert_eq!(digest(&ckpt), digest(&d.join("again/encoder_epoch_0001.ckpt")));
    let m = manifest(&d.join("run"));
    let listed = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["path"] == "encoder_epoch_0001.ckpt")
        .unwrap();
    assert_eq!(listed["sha256"], digest(&ckpt).as_str());
    assert_eq!(m["inputs"][0]["sha256"], digest(&d.join("corpus/corpus.json")).as_str());
}

#[test]
fn lambda_flags_reach_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus", "--frames", "80"]));
    fs::write(d.join("small.json"), SMALL_TRAIN).unwrap();
    let args = [
        "train", "--config", "small.json", "--data", "corpus", "--out", "run", "--lambda-bone", "0.25",
        "--lambda-adv", "0",
    ];
    ok(advmt(d, &args));
    let m = manifest(&d.join("run"));
    assert_eq!(m["config"]["loss_weights"]["lambda_bone"], 0.25);
    assert_eq!(m["config"]["loss_weights"]["lambda_adv"], 0.0);
}

#[test]
fn divergence_exits_3_naming_epoch_and_step() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus", "--frames", "80"]));
    fs::write(
        d.join("hot.json"),
        r#"{"epochs": 1, "windows_per_epoch": 16, "validation_windows": 0, "lr_encoder": 1e300, "grad_clip_norm": 1e300}"#,
    )
    .unwrap();
    let out = advmt(d, &["train", "--config", "hot.json", "--data", "corpus", "--out", "run"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch 1, step 2"), "{}", stderr(&out));
    let m = manifest(&d.join("run"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("diverged"));
}

#[test]
fn bad_train_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus", "--frames", "80"]));
    let out = advmt(d, &["train", "--data", "corpus", "--out", "run", "--epochs", "0"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("run").exists());
}

#[test]
fn locked_run_directory_is_refused() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("busy")).unwrap();
    fs::write(d.join("busy/.advmt.lock"), "1\n").unwrap();
    let out = advmt(d, &["generate", "--out", "busy", "--frames", "2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("locked"));
    assert_eq!(fs::read_dir(d.join("busy")).unwrap().count(), 1);
}

#[test]
fn default_run_directory_names_timestamp_and_seed() {
    let tmp = TempDir::new().unwrap();
    ok(advmt(tmp.path(), &["generate", "--seed", "12", "--frames", "2"]));
    let runs: Vec<String> = fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].ends_with("-seed12-generate"), "{}", runs[0]);
    assert!(runs[0].starts_with("20"));
}

#[test]
fn eval_writes_six_horizons_and_the_report_parses_back() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let ckpt = trained(&tmp);
    let args = [
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", "corpus", "--out", "ev", "--horizons",
        "160,400,560,720,880,1000", "--svg",
    ];
    ok(advmt(d, &args));
    let text = fs::read_to_string(d.join("ev/report.csv")).unwrap();
    let report = EvalReport::from_csv(&text).unwrap();
    assert_eq!(report.horizons_ms, vec![160, 400, 560, 720, 880, 1000]);
    assert_eq!(report.systems(), vec!["model", "zero_velocity"]);
    assert_eq!(report.to_csv(), text);
    assert_eq!(report.meta.checkpoint.as_deref(), Some(digest(&ckpt).as_str()));
    assert!(d.join("ev/strips/walk.svg").exists());
    let speed = fs::read_to_string(d.join("ev/speed.csv")).unwrap();
    assert_eq!(speed.lines().count(), 3);
}

#[test]
fn eval_ablation_and_baseline_only() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let ckpt = trained(&tmp);
    let variant = format!("{},mpjpe_only", ckpt.display());
    let args = [
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--label", "full", "--ablate", &variant, "--data", "corpus",
        "--out", "ab",
    ];
    let out = ok(advmt(d, &args));
    let csv = fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants.iter().collect::<std::collections::BTreeSet<_>>().len(), 3);
    assert_eq!(variants.first(), Some(&"zero_velocity"));
    assert!(stdout(&out).contains("mpjpe_only"));

    ok(advmt(d, &["eval", "--baseline-only", "--data", "corpus", "--out", "bo"]));
    let base = EvalReport::read(&d.join("bo/report.csv")).unwrap();
    let with_model = EvalReport::read(&d.join("ab/report.csv")).unwrap();
    assert_eq!(base.systems(), vec!["zero_velocity"]);
    for row in &base.rows {
        let other = with_model.get("zero_velocity", &row.action, row.horizon_ms).unwrap();
        assert_eq!(other.to_bits(), row.mpjpe_mm.to_bits());
    }
}

#[test]
fn eval_missing_files_exit_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(advmt(d, &["generate", "--out", "corpus", "--frames", "80"]));
    let out = advmt(d, &["eval", "--checkpoint", "none.ckpt", "--data", "corpus", "--out", "ev"]);
    assert_eq!(code(&out), 2);
    let out = advmt(d, &["eval", "--baseline-only", "--data", "nowhere", "--out", "ev"]);
    assert_eq!(code(&out), 2);
    let out = advmt(d, &["eval", "--data", "corpus", "--out", "ev"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("ev").exists());
}

#[test]
fn predict_continues_a_csv() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let ckpt = trained(&tmp);
    let input = d.join("corpus/test/seq_0100.csv");
    let before = digest(&input);
    let args = [
        "predict", "--checkpoint", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(), "--frames", "7",
        "--out", "pred.csv",
    ];
    ok(advmt(d, &args));
    let pred = fs::read_to_string(d.join("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 1 + 7);
    assert!(pred.starts_with("# fps=25 joints=pelvis,"));
    assert_eq!(before, digest(&input));

    let clobber = [
        "predict", "--checkpoint", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(), "--out",
        input.to_str().unwrap(),
    ];
    assert_eq!(code(&advmt(d, &clobber)), 2);
    assert_eq!(before, digest(&input));
}

#[test]
fn gradcheck_passes_and_names_a_corrupted_rule() {
    let tmp = TempDir::new().unwrap();
    let out = ok(advmt(tmp.path(), &["gradcheck"]));
    let text = stdout(&out);
    for name in ["matmul", "layer_norm", "softmax", "total_loss_predict_next"] {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        assert!(line.ends_with("pass"), "{line}");
    }

    let out = advmt(tmp.path(), &["gradcheck", "--instances", "2", "--corrupt-op", "softmax"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("softmax"));
    assert!(!stderr(&out).contains("matmul"));

    let out = advmt(tmp.path(), &["gradcheck", "--corrupt-op", "nosuch"]);
    assert_eq!(code(&out), 2);
}
