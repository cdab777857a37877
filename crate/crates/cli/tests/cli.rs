use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[dataset]
shape = [16, 16, 16]
n_regions = 4
n_networks = 2
n_hc_train = 16
n_hc_test = 8
age_min = 20.0
age_max = 80.0
hc_jitter = 11.0
network_spread = 20.0
region_jitter = 1.0

[dataset.intensity]
base = 2.0
decay_rate = 0.015
noise_sigma = 0.05

[[dataset.diseases]]
name = "pd"
n_subjects = 6
offset_years = 8.0
regions = [1, 2]

[model]
embed_dim = 8

[teacher]
epochs = 3

[student]
epochs = 3
"#;

fn reba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reba"))
        .args(args)
        .env("REBA_OUTPUT_ROOT", dir)
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    (dir, cfg.display().to_string())
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stages_run_in_order_and_report() {
    let (dir, cfg) = setup();
    let d = dir.path();
    for cmd in ["gen-data", "train-teacher", "build-soft-labels", "train-student", "evaluate"] {
        let o = reba(d, &[cmd, "-q", "--config", &cfg]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let run = d.join("default");
    for f in [
        "data/manifest.csv",
        "teacher/teacher.ckpt",
        "labels/rho.json",
        "labels/soft_labels.csv",
        "student/student.ckpt",
        "student/predictions_raw.csv",
        "eval/metrics.json",
        "eval/hcs_per_region.csv",
        "eval/ndc_per_subject.csv",
        "eval/histograms.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let o = reba(d, &["report", "--config", &cfg]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success());
    assert!(out.contains("overall HCS") && out.contains("pd-hc"), "{out}");

    let o = reba(d, &["train-teacher", "-q", "--cached", "--config", &cfg]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("up to date"));
}

#[test]
fn missing_predecessor_exits_3_and_names_the_command() {
    let (dir, cfg) = setup();
    let o = reba(dir.path(), &["build-soft-labels", "-q", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("reba gen-data"), "{}", stderr(&o));
}

#[test]
fn invalid_offset_exits_2_naming_the_disease() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("regions = [1, 2]", "regions = [1, 9]")).unwrap();
    let o = reba(dir.path(), &["gen-data", "-q", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pd"), "{}", stderr(&o));

    let o = reba(dir.path(), &["gen-data", "--alpha", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_needs_force_and_regenerates_identically() {
    let (dir, cfg) = setup();
    let d = dir.path();
    assert!(reba(d, &["gen-data", "-q", "--config", &cfg]).status.success());
    let manifest = d.join("default/data/manifest.csv");
    let first = fs::read(&manifest).unwrap();
    let o = reba(d, &["gen-data", "-q", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    assert!(reba(d, &["gen-data", "-q", "--force", "--config", &cfg]).status.success());
    assert_eq!(fs::read(&manifest).unwrap(), first);
}

#[test]
fn tampered_soft_labels_are_rejected() {
    let (dir, cfg) = setup();
    let d = dir.path();
    for cmd in ["gen-data", "train-teacher", "build-soft-labels"] {
        assert!(reba(d, &[cmd, "-q", "--config", &cfg]).status.success());
    }
    let labels = d.join("default/labels/soft_labels.csv");
    let text = fs::read_to_string(&labels).unwrap().replacen(',', ",1", 1);
    fs::write(&labels, text).unwrap();
    let o = reba(d, &["train-student", "-q", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hash mismatch"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_file_and_runs_are_deterministic() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let a = reba(d, &["run", "-q", "--config", &cfg, "--zeta", "0", "--out", "a"]);
    let b = reba(d, &["run", "-q", "--config", &cfg, "--zeta", "0", "--out", "b"]);
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    let ma = fs::read(d.join("a/eval/metrics.json")).unwrap();
    assert_eq!(ma, fs::read(d.join("b/eval/metrics.json")).unwrap());
    let stage = fs::read_to_string(d.join("a/student/stage.json")).unwrap();
    let full = reba(d, &["run", "-q", "--config", &cfg, "--out", "c"]);
    assert!(full.status.success());
    assert_ne!(stage, fs::read_to_string(d.join("c/student/stage.json")).unwrap());
}

#[test]
fn ablation_writes_a_comparison_table() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let o = reba(d, &["ablation", "-q", "--config", &cfg, "--seeds", "0", "--rows", "3,6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("no-student") && out.contains("full"), "{out}");
    let summary = fs::read_to_string(d.join("default/ablation/ablation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let o = reba(d, &["ablation", "-q", "--config", &cfg, "--rows", "9"]);
    assert_eq!(o.status.code(), Some(2));
}
