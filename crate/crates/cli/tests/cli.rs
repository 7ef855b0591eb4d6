//! End-to-end tests of the `jkoflow` binary: command wiring, exit codes,
//! output artifacts, and byte-level reproducibility in sequential mode.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const ENV_KEYS: [&str; 6] = [
    "JKOFLOW_ALPHA",
    "JKOFLOW_STAGES",
    "JKOFLOW_WIDTH",
    "JKOFLOW_NT",
    "JKOFLOW_SEED",
    "JKOFLOW_SEQUENTIAL",
];

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jkoflow"));
    for k in ENV_KEYS {
        cmd.env_remove(k);
    }
    cmd
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
alpha = 1.0
stages = 2

[dataset]
kind = "moons"
n_train = 256
n_eval = 256
seed = 3

[net]
width = 3

[trainer]
batch_size = 64
n_iters = 25
nt = 4
seed = 5
decay_every = 10

[integrator]
nt_eval = 16

[evaluate]
n_generate = 128
n_perms = 25
"#,
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// One shared trained checkpoint for the read-only commands.
fn shared_run() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static RUN: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = dir.path().join("train");
        run_ok(bin()
            .args(["train", "--sequential"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out));
        let ckpt = out.join("checkpoint");
        (dir, cfg, ckpt)
    })
}

#[test]
fn train_writes_checkpoint_curves_and_manifest() {
    let (_dir, _cfg, ckpt) = shared_run();
    let out = ckpt.parent().unwrap();
    assert!(ckpt.join("manifest.json").exists());
    assert!(ckpt.join("stage_01.bin").exists());
    assert!(ckpt.join("stage_02.bin").exists());
    assert!(out.join("stage_mmd.csv").exists());
    assert!(out.join("manifest.json").exists());

    let loss = std::fs::read_to_string(out.join("loss_stage_01.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("step,kinetic,nll,total"));
    assert_eq!(lines.count(), 25, "one row per optimizer step");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report_stage_01.json")).unwrap())
            .unwrap();
    assert_eq!(report["steps"], 25);
    assert!(report["final_loss"]["total"].is_number());

    // metric CSV floats re-parse and re-format to the identical text
    let mmd_csv = std::fs::read_to_string(out.join("stage_mmd.csv")).unwrap();
    for line in mmd_csv.lines().skip(1) {
        for field in line.split(',').skip(1) {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().unwrap();
            assert_eq!(jkoflow::datasets::format_f64(v), field);
        }
    }
}

#[test]
fn single_shot_run_is_labeled() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ss");
    run_ok(bin()
        .args(["train", "--sequential", "--stages", "1"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("single_shot"), "{manifest}");
    assert!(!out.join("loss_stage_02.csv").exists());
}

#[test]
fn sequential_rerun_reproduces_metric_csvs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&out_a, &out_b] {
        run_ok(bin()
            .args(["train", "--sequential"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out));
    }
    for name in ["loss_stage_01.csv", "loss_stage_02.csv", "stage_mmd.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn missing_dataset_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "alpha = 1.0\n").unwrap();
    let out = bin()
        .args(["train"])
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dataset.kind"), "{stderr}");
}

#[test]
fn config_errors_list_every_violated_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"
alpha = -3.0
stages = 0

[dataset]
kind = "moons"

[trainer]
lr = 0.0
batch_size = 0
"#,
    )
    .unwrap();
    let out = bin()
        .args(["train"])
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for field in ["alpha", "stages", "trainer.lr", "trainer.batch_size"] {
        assert!(stderr.contains(field), "missing {field} in: {stderr}");
    }
}

#[test]
fn generate_writes_samples_with_provenance() {
    let (dir, cfg, ckpt) = shared_run();
    let out = dir.path().join("gen");
    run_ok(bin()
        .args(["generate", "--sequential", "--n", "64"])
        .arg("--config")
        .arg(cfg)
        .arg("--checkpoint")
        .arg(ckpt)
        .arg("--out")
        .arg(&out));
    let samples = jkoflow::datasets::SampleMatrix::read_csv(&out.join("samples.csv")).unwrap();
    assert_eq!((samples.n(), samples.d()), (64, 2));
    assert!(out.join("samples.csv.provenance.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let fake = dir.path().join("not_a_checkpoint");
    std::fs::create_dir_all(&fake).unwrap();
    let out = bin()
        .args(["generate"])
        .arg("--config")
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&fake)
        .arg("--out")
        .arg(dir.path().join("g"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn density_grid_writes_csv_and_image() {
    let (dir, cfg, ckpt) = shared_run();
    let out = dir.path().join("grid");
    run_ok(bin()
        .args(["density-grid", "--sequential", "--resolution", "31", "--bounds", "-4,4", "--image"])
        .arg("--config")
        .arg(cfg)
        .arg("--checkpoint")
        .arg(ckpt)
        .arg("--out")
        .arg(&out));
    let csv = std::fs::read_to_string(out.join("density.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x1,x2,logp"));
    assert_eq!(csv.lines().count(), 31 * 31 + 1);
    let ppm = std::fs::read(out.join("density.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n31 31\n255\n"));
    assert_eq!(ppm.len(), 13 + 31 * 31 * 3);
}

#[test]
fn evaluate_emits_metrics_and_trajectory() {
    let (dir, cfg, ckpt) = shared_run();
    let out = dir.path().join("eval");
    run_ok(bin()
        .args(["evaluate", "--sequential"])
        .arg("--config")
        .arg(cfg)
        .arg("--checkpoint")
        .arg(ckpt)
        .arg("--out")
        .arg(&out));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["mmd2"]["value"].is_number());
    assert_eq!(metrics["mmd2"]["n"], 128);
    assert!(metrics["noise_floor_95"].is_number());
    let traj = std::fs::read_to_string(out.join("mmd_trajectory.csv")).unwrap();
    // stages_used = 0, 1, 2 for a two-stage checkpoint
    assert_eq!(traj.lines().count(), 1 + 3);
}

#[test]
fn sweep_alpha_single_value_collapses_to_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("sweep");
    run_ok(bin()
        .args(["sweep-alpha", "--sequential", "--alphas", "1"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3, "header + two cells:\n{summary}");
    assert!(lines[1].contains("single_shot"));
    assert!(lines[2].contains("jko"));
    assert!(out.join("alpha_1_k1").join("checkpoint").exists());
    assert!(out.join("alpha_1_k2").join("checkpoint").exists());
}

#[test]
fn density_grid_of_identity_stack_peaks_at_the_origin() {
    // a stack of all-zero stages is the identity flow: the grid must report
    // the reference Gaussian, maximal at the center cell
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let net = jkoflow::params::NetConfig::new(2, 3);
    let stack = jkoflow::jko::StageStack {
        net,
        stages: vec![jkoflow::params::ParamVector::zeros(net)],
        metrics: Vec::new(),
        stage_curves: Vec::new(),
        stage_val_curves: Vec::new(),
        config: jkoflow::jko::JkoConfig {
            alpha: 1.0,
            stages: 1,
            train: jkoflow::trainer::TrainConfig {
                alpha: 1.0,
                net,
                ..jkoflow::trainer::TrainConfig::default()
            },
            integ_eval: jkoflow::integrator::IntegratorConfig::forward(16),
            warm_start: false,
        },
        incomplete: None,
    };
    let ckpt = dir.path().join("zero_ckpt");
    jkoflow::jko::save_checkpoint(&stack, &ckpt).unwrap();
    let out = dir.path().join("zgrid");
    run_ok(bin()
        .args(["density-grid", "--sequential", "--resolution", "61", "--bounds", "-3,3"])
        .arg("--config")
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&out));
    let csv = std::fs::read_to_string(out.join("density.csv")).unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        if f[2] > best.0 {
            best = (f[2], f[0], f[1]);
        }
    }
    assert_eq!((best.1, best.2), (0.0, 0.0), "max logp away from center");
    let expect = -(2.0 * std::f64::consts::PI).ln();
    assert!((best.0 - expect).abs() <= 1e-9, "center logp {}", best.0);
}

#[test]
fn sweep_width_records_param_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("wsweep");
    run_ok(bin()
        .args(["sweep-width", "--sequential", "--widths", "3", "--stages", "1"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 2, "{summary}");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[1], "3", "width column");
    assert_eq!(fields[4], "40", "param count column");
}

#[test]
fn tabular_pipeline_end_to_end() {
    // 3-dimensional tabular data: train, generate, and verify that density
    // grids (2D only) are rejected for this checkpoint
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.csv");
    let mut rows = String::from("a,b,c\n");
    for i in 0..120 {
        let t = i as f64 * 0.21;
        rows.push_str(&format!("{},{},{}\n", t.sin() + 0.01 * t, t.cos() * 0.5, 0.3 * t.sin() * t.cos() + t * 0.01));
    }
    std::fs::write(&data_path, rows).unwrap();
    let cfg_path = dir.path().join("tab.toml");
    std::fs::write(
        &cfg_path,
        format!(
            r#"
alpha = 1.0
stages = 1

[dataset]
kind = "tabular"
path = "{}"
seed = 3

[net]
d = 3
width = 3

[trainer]
batch_size = 32
n_iters = 15
nt = 4
seed = 5
decay_every = 10

[integrator]
nt_eval = 8

[evaluate]
n_generate = 32
n_perms = 10
"#,
            data_path.display()
        ),
    )
    .unwrap();
    let train_out = dir.path().join("train");
    run_ok(bin()
        .args(["train", "--sequential"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&train_out));
    let ckpt = train_out.join("checkpoint");
    let gen_out = dir.path().join("gen");
    run_ok(bin()
        .args(["generate", "--sequential", "--n", "32"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(&gen_out));
    let samples = jkoflow::datasets::SampleMatrix::read_csv(&gen_out.join("samples.csv")).unwrap();
    assert_eq!((samples.n(), samples.d()), (32, 3));

    let out = bin()
        .args(["density-grid"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(dir.path().join("grid"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2D only"));
}

#[test]
fn env_overrides_sit_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    // env sets stages=1; flag raises alpha; both visible in the manifest
    let out = dir.path().join("env");
    let mut cmd = bin();
    cmd.env("JKOFLOW_STAGES", "1")
        .args(["train", "--sequential", "--alpha", "2.5"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out);
    run_ok(&mut cmd);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["config"]["stages"], 1);
    assert_eq!(v["config"]["alpha"], 2.5);
    assert!(!out.join("loss_stage_02.csv").exists());
}
