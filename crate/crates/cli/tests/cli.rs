use std::path::Path;
use std::process::{Command, Output};

use hbf_cli::{read_outputs, ExperimentConfig, Harness, HarnessError};

const TINY: &str = r#"
split = 0.5
snr_grid_db = [0.0, 10.0]
methods = ["pga", "mo_altmin", "pe_altmin", "unfolded_pga", "unfolded_altmin"]
audit_stride = 2

[dims]
M = 4
K = 2
N = 2
F = 2
noise_var = 1.0

[dataset]
count = 12
seed = 5

[method_params]
pga_iterations = 6
pga_tuning_channels = 3
altmin_rounds = 4
unfolded_depth = 3

[training]
epochs = 2
altmin_epochs = 1
batch_size = 3

[robust]
snr_db = 10.0
error_var_grid = [0.0, 0.1]
train_error_var = 0.1
"#;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(TINY).unwrap();
    cfg.output_dir = dir.display().to_string();
    cfg
}

fn hbf(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    Command::new(env!("CARGO_BIN_EXE_hbf"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir)
        .args(["--threads", "2"])
        .args(args)
        .output()
        .unwrap()
}

fn csv(dir: &Path, name: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(dir.join(name))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn binary_runs_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = hbf(dir.path(), &["all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let sweep = csv(dir.path(), "sweep.csv");
    assert_eq!(sweep[0].join(","), "method,snr_db,mean_rate,std_rate,n_channels,mean_wall_time_ms");
    // six methods (fully_digital included) at two SNRs
    assert_eq!(sweep.len(), 1 + 12);
    for row in &sweep[1..] {
        assert_eq!(row[4], "6");
        assert!(row[2].parse::<f64>().unwrap() > 0.0);
        assert_eq!(row[5], "0");
    }

    let conv = csv(dir.path(), "convergence.csv");
    assert_eq!(conv[0].join(","), "method,iteration,mean_rate");
    let iters = |m: &str| conv.iter().filter(|r| r[0] == m).count();
    assert_eq!(iters("pga"), 7);
    assert_eq!(iters("unfolded_pga"), 4);
    assert_eq!(iters("fully_digital"), 1);

    let robust = csv(dir.path(), "robust.csv");
    assert_eq!(robust[0].join(","), "method,error_var,mean_true_rate");
    assert!(robust.iter().any(|r| r[0] == "unfolded_pga_robust" && r[1] == "0.1"));

    let hist = csv(dir.path(), "train_history.csv");
    assert_eq!(hist[0].join(","), "schedule_id,epoch,loss");
    assert!(hist.iter().any(|r| r[0] == "unfolded_pga_snr10"));

    for cmd in ["gen", "train", "sweep", "convergence", "robust"] {
        let text = std::fs::read_to_string(dir.path().join(format!("manifest_{cmd}.toml"))).unwrap();
        assert!(text.contains("config_hash"), "{cmd}");
    }
    assert!(dir.path().join("schedules/unfolded_pga_snr0.toml").exists());
}

#[test]
fn library_pipeline_is_byte_reproducible() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let h = Harness::new(tiny(dir.path())).unwrap();
            h.gen().unwrap();
            h.train().unwrap();
            h.sweep().unwrap();
            h.convergence().unwrap();
            h.robust().unwrap();
            read_outputs(dir.path()).unwrap()
        })
        .collect();
    assert_eq!(runs[0].len(), 5);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn seed_flag_changes_the_dataset() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(hbf(a.path(), &["gen"]).status.success());
    assert!(hbf(b.path(), &["--seed", "6", "gen"]).status.success());
    let ra = std::fs::read(a.path().join("channels.bin")).unwrap();
    let rb = std::fs::read(b.path().join("channels.bin")).unwrap();
    assert_ne!(ra, rb);
}

#[test]
fn commands_fail_cleanly_without_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = hbf(dir.path(), &["sweep"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `gen` first"));

    assert!(hbf(dir.path(), &["gen"]).status.success());
    let out = hbf(dir.path(), &["sweep"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `train` first"));

    let h = Harness::new(tiny(dir.path())).unwrap();
    assert!(matches!(h.robust(), Err(HarnessError::MissingSchedule(_))));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "bogus_key = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hbf")).arg("--config").arg(&path).arg("gen").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    let mut cfg = tiny(dir.path());
    cfg.split = 0.0;
    let h = Harness::new(cfg).unwrap();
    h.gen().unwrap();
    assert!(matches!(h.train(), Err(HarnessError::Config(_))));

    let mut cfg = tiny(dir.path());
    cfg.dataset.count = 0;
    assert!(Harness::new(cfg).unwrap().gen().is_err());

    // dataset dimensions must match the config
    let mut cfg = tiny(dir.path());
    cfg.dims.m = 6;
    assert!(matches!(Harness::new(cfg).unwrap().load_dataset(), Err(HarnessError::Config(_))));
}
