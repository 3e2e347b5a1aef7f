use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
run.seed = 3
dataset.image_size = 16
dataset.num_images = 30
dataset.split = 20, 5, 5
model.base_channels = 4
model.depth = 1
train.epochs = 50
csghmc.lr0 = 0.000002
csghmc.cycle_length = 2
csghmc.epochs = 20
csghmc.burn_in_epochs = 4
csghmc.noise_start_epoch = 0
csghmc.samples = 8
shift.levels = 2, 4, 6, 8, 10, 12, 14
oracle.mode_runs = 2
";

fn uqshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqshift"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    uqshift(&args)
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    (dir, cfg, out)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn unknown_key_is_a_config_error() {
    let (_d, cfg, out) = setup("model.widht = 3\n");
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("widht"));
}

#[test]
fn unknown_method_is_a_config_error() {
    let (_d, cfg, out) = setup(TINY);
    assert_eq!(code(&run("train", &cfg, &out, &["--method", "swag"])), 1);
}

#[test]
fn missing_files_are_io_errors() {
    let (_d, cfg, out) = setup(TINY);
    let missing = cfg.with_file_name("nope.cfg");
    assert_eq!(code(&run("train", &missing, &out, &[])), 3);
    // No dataset generated yet.
    assert_eq!(code(&run("train", &cfg, &out, &["--method", "map"])), 3);
    // No checkpoints yet.
    ok(run("generate-data", &cfg, &out, &[]));
    assert_eq!(code(&run("evaluate", &cfg, &out, &["--method", "map"])), 3);
}

#[test]
fn oracle_passes_and_huge_steps_fail() {
    let (_d, cfg, out) = setup(TINY);
    ok(run("oracle", &cfg, &out, &[]));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("reports/oracle.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    let (_d2, cfg2, out2) = setup(&format!("{TINY}oracle.step_scale = 40\n"));
    let o = run("oracle", &cfg2, &out2, &[]);
    assert_eq!(code(&o), 2);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out2.join("reports/oracle.json")).unwrap()).unwrap();
    assert_eq!(report["moments"]["outcome"]["status"], "diverged");
}

fn loss_column(out: &Path, method: &str) -> Vec<f64> {
    fs::read_to_string(out.join("runs").join(method).join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn map_training_lowers_the_loss_and_evaluates_the_sweep() {
    let (_d, cfg, out) = setup(TINY);
    ok(run("generate-data", &cfg, &out, &[]));
    ok(run("train", &cfg, &out, &["--method", "map"]));
    let losses = loss_column(&out, "map");
    assert_eq!(losses.len(), 50);
    assert!(losses[49] < losses[0], "{losses:?}");

    ok(run("evaluate", &cfg, &out, &["--method", "map"]));
    let csv = fs::read_to_string(out.join("reports/map/metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("map,none,0.000000,"));
    for name in ["report.json", "reliability.json", "aggregates.csv", "kde_blur_14.csv", "entropy/blur_2/img_0000.bin"] {
        assert!(out.join("reports/map").join(name).exists(), "{name}");
    }

    // The clean row does not depend on the sweep.
    let (_d2, cfg2, _) = setup(&TINY.replace("shift.levels = 2, 4, 6, 8, 10, 12, 14", "shift.levels ="));
    ok(run("evaluate", &cfg2, &out, &["--method", "map"]));
    let clean = fs::read_to_string(out.join("reports/map/metrics.csv")).unwrap();
    let clean_rows: Vec<&str> = clean.lines().skip(1).collect();
    assert_eq!(clean_rows, vec![rows[0]]);

    // A single member cannot be compared with itself.
    assert_eq!(code(&run("diversity", &cfg, &out, &["--method", "map"])), 1);
}

#[test]
fn csghmc_writes_one_checkpoint_per_collected_cycle() {
    let (_d, cfg, out) = setup(TINY);
    ok(run("generate-data", &cfg, &out, &[]));
    ok(run("train", &cfg, &out, &["--method", "csghmc"]));
    let run_dir = out.join("runs/csghmc");
    let mut samples: Vec<String> = fs::read_dir(&run_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("sample_"))
        .collect();
    samples.sort();
    // 10 cycles, 2 of them burn-in.
    assert_eq!(samples.len(), 8);
    assert_eq!(samples[0], "sample_2.bin");
    let first: Vec<Vec<u8>> = samples.iter().map(|s| fs::read(run_dir.join(s)).unwrap()).collect();

    ok(run("train", &cfg, &out, &["--method", "csghmc"]));
    let second: Vec<Vec<u8>> = samples.iter().map(|s| fs::read(run_dir.join(s)).unwrap()).collect();
    assert_eq!(first, second);

    ok(run("diversity", &cfg, &out, &["--method", "csghmc"]));
    let csv = fs::read_to_string(out.join("reports/csghmc/diversity.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "member,2,3,4,5,6,7");
}

#[test]
fn seed_override_changes_the_provenance() {
    let (_d, cfg, out) = setup(TINY);
    ok(run("oracle", &cfg, &out, &["--seed", "11"]));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("reports/oracle.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["run_seed"], 11);
    assert!(report["provenance"]["config"].as_str().unwrap().contains("run.seed = 11"));
}

#[test]
fn thread_cap_must_be_positive() {
    let (_d, cfg, out) = setup(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_uqshift"))
        .args(["oracle", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("UQSHIFT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
