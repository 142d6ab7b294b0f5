use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        format!(
            r#"seeds = [1, 2]
out_dir = "{}"

[dataset]
kind = "synthetic"
n_classes = 6
classes_per_task = 2
dim = 8
samples_per_class = 30
test_samples_per_class = 10

[train]
epochs_first_task = 2
epochs_later_tasks = 2

[method]
name = "adc"
iterations = 2
m = 20
"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn check_passes_every_self_test() {
    let out = adc(&["check"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("[PASS]")).count(),
        5,
        "{text}"
    );
}

#[test]
fn run_writes_reports_for_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = adc(&["run", "--config", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for seed in [1, 2] {
        let run = dir.path().join(format!("out/adc/seed_{seed}"));
        for f in [
            "run.csv",
            "drift.csv",
            "summary.csv",
            "train_log.csv",
            "config.toml",
        ] {
            assert!(run.join(f).is_file(), "missing {f}");
        }
        let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
        assert!(summary.lines().next().unwrap().contains("a_last"));
        // Ledger for 3 tasks of 2 classes at 2 iterations: (0 + 2 + 4) * 2.
        let report = adc_core::eval::read_report(&run).unwrap();
        assert_eq!(report.backward_passes, 12);
    }
}

#[test]
fn command_line_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("other");
    let out = adc(&[
        "run",
        "--config",
        &cfg,
        "--method",
        "sdc",
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("sdc/seed_7/summary.csv").is_file());
    assert!(!out_dir.join("sdc/seed_1").exists());
}

#[test]
fn sweep_emits_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = adc(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "iterations",
        "--values",
        "1,3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.path().join("out/sweep_iterations.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "axis,value,seeds,mean_a_last,mean_a_inc,backward_passes"
    );
    assert_eq!(lines.len(), 3);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = adc(&["run", "--method", "magic"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = adc(&[
        "sweep", "--config", &cfg, "--method", "ncm", "--axis", "alpha", "--values", "0.1",
    ]);
    assert!(!out.status.success());
}

#[test]
fn runs_on_a_csv_image_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..120 {
        let label = i % 4;
        let pixels: Vec<String> = (0..16)
            .map(|j| ((label * 60 + (i * 7 + j * 13) % 40) % 256).to_string())
            .collect();
        text.push_str(&format!("{label},{}\n", pixels.join(",")));
    }
    let data = dir.path().join("digits.csv");
    fs::write(&data, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = adc(&[
        "run",
        "--data",
        data.to_str().unwrap(),
        "--format",
        "csv",
        "--tasks",
        "2",
        "--method",
        "ncm",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("ncm/seed_1993/run.csv").is_file());
}

#[test]
fn shipped_configs_load() {
    use adc_core::experiment::ExperimentConfig;
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synthetic = ExperimentConfig::load(&root.join("synthetic.toml")).unwrap();
    let defaults = ExperimentConfig {
        seeds: vec![1993, 0, 1, 2, 3],
        oracle_eval: true,
        ..Default::default()
    };
    assert_eq!(synthetic.train, defaults.train);
    assert_eq!(synthetic.dataset, defaults.dataset);
    assert_eq!(synthetic.method, defaults.method);
    assert_eq!(synthetic.architecture(&[32]), defaults.architecture(&[32]));
    let mnist = ExperimentConfig::load(&root.join("mnist_idx.toml")).unwrap();
    assert_eq!(mnist.method.name(), "nme");
}
