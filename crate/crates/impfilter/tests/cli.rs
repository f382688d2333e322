use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use impfilter::config::ExperimentSpec;
use impfilter::idx::{load_idx, write_images, write_labels, IdxImages};
use impfilter::metrics::{read_rows, MetricsRow, SummaryRow};
use impfilter::report::parse_report;
use impfilter_core::simulator::{run, Scheme};

const SMALL: &str = r#"
[data]
source = "synthetic_gaussians"
means = [[0.0, 0.0], [3.0, 3.0]]
scales = [1.0, 1.0]
weights = [0.5, 0.5]
count = 2000
seed = 1

[sim]
nodes = 2
samples_per_interval = 50
rounds = 3

[filter]
buffer_size = 16
neighbors = 4

[experiment]
schemes = ["importance", "uniform"]
rates = [0.2]
seeds = [0]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impfilter"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn run_writes_parseable_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let (code, _, err) = run_cli(&["run", cfg.to_str().unwrap(), "--seeds", "20", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");

    let rows: Vec<MetricsRow> = read_rows(&out.join("metrics_importance_r0.2_s19.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].round, 3);
    assert_eq!(rows[0].packets, 20);

    let summary: Vec<SummaryRow> = read_rows(&out.join("summary.csv")).unwrap();
    assert!(summary.iter().all(|r| r.n == 20));
    assert_eq!(summary.len(), 2 * 3 * 6);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let (code, _, err) = run_cli(&[
        "run",
        cfg.to_str().unwrap(),
        "--rate",
        "0.3",
        "--rounds",
        "2",
        "--scheme",
        "uniform",
        "--set",
        "sim.nodes=3",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<MetricsRow> = read_rows(&out.join("metrics_uniform_r0.3_s0.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].packets, 3 * 15);
    assert!(!out.join("metrics_importance_r0.3_s0.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &format!("{SMALL}\n[output]\ndir = \"x\"\nverbose = true\n"));
    let (code, _, err) = run_cli(&["run", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("verbose") && err.contains("line"), "{err}");

    let (code, _, _) = run_cli(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code, 3);

    let cfg = write_config(dir.path(), SMALL);
    let (code, _, err) = run_cli(&["run", cfg.to_str().unwrap(), "--set", "filter.neighbors=16"]);
    assert_eq!(code, 1, "{err}");

    // Bernoulli draws leave the packet counts of the two schemes unequal.
    let out = dir.path().join("b");
    let (code, _, err) = run_cli(&[
        "run",
        cfg.to_str().unwrap(),
        "--transmission",
        "bernoulli",
        "--set",
        "experiment.fairness_tolerance=0.0001",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("packet totals"), "{err}");
    assert!(out.join("summary.csv").exists());

    // Output directory blocked by a regular file.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let (code, _, _) = run_cli(&["run", cfg.to_str().unwrap(), "--output-dir", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn sweep_table_and_fit_notes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("s");
    let (code, stdout, err) = run_cli(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--rates",
        "0.1,0.2,0.4,0.6",
        "--scheme",
        "importance",
        "--scheme",
        "uniform",
        "--scheme",
        "genie",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let cells: Vec<impfilter::experiment::SweepCell> = read_rows(&out.join("sweep.csv")).unwrap();
    assert_eq!(cells.len(), 12);
    assert!(stdout.contains("fit importance"));
    assert!(out.join("scaling_fit.csv").exists());

    let single = dir.path().join("t");
    let (code, stdout, _) =
        run_cli(&["sweep", cfg.to_str().unwrap(), "--rates", "0.2", "--output-dir", single.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("skipped"), "{stdout}");
    assert!(!single.join("scaling_fit.csv").exists());
}

#[test]
fn diagnose_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("d");
    for (field, expect_full) in [("constant", true), ("smooth", false), ("model", false)] {
        let (code, stdout, err) =
            run_cli(&["diagnose", cfg.to_str().unwrap(), "--field", field, "--output-dir", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{field}: {err}");
        let report = parse_report(&fs::read_to_string(out.join("bounds.txt")).unwrap()).unwrap();
        assert_eq!(parse_report(&stdout).unwrap(), report);
        assert!((0.0..=1.0).contains(&report.coverage_fraction));
        if expect_full {
            assert_eq!(report.coverage_fraction, 1.0);
        }
    }
    let (code, _, _) = run_cli(&["diagnose", cfg.to_str().unwrap(), "--set", "filter.neighbors=16"]);
    assert_eq!(code, 1);
}

#[test]
fn matched_seeds_share_streams() {
    let spec = ExperimentSpec::from_toml_str(SMALL).unwrap();
    let data = spec.load_dataset().unwrap();
    let a = run(&spec.sim_config(&data, Scheme::Importance, 0.2, 4).unwrap(), &data).unwrap();
    let b = run(&spec.sim_config(&data, Scheme::Uniform, 0.2, 4).unwrap(), &data).unwrap();
    assert_eq!(a.split, b.split);
    let c = run(&spec.sim_config(&data, Scheme::Genie, 0.2, 4).unwrap(), &data).unwrap();
    assert_eq!(b.split, c.split);
    // Neither baseline refreshes its buffer, so both still hold each node's
    // first observations.
    for (x, y) in b.nodes.iter().zip(&c.nodes) {
        assert_eq!(x.buffer(), y.buffer());
    }
}

#[test]
fn csv_and_idx_sources() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("f1,f2,y\n");
    for i in 0..400 {
        let c = i % 2;
        csv += &format!("{},{},{}\n", c as f64 * 3.0 + (i % 7) as f64 * 0.1, (i % 5) as f64, c);
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let body = SMALL.replace(
        "source = \"synthetic_gaussians\"\nmeans = [[0.0, 0.0], [3.0, 3.0]]\nscales = [1.0, 1.0]\nweights = [0.5, 0.5]\ncount = 2000\nseed = 1",
        "source = \"csv\"\npath = \"d.csv\"\nlabel_column = \"y\"",
    );
    let cfg = write_config(dir.path(), &body);
    let spec = ExperimentSpec::load(&cfg, &[]).unwrap();
    let data = spec.load_dataset().unwrap();
    assert_eq!((data.len(), data.dim()), (400, 2));
    assert!(data.is_normalized());

    let images = IdxImages {
        count: 3,
        rows: 2,
        cols: 3,
        pixels: (0..18).map(|p| (p * 14) as u8).collect(),
    };
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    write_images(&ip, &images).unwrap();
    write_labels(&lp, &[2, 0, 9]).unwrap();
    let d = load_idx(&ip, &lp).unwrap();
    let expected: Vec<f64> = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    assert_eq!(d.features().as_slice(), expected.as_slice());
    assert_eq!(d.class_count(), 10);

    let missing = SMALL.replace("source = \"synthetic_gaussians\"", "source = \"idx\"\nimages = \"nope\"\nlabels = \"nope2\"");
    let missing = missing
        .lines()
        .filter(|l| !["means", "scales", "weights", "count", "seed"].iter().any(|k| l.starts_with(k)))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = write_config(dir.path(), &missing);
    let err = ExperimentSpec::load(&cfg, &[]).unwrap_err().to_string();
    assert!(err.contains("does not exist"), "{err}");
}
