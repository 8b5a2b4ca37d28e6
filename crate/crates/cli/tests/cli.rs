use std::path::Path;
use std::process::{Command, Output};

fn histmatch(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histmatch"))
        .args(args)
        .current_dir(dir)
        .env_remove("HISTMATCH_OUTPUT")
        .env_remove("HISTMATCH_THREADS")
        .output()
        .expect("spawn histmatch")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const TOY: &str = "[model]\nkind = \"toy\"\n[smc]\nparticles = 400\ntraining = 30\nmax_waves = 3\n";

#[test]
fn run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "toy.toml", TOY);
    for out in ["a", "b"] {
        let o = histmatch(&["run", "--config", "toy.toml", "--output", out, "--seed", "5"], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for w in 0..=3 {
        let file = format!("wave_{w:03}/summary.json");
        let a = std::fs::read(tmp.path().join("a").join(&file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let stdout = String::from_utf8_lossy(&histmatch(&["run", "--config", "toy.toml", "--output", "c"], tmp.path()).stdout).to_string();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("wave")).count(), 4);
}

#[test]
fn output_env_and_default_dir() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "toy.toml", TOY);
    let o = Command::new(env!("CARGO_BIN_EXE_histmatch"))
        .args(["run", "--config", "toy.toml", "--max-waves", "1"])
        .current_dir(tmp.path())
        .env("HISTMATCH_OUTPUT", "from_env")
        .env("HISTMATCH_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("from_env/chain.json").exists());
    let o = histmatch(&["run", "--config", "toy.toml", "--max-waves", "1"], tmp.path());
    assert!(o.status.success());
    assert!(tmp.path().join("runs/toy/run.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "none.toml", "[smc]\nparticles = 100\n");
    let o = histmatch(&["run", "--config", "none.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model"));

    write(tmp.path(), "typo.toml", "[model]\nkind = \"toy\"\n[smc]\nparticels = 100\n");
    let o = histmatch(&["run", "--config", "typo.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("particels"));

    let o = histmatch(&["run", "--config", "missing.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = histmatch(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_waves_writes_prior_only() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "toy.toml", TOY);
    let o = histmatch(&["run", "--config", "toy.toml", "--max-waves", "0", "--output", "r"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("r/wave_000/particles.csv").exists());
    assert!(!tmp.path().join("r/wave_001").exists());
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("r/run.json")).unwrap()).unwrap();
    assert_eq!(run["waves"], 0);
    assert_eq!(run["simulations"], 30);
}

#[test]
fn report_merges_runs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "toy.toml", TOY);
    for (out, seed) in [("x/toy", "1"), ("y/toy", "2")] {
        assert!(histmatch(&["run", "--config", "toy.toml", "--output", out, "--seed", seed], tmp.path()).status.success());
    }
    let o = histmatch(&["report", "x/toy", "y/toy", "--out", "rep"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(tmp.path().join("rep/acceptance_trace.csv")).unwrap();
    // header plus waves 1..=3 of each run
    assert_eq!(trace.lines().count(), 1 + 2 * 3);
    let ids: std::collections::BTreeSet<&str> = trace.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 2);
    let quantiles = std::fs::read_to_string(tmp.path().join("rep/output_quantiles.csv")).unwrap();
    assert_eq!(quantiles.lines().count(), 1 + 2 * 4);
    for w in 0..=3 {
        assert!(tmp.path().join(format!("rep/bivariate_wave_{w}.csv")).exists());
    }
}

#[test]
fn oracle_then_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "o.toml",
        "[model]\nkind = \"toy\"\n[oracle]\npoints = 4096\ntraining = 30\nwaves = 2\n[rejection]\nsamples = 200\n",
    );
    let o = histmatch(&["oracle", "--config", "o.toml", "--output", "out"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let survivors = std::fs::read_to_string(tmp.path().join("out/oracle/wave_002/particles.csv")).unwrap();
    assert_eq!(survivors.lines().count(), 1 + 1024);
    let o = histmatch(&["baseline", "rejection", "--config", "o.toml", "--output", "out"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let samples = std::fs::read_to_string(tmp.path().join("out/baseline_rejection/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 201);
}

#[test]
fn baseline_without_chain_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "toy.toml", TOY);
    let o = histmatch(&["baseline", "adhoc-kde", "--config", "toy.toml", "--chain", "nowhere"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_round_trips_through_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = histmatch(&["gen-data", "hydrology", "--out", "data/h.csv", "--days", "40", "--burn-in", "10"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    write(
        tmp.path(),
        "h.toml",
        "[model]\nkind = \"hydrology\"\ndata = \"data/h.csv\"\nburn_in = 10\n[smc]\nparticles = 100\ntraining = 20\nmax_waves = 1\n",
    );
    let o = histmatch(&["run", "--config", "h.toml", "--output", "hr"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = histmatch(&["gen-data", "gene", "--out", "g.csv", "--observations", "5"], tmp.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(tmp.path().join("g.csv")).unwrap();
    assert!(text.starts_with("# seed="));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 5);
}
