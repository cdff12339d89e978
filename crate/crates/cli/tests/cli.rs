use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn menkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_menkf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = menkf(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_one_state_and_one_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 4\nsteps = 1\n");
    let out = dir.path().join("sim");
    ok(&["simulate", "--config", &cfg, "--out", s(&out)]);
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["manifest.txt", "obs_t1.bin", "state_t1.bin"]);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = simulate"));
    assert!(manifest.contains("file.state.t1 = state_t1.bin"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 12\nsteps = 3\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--config", &cfg, "--out", s(&a), "--seed", "9"]);
    ok(&["simulate", "--config", &cfg, "--out", s(&b), "--seed", "9"]);
    for t in 1..=3 {
        for kind in ["state", "obs"] {
            let name = format!("{kind}_t{t}.bin");
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        }
    }
}

#[test]
fn filter_compare_and_kalman_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 10\nsteps = 5\nmembers = 25\n");
    let sim = dir.path().join("sim");
    let run = dir.path().join("run");
    ok(&["simulate", "--config", &cfg, "--out", s(&sim)]);
    ok(&["--workers", "2", "filter", "--config", &cfg, "--obs", s(&sim), "--out", s(&run), "--update", "optimal"]);
    for t in 1..=5 {
        assert!(run.join(format!("posterior_t{t}.bin")).exists());
        assert!(run.join(format!("prior_t{t}.bin")).exists());
    }
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    for line in manifest.lines().filter(|l| l.starts_with("file.")) {
        assert!(run.join(line.split(" = ").nth(1).unwrap()).exists());
    }

    let cmp = dir.path().join("cmp");
    ok(&["compare", "--a", s(&run), "--b", s(&run), "--out", s(&cmp)]);
    let field = fs::read_to_string(cmp.join("field_t3.csv")).unwrap();
    assert_eq!(field.lines().count(), 101);
    for line in field.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols[3], 0.0);
        assert_eq!(cols[4], 0.0);
    }
    let hist = fs::read_to_string(cmp.join("ks_hist_t1.csv")).unwrap();
    assert_eq!(hist.lines().nth(1), Some("0,100"));
    assert_eq!(hist.lines().count(), 27);
    assert_eq!(fs::read_to_string(cmp.join("intervals_t5.csv")).unwrap().lines().count(), 11);

    let kal = dir.path().join("kal");
    ok(&["kalman", "--config", &cfg, "--obs", s(&sim), "--out", s(&kal)]);
    assert_eq!(fs::read_to_string(kal.join("kalman_t4.csv")).unwrap().lines().count(), 101);
}

#[test]
fn filter_output_does_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 8\nsteps = 2\nmembers = 25\nblock_rows = 4\nblock_cols = 4\nu = 1\nv = 1\n");
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", &cfg, "--out", s(&sim)]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--workers", "1", "filter", "--config", &cfg, "--obs", s(&sim), "--out", s(&a), "--update", "block"]);
    ok(&["--workers", "3", "filter", "--config", &cfg, "--obs", s(&sim), "--out", s(&b), "--update", "block"]);
    for t in 1..=2 {
        let name = format!("posterior_t{t}.bin");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn invalid_block_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 10\nblock_rows = 0\n");
    let out = dir.path().join("run");
    let res = menkf(&["filter", "--config", &cfg, "--obs", s(dir.path()), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 10\nbogus = 1\n");
    let res = menkf(&["simulate", "--config", &cfg, "--out", s(&dir.path().join("x"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_observations_are_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s = 4\nsteps = 1\n");
    let res = menkf(&["filter", "--config", &cfg, "--obs", s(&dir.path().join("none")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn bench_writes_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "steps = 1\nmembers = 25\nblock_rows = 4\nblock_cols = 4\nu = 1\nv = 1\n");
    let out = dir.path().join("bench");
    ok(&["bench", "--config", &cfg, "--out", s(&out), "--sizes", "8", "--reps", "1"]);
    let csv = fs::read_to_string(out.join("timing.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "s,n_x,reps,optimal_median_s,block_median_s,ratio");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("8,64,1,"));
}
