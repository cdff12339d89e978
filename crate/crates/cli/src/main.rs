use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use menkf::diagnostics::{credibility_interval, mean_difference_field, timing_csv, timing_run, KsField, TimingOptions};
use menkf::experiment::{
    generate_reference, kalman_reference, run_filter, Ensemble, ExperimentConfig, ForwardKind, UpdateKind,
};
use menkf::io::{read_config, read_dump, write_dump, RunManifest};
use menkf::{Error, Result};

#[derive(Parser)]
#[command(name = "menkf", version, about = "Model-based ensemble Kalman filter experiments on square lattices")]
struct Cli {
    /// Worker threads for ensemble and block parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (`key = value` lines); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed (the reference seed for `simulate`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    update: Option<UpdateKind>,
    #[arg(long)]
    forward: Option<ForwardKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate reference states and observations.
    Simulate(Common),
    /// Run the ensemble filter on simulated observations.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        obs: PathBuf,
    },
    /// Exact Kalman filter moments for the linear experiment.
    Kalman {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
    },
    /// Compare the ensembles of two filter runs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Compare `prior` or `posterior` ensembles.
        #[arg(long, default_value = "posterior")]
        stage: String,
        /// Lattice row for the interval table (default: middle row).
        #[arg(long)]
        row: Option<usize>,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
    },
    /// Time optimal against block updates over lattice sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lattice sides.
        #[arg(long, value_delimiter = ',', default_values_t = [20usize, 30, 40])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Per-run timeout in seconds.
        #[arg(long, default_value_t = 600)]
        timeout: u64,
    },
}

fn load_config(c: &Common, simulate: bool) -> Result<ExperimentConfig> {
    let mut config = match &c.config {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        if simulate {
            config.reference_seed = seed;
        } else {
            config.seed = seed;
        }
    }
    if let Some(u) = c.update {
        config.update = u;
    }
    if let Some(f) = c.forward {
        config.forward = f;
    }
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest, label: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    manifest.files.push((label, name.into()));
    Ok(())
}

fn simulate(c: &Common) -> Result<()> {
    let config = load_config(c, true)?;
    create_dir(&c.out)?;
    let start = Instant::now();
    let reference = generate_reference(&config)?;
    let geom = config.geometry();
    let mut manifest = RunManifest::new("simulate", Some(&config));
    for t in 1..=config.steps {
        for (kind, field) in [("state", &reference.states[t - 1]), ("obs", &reference.observations[t - 1])] {
            let name = format!("{kind}_t{t}.bin");
            write_dump(&c.out.join(&name), &Ensemble::single(geom, t, field.clone())?)?;
            manifest.files.push((format!("{kind}.t{t}"), name));
        }
    }
    manifest.timings.push(("total".into(), start.elapsed().as_secs_f64()));
    manifest.write(&c.out)
}

fn read_observations(dir: &Path, config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    (1..=config.steps)
        .map(|t| {
            let path = dir.join(format!("obs_t{t}.bin"));
            let ens = read_dump(&path)?;
            if ens.geom != config.geometry() || ens.size() != 1 {
                return Err(Error::GeometryMismatch(format!(
                    "{} holds {} fields on a {}x{} lattice, expected one on {}x{}",
                    path.display(),
                    ens.size(),
                    ens.geom.rows(),
                    ens.geom.cols(),
                    config.s,
                    config.s
                )));
            }
            Ok(ens.members.into_iter().next().unwrap_or_default())
        })
        .collect()
}

fn filter(c: &Common, obs_dir: &Path) -> Result<()> {
    let config = load_config(c, false)?;
    let observations = read_observations(obs_dir, &config)?;
    create_dir(&c.out)?;
    let start = Instant::now();
    let run = run_filter(&config, &observations)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut manifest = RunManifest::new("filter", Some(&config));
    for (stage, list) in [("prior", &run.prior), ("posterior", &run.posterior)] {
        for ens in list {
            let name = format!("{stage}_t{}.bin", ens.t);
            write_dump(&c.out.join(&name), ens)?;
            manifest.files.push((format!("{stage}.t{}", ens.t), name));
        }
    }
    manifest.timings.push(("filter".into(), elapsed));
    manifest.write(&c.out)
}

fn kalman(c: &Common, obs_dir: &Path) -> Result<()> {
    let config = load_config(c, false)?;
    let observations = read_observations(obs_dir, &config)?;
    create_dir(&c.out)?;
    let start = Instant::now();
    let run = kalman_reference(&config, &observations)?;
    let geom = config.geometry();
    let mut manifest = RunManifest::new("kalman", Some(&config));
    for (i, (prior, post)) in run.prior.iter().zip(&run.posterior).enumerate() {
        let mut csv = String::from("node,row,col,prior_mean,prior_var,posterior_mean,posterior_var\n");
        for k in 0..geom.n() {
            let (r, col) = geom.coords(k);
            let _ = writeln!(
                csv,
                "{k},{r},{col},{},{},{},{}",
                prior.mean[k],
                prior.cov[(k, k)],
                post.mean[k],
                post.cov[(k, k)]
            );
        }
        write_text(&c.out, &format!("kalman_t{}.csv", i + 1), &csv, &mut manifest, format!("kalman.t{}", i + 1))?;
    }
    manifest.timings.push(("kalman".into(), start.elapsed().as_secs_f64()));
    manifest.write(&c.out)
}

fn read_stage(dir: &Path, stage: &str) -> Result<Vec<Ensemble>> {
    let mut out = Vec::new();
    for t in 1.. {
        let path = dir.join(format!("{stage}_t{t}.bin"));
        if !path.exists() {
            break;
        }
        out.push(read_dump(&path)?);
    }
    if out.is_empty() {
        return Err(Error::Format { path: dir.join(format!("{stage}_t1.bin")), reason: "no ensemble dumps found".into() });
    }
    Ok(out)
}

fn compare(a: &Path, b: &Path, out: &Path, stage: &str, row: Option<usize>, level: f64) -> Result<()> {
    if stage != "prior" && stage != "posterior" {
        return Err(Error::Config(format!("stage must be prior or posterior, got {stage:?}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level must lie in (0, 1), got {level}")));
    }
    let (ra, rb) = (read_stage(a, stage)?, read_stage(b, stage)?);
    if ra.len() != rb.len() {
        return Err(Error::GeometryMismatch(format!("runs have {} and {} time steps", ra.len(), rb.len())));
    }
    let geom = ra[0].geom;
    let row = row.unwrap_or(geom.rows() / 2);
    if row >= geom.rows() {
        return Err(Error::Config(format!("row {row} is outside a lattice with {} rows", geom.rows())));
    }
    create_dir(out)?;
    let mut manifest = RunManifest::new("compare", None);
    for (ea, eb) in ra.iter().zip(&rb) {
        let t = ea.t;
        let ks = KsField::new(ea, eb)?;
        let diff = mean_difference_field(ea, eb)?;

        let mut field = String::from("node,row,col,ks,mean_difference\n");
        for k in 0..geom.n() {
            let (r, c) = geom.coords(k);
            let _ = writeln!(field, "{k},{r},{c},{},{}", ks.values[k], diff[k]);
        }
        write_text(out, &format!("field_t{t}.csv"), &field, &mut manifest, format!("field.t{t}"))?;

        let mut hist = String::from("ks,count\n");
        if let (Some(m), Some(counts)) = (ks.m, ks.histogram()) {
            for (i, n) in counts.iter().enumerate() {
                let _ = writeln!(hist, "{},{n}", i as f64 / m as f64);
            }
        }
        write_text(out, &format!("ks_hist_t{t}.csv"), &hist, &mut manifest, format!("ks_hist.t{t}"))?;

        let mut table = String::from("row,col,a_lower,a_upper,b_lower,b_upper\n");
        for c in 0..geom.cols() {
            let k = geom.index(row, c);
            let (al, au) = credibility_interval(&ea.node_values(k), level);
            let (bl, bu) = credibility_interval(&eb.node_values(k), level);
            let _ = writeln!(table, "{row},{c},{al},{au},{bl},{bu}");
        }
        write_text(out, &format!("intervals_t{t}.csv"), &table, &mut manifest, format!("intervals.t{t}"))?;
    }
    manifest.write(out)
}

fn bench(c: &Common, sizes: &[usize], reps: usize, timeout: u64) -> Result<()> {
    let template = load_config(c, false)?;
    if sizes.is_empty() || reps == 0 {
        return Err(Error::Config("bench needs at least one size and one repetition".into()));
    }
    for &s in sizes {
        ExperimentConfig { s, ..template.clone() }.validate()?;
    }
    create_dir(&c.out)?;
    let start = Instant::now();
    let rows = timing_run(sizes, &template, &TimingOptions { reps, timeout: Duration::from_secs(timeout) })?;
    let mut manifest = RunManifest::new("bench", Some(&template));
    write_text(&c.out, "timing.csv", &timing_csv(&rows), &mut manifest, "timing".into())?;
    manifest.timings.push(("total".into(), start.elapsed().as_secs_f64()));
    manifest.write(&c.out)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io { .. } | Error::Format { .. } => 4,
        _ if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Filter { common, obs } => filter(common, obs),
        Command::Kalman { common, obs } => kalman(common, obs),
        Command::Compare { a, b, out, stage, row, level } => compare(a, b, out, stage, *row, *level),
        Command::Bench { common, sizes, reps, timeout } => bench(common, sizes, *reps, *timeout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
