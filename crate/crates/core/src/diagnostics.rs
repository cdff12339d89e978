//! Ensemble comparison statistics and the optimal-vs-block timing harness.

use std::fmt::Write as _;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{generate_reference, run_filter, Ensemble, ExperimentConfig, UpdateKind};

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Per-node KS distances between two ensembles at the same time step.
#[derive(Debug, Clone, PartialEq)]
pub struct KsField {
    pub values: Vec<f64>,
    /// Ensemble size when both ensembles have the same number of members.
    pub m: Option<usize>,
}

impl KsField {
    pub fn new(a: &Ensemble, b: &Ensemble) -> Result<Self> {
        check_pair(a, b)?;
        if a.size() == 0 || b.size() == 0 {
            return Err(Error::EmptySample);
        }
        let values = (0..a.geom.n())
            .into_par_iter()
            .map(|k| ks_statistic(&a.node_values(k), &b.node_values(k)))
            .collect::<Result<_>>()?;
        let m = (a.size() == b.size()).then_some(a.size());
        Ok(Self { values, m })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Counts per value `d/M`, `d = 0..=M`.
    pub fn histogram(&self) -> Option<Vec<usize>> {
        let m = self.m?;
        let mut counts = vec![0; m + 1];
        for v in &self.values {
            counts[(v * m as f64).round() as usize] += 1;
        }
        Some(counts)
    }
}

fn check_pair(a: &Ensemble, b: &Ensemble) -> Result<()> {
    if a.geom != b.geom {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} against {}x{}",
            a.geom.rows(),
            a.geom.cols(),
            b.geom.rows(),
            b.geom.cols()
        )));
    }
    Ok(())
}

/// Empirical interval from linearly interpolated order statistics at positions `(i−1)/(M−1)`.
pub fn credibility_interval(values: &[f64], level: f64) -> (f64, f64) {
    assert!(values.len() >= 2, "an interval needs at least two values");
    assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, (1.0 - level) / 2.0), quantile_sorted(&v, (1.0 + level) / 2.0))
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// `mean(a) − mean(b)` node by node.
pub fn mean_difference_field(a: &Ensemble, b: &Ensemble) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    if a.size() != b.size() {
        return Err(Error::GeometryMismatch(format!("ensembles of size {} and {}", a.size(), b.size())));
    }
    Ok(a.mean().iter().zip(b.mean()).map(|(x, y)| x - y).collect())
}

/// Median wall time of one cell, or the reason it has none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timing {
    Seconds(f64),
    Timeout,
    Failed,
}

impl Timing {
    pub fn seconds(&self) -> Option<f64> {
        match self {
            Timing::Seconds(s) => Some(*s),
            _ => None,
        }
    }
}

impl std::fmt::Display for Timing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Timing::Seconds(s) => write!(f, "{s:.6}"),
            Timing::Timeout => f.write_str("timeout"),
            Timing::Failed => f.write_str("failed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub s: usize,
    pub n_x: usize,
    pub reps: usize,
    pub optimal: Timing,
    pub block: Timing,
}

impl TimingRow {
    /// Block time over optimal time, when both are available.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.block.seconds()? / self.optimal.seconds()?)
    }
}

#[derive(Debug, Clone)]
pub struct TimingOptions {
    pub reps: usize,
    /// Limit on a single filter run.
    pub timeout: Duration,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self { reps: 3, timeout: Duration::from_secs(600) }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// A timed-out run keeps its thread; it is detached and its result discarded.
fn timed_run(config: ExperimentConfig, observations: std::sync::Arc<Vec<Vec<f64>>>, timeout: Duration) -> Timing {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let start = Instant::now();
        let ok = run_filter(&config, &observations).is_ok();
        let _ = tx.send((ok, start.elapsed()));
    });
    match rx.recv_timeout(timeout) {
        Ok((true, elapsed)) => Timing::Seconds(elapsed.as_secs_f64()),
        Ok((false, _)) => Timing::Failed,
        Err(_) => Timing::Timeout,
    }
}

fn time_cell(config: &ExperimentConfig, observations: &std::sync::Arc<Vec<Vec<f64>>>, opts: &TimingOptions) -> Timing {
    let mut times = Vec::with_capacity(opts.reps);
    for _ in 0..opts.reps {
        match timed_run(config.clone(), observations.clone(), opts.timeout) {
            Timing::Seconds(s) => times.push(s),
            other => return other,
        }
    }
    Timing::Seconds(median(times))
}

/// Times complete filter runs with each update kind for every lattice size.
///
/// Once a kind times out, larger sizes are marked as timed out without running.
pub fn timing_run(sizes: &[usize], template: &ExperimentConfig, opts: &TimingOptions) -> Result<Vec<TimingRow>> {
    if opts.reps == 0 {
        return Err(Error::Config("timing needs at least one repetition".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    let mut timed_out = [false; 2];
    for &s in sizes {
        let mut config = ExperimentConfig { s, ..template.clone() };
        config.validate()?;
        let observations = std::sync::Arc::new(generate_reference(&config)?.observations);
        let mut cells = [Timing::Timeout; 2];
        for (i, kind) in [UpdateKind::Optimal, UpdateKind::Block].into_iter().enumerate() {
            if timed_out[i] {
                continue;
            }
            config.update = kind;
            cells[i] = time_cell(&config, &observations, opts);
            timed_out[i] = cells[i] == Timing::Timeout;
        }
        rows.push(TimingRow { s, n_x: s * s, reps: opts.reps, optimal: cells[0], block: cells[1] });
    }
    Ok(rows)
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("s,n_x,reps,optimal_median_s,block_median_s,ratio\n");
    for r in rows {
        let ratio = r.ratio().map(|x| format!("{x:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{}", r.s, r.n_x, r.reps, r.optimal, r.block, ratio);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeGeometry;
    use proptest::prelude::*;

    fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (1..=25).map(f64::from).collect();
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        let far: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        assert_eq!(ks_statistic(&a, &far).unwrap(), 1.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!((ks_statistic(&a, &shifted).unwrap() - 0.04).abs() < 1e-15);
        assert!(matches!(ks_statistic(&[], &a), Err(Error::EmptySample)));
    }

    #[test]
    fn ties_count_on_both_sides() {
        assert_eq!(ks_statistic(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), brute_ks(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]));
    }

    #[test]
    fn interval_examples() {
        let v: Vec<f64> = (1..=25).map(f64::from).collect();
        let (lo, hi) = credibility_interval(&v, 0.9);
        assert!((lo - 2.2).abs() < 1e-12 && (hi - 23.8).abs() < 1e-12);
        assert_eq!(credibility_interval(&[3.0; 7], 0.9), (3.0, 3.0));
        let (lo, hi) = credibility_interval(&v, 1.0 - 1e-12);
        assert!((lo - 1.0).abs() < 1e-9 && (hi - 25.0).abs() < 1e-9);
    }

    fn ensemble(members: Vec<Vec<f64>>) -> Ensemble {
        Ensemble::new(LatticeGeometry::new(2, 2), 1, members).unwrap()
    }

    #[test]
    fn mean_difference_examples() {
        let a = ensemble(vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, -1.0, 5.0, 2.0]]);
        assert_eq!(mean_difference_field(&a, &a).unwrap(), vec![0.0; 4]);
        let b = ensemble(a.members.iter().map(|x| x.iter().map(|v| v + 1.5).collect()).collect());
        for d in mean_difference_field(&a, &b).unwrap() {
            assert!((d + 1.5).abs() < 1e-15);
        }
        let other = Ensemble::new(LatticeGeometry::new(1, 4), 1, a.members.clone()).unwrap();
        assert!(matches!(mean_difference_field(&a, &other), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn ks_field_histogram() {
        let a = ensemble(vec![vec![0.0; 4], vec![1.0; 4]]);
        let b = ensemble(vec![vec![5.0, 0.0, 0.0, 0.5], vec![6.0, 1.0, 0.5, 0.6]]);
        let f = KsField::new(&a, &b).unwrap();
        assert_eq!(f.values, vec![1.0, 0.0, 0.5, 0.5]);
        assert_eq!(f.histogram().unwrap(), vec![1, 2, 1]);
    }

    #[test]
    fn timing_single_row() {
        let template = ExperimentConfig { steps: 1, members: 25, block_rows: 3, block_cols: 3, u: 1, v: 1, ..Default::default() };
        let rows = timing_run(&[6], &template, &TimingOptions { reps: 1, timeout: Duration::from_secs(120) }).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].n_x, rows[0].reps), (36, 1));
        assert!(rows[0].ratio().is_some());
        let csv = timing_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force(a in prop::collection::vec(-3i32..3, 1..20), b in prop::collection::vec(-3i32..3, 1..20)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), brute_ks(&a, &b));
        }

        #[test]
        fn ks_invariant_under_monotone_maps(a in prop::collection::vec(-5.0f64..5.0, 1..15), b in prop::collection::vec(-5.0f64..5.0, 1..15)) {
            let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 - 1.0).collect::<Vec<_>>();
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&f(&a), &f(&b)).unwrap());
        }

        #[test]
        fn ks_is_quantised(m in 1usize..30, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let md = d * m as f64;
            prop_assert!((md - md.round()).abs() < 1e-9);
        }
    }
}
