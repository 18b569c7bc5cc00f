//! Run records, CSV output, benchmarks and scaling measurements.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::SolverError;
use crate::krylov::{FdOperator, Preconditioner};
use crate::models::{Model1, Model1Params};
use crate::mpc::{simulate, MpcConfig, MpcError, Trajectory};
use crate::ocp::{norm2, HorizonSolution, ModelDefinition};
use crate::precond::SparsePreconditioner;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const SCALING_FILE: &str = "scaling.csv";

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "step",
    "t",
    "x",
    "y",
    "u",
    "p",
    "res_before",
    "res_after",
    "gmres_iters",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed trajectory csv: {0}")]
    Parse(String),
    #[error("stored aggregates differ from the per-step records: {0}")]
    Aggregates(String),
    #[error("{0}")]
    Usage(String),
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Totals derived from a trajectory. Averages run over the closed-loop steps
/// `j ≥ 1`; the cold start at `j = 0` is excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub steps_completed: usize,
    pub avg_gmres_per_step: f64,
    pub avg_wall_ms_per_step: f64,
    pub total_wall_time_s: f64,
    pub success: bool,
    /// `None` when the run produced no samples.
    pub final_state_norm: Option<f64>,
}

impl Aggregates {
    pub fn compute(traj: &Trajectory, success: bool) -> Self {
        let steps: Vec<_> = traj.controls().filter(|c| c.stats.step >= 1).collect();
        let n = steps.len();
        let iters: usize = steps.iter().map(|c| c.stats.gmres_iterations()).sum();
        let step_wall = steps.iter().fold(0.0, |acc, c| acc + c.stats.wall_time_s);
        let total_wall_time_s = traj
            .controls()
            .fold(0.0, |acc, c| acc + c.stats.wall_time_s);
        let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        Self {
            steps_completed: n,
            avg_gmres_per_step: mean(iters as f64),
            avg_wall_ms_per_step: mean(step_wall * 1e3),
            total_wall_time_s,
            success,
            final_state_norm: traj.final_state().map(norm2),
        }
    }
}

/// One simulation with its configuration and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: MpcConfig,
    pub trajectory: Trajectory,
    /// Failure message, if the run did not complete.
    pub failure: Option<String>,
    pub aggregates: Aggregates,
}

impl RunRecord {
    pub fn from_outcome(config: MpcConfig, outcome: Result<Trajectory, MpcError>) -> Self {
        let (trajectory, failure) = match outcome {
            Ok(t) => (t, None),
            Err(e) => {
                let msg = e.to_string();
                let partial = match e {
                    MpcError::Step { partial, .. } => *partial,
                    MpcError::Solver(_) => Trajectory::default(),
                };
                (partial, Some(msg))
            }
        };
        let aggregates = Aggregates::compute(&trajectory, failure.is_none());
        Self {
            config,
            trajectory,
            failure,
            aggregates,
        }
    }

    pub fn run(config: MpcConfig) -> Self {
        let outcome = simulate(&config);
        Self::from_outcome(config, outcome)
    }

    pub fn success(&self) -> bool {
        self.aggregates.success
    }

    /// Checks that the stored aggregates equal a recomputation from the
    /// per-step records.
    pub fn verify(&self) -> HarnessResult<()> {
        let again = Aggregates::compute(&self.trajectory, self.failure.is_none());
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        let a = &self.aggregates;
        if a.steps_completed != again.steps_completed
            || a.success != again.success
            || !same(a.avg_gmres_per_step, again.avg_gmres_per_step)
            || !same(a.avg_wall_ms_per_step, again.avg_wall_ms_per_step)
            || !same(a.total_wall_time_s, again.total_wall_time_s)
            || a.final_state_norm.map(f64::to_bits) != again.final_state_norm.map(f64::to_bits)
        {
            return Err(HarnessError::Aggregates(format!(
                "stored {a:?}, recomputed {again:?}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> HarnessResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a record and verifies its aggregates.
    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let rec: Self = serde_json::from_str(text)?;
        rec.verify()?;
        Ok(rec)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// One row of the trajectory CSV. Control fields are empty for the final
/// state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub u: Option<f64>,
    pub p: Option<f64>,
    pub res_before: Option<f64>,
    pub res_after: Option<f64>,
    pub gmres_iters: Option<usize>,
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    traj.samples
        .iter()
        .map(|s| {
            let c = s.control.as_ref();
            TrajectoryRow {
                step: s.step,
                t: s.t,
                x: s.state[0],
                y: s.state.get(1).copied().unwrap_or(f64::NAN),
                u: c.map(|c| c.applied[0]),
                p: c.map(|c| c.stats.p),
                res_before: c.map(|c| c.stats.residual_before),
                res_after: c.map(|c| c.stats.residual_after),
                gmres_iters: c.map(|c| c.stats.gmres_iterations()),
            }
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in trajectory_rows(traj) {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.x),
            fmt_f64(r.y),
            fmt_opt(r.u),
            fmt_opt(r.p),
            fmt_opt(r.res_before),
            fmt_opt(r.res_after),
            r.gmres_iters.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> HarnessResult<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_HEADER {
        return Err(HarnessError::Parse(format!("unexpected header {header:?}")));
    }
    let bad = |line: usize, field: &str| HarnessError::Parse(format!("row {line}: bad {field}"));
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| -> HarnessResult<f64> {
            rec[k].parse().map_err(|_| bad(line, TRAJECTORY_HEADER[k]))
        };
        let opt = |k: usize| -> HarnessResult<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                f(k).map(Some)
            }
        };
        rows.push(TrajectoryRow {
            step: rec[0].parse().map_err(|_| bad(line, "step"))?,
            t: f(1)?,
            x: f(2)?,
            y: f(3)?,
            u: opt(4)?,
            p: opt(5)?,
            res_before: opt(6)?,
            res_after: opt(7)?,
            gmres_iters: match &rec[8] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(line, "gmres_iters"))?),
            },
        });
    }
    Ok(rows)
}

/// Runs one simulation and writes the trajectory CSV and JSON record into
/// `out_dir`. Files are written for failed runs as well.
pub fn run_simulate(config: MpcConfig, out_dir: &Path) -> HarnessResult<RunRecord> {
    config.validate()?;
    let rec = RunRecord::run(config);
    fs::create_dir_all(out_dir)?;
    write_trajectory_csv(
        &rec.trajectory,
        fs::File::create(out_dir.join(TRAJECTORY_FILE))?,
    )?;
    fs::write(out_dir.join(SUMMARY_FILE), rec.to_json()?)?;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub config: MpcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub id: String,
    pub success: bool,
    pub avg_iters: f64,
    pub avg_wall_ms: f64,
    /// Baseline average GMRES iterations over this case's average.
    pub speedup: f64,
}

fn speedup(baseline: f64, variant: f64) -> f64 {
    if baseline == variant {
        1.0
    } else {
        baseline / variant
    }
}

/// Runs all cases concurrently. The first case is the baseline.
pub fn run_benchmark(
    cases: &[BenchmarkCase],
) -> HarnessResult<(Vec<BenchmarkRow>, Vec<RunRecord>)> {
    if cases.len() < 2 {
        return Err(HarnessError::Usage(
            "a benchmark needs at least two configurations".into(),
        ));
    }
    for c in cases {
        c.config.validate()?;
    }
    let records: Vec<RunRecord> = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .iter()
            .map(|c| s.spawn(|| RunRecord::run(c.config.clone())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    let base = records[0].aggregates.avg_gmres_per_step;
    let rows = cases
        .iter()
        .zip(&records)
        .map(|(c, r)| BenchmarkRow {
            id: c.id.clone(),
            success: r.success(),
            avg_iters: r.aggregates.avg_gmres_per_step,
            avg_wall_ms: r.aggregates.avg_wall_ms_per_step,
            speedup: speedup(base, r.aggregates.avg_gmres_per_step),
        })
        .collect();
    Ok((rows, records))
}

pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], out: W) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config_id",
        "success",
        "avg_iters",
        "avg_wall_ms",
        "speedup",
    ])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.success.to_string(),
            fmt_f64(r.avg_iters),
            fmt_f64(r.avg_wall_ms),
            fmt_f64(r.speedup),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const DEFAULT_SCALING_NS: [usize; 5] = [250, 500, 1000, 2000, 4000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    /// Median over repeats of assemble + factorize + one apply.
    pub median_s: f64,
    pub factorization_flops: u64,
    pub apply_flops: u64,
    pub memory_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `log t` against `log N`; `None` for a single N.
    pub slope: Option<f64>,
}

/// A smooth, non-degenerate Model 1 iterate on an `n`-stage horizon.
pub fn scaling_point(n: usize) -> HorizonSolution {
    let p = 2.0;
    let d = Model1::new(Model1Params::default())
        .expect("default parameters")
        .dims();
    let mut sol = HorizonSolution::uniform(d, n, &[0.0, 1.0, 0.5], &[0.1, -0.2], p)
        .expect("consistent dimensions");
    for i in 0..n {
        let tau = i as f64 / n as f64;
        let u = 0.8 * (std::f64::consts::PI * tau).cos();
        let s = sol.stage_mut(i);
        s[0] = u;
        s[1] = (1.0 - u * u).sqrt();
        s[2] = 0.5 + 0.1 * tau;
    }
    sol
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Times preconditioner setup, factorization and one application for Model 1
/// at each horizon size.
pub fn run_scaling(ns: &[usize], repeats: usize) -> HarnessResult<ScalingReport> {
    if ns.is_empty() || ns.iter().any(|&n| n < 2) {
        return Err(HarnessError::Usage(
            "horizon sizes must be at least 2".into(),
        ));
    }
    let model = Model1::new(Model1Params::default())?;
    let x0 = [-1.0, 0.0];
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let sol = scaling_point(n);
        let v: Vec<f64> = (0..sol.len())
            .map(|k| ((k % 7) as f64 - 3.0) * 0.1)
            .collect();
        let mut times = Vec::with_capacity(repeats.max(1));
        let mut counters = (0, 0, 0);
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let op = FdOperator::new(&model, &sol, &x0, 0.0, crate::krylov::DEFAULT_FD_STEP)?;
            let f = SparsePreconditioner::assemble(&model, &sol, &x0, &op)?.factorize()?;
            let out = f.apply_inverse(&v);
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(out);
            counters = (f.factorization_flops(), f.apply_flops(), f.memory_words());
        }
        points.push(ScalingPoint {
            n,
            median_s: median(times),
            factorization_flops: counters.0,
            apply_flops: counters.1,
            memory_words: counters.2,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_s).collect();
    Ok(ScalingReport {
        slope: loglog_slope(&xs, &ys),
        points,
    })
}

pub fn write_scaling_csv<W: Write>(report: &ScalingReport, out: W) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "median_s",
        "factorization_flops",
        "apply_flops",
        "memory_words",
    ])?;
    for p in &report.points {
        w.write_record([
            p.n.to_string(),
            fmt_f64(p.median_s),
            p.factorization_flops.to_string(),
            p.apply_flops.to_string(),
            p.memory_words.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[4.0], &[1.0]), None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn identical_speedup_is_exactly_one() {
        assert_eq!(speedup(1.0 / 3.0, 1.0 / 3.0), 1.0);
        assert_eq!(speedup(0.0, 0.0), 1.0);
        assert_eq!(speedup(10.0, 2.0), 5.0);
    }

    #[test]
    fn zero_step_record() {
        let rec = RunRecord::run(MpcConfig {
            steps: 0,
            ..Default::default()
        });
        assert!(rec.success());
        assert_eq!(rec.aggregates.steps_completed, 0);
        assert_eq!(rec.aggregates.final_state_norm, Some(1.0));
        rec.verify().unwrap();
    }

    #[test]
    fn tampered_aggregates_rejected() {
        let mut rec = RunRecord::run(MpcConfig {
            steps: 0,
            ..Default::default()
        });
        rec.aggregates.avg_gmres_per_step = 1.0;
        let text = rec.to_json().unwrap();
        assert!(matches!(
            RunRecord::from_json(&text),
            Err(HarnessError::Aggregates(_))
        ));
    }

    #[test]
    fn single_n_scaling_has_no_slope() {
        let r = run_scaling(&[50], 1).unwrap();
        assert_eq!(r.points.len(), 1);
        assert!(r.slope.is_none());
        assert!(r.points[0].memory_words > 0);
    }
}
