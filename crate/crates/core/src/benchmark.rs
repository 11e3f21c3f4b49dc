//! Seeded multi-target comparison of the planning methods.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::DemoLibrary;
use crate::dynamics::SliderPose;
use crate::planner::{plan_methods, PlanError, PlanMethod, PlanReport, PlanSettings, TASK_SPACE_HALF_WIDTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub targets: usize,
    pub seed: u64,
    pub methods: Vec<PlanMethod>,
}

impl BenchmarkSpec {
    pub fn new(targets: usize, seed: u64) -> Self {
        Self {
            targets,
            seed,
            methods: PlanMethod::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.targets == 0 {
            return Err(PlanError::InvalidRequest("benchmark needs at least one target".into()));
        }
        if self.methods.is_empty() {
            return Err(PlanError::InvalidRequest("benchmark needs at least one method".into()));
        }
        Ok(())
    }
}

/// `n` poses drawn uniformly from the task space.
pub fn sample_targets(n: usize, seed: u64) -> Vec<SliderPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = TASK_SPACE_HALF_WIDTH;
    (0..n)
        .map(|_| {
            SliderPose::new(
                rng.random_range(-w..=w),
                rng.random_range(-w..=w),
                rng.random_range(-PI..PI),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub target_x: f64,
    pub target_y: f64,
    pub target_theta: f64,
    pub method: PlanMethod,
    pub x_err: f64,
    pub y_err: f64,
    pub theta_err: f64,
    pub success: bool,
    pub cost: f64,
    pub iters: usize,
    pub wall_time_s: f64,
}

impl BenchmarkRow {
    fn from_report(r: &PlanReport) -> Self {
        Self {
            target_x: r.target.x,
            target_y: r.target.y,
            target_theta: r.target.theta,
            method: r.method,
            x_err: r.x_err,
            y_err: r.y_err,
            theta_err: r.theta_err,
            success: r.success,
            cost: r.solution.total_cost,
            iters: r.solution.iterations,
            wall_time_s: r.wall_time_s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    /// Target-major, then in the order of `spec.methods`.
    pub rows: Vec<BenchmarkRow>,
    /// Accepted-iteration cost histories, aligned with `rows`.
    pub cost_histories: Vec<Vec<f64>>,
}

/// Plans every sampled target with every requested method. Targets run in
/// parallel; rows come back in target order regardless.
pub fn run_benchmark(
    spec: &BenchmarkSpec,
    library: &DemoLibrary,
    settings: &PlanSettings,
) -> Result<BenchmarkOutcome, PlanError> {
    spec.validate()?;
    let targets = sample_targets(spec.targets, spec.seed);
    let per_target = targets
        .par_iter()
        .map(|t| plan_methods(t, &spec.methods, library, settings))
        .collect::<Result<Vec<_>, _>>()?;
    let reports = per_target.iter().flatten();
    Ok(BenchmarkOutcome {
        rows: reports.clone().map(BenchmarkRow::from_report).collect(),
        cost_histories: reports.map(|r| r.solution.cost_history.clone()).collect(),
    })
}

pub const BENCHMARK_CSV_HEADER: &str =
    "target_x,target_y,target_theta,method,x_err,y_err,theta_err,success,cost,iters,wall_time_s";

/// Rows as CSV. Wall times are written as 0 unless `timing` is set, so that
/// a fixed seed reproduces the file byte for byte.
pub fn benchmark_csv(rows: &[BenchmarkRow], timing: bool) -> String {
    let mut out = format!("{BENCHMARK_CSV_HEADER}\n");
    for r in rows {
        let wall = if timing { r.wall_time_s } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.target_x,
            r.target_y,
            r.target_theta,
            r.method,
            r.x_err,
            r.y_err,
            r.theta_err,
            r.success,
            r.cost,
            r.iters,
            wall
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        if n == 0.0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: PlanMethod,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub x_err: MeanStd,
    pub y_err: MeanStd,
    pub theta_err: MeanStd,
    pub wall_time_s: MeanStd,
}

/// Per-method statistics in the order methods first appear in `rows`.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<MethodSummary> {
    let mut methods: Vec<PlanMethod> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.method == m).collect();
            let successes = sel.iter().filter(|r| r.success).count();
            MethodSummary {
                method: m,
                runs: sel.len(),
                successes,
                success_rate: successes as f64 / sel.len() as f64,
                x_err: MeanStd::of(sel.iter().map(|r| r.x_err)),
                y_err: MeanStd::of(sel.iter().map(|r| r.y_err)),
                theta_err: MeanStd::of(sel.iter().map(|r| r.theta_err)),
                wall_time_s: MeanStd::of(sel.iter().map(|r| r.wall_time_s)),
            }
        })
        .collect()
}

/// Plain-text table with one line per method: errors as mean ± std and the
/// success rate.
pub fn format_summary(summary: &[MethodSummary]) -> String {
    let mut out = String::from(
        "method  x_err [cm]      y_err [cm]      theta_err [rad]   time [s]        success\n",
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{:<7} {:>5.2} ± {:<5.2}   {:>5.2} ± {:<5.2}   {:>5.3} ± {:<5.3}     {:>5.2} ± {:<5.2}   {:>5.1}% ({}/{})",
            s.method.to_string(),
            s.x_err.mean * 100.0,
            s.x_err.std * 100.0,
            s.y_err.mean * 100.0,
            s.y_err.std * 100.0,
            s.theta_err.mean,
            s.theta_err.std,
            s.wall_time_s.mean,
            s.wall_time_s.std,
            s.success_rate * 100.0,
            s.successes,
            s.runs
        );
    }
    out
}
