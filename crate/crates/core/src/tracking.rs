//! Closed-loop replay of a plan under pose disturbances, with the
//! trust-region filter deciding when the feedback gains are trusted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    step, ControlInput, DynamicsError, InteractionMode, PhysicalParams, SystemState,
};
use crate::ocp::state_difference;
use crate::planner::PlannedTrajectory;

/// Online tracking success thresholds: 3 cm, 3 cm, 5°.
pub const TRACK_POSITION_TOLERANCE: f64 = 0.03;
pub const TRACK_ANGLE_TOLERANCE: f64 = 5.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_TRUST_RADIUS: f64 = 0.02;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid tracking input: {0}")]
    Invalid(String),
    #[error("rollout became non-finite at step {step}")]
    NonFiniteRollout { step: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Uniform pose disturbance `ε ~ U(-M, M)` per axis, redrawn every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    #[serde(rename = "x_M")]
    pub x_m: f64,
    #[serde(rename = "y_M")]
    pub y_m: f64,
    #[serde(rename = "theta_M")]
    pub theta_m: f64,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn new(x_m: f64, y_m: f64, theta_m: f64, seed: u64) -> Self {
        Self { x_m, y_m, theta_m, seed }
    }

    pub fn none() -> Self {
        Self::new(0.0, 0.0, 0.0, 0)
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        if [self.x_m, self.y_m, self.theta_m]
            .iter()
            .any(|b| !(*b >= 0.0 && b.is_finite()))
        {
            return Err(TrackError::Invalid(
                "disturbance bounds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Pose perturbation at step `t`. Each step reads its own ChaCha stream, so a
/// draw depends only on `(seed, t)`.
pub fn sample_disturbance(model: &DisturbanceModel, t: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(t as u64);
    [model.x_m, model.y_m, model.theta_m].map(|bound| {
        let u: f64 = rng.random();
        bound * (2.0 * u - 1.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub trust_radius: f64,
    /// Parameters of the simulated plant; may differ from the planner's.
    pub plant: PhysicalParams,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            trust_radius: DEFAULT_TRUST_RADIUS,
            plant: PhysicalParams::default(),
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.trust_radius > 0.0 && self.trust_radius.is_finite()) {
            return Err(TrackError::Invalid("trust radius must be positive".into()));
        }
        self.plant.validate()?;
        Ok(())
    }
}

/// Returns `planned` when `actual` lies strictly inside the ball of radius `r`
/// around it (angle wrapped), else `actual`.
pub fn trust_region_filter(actual: &SystemState, planned: &SystemState, r: f64) -> SystemState {
    let d = state_difference(&actual.to_vector(), &planned.to_vector());
    if d.norm() < r {
        *planned
    } else {
        *actual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub planned: SystemState,
    /// The plant state as seen by the controller, disturbance included.
    pub observed: SystemState,
    pub filtered: SystemState,
    pub control: ControlInput,
    /// Mode of the true plant state during this step.
    pub mode: InteractionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingTrace {
    pub steps: Vec<TrackStep>,
    pub final_state: SystemState,
    pub x_err: f64,
    pub y_err: f64,
    pub theta_err: f64,
    pub within_tolerance: bool,
}

pub fn within_tracking_tolerance(x_err: f64, y_err: f64, theta_err: f64) -> bool {
    x_err < TRACK_POSITION_TOLERANCE
        && y_err < TRACK_POSITION_TOLERANCE
        && theta_err < TRACK_ANGLE_TOLERANCE
}

impl TrackingTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// One CSV row per step: time, planned pose, observed pose, true pose, control, mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,planned_x,planned_y,planned_theta,observed_x,observed_y,observed_theta,\
             filtered_is_planned,u_n,u_t,mode\n",
        );
        for (t, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{t},{},{},{},{},{},{},{},{},{},{:?}\n",
                s.planned.pose.x,
                s.planned.pose.y,
                s.planned.pose.theta,
                s.observed.pose.x,
                s.observed.pose.y,
                s.observed.pose.theta,
                s.filtered == s.planned,
                s.control.0[0],
                s.control.0[1],
                s.mode
            ));
        }
        out
    }
}

/// Replays `plan` on the plant. At every step the controller sees the true
/// state with a freshly drawn pose disturbance, filters it against the plan
/// and applies `û_t + K_t (x_t - x̂_t)`. Errors are measured between the true
/// final pose and the planned final pose.
pub fn track(
    plan: &PlannedTrajectory,
    disturbance: &DisturbanceModel,
    config: &TrackingConfig,
) -> Result<TrackingTrace, TrackError> {
    plan.validate().map_err(TrackError::Invalid)?;
    disturbance.validate()?;
    config.validate()?;
    let mut state = plan.states[0];
    let mut steps = Vec::with_capacity(plan.horizon());
    for t in 0..plan.horizon() {
        let planned = plan.states[t];
        let [ex, ey, et] = sample_disturbance(disturbance, t);
        let mut observed = state;
        observed.pose.x += ex;
        observed.pose.y += ey;
        observed.pose.theta += et;
        let filtered = trust_region_filter(&observed, &planned, config.trust_radius);
        let deviation = state_difference(&filtered.to_vector(), &planned.to_vector());
        let control = ControlInput(plan.controls[t].0 + plan.gain(t) * deviation);
        let (next, mode) = step(&state, &control, plan.faces[t], &config.plant)?;
        if !next.is_finite() || !control.0.iter().all(|v| v.is_finite()) {
            return Err(TrackError::NonFiniteRollout { step: t + 1 });
        }
        steps.push(TrackStep {
            planned,
            observed,
            filtered,
            control,
            mode,
        });
        state = next;
    }
    let (x_err, y_err, theta_err) = state.pose.abs_error(&plan.final_pose());
    Ok(TrackingTrace {
        steps,
        final_state: state,
        x_err,
        y_err,
        theta_err,
        within_tolerance: within_tracking_tolerance(x_err, y_err, theta_err),
    })
}

/// One grid point of a disturbance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "x_M")]
    pub x_m: f64,
    #[serde(rename = "y_M")]
    pub y_m: f64,
    #[serde(rename = "theta_M")]
    pub theta_m: f64,
    pub seed_count: usize,
    pub mean_x_err: f64,
    pub mean_y_err: f64,
    pub mean_theta_err: f64,
    pub max_x_err: f64,
    pub max_y_err: f64,
    pub max_theta_err: f64,
    pub success_fraction: f64,
}

impl SweepRow {
    pub fn mean_position_error(&self) -> f64 {
        0.5 * (self.mean_x_err + self.mean_y_err)
    }
}

/// Tracks `plan` for every `(x_M = y_M, θ_M)` grid point and seeds
/// `base_seed..base_seed + seed_count`. Rows follow the grid order.
pub fn disturbance_sweep(
    plan: &PlannedTrajectory,
    grid: &[(f64, f64)],
    base_seed: u64,
    seed_count: usize,
    config: &TrackingConfig,
) -> Result<Vec<SweepRow>, TrackError> {
    if seed_count == 0 {
        return Err(TrackError::Invalid("seed_count must be at least 1".into()));
    }
    grid.iter()
        .map(|&(xy, theta)| {
            let traces = (0..seed_count as u64)
                .into_par_iter()
                .map(|k| track(plan, &DisturbanceModel::new(xy, xy, theta, base_seed + k), config))
                .collect::<Result<Vec<_>, _>>()?;
            let n = traces.len() as f64;
            let mean = |f: fn(&TrackingTrace) -> f64| traces.iter().map(f).sum::<f64>() / n;
            let max = |f: fn(&TrackingTrace) -> f64| traces.iter().map(f).fold(0.0, f64::max);
            Ok(SweepRow {
                x_m: xy,
                y_m: xy,
                theta_m: theta,
                seed_count,
                mean_x_err: mean(|t| t.x_err),
                mean_y_err: mean(|t| t.y_err),
                mean_theta_err: mean(|t| t.theta_err),
                max_x_err: max(|t| t.x_err),
                max_y_err: max(|t| t.y_err),
                max_theta_err: max(|t| t.theta_err),
                success_fraction: traces.iter().filter(|t| t.within_tolerance).count() as f64 / n,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "x_M,y_M,theta_M,seed_count,mean_x_err,mean_y_err,\
mean_theta_err,max_x_err,max_y_err,max_theta_err,success_fraction";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.x_m,
            r.y_m,
            r.theta_m,
            r.seed_count,
            r.mean_x_err,
            r.mean_y_err,
            r.mean_theta_err,
            r.max_x_err,
            r.max_y_err,
            r.max_theta_err,
            r.success_fraction
        ));
    }
    out
}
