//! Cost construction and the four planning variants (ZS, DS, DP, WS).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddp::{
    self, CostModel, OcpProblem, SolverConfig, SolverError, StageExpansion, TerminalExpansion,
};
use crate::demo::{resample, select_demo, standoff_state, DemoError, DemoLibrary, Demonstration};
use crate::dynamics::{
    rotation2, ContactFace, ControlInput, ControlVector, PhysicalParams, SliderPose,
    StateVector, SystemState, CONTROL_DIM, STATE_DIM,
};
use crate::ocp::{state_difference, PushingDynamics};

/// Half-width of the task space in x and y (m).
pub const TASK_SPACE_HALF_WIDTH: f64 = 0.25;
/// Planning success thresholds: 1 cm, 1 cm, 5°.
pub const PLAN_POSITION_TOLERANCE: f64 = 0.01;
pub const PLAN_ANGLE_TOLERANCE: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Stand-off of the initial pusher position as a multiple of `r_s + r_p`.
pub const INITIAL_STANDOFF: f64 = 1.3;
pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_FACE: ContactFace = ContactFace::Left;
/// Normal distance beyond contact over which the edge guard fades out (m).
pub const EDGE_FALLOFF: f64 = 0.01;

type Diag7 = SVector<f64, STATE_DIM>;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid plan request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlanMethod {
    #[serde(rename = "ZS")]
    ZeroStart,
    #[serde(rename = "DS")]
    DemoStart,
    #[serde(rename = "DP")]
    DemoPrior,
    #[serde(rename = "WS")]
    WarmStart,
}

impl PlanMethod {
    pub const ALL: [PlanMethod; 4] = [
        Self::ZeroStart,
        Self::DemoStart,
        Self::DemoPrior,
        Self::WarmStart,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Self::ZeroStart => "ZS",
            Self::DemoStart => "DS",
            Self::DemoPrior => "DP",
            Self::WarmStart => "WS",
        }
    }

    pub fn uses_demo(self) -> bool {
        self != Self::ZeroStart
    }
}

impl fmt::Display for PlanMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PlanMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zs" | "zs-ddp" => Ok(Self::ZeroStart),
            "ds" | "ds-ddp" => Ok(Self::DemoStart),
            "dp" | "dp-ddp" => Ok(Self::DemoPrior),
            "ws" | "ws-ddp" => Ok(Self::WarmStart),
            other => Err(format!("unknown method `{other}` (expected zs, ds, dp or ws)")),
        }
    }
}

/// Weights of the planning costs. Diagonal matrices are stored as their diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Common scale of the terminal weight.
    pub terminal_scale: f64,
    pub terminal_pose: [f64; 3],
    pub terminal_velocity: f64,
    /// Common scale of the switch viapoint weight.
    pub switch_scale: f64,
    pub switch_pose: f64,
    pub r: [f64; 2],
    pub q_f: [f64; 2],
    pub r_dv: [f64; 2],
    pub r_du: [f64; 2],
    pub u_l: [f64; 2],
    /// Weight of the penalty on contact points near a face corner.
    pub edge_weight: f64,
    /// Distance from the face center where the corner penalty starts (m).
    pub edge_start: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            terminal_scale: 1e6,
            terminal_pose: [1.0, 1.0, 1.0],
            terminal_velocity: 1e-3,
            switch_scale: 1e6,
            switch_pose: 1e-3,
            r: [1.0, 1.0],
            q_f: [1e3, 1e3],
            r_dv: [100.0, 100.0],
            r_du: [100.0, 100.0],
            u_l: [0.5, 0.5],
            edge_weight: 1e6,
            edge_start: 0.04,
        }
    }
}

/// `1` for faces whose normal lies along the slider x-axis, else `0`.
fn face_flag(face: ContactFace) -> f64 {
    if face.is_x_normal() {
        1.0
    } else {
        0.0
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), PlanError> {
        let nonneg = [self.terminal_scale, self.switch_scale, self.switch_pose, self.terminal_velocity]
            .into_iter()
            .chain(self.terminal_pose)
            .chain(self.r)
            .chain(self.q_f)
            .chain(self.r_dv)
            .chain(self.r_du);
        if nonneg.into_iter().any(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(PlanError::InvalidRequest(
                "cost weights must be finite and non-negative".into(),
            ));
        }
        if self.u_l.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(PlanError::InvalidRequest(
                "control bound u_l must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Diagonal of `Q_T` for a trajectory ending on `face`.
    pub fn terminal_weight(&self, face: ContactFace) -> Diag7 {
        let p = face_flag(face);
        let [wx, wy, wt] = self.terminal_pose;
        let v = self.terminal_velocity;
        Diag7::from([
            wx,
            wy,
            wt,
            10f64.powf(6.0 * p - 5.0),
            10f64.powf(1.0 - 6.0 * p),
            v,
            v,
        ]) * self.terminal_scale
    }

    /// Diagonal of `Q_n` for a switch onto `face`.
    pub fn switch_weight(&self, face: ContactFace) -> Diag7 {
        let p = face_flag(face);
        let w = self.switch_pose;
        Diag7::from([w, w, w, p, 1.0 - p, 0.0, 0.0]) * self.switch_scale
    }
}

/// Componentwise dead-zone: zero inside `[-u_l, u_l]`, linear excess outside.
pub fn soft_threshold(u: &ControlVector, u_l: &ControlVector) -> ControlVector {
    u.zip_map(u_l, |ui, li| (ui - li).max(0.0) + (ui + li).min(0.0))
}

fn weighted_sq(r: &Diag7, w: &Diag7) -> f64 {
    r.component_mul(r).dot(w)
}

fn weighted_sq2(r: &Vector2<f64>, w: &[f64; 2]) -> f64 {
    w[0] * r[0] * r[0] + w[1] * r[1] * r[1]
}

/// Demonstration-following terms of the prior cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoTerms {
    pub velocities: Vec<Vector2<f64>>,
    pub controls: Vec<ControlVector>,
    /// `(t, μ_t, diag Q_n)` for each demonstrated switch.
    pub viapoints: Vec<(usize, StateVector, Diag7)>,
}

/// The planning cost: reaching, regularizer and bound penalty, plus the
/// optional demo-following terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PushingCost {
    pub terminal_target: StateVector,
    pub terminal_weight: Diag7,
    pub r: [f64; 2],
    pub q_f: [f64; 2],
    pub u_l: ControlVector,
    pub r_dv: [f64; 2],
    pub r_du: [f64; 2],
    pub demo: Option<DemoTerms>,
    pub edge: Option<EdgeGuard>,
}

/// Penalty keeping the contact point away from the face corners while the
/// pusher is near the face, `w (r_edge r_band)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGuard {
    pub faces: Vec<ContactFace>,
    pub weight: f64,
    pub start: f64,
    /// Normal distance at which the pusher touches the face.
    pub band: f64,
    /// Normal distance beyond the band over which the penalty fades out.
    pub falloff: f64,
}

impl EdgeGuard {
    /// Residual and its gradient with respect to the `F_s` contact point.
    fn residual(&self, t: usize, x: &StateVector) -> (f64, Vector2<f64>) {
        let face = self.faces[t.min(self.faces.len() - 1)];
        let rot = rotation2(face.theta_f());
        let p = rot.transpose() * Vector2::new(x[3], x[4]);
        let r1 = (p.y.abs() - self.start).max(0.0);
        let over = p.x.abs() - self.band;
        let r2 = if over <= 0.0 {
            1.0
        } else {
            (1.0 - over / self.falloff).max(0.0)
        };
        if r1 == 0.0 || r2 == 0.0 {
            return (0.0, Vector2::zeros());
        }
        let d1 = p.y.signum();
        let d2 = if over <= 0.0 { 0.0 } else { -p.x.signum() / self.falloff };
        let grad_face = Vector2::new(r1 * d2, r2 * d1);
        (r1 * r2, rot * grad_face)
    }
}

/// Per-term values of [`PushingCost`] along a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub reaching: f64,
    pub regularizer: f64,
    pub boundary: f64,
    pub switching: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub edge: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.c1_part() + self.switching + self.velocity + self.acceleration
    }

    /// The part shared with the demo-free cost.
    pub fn c1_part(&self) -> f64 {
        self.reaching + self.regularizer + self.boundary + self.edge
    }
}

/// Terminal anchor: target slider pose, the given contact point, zero velocity.
pub fn terminal_target(target: &SliderPose, contact: Vector2<f64>) -> StateVector {
    StateVector::from([target.x, target.y, target.theta, contact.x, contact.y, 0.0, 0.0])
}

/// Centered contact point on `face`, in `F_s`.
pub fn centered_contact(face: ContactFace, params: &PhysicalParams) -> Vector2<f64> {
    rotation2(face.theta_f()) * Vector2::new(-params.contact_offset(), 0.0)
}

/// Demo-free cost `c1` ending on `final_face` with the given contact anchor.
pub fn build_cost_c1(
    target: &SliderPose,
    weights: &CostWeights,
    final_face: ContactFace,
    final_contact: Vector2<f64>,
) -> PushingCost {
    PushingCost {
        terminal_target: terminal_target(target, final_contact),
        terminal_weight: weights.terminal_weight(final_face),
        r: weights.r,
        q_f: weights.q_f,
        u_l: ControlVector::from(weights.u_l),
        r_dv: weights.r_dv,
        r_du: weights.r_du,
        demo: None,
        edge: None,
    }
}

/// Demo-following cost `c2`; `demo` must already be on the planning horizon.
pub fn build_cost_c2(target: &SliderPose, demo: &Demonstration, weights: &CostWeights) -> PushingCost {
    let final_contact = demo.states.last().expect("validated demo").contact;
    let mut cost = build_cost_c1(target, weights, demo.final_face(), final_contact);
    cost.demo = Some(DemoTerms {
        velocities: demo.states[..demo.horizon()]
            .iter()
            .map(|s| s.velocity)
            .collect(),
        controls: demo.controls.iter().map(|u| u.0).collect(),
        viapoints: demo
            .switch_times
            .iter()
            .map(|&t| (t, demo.states[t].to_vector(), weights.switch_weight(demo.faces[t])))
            .collect(),
    });
    cost
}

impl PushingCost {
    fn viapoint(&self, t: usize) -> Option<&(usize, StateVector, Diag7)> {
        self.demo
            .as_ref()
            .and_then(|d| d.viapoints.iter().find(|(n, _, _)| *n == t))
    }

    pub fn stage_breakdown(&self, t: usize, x: &StateVector, u: &ControlVector) -> CostBreakdown {
        let cut = soft_threshold(u, &self.u_l);
        let mut b = CostBreakdown {
            regularizer: weighted_sq2(u, &self.r),
            boundary: weighted_sq2(&cut, &self.q_f),
            ..CostBreakdown::default()
        };
        if let Some(edge) = &self.edge {
            let (r, _) = edge.residual(t, x);
            b.edge = edge.weight * r * r;
        }
        if let Some(demo) = &self.demo {
            let v = Vector2::new(x[5], x[6]);
            if let Some(ref_v) = demo.velocities.get(t) {
                b.velocity = weighted_sq2(&(ref_v - v), &self.r_dv);
            }
            if let Some(ref_u) = demo.controls.get(t) {
                b.acceleration = weighted_sq2(&(ref_u - u), &self.r_du);
            }
            if let Some((_, mu, w)) = self.viapoint(t) {
                b.switching = weighted_sq(&state_difference(mu, x), w);
            }
        }
        b
    }

    pub fn terminal_breakdown(&self, x: &StateVector) -> CostBreakdown {
        CostBreakdown {
            reaching: weighted_sq(
                &state_difference(&self.terminal_target, x),
                &self.terminal_weight,
            ),
            ..CostBreakdown::default()
        }
    }

    /// Per-term cost of a whole trajectory.
    pub fn breakdown(&self, states: &[StateVector], controls: &[ControlVector]) -> CostBreakdown {
        let mut total = self.terminal_breakdown(states.last().expect("non-empty trajectory"));
        for (t, (x, u)) in states.iter().zip(controls).enumerate() {
            let b = self.stage_breakdown(t, x, u);
            total.regularizer += b.regularizer;
            total.boundary += b.boundary;
            total.switching += b.switching;
            total.velocity += b.velocity;
            total.acceleration += b.acceleration;
            total.edge += b.edge;
        }
        total
    }

    /// The same cost without its demo-following terms.
    pub fn without_demo(&self) -> PushingCost {
        PushingCost {
            demo: None,
            ..self.clone()
        }
    }
}

impl CostModel<STATE_DIM, CONTROL_DIM> for PushingCost {
    fn stage_cost(&self, t: usize, x: &StateVector, u: &ControlVector) -> f64 {
        self.stage_breakdown(t, x, u).total()
    }

    fn stage_expansion(
        &self,
        t: usize,
        x: &StateVector,
        u: &ControlVector,
    ) -> StageExpansion<STATE_DIM, CONTROL_DIM> {
        let mut e = StageExpansion::zeros();
        let cut = soft_threshold(u, &self.u_l);
        for i in 0..CONTROL_DIM {
            e.lu[i] = 2.0 * self.r[i] * u[i] + 2.0 * self.q_f[i] * cut[i];
            let active = if cut[i] != 0.0 { self.q_f[i] } else { 0.0 };
            e.luu[(i, i)] = 2.0 * (self.r[i] + active);
        }
        if let Some(edge) = &self.edge {
            let (r, g) = edge.residual(t, x);
            if r != 0.0 {
                for i in 0..2 {
                    e.lx[3 + i] += 2.0 * edge.weight * r * g[i];
                    for j in 0..2 {
                        e.lxx[(3 + i, 3 + j)] += 2.0 * edge.weight * g[i] * g[j];
                    }
                }
            }
        }
        if let Some(demo) = &self.demo {
            if let Some(ref_v) = demo.velocities.get(t) {
                for i in 0..2 {
                    e.lx[5 + i] += 2.0 * self.r_dv[i] * (x[5 + i] - ref_v[i]);
                    e.lxx[(5 + i, 5 + i)] += 2.0 * self.r_dv[i];
                }
            }
            if let Some(ref_u) = demo.controls.get(t) {
                for i in 0..2 {
                    e.lu[i] += 2.0 * self.r_du[i] * (u[i] - ref_u[i]);
                    e.luu[(i, i)] += 2.0 * self.r_du[i];
                }
            }
            if let Some((_, mu, w)) = self.viapoint(t) {
                let r = state_difference(x, mu);
                e.lx += 2.0 * w.component_mul(&r);
                e.lxx += SMatrix::from_diagonal(&(2.0 * w));
            }
        }
        e
    }

    fn terminal_cost(&self, x: &StateVector) -> f64 {
        self.terminal_breakdown(x).reaching
    }

    fn terminal_expansion(&self, x: &StateVector) -> TerminalExpansion<STATE_DIM> {
        let r = state_difference(x, &self.terminal_target);
        TerminalExpansion {
            lx: 2.0 * self.terminal_weight.component_mul(&r),
            lxx: SMatrix::from_diagonal(&(2.0 * self.terminal_weight)),
        }
    }
}

/// Slider at the origin, pusher at rest `1.3 (r_s + r_p)` in front of `face`.
pub fn initial_state(face: ContactFace, params: &PhysicalParams) -> SystemState {
    standoff_state(face, params, INITIAL_STANDOFF)
}

/// Strict 1 cm / 1 cm / 5° test.
pub fn evaluate_success(errors: (f64, f64, f64)) -> bool {
    errors.0 < PLAN_POSITION_TOLERANCE
        && errors.1 < PLAN_POSITION_TOLERANCE
        && errors.2 < PLAN_ANGLE_TOLERANCE
}

pub fn validate_target(target: &SliderPose) -> Result<(), PlanError> {
    let h = TASK_SPACE_HALF_WIDTH;
    if !(target.x.abs() <= h) {
        return Err(PlanError::InvalidRequest(format!(
            "target x = {} outside task space [-{h}, {h}] m",
            target.x
        )));
    }
    if !(target.y.abs() <= h) {
        return Err(PlanError::InvalidRequest(format!(
            "target y = {} outside task space [-{h}, {h}] m",
            target.y
        )));
    }
    if !(target.theta.abs() <= std::f64::consts::PI) {
        return Err(PlanError::InvalidRequest(format!(
            "target theta = {} outside task space [-pi, pi] rad",
            target.theta
        )));
    }
    Ok(())
}

/// A planned trajectory with its feedback gains, in the on-disk layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    pub dt: f64,
    pub faces: Vec<ContactFace>,
    pub states: Vec<SystemState>,
    pub controls: Vec<ControlInput>,
    /// Row-major 2×7 feedback gains, one row of 14 per step.
    pub gains: Vec<Vec<f64>>,
    pub total_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost of the initial rollout and of every accepted iterate.
    #[serde(default)]
    pub cost_history: Vec<f64>,
}

impl PlannedTrajectory {
    pub fn from_solution(
        solution: &ddp::Solution<STATE_DIM, CONTROL_DIM>,
        faces: Vec<ContactFace>,
        dt: f64,
    ) -> Self {
        Self {
            dt,
            faces,
            states: solution.states.iter().map(SystemState::from_vector).collect(),
            controls: solution.controls.iter().map(|u| ControlInput(*u)).collect(),
            gains: solution
                .gains
                .iter()
                .map(|k| k.transpose().iter().copied().collect())
                .collect(),
            total_cost: solution.total_cost,
            iterations: solution.iterations,
            converged: solution.converged,
            cost_history: solution.cost_history.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn gain(&self, t: usize) -> SMatrix<f64, CONTROL_DIM, STATE_DIM> {
        SMatrix::<f64, CONTROL_DIM, STATE_DIM>::from_row_slice(&self.gains[t])
    }

    pub fn final_pose(&self) -> SliderPose {
        self.states.last().expect("non-empty plan").pose
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = self.controls.len();
        if t == 0 {
            return Err("plan has no controls".into());
        }
        if self.states.len() != t + 1 || self.faces.len() != t || self.gains.len() != t {
            return Err(format!(
                "length mismatch: {} states, {t} controls, {} faces, {} gains",
                self.states.len(),
                self.faces.len(),
                self.gains.len()
            ));
        }
        if self.gains.iter().any(|g| g.len() != STATE_DIM * CONTROL_DIM) {
            return Err("each gain row must have 14 entries".into());
        }
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        Ok(())
    }
}

/// What the warm start inherited from its demo-prior stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartTrace {
    pub prior_total_cost: f64,
    /// The demo-free cost of the prior solution, which the warm start can only improve.
    pub prior_c1_cost: f64,
    pub prior_iterations: usize,
    pub seed_controls: Vec<ControlInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub method: PlanMethod,
    pub target: SliderPose,
    pub selected_demo: Option<usize>,
    pub solution: PlannedTrajectory,
    pub cost: CostBreakdown,
    pub x_err: f64,
    pub y_err: f64,
    pub theta_err: f64,
    pub success: bool,
    pub wall_time_s: f64,
    pub warm_start: Option<WarmStartTrace>,
}

impl PlanReport {
    pub fn errors(&self) -> (f64, f64, f64) {
        (self.x_err, self.y_err, self.theta_err)
    }
}

/// Everything but the target and method that a plan depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub horizon: usize,
    pub params: PhysicalParams,
    pub weights: CostWeights,
    pub solver: SolverConfig,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            params: PhysicalParams::default(),
            weights: CostWeights::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRequest {
    pub target: SliderPose,
    pub method: PlanMethod,
    pub settings: PlanSettings,
}

struct Solved {
    solution: ddp::Solution<STATE_DIM, CONTROL_DIM>,
    faces: Vec<ContactFace>,
    cost: PushingCost,
}

pub type PushingProblem = OcpProblem<PushingDynamics, PushingCost, STATE_DIM, CONTROL_DIM>;

/// The optimal control problem solved for a face schedule: starts at the
/// stand-off state of the first face and adds the contact-edge guard when
/// enabled.
pub fn planning_problem(
    settings: &PlanSettings,
    faces: Vec<ContactFace>,
    mut cost: PushingCost,
) -> PushingProblem {
    if settings.weights.edge_weight > 0.0 {
        cost.edge = Some(EdgeGuard {
            faces: faces.clone(),
            weight: settings.weights.edge_weight,
            start: settings.weights.edge_start,
            band: settings.params.contact_offset(),
            falloff: EDGE_FALLOFF,
        });
    }
    OcpProblem {
        horizon: faces.len(),
        initial_state: initial_state(faces[0], &settings.params).to_vector(),
        dynamics: PushingDynamics::new(settings.params, faces),
        cost,
    }
}

fn run_solver(
    settings: &PlanSettings,
    faces: Vec<ContactFace>,
    cost: PushingCost,
    initial_controls: &[ControlVector],
) -> Result<Solved, PlanError> {
    let problem = planning_problem(settings, faces, cost);
    let solution = ddp::solve(&problem, initial_controls, &settings.solver)?;
    Ok(Solved {
        solution,
        faces: problem.dynamics.faces,
        cost: problem.cost,
    })
}

fn report(
    method: PlanMethod,
    target: &SliderPose,
    selected_demo: Option<usize>,
    solved: &Solved,
    settings: &PlanSettings,
    started: Instant,
    warm_start: Option<WarmStartTrace>,
) -> PlanReport {
    let solution =
        PlannedTrajectory::from_solution(&solved.solution, solved.faces.clone(), settings.params.dt);
    let errors = solution.final_pose().abs_error(target);
    PlanReport {
        method,
        target: *target,
        selected_demo,
        cost: solved
            .cost
            .breakdown(&solved.solution.states, &solved.solution.controls),
        x_err: errors.0,
        y_err: errors.1,
        theta_err: errors.2,
        success: evaluate_success(errors),
        wall_time_s: started.elapsed().as_secs_f64(),
        solution,
        warm_start,
    }
}

/// The selected demo, re-timed onto the planning horizon.
fn demo_for(
    library: &DemoLibrary,
    target: &SliderPose,
    horizon: usize,
) -> Result<(usize, Demonstration), PlanError> {
    let index = select_demo(library, target)?;
    let demo = &library.demos[index];
    let demo = if demo.horizon() == horizon {
        demo.clone()
    } else {
        resample(demo, horizon)
    };
    Ok((index, demo))
}

/// Plans several methods for one target, sharing the demo-prior solve
/// between DP and WS. Reports come back in the order of `methods`.
pub fn plan_methods(
    target: &SliderPose,
    methods: &[PlanMethod],
    library: &DemoLibrary,
    settings: &PlanSettings,
) -> Result<Vec<PlanReport>, PlanError> {
    validate_target(target)?;
    settings.weights.validate()?;
    settings.params.validate().map_err(|e| PlanError::InvalidRequest(e.to_string()))?;
    if settings.horizon < 2 {
        return Err(PlanError::InvalidRequest("horizon must be at least 2".into()));
    }
    let horizon = settings.horizon;
    let weights = &settings.weights;
    let zeros = vec![ControlVector::zeros(); horizon];

    let demo = if methods.iter().any(|m| m.uses_demo()) {
        Some(demo_for(library, target, horizon)?)
    } else {
        None
    };
    let mut prior: Option<(Solved, f64)> = None;
    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let started = Instant::now();
        let report = match method {
            PlanMethod::ZeroStart => {
                let faces = vec![DEFAULT_FACE; horizon];
                let contact = centered_contact(DEFAULT_FACE, &settings.params);
                let cost = build_cost_c1(target, weights, DEFAULT_FACE, contact);
                let solved = run_solver(settings, faces, cost, &zeros)?;
                report(method, target, None, &solved, settings, started, None)
            }
            PlanMethod::DemoStart => {
                let (index, demo) = demo.as_ref().expect("demo selected above");
                let contact = demo.states[horizon].contact;
                let cost = build_cost_c1(target, weights, demo.final_face(), contact);
                let controls: Vec<_> = demo.controls.iter().map(|u| u.0).collect();
                let solved = run_solver(settings, demo.faces.clone(), cost, &controls)?;
                report(method, target, Some(*index), &solved, settings, started, None)
            }
            PlanMethod::DemoPrior | PlanMethod::WarmStart => {
                let (index, demo) = demo.as_ref().expect("demo selected above");
                if prior.is_none() {
                    let cost = build_cost_c2(target, demo, weights);
                    let solved = run_solver(settings, demo.faces.clone(), cost, &zeros)?;
                    prior = Some((solved, started.elapsed().as_secs_f64()));
                }
                let (dp, dp_time) = prior.as_ref().expect("prior solved above");
                if method == PlanMethod::DemoPrior {
                    let mut r = report(method, target, Some(*index), dp, settings, started, None);
                    r.wall_time_s = *dp_time;
                    r
                } else {
                    let c1 = dp.cost.without_demo();
                    let prior_c1_cost = ddp::trajectory_cost(
                        &OcpProblem {
                            horizon,
                            initial_state: dp.solution.states[0],
                            dynamics: PushingDynamics::new(settings.params, dp.faces.clone()),
                            cost: c1.clone(),
                        },
                        &dp.solution.states,
                        &dp.solution.controls,
                    );
                    let seed = dp.solution.controls.clone();
                    let solved = run_solver(settings, dp.faces.clone(), c1, &seed)?;
                    let trace = WarmStartTrace {
                        prior_total_cost: dp.solution.total_cost,
                        prior_c1_cost,
                        prior_iterations: dp.solution.iterations,
                        seed_controls: seed.iter().map(|u| ControlInput(*u)).collect(),
                    };
                    let mut r =
                        report(method, target, Some(*index), &solved, settings, started, Some(trace));
                    r.wall_time_s += dp_time;
                    r
                }
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Plans one request. Demo-based methods select from `library`.
pub fn plan(request: &PlanRequest, library: &DemoLibrary) -> Result<PlanReport, PlanError> {
    let mut reports = plan_methods(&request.target, &[request.method], library, &request.settings)?;
    Ok(reports.pop().expect("one method requested"))
}
