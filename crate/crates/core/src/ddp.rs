//! Iterative LQR (Gauss-Newton DDP) over fixed-size systems.
//!
//! The solver is generic over the state and control dimensions and only sees
//! a problem through the [`Dynamics`] and [`CostModel`] traits, so the same
//! code drives the hybrid pusher-slider problem and plain linear-quadratic
//! test instances.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("Q_uu is not positive definite at step {step}")]
    NotPositiveDefinite { step: usize },
    #[error("rollout produced a non-finite state at step {step}")]
    NonFiniteRollout { step: usize },
    #[error("dynamics failed at step {step}: {message}")]
    Dynamics { step: usize, message: String },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Discrete-time dynamics `x_{t+1} = f_t(x_t, u_t)`.
pub trait Dynamics<const N: usize, const M: usize> {
    fn step(&self, t: usize, x: &SVector<f64, N>, u: &SVector<f64, M>)
        -> Result<SVector<f64, N>, SolverError>;

    /// First-order model `(A, B)` of the step at `(x, u)`.
    ///
    /// Defaults to central finite differences of [`Dynamics::step`] with step `h`.
    fn linearize(
        &self,
        t: usize,
        x: &SVector<f64, N>,
        u: &SVector<f64, M>,
        h: f64,
    ) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, N, M>), SolverError> {
        central_differences(|x, u| self.step(t, x, u), x, u, h)
    }

    /// Deviation `a - b` in the tangent space (angles may wrap).
    fn state_difference(&self, a: &SVector<f64, N>, b: &SVector<f64, N>) -> SVector<f64, N> {
        a - b
    }
}

/// Gradient and Gauss-Newton Hessian of a stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageExpansion<const N: usize, const M: usize> {
    pub lx: SVector<f64, N>,
    pub lu: SVector<f64, M>,
    pub lxx: SMatrix<f64, N, N>,
    pub luu: SMatrix<f64, M, M>,
    pub lux: SMatrix<f64, M, N>,
}

impl<const N: usize, const M: usize> StageExpansion<N, M> {
    pub fn zeros() -> Self {
        Self {
            lx: SVector::zeros(),
            lu: SVector::zeros(),
            lxx: SMatrix::zeros(),
            luu: SMatrix::zeros(),
            lux: SMatrix::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalExpansion<const N: usize> {
    pub lx: SVector<f64, N>,
    pub lxx: SMatrix<f64, N, N>,
}

pub trait CostModel<const N: usize, const M: usize> {
    fn stage_cost(&self, t: usize, x: &SVector<f64, N>, u: &SVector<f64, M>) -> f64;
    fn stage_expansion(
        &self,
        t: usize,
        x: &SVector<f64, N>,
        u: &SVector<f64, M>,
    ) -> StageExpansion<N, M>;
    fn terminal_cost(&self, x: &SVector<f64, N>) -> f64;
    fn terminal_expansion(&self, x: &SVector<f64, N>) -> TerminalExpansion<N>;
}

/// A finite-horizon optimal control problem.
#[derive(Debug, Clone)]
pub struct OcpProblem<D, C, const N: usize, const M: usize> {
    pub horizon: usize,
    pub initial_state: SVector<f64, N>,
    pub dynamics: D,
    pub cost: C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Relative cost decrease below which the solve is considered converged.
    pub cost_tolerance: f64,
    pub regularization_init: f64,
    pub regularization_min: f64,
    pub regularization_max: f64,
    /// Multiplier applied to the regularization after a failed iteration.
    pub regularization_increase: f64,
    /// Divisor applied to the regularization after a successful iteration.
    pub regularization_decrease: f64,
    pub backtracking_factor: f64,
    pub min_step: f64,
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            cost_tolerance: 1e-7,
            regularization_init: 1e-9,
            regularization_min: 1e-9,
            regularization_max: 1e9,
            regularization_increase: 10.0,
            regularization_decrease: 2.0,
            backtracking_factor: 0.5,
            min_step: 1.0 / 1024.0,
            fd_step: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            self.cost_tolerance,
            self.regularization_init,
            self.regularization_min,
            self.regularization_max,
            self.regularization_increase,
            self.regularization_decrease,
            self.min_step,
            self.fd_step,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(SolverError::InvalidProblem(
                "solver settings must be positive".into(),
            ));
        }
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return Err(SolverError::InvalidProblem(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Line-search step lengths, largest first.
    pub fn step_lengths(&self) -> Vec<f64> {
        let mut alphas = Vec::new();
        let mut alpha = 1.0;
        while alpha >= self.min_step * (1.0 - 1e-12) {
            alphas.push(alpha);
            alpha *= self.backtracking_factor;
        }
        alphas
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize, const M: usize> {
    pub states: Vec<SVector<f64, N>>,
    pub controls: Vec<SVector<f64, M>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<const N: usize, const M: usize> {
    pub states: Vec<SVector<f64, N>>,
    pub controls: Vec<SVector<f64, M>>,
    pub gains: Vec<SMatrix<f64, M, N>>,
    pub total_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost of the initial rollout followed by the cost of every accepted iterate.
    pub cost_history: Vec<f64>,
}

impl<const N: usize, const M: usize> Solution<N, M> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// `û_t + K_t (x - x̂_t)`.
    pub fn feedback_control(&self, t: usize, x: &SVector<f64, N>) -> SVector<f64, M> {
        self.feedback_control_from_deviation(t, &(x - self.states[t]))
    }

    /// `û_t + K_t δ` for an already computed deviation `δ`.
    pub fn feedback_control_from_deviation(
        &self,
        t: usize,
        deviation: &SVector<f64, N>,
    ) -> SVector<f64, M> {
        self.controls[t] + self.gains[t] * deviation
    }
}

#[derive(Debug, Clone)]
pub struct BackwardPass<const N: usize, const M: usize> {
    pub gains: Vec<SMatrix<f64, M, N>>,
    pub feedforwards: Vec<SVector<f64, M>>,
    /// `Σ k_tᵀ Q_u` and `½ Σ k_tᵀ Q_uu k_t`; predicted change at step α is `α d1 + α² d2`.
    pub expected_terms: (f64, f64),
    /// Value function gradients `V_x` for `t = 0..=T`.
    pub value_gradients: Vec<SVector<f64, N>>,
    pub value_hessians: Vec<SMatrix<f64, N, N>>,
}

impl<const N: usize, const M: usize> BackwardPass<N, M> {
    /// Predicted cost decrease at step length `alpha` (non-negative).
    pub fn expected_improvement(&self, alpha: f64) -> f64 {
        -(alpha * self.expected_terms.0 + alpha * alpha * self.expected_terms.1)
    }
}

pub type Linearization<const N: usize, const M: usize> =
    (SMatrix<f64, N, N>, SMatrix<f64, N, M>);

/// Central finite differences of `f` around `(x, u)`.
pub fn central_differences<F, const N: usize, const M: usize>(
    f: F,
    x: &SVector<f64, N>,
    u: &SVector<f64, M>,
    h: f64,
) -> Result<Linearization<N, M>, SolverError>
where
    F: Fn(&SVector<f64, N>, &SVector<f64, M>) -> Result<SVector<f64, N>, SolverError>,
{
    let mut a = SMatrix::<f64, N, N>::zeros();
    let mut b = SMatrix::<f64, N, M>::zeros();
    for j in 0..N {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp, u)? - f(&xm, u)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    for j in 0..M {
        let mut up = *u;
        let mut um = *u;
        up[j] += h;
        um[j] -= h;
        let col = (f(x, &up)? - f(x, &um)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// Rolls `controls` out from the problem's initial state.
pub fn rollout<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    controls: &[SVector<f64, M>],
) -> Result<Vec<SVector<f64, N>>, SolverError>
where
    D: Dynamics<N, M>,
{
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(problem.initial_state);
    for (t, u) in controls.iter().enumerate() {
        let next = problem.dynamics.step(t, &states[t], u)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFiniteRollout { step: t + 1 });
        }
        states.push(next);
    }
    Ok(states)
}

/// Total cost of a state/control trajectory.
pub fn trajectory_cost<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    states: &[SVector<f64, N>],
    controls: &[SVector<f64, M>],
) -> f64
where
    C: CostModel<N, M>,
{
    let running: f64 = controls
        .iter()
        .enumerate()
        .map(|(t, u)| problem.cost.stage_cost(t, &states[t], u))
        .sum();
    running + problem.cost.terminal_cost(&states[controls.len()])
}

/// First-order model of the step at `(x, u)`, time `t`.
pub fn linearize<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    x: &SVector<f64, N>,
    u: &SVector<f64, M>,
    t: usize,
    h: f64,
) -> Result<Linearization<N, M>, SolverError>
where
    D: Dynamics<N, M>,
{
    problem.dynamics.linearize(t, x, u, h)
}

pub fn linearize_trajectory<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    nominal: &Trajectory<N, M>,
    h: f64,
) -> Result<Vec<Linearization<N, M>>, SolverError>
where
    D: Dynamics<N, M>,
{
    nominal
        .controls
        .iter()
        .enumerate()
        .map(|(t, u)| linearize(problem, &nominal.states[t], u, t, h))
        .collect()
}

/// Riccati-like recursion on the quadratized cost-to-go.
///
/// `regularization` is added to the diagonal of `Q_uu` before factorization.
pub fn backward_pass<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    nominal: &Trajectory<N, M>,
    linearization: &[Linearization<N, M>],
    regularization: f64,
) -> Result<BackwardPass<N, M>, SolverError>
where
    C: CostModel<N, M>,
{
    let horizon = nominal.controls.len();
    let terminal = problem.cost.terminal_expansion(&nominal.states[horizon]);
    let mut v_x = terminal.lx;
    let mut v_xx = terminal.lxx;

    let mut gains = vec![SMatrix::<f64, M, N>::zeros(); horizon];
    let mut feedforwards = vec![SVector::<f64, M>::zeros(); horizon];
    let mut value_gradients = vec![SVector::<f64, N>::zeros(); horizon + 1];
    let mut value_hessians = vec![SMatrix::<f64, N, N>::zeros(); horizon + 1];
    value_gradients[horizon] = v_x;
    value_hessians[horizon] = v_xx;
    let (mut d1, mut d2) = (0.0, 0.0);

    for t in (0..horizon).rev() {
        let (a, b) = &linearization[t];
        let l = problem
            .cost
            .stage_expansion(t, &nominal.states[t], &nominal.controls[t]);

        let q_x = l.lx + a.transpose() * v_x;
        let q_u = l.lu + b.transpose() * v_x;
        let q_xx = l.lxx + a.transpose() * v_xx * a;
        let q_uu = l.luu + b.transpose() * v_xx * b;
        let q_ux = l.lux + b.transpose() * v_xx * a;

        let mut q_uu_reg = q_uu;
        for i in 0..M {
            q_uu_reg[(i, i)] += regularization;
        }
        let chol = q_uu_reg
            .cholesky()
            .ok_or(SolverError::NotPositiveDefinite { step: t })?;
        let k = -chol.solve(&q_u);
        let gain = -chol.solve(&q_ux);

        d1 += k.dot(&q_u);
        d2 += 0.5 * k.dot(&(q_uu * k));

        v_x = q_x + gain.transpose() * q_uu * k + gain.transpose() * q_u + q_ux.transpose() * k;
        let vxx = q_xx
            + gain.transpose() * q_uu * gain
            + gain.transpose() * q_ux
            + q_ux.transpose() * gain;
        v_xx = 0.5 * (vxx + vxx.transpose());

        gains[t] = gain;
        feedforwards[t] = k;
        value_gradients[t] = v_x;
        value_hessians[t] = v_xx;
    }

    Ok(BackwardPass {
        gains,
        feedforwards,
        expected_terms: (d1, d2),
        value_gradients,
        value_hessians,
    })
}

/// Rolls out `u_t = û_t + α k_t + K_t (x_t - x̂_t)` through the true dynamics.
pub fn forward_pass<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    nominal: &Trajectory<N, M>,
    gains: &[SMatrix<f64, M, N>],
    feedforwards: &[SVector<f64, M>],
    alpha: f64,
) -> Result<(Trajectory<N, M>, f64), SolverError>
where
    D: Dynamics<N, M>,
    C: CostModel<N, M>,
{
    let horizon = nominal.controls.len();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(nominal.states[0]);
    for t in 0..horizon {
        let dx = problem
            .dynamics
            .state_difference(&states[t], &nominal.states[t]);
        let u = nominal.controls[t] + feedforwards[t] * alpha + gains[t] * dx;
        let next = problem.dynamics.step(t, &states[t], &u)?;
        if !next.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFiniteRollout { step: t + 1 });
        }
        controls.push(u);
        states.push(next);
    }
    let cost = trajectory_cost(problem, &states, &controls);
    Ok((Trajectory { states, controls }, cost))
}

type Candidate<const N: usize, const M: usize> = Option<(Trajectory<N, M>, f64)>;

/// First step length whose rollout lowers the cost below `cost`.
fn line_search<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    nominal: &Trajectory<N, M>,
    gains: &[SMatrix<f64, M, N>],
    feedforwards: &[SVector<f64, M>],
    alphas: &[f64],
    cost: f64,
) -> Result<Candidate<N, M>, SolverError>
where
    D: Dynamics<N, M>,
    C: CostModel<N, M>,
{
    for &alpha in alphas {
        match forward_pass(problem, nominal, gains, feedforwards, alpha) {
            Ok((candidate, candidate_cost)) if candidate_cost < cost => {
                return Ok(Some((candidate, candidate_cost)));
            }
            Ok(_) | Err(SolverError::NonFiniteRollout { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Runs iLQR from `initial_controls` until the relative cost decrease falls
/// below the tolerance or the iteration budget is spent.
///
/// Always returns the best trajectory found. The gains attached to the
/// solution come from a final backward pass around that trajectory.
pub fn solve<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    initial_controls: &[SVector<f64, M>],
    config: &SolverConfig,
) -> Result<Solution<N, M>, SolverError>
where
    D: Dynamics<N, M>,
    C: CostModel<N, M>,
{
    config.validate()?;
    if initial_controls.len() != problem.horizon {
        return Err(SolverError::InvalidProblem(format!(
            "expected {} initial controls, got {}",
            problem.horizon,
            initial_controls.len()
        )));
    }

    let states = rollout(problem, initial_controls)?;
    let mut cost = trajectory_cost(problem, &states, initial_controls);
    let mut nominal = Trajectory {
        states,
        controls: initial_controls.to_vec(),
    };
    let mut history = vec![cost];
    let mut regularization = config.regularization_init;
    let mut converged = false;
    let mut iterations = 0;
    let alphas = config.step_lengths();

    while iterations < config.max_iterations {
        iterations += 1;
        let linearization = linearize_trajectory(problem, &nominal, config.fd_step)?;

        let mut accepted = None;
        let mut stationary = false;
        while regularization <= config.regularization_max {
            let pass = match backward_pass(problem, &nominal, &linearization, regularization) {
                Ok(pass) => pass,
                Err(SolverError::NotPositiveDefinite { .. }) => {
                    regularization *= config.regularization_increase;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if pass.expected_improvement(1.0) <= config.cost_tolerance * cost.abs().max(1e-12) {
                stationary = true;
                break;
            }
            accepted = line_search(problem, &nominal, &pass.gains, &pass.feedforwards, &alphas, cost)?;
            if accepted.is_some() {
                break;
            }
            regularization *= config.regularization_increase;
        }

        let Some((candidate, candidate_cost)) = accepted else {
            converged = stationary;
            break;
        };
        let decrease = (cost - candidate_cost) / cost.abs().max(1e-12);
        nominal = candidate;
        cost = candidate_cost;
        history.push(cost);
        regularization = (regularization / config.regularization_decrease)
            .max(config.regularization_min);
        if decrease < config.cost_tolerance {
            converged = true;
            break;
        }
    }

    let gains = final_gains(problem, &nominal, config)?;
    Ok(Solution {
        states: nominal.states,
        controls: nominal.controls,
        gains,
        total_cost: cost,
        iterations,
        converged,
        cost_history: history,
    })
}

fn final_gains<D, C, const N: usize, const M: usize>(
    problem: &OcpProblem<D, C, N, M>,
    nominal: &Trajectory<N, M>,
    config: &SolverConfig,
) -> Result<Vec<SMatrix<f64, M, N>>, SolverError>
where
    D: Dynamics<N, M>,
    C: CostModel<N, M>,
{
    let linearization = linearize_trajectory(problem, nominal, config.fd_step)?;
    let mut regularization = config.regularization_min;
    loop {
        match backward_pass(problem, nominal, &linearization, regularization) {
            Ok(pass) => return Ok(pass.gains),
            Err(SolverError::NotPositiveDefinite { step }) => {
                regularization *= config.regularization_increase;
                if regularization > config.regularization_max {
                    return Err(SolverError::NotPositiveDefinite { step });
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// `û_t + K_t (x - x̂_t)`.
pub fn feedback_control<const N: usize, const M: usize>(
    solution: &Solution<N, M>,
    t: usize,
    x: &SVector<f64, N>,
) -> SVector<f64, M> {
    solution.feedback_control(t, x)
}

/// Linear dynamics `x' = A x + B u` with exact Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDynamics<const N: usize, const M: usize> {
    pub a: SMatrix<f64, N, N>,
    pub b: SMatrix<f64, N, M>,
}

impl<const N: usize, const M: usize> Dynamics<N, M> for LinearDynamics<N, M> {
    fn step(
        &self,
        _t: usize,
        x: &SVector<f64, N>,
        u: &SVector<f64, M>,
    ) -> Result<SVector<f64, N>, SolverError> {
        Ok(self.a * x + self.b * u)
    }

    fn linearize(
        &self,
        _t: usize,
        _x: &SVector<f64, N>,
        _u: &SVector<f64, M>,
        _h: f64,
    ) -> Result<Linearization<N, M>, SolverError> {
        Ok((self.a, self.b))
    }
}

/// `Σ (x_tᵀ Q x_t + u_tᵀ R u_t) + x_Tᵀ Q_T x_T` around a goal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost<const N: usize, const M: usize> {
    pub goal: SVector<f64, N>,
    pub q: SMatrix<f64, N, N>,
    pub r: SMatrix<f64, M, M>,
    pub q_terminal: SMatrix<f64, N, N>,
}

impl<const N: usize, const M: usize> CostModel<N, M> for QuadraticCost<N, M> {
    fn stage_cost(&self, _t: usize, x: &SVector<f64, N>, u: &SVector<f64, M>) -> f64 {
        let e = x - self.goal;
        e.dot(&(self.q * e)) + u.dot(&(self.r * u))
    }

    fn stage_expansion(
        &self,
        _t: usize,
        x: &SVector<f64, N>,
        u: &SVector<f64, M>,
    ) -> StageExpansion<N, M> {
        let e = x - self.goal;
        StageExpansion {
            lx: (self.q + self.q.transpose()) * e,
            lu: (self.r + self.r.transpose()) * u,
            lxx: self.q + self.q.transpose(),
            luu: self.r + self.r.transpose(),
            lux: SMatrix::zeros(),
        }
    }

    fn terminal_cost(&self, x: &SVector<f64, N>) -> f64 {
        let e = x - self.goal;
        e.dot(&(self.q_terminal * e))
    }

    fn terminal_expansion(&self, x: &SVector<f64, N>) -> TerminalExpansion<N> {
        let e = x - self.goal;
        TerminalExpansion {
            lx: (self.q_terminal + self.q_terminal.transpose()) * e,
            lxx: self.q_terminal + self.q_terminal.transpose(),
        }
    }
}
