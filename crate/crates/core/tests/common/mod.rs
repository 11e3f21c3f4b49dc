//! Oracles shared by the integration tests and the acceptance report.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{SMatrix, SVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pushcraft::ddp::*;
use pushcraft::dynamics::{
    classify_mode, ContactFace, InteractionMode, PhysicalParams, SliderPose, SystemState,
};
use pushcraft::planner::{build_cost_c1, centered_contact, planning_problem, PlanSettings, PushingProblem};

pub const N: usize = 4;
pub const M: usize = 2;
pub type Mat = SMatrix<f64, N, N>;
pub type BMat = SMatrix<f64, N, M>;
pub type Lq = OcpProblem<LinearDynamics<N, M>, QuadraticCost<N, M>, N, M>;

pub fn random_spd<const D: usize>(rng: &mut ChaCha8Rng, floor: f64) -> SMatrix<f64, D, D> {
    let l = SMatrix::<f64, D, D>::from_fn(|_, _| rng.random_range(-1.0..1.0));
    l * l.transpose() + SMatrix::<f64, D, D>::identity() * floor
}

pub fn random_instance(seed: u64) -> Lq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Mat::identity() + Mat::from_fn(|_, _| rng.random_range(-0.2..0.2));
    let b = BMat::from_fn(|_, _| rng.random_range(-1.0..1.0));
    OcpProblem {
        horizon: rng.random_range(5..40),
        initial_state: SVector::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        dynamics: LinearDynamics { a, b },
        cost: QuadraticCost {
            goal: SVector::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            q: random_spd(&mut rng, 0.0) * 0.5,
            r: random_spd(&mut rng, 0.1),
            q_terminal: random_spd(&mut rng, 1.0) * 10.0,
        },
    }
}

pub struct RiccatiSolution {
    pub states: Vec<SVector<f64, N>>,
    pub controls: Vec<SVector<f64, M>>,
    pub gains: Vec<SMatrix<f64, M, N>>,
}

/// Textbook affine Riccati recursion for `Σ eᵀQe + uᵀRu + e_Tᵀ Q_T e_T`,
/// `e = x - g`, with value function `xᵀPx + 2pᵀx + const`.
pub fn riccati(problem: &Lq) -> RiccatiSolution {
    let LinearDynamics { a, b } = problem.dynamics;
    let QuadraticCost { goal, q, r, q_terminal } = problem.cost;
    let mut p = q_terminal;
    let mut lin = -(q_terminal * goal);
    let mut gains = vec![SMatrix::<f64, M, N>::zeros(); problem.horizon];
    let mut offsets = vec![SVector::<f64, M>::zeros(); problem.horizon];
    for t in (0..problem.horizon).rev() {
        let h = r + b.transpose() * p * b;
        let h_inv = h.try_inverse().unwrap();
        let k = -h_inv * b.transpose() * p * a;
        let off = -h_inv * b.transpose() * lin;
        let p_next = q + a.transpose() * p * a + a.transpose() * p * b * k;
        let lin_next = -(q * goal) + a.transpose() * lin + a.transpose() * p * b * off;
        gains[t] = k;
        offsets[t] = off;
        p = 0.5 * (p_next + p_next.transpose());
        lin = lin_next;
    }
    let mut states = vec![problem.initial_state];
    let mut controls = Vec::new();
    for t in 0..problem.horizon {
        let u = gains[t] * states[t] + offsets[t];
        states.push(a * states[t] + b * u);
        controls.push(u);
    }
    RiccatiSolution { states, controls, gains }
}

/// Independent restatement of the classifier's decision list.
pub fn oracle_mode(state: &SystemState, face: ContactFace, p: &PhysicalParams) -> InteractionMode {
    let (s, c) = face.theta_f().sin_cos();
    let px = c * state.contact.x + s * state.contact.y;
    let py = -s * state.contact.x + c * state.contact.y;
    let vn = c * state.velocity.x + s * state.velocity.y;
    let vt = -s * state.velocity.x + c * state.velocity.y;
    if vn <= 0.0 || px.abs() > p.r_s + p.r_p + 1e-4 || py.abs() > p.r_s + 1e-4 {
        return InteractionMode::Separation;
    }
    let (mu, c2) = (p.mu_p, p.c * p.c);
    let up = (mu * c2 - px * py + mu * px * px) / (c2 + py * py - mu * px * py);
    let dn = (-mu * c2 - px * py - mu * px * px) / (c2 + py * py + mu * px * py);
    if vt > up * vn {
        InteractionMode::SlidingUp
    } else if vt < dn * vn {
        InteractionMode::SlidingDown
    } else {
        InteractionMode::Sticking
    }
}

/// Worst deviations of `solve` from the Riccati oracle on one LQ instance.
pub struct LqComparison {
    /// Max state/control error, relative to the largest oracle state entry.
    pub trajectory_err: f64,
    pub gain_err: f64,
    pub converged: bool,
    pub accepted_costs: Vec<f64>,
}

pub fn compare_with_riccati(seed: u64) -> LqComparison {
    let problem = random_instance(seed);
    let oracle = riccati(&problem);
    let zeros = vec![SVector::<f64, M>::zeros(); problem.horizon];
    let sol = solve(&problem, &zeros, &SolverConfig::default()).unwrap();
    let scale = oracle.states.iter().map(|x| x.amax()).fold(1.0, f64::max);
    let states = sol.states.iter().zip(&oracle.states).map(|(x, y)| (x - y).amax());
    let controls = sol.controls.iter().zip(&oracle.controls).map(|(u, v)| (u - v).amax());
    LqComparison {
        trajectory_err: states.chain(controls).fold(0.0, f64::max) / scale,
        gain_err: sol.gains.iter().zip(&oracle.gains).map(|(k, kk)| (k - kk).amax()).fold(0.0, f64::max),
        converged: sol.converged,
        accepted_costs: sol.cost_history,
    }
}

/// A 120-step push of the slider 10 cm along x from the left face.
pub fn straight_push() -> (PushingProblem, Solution<7, 2>) {
    let settings = PlanSettings::default();
    let faces = vec![ContactFace::Left; 120];
    let target = SliderPose::new(0.10, 0.0, 0.0);
    let contact = centered_contact(ContactFace::Left, &settings.params);
    let cost = build_cost_c1(&target, &settings.weights, ContactFace::Left, contact);
    let problem = planning_problem(&settings, faces, cost);
    let sol = solve(&problem, &vec![Vector2::zeros(); 120], &settings.solver).unwrap();
    (problem, sol)
}

/// Closed-loop cost-to-go from step `t0` under `u_s = û_s + K_s (x_s - x̂_s)`.
pub fn closed_loop_cost(
    problem: &PushingProblem,
    nominal: &Trajectory<7, 2>,
    gains: &[SMatrix<f64, 2, 7>],
    t0: usize,
    x0: SVector<f64, 7>,
) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for t in t0..nominal.controls.len() {
        let u = nominal.controls[t] + gains[t] * (x - nominal.states[t]);
        total += problem.cost.stage_cost(t, &x, &u);
        x = problem.dynamics.step(t, &x, &u).unwrap();
    }
    total + problem.cost.terminal_cost(&x)
}

/// Relative errors between backward-pass value gradients and central
/// differences of the closed-loop cost-to-go, on tail segments of the
/// straight push that stay in a single mode. One entry per checked
/// `(step, component)`.
pub fn value_gradient_errors() -> Vec<(usize, usize, f64)> {
    let (problem, sol) = straight_push();
    let mut nominal = Trajectory { states: sol.states.clone(), controls: sol.controls.clone() };
    // perturb the controls so the gradients are not trivially zero
    for (t, u) in nominal.controls.iter_mut().enumerate() {
        *u += Vector2::new(0.002 * (t as f64 * 0.1).sin(), 0.0);
    }
    nominal.states = rollout(&problem, &nominal.controls).unwrap();
    let lin = linearize_trajectory(&problem, &nominal, 1e-6).unwrap();
    let pass = backward_pass(&problem, &nominal, &lin, 0.0).unwrap();
    let params = PhysicalParams::default();
    let modes: Vec<_> = (0..120)
        .map(|t| classify_mode(&SystemState::from_vector(&nominal.states[t]), ContactFace::Left, &params))
        .collect();
    let mut out = Vec::new();
    for t in [119, 118, 114] {
        if modes[t..].iter().any(|m| *m != modes[t]) {
            continue;
        }
        let v_x = pass.value_gradients[t];
        for i in [0usize, 1, 2, 5, 6] {
            let h = 1e-6;
            let (mut xp, mut xm) = (nominal.states[t], nominal.states[t]);
            xp[i] += h;
            xm[i] -= h;
            let fd = (closed_loop_cost(&problem, &nominal, &pass.gains, t, xp)
                - closed_loop_cost(&problem, &nominal, &pass.gains, t, xm))
                / (2.0 * h);
            out.push((t, i, (fd - v_x[i]).abs() / fd.abs().max(v_x[i].abs()).max(1e-3)));
        }
    }
    out
}
