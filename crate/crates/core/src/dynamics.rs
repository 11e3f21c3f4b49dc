//! Quasi-static pusher-slider dynamics with face switching.
//!
//! The state is `[x, y, θ, p_sx, p_sy, v_n, v_t]`: the slider pose in the
//! world frame, the pusher contact point in the initial slider frame `F_s`,
//! and the pusher velocity in `F_s`. The control is the pusher acceleration
//! in `F_s`.
//!
//! Every face carries a face frame `F_f`, rotated by `θ_f` from `F_s`, whose
//! x-axis points from the pusher into the slider. Contact quantities are
//! resolved in that frame so the mode tests read the same on every face.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, RowVector2, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 7;
pub const CONTROL_DIM: usize = 2;

/// Flat state vector `[x, y, θ, p_sx, p_sy, v_n, v_t]`.
pub type StateVector = SVector<f64, STATE_DIM>;
/// Flat control vector `[v̇_n, v̇_t]`.
pub type ControlVector = Vector2<f64>;

/// Half-width of the band around the face plane that still counts as contact.
pub const CONTACT_TOLERANCE: f64 = 1e-4;

/// Denominators of the motion cone slopes below this magnitude are rejected.
pub const CONE_DENOMINATOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("degenerate motion cone at contact ({px}, {py}): denominator {denominator:e}")]
    DegenerateCone { px: f64, py: f64, denominator: f64 },
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for inputs just below a multiple of 2π
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Planar rotation matrix.
pub fn rotation2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Limit-surface constant of a square footprint with half side `half_side`
/// under uniform pressure: the mean distance of the footprint from its center.
pub fn uniform_pressure_limit_constant(half_side: f64) -> f64 {
    half_side * (SQRT_2 + (1.0 + SQRT_2).ln()) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Pusher-slider friction coefficient.
    pub mu_p: f64,
    /// Slider-ground friction coefficient.
    pub mu_g: f64,
    /// Limit-surface constant (m).
    pub c: f64,
    /// Slider half side length (m).
    pub r_s: f64,
    /// Pusher radius (m).
    pub r_p: f64,
    /// Integration step (s).
    pub dt: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let r_s = 0.06;
        Self {
            mu_p: 0.3,
            mu_g: 0.35,
            c: uniform_pressure_limit_constant(r_s),
            r_s,
            r_p: 0.005,
            dt: 0.05,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let checks = [
            (self.mu_p >= 0.0, "mu_p must be >= 0"),
            (self.mu_g >= 0.0, "mu_g must be >= 0"),
            (self.c > 0.0, "c must be > 0"),
            (self.r_s > 0.0, "r_s must be > 0"),
            (self.r_p > 0.0, "r_p must be > 0"),
            (self.dt > 0.0, "dt must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(DynamicsError::InvalidParams(msg.to_string()));
            }
        }
        Ok(())
    }

    /// Distance from the slider center to the pusher center when touching a face.
    pub fn contact_offset(&self) -> f64 {
        self.r_s + self.r_p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SliderPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl SliderPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Per-axis absolute error to `target`, with the angle difference wrapped.
    pub fn abs_error(&self, target: &SliderPose) -> (f64, f64, f64) {
        (
            (self.x - target.x).abs(),
            (self.y - target.y).abs(),
            wrap_angle(self.theta - target.theta).abs(),
        )
    }
}

/// A slider face the pusher can act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContactFace {
    Left,
    Bottom,
    Right,
    Top,
}

impl ContactFace {
    pub const ALL: [ContactFace; 4] = [Self::Left, Self::Bottom, Self::Right, Self::Top];

    /// Rotation from `F_s` to this face's frame. The face frame's x-axis
    /// points into the slider, so the pusher sits at `p_x = -(r_s + r_p)`.
    pub fn theta_f(self) -> f64 {
        match self {
            Self::Left => 0.0,
            Self::Bottom => FRAC_PI_2,
            Self::Right => PI,
            Self::Top => -FRAC_PI_2,
        }
    }

    /// True for the faces whose normal is aligned with the slider x-axis.
    pub fn is_x_normal(self) -> bool {
        matches!(self, Self::Left | Self::Right)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Left => "Left",
            Self::Bottom => "Bottom",
            Self::Right => "Right",
            Self::Top => "Top",
        }
    }
}

impl fmt::Display for ContactFace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContactFace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(Self::Left),
            "bottom" => Ok(Self::Bottom),
            "right" => Ok(Self::Right),
            "top" | "up" => Ok(Self::Top),
            other => Err(format!("unknown contact face `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionMode {
    Sticking,
    SlidingUp,
    SlidingDown,
    Separation,
}

impl InteractionMode {
    pub fn is_contact(self) -> bool {
        self != Self::Separation
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Sticking => "Sticking",
            Self::SlidingUp => "SlidingUp",
            Self::SlidingDown => "SlidingDown",
            Self::Separation => "Separation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionConeBounds {
    pub gamma_up: f64,
    pub gamma_dn: f64,
}

/// Full pusher-slider state. Serializes as a flat 7-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 7]", into = "[f64; 7]")]
pub struct SystemState {
    pub pose: SliderPose,
    /// Contact point in the initial slider frame `F_s`.
    pub contact: Vector2<f64>,
    /// Pusher velocity in `F_s`.
    pub velocity: Vector2<f64>,
}

impl SystemState {
    pub fn to_vector(&self) -> StateVector {
        StateVector::from_column_slice(&self.to_array())
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            pose: SliderPose::new(v[0], v[1], v[2]),
            contact: Vector2::new(v[3], v[4]),
            velocity: Vector2::new(v[5], v[6]),
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.pose.x,
            self.pose.y,
            self.pose.theta,
            self.contact.x,
            self.contact.y,
            self.velocity.x,
            self.velocity.y,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

impl From<[f64; 7]> for SystemState {
    fn from(a: [f64; 7]) -> Self {
        Self::from_vector(&StateVector::from_column_slice(&a))
    }
}

impl From<SystemState> for [f64; 7] {
    fn from(s: SystemState) -> Self {
        s.to_array()
    }
}

/// Pusher acceleration in `F_s`. Serializes as a 2-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ControlInput(pub ControlVector);

impl ControlInput {
    pub fn new(dv_n: f64, dv_t: f64) -> Self {
        Self(Vector2::new(dv_n, dv_t))
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

impl From<[f64; 2]> for ControlInput {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<ControlInput> for [f64; 2] {
    fn from(u: ControlInput) -> Self {
        [u.0.x, u.0.y]
    }
}

/// Contact point expressed in the face frame: `q_pf = R(θ_f)ᵀ q_ps`.
pub fn face_frame_contact(state: &SystemState, face: ContactFace) -> Vector2<f64> {
    rotation2(face.theta_f()).transpose() * state.contact
}

/// Pusher velocity expressed in the face frame.
pub fn face_frame_velocity(state: &SystemState, face: ContactFace) -> Vector2<f64> {
    rotation2(face.theta_f()).transpose() * state.velocity
}

/// Slopes of the two motion cone boundaries at face-frame contact `p_face`.
pub fn motion_cone_bounds(
    p_face: &Vector2<f64>,
    params: &PhysicalParams,
) -> Result<MotionConeBounds, DynamicsError> {
    let (px, py) = (p_face.x, p_face.y);
    let mu = params.mu_p;
    let c2 = params.c * params.c;

    let den_up = c2 + py * py - mu * px * py;
    let den_dn = c2 + py * py + mu * px * py;
    for denominator in [den_up, den_dn] {
        if denominator.abs() < CONE_DENOMINATOR_FLOOR {
            return Err(DynamicsError::DegenerateCone { px, py, denominator });
        }
    }
    Ok(MotionConeBounds {
        gamma_up: (mu * c2 - px * py + mu * px * px) / den_up,
        gamma_dn: (-mu * c2 - px * py - mu * px * px) / den_dn,
    })
}

/// Decides the interaction mode for `state` against `face`.
///
/// Separation wins first (pusher not moving into the face, or outside the
/// face's contact band). Otherwise the face-frame velocity is compared
/// against the motion cone boundaries in cross-multiplied form. A degenerate
/// cone is reported as sticking, the only mode whose dynamics do not use it.
pub fn classify_mode(
    state: &SystemState,
    face: ContactFace,
    params: &PhysicalParams,
) -> InteractionMode {
    let p = face_frame_contact(state, face);
    let v = face_frame_velocity(state, face);
    let (v_n, v_t) = (v.x, v.y);

    if v_n <= 0.0
        || p.x.abs() > params.contact_offset() + CONTACT_TOLERANCE
        || p.y.abs() > params.r_s + CONTACT_TOLERANCE
    {
        return InteractionMode::Separation;
    }
    match motion_cone_bounds(&p, params) {
        Ok(cone) if v_t > cone.gamma_up * v_n => InteractionMode::SlidingUp,
        Ok(cone) if v_t < cone.gamma_dn * v_n => InteractionMode::SlidingDown,
        _ => InteractionMode::Sticking,
    }
}

/// Time derivative of the state in the given mode.
///
/// The mode is taken as given; callers are expected to pass the result of
/// [`classify_mode`] (the solver freezes it while differentiating).
pub fn state_derivative(
    state: &SystemState,
    u: &ControlInput,
    face: ContactFace,
    mode: InteractionMode,
    params: &PhysicalParams,
) -> Result<StateVector, DynamicsError> {
    let rot_f = rotation2(face.theta_f());
    let p = rot_f.transpose() * state.contact;
    let v_f = rot_f.transpose() * state.velocity;
    let (px, py) = (p.x, p.y);
    let c2 = params.c * params.c;
    let norm = c2 + px * px + py * py;

    let q = Matrix2::new(c2 + px * px, px * py, px * py, c2 + py * py) / norm;

    let (p_j, b_j, d_j, c_j) = match mode {
        InteractionMode::Sticking => (
            Matrix2::identity(),
            RowVector2::new(-py / norm, px / norm),
            RowVector2::zeros(),
            RowVector2::zeros(),
        ),
        InteractionMode::SlidingUp | InteractionMode::SlidingDown => {
            let cone = motion_cone_bounds(&p, params)?;
            let gamma = if mode == InteractionMode::SlidingUp {
                cone.gamma_up
            } else {
                cone.gamma_dn
            };
            (
                Matrix2::new(1.0, 0.0, gamma, 0.0),
                RowVector2::new((-py + gamma * px) / norm, 0.0),
                RowVector2::zeros(),
                RowVector2::new(-gamma, 1.0),
            )
        }
        InteractionMode::Separation => (
            Matrix2::zeros(),
            RowVector2::zeros(),
            RowVector2::new(1.0, 0.0),
            RowVector2::new(0.0, 1.0),
        ),
    };

    // Composition order R(θ_f)·R(θ); planar rotations commute, so this equals R(θ)·R(θ_f).
    let slider_vel = rot_f * rotation2(state.pose.theta) * q * p_j * v_f;
    let omega = (b_j * v_f)[0];
    let contact_rate = rot_f * Vector2::new((d_j * v_f)[0], (c_j * v_f)[0]);

    Ok(StateVector::from_column_slice(&[
        slider_vel.x,
        slider_vel.y,
        omega,
        contact_rate.x,
        contact_rate.y,
        u.0.x,
        u.0.y,
    ]))
}

/// One explicit Euler step in a fixed mode, without angle wrapping.
///
/// This is the smooth map the solver differentiates.
pub fn euler_step_in_mode(
    x: &StateVector,
    u: &ControlVector,
    face: ContactFace,
    mode: InteractionMode,
    params: &PhysicalParams,
) -> Result<StateVector, DynamicsError> {
    let state = SystemState::from_vector(x);
    let dx = state_derivative(&state, &ControlInput(*u), face, mode, params)?;
    Ok(x + dx * params.dt)
}

/// Advances the state by one step: classifies the mode at the start state,
/// integrates with explicit Euler and re-wraps the slider angle.
pub fn step(
    state: &SystemState,
    u: &ControlInput,
    face: ContactFace,
    params: &PhysicalParams,
) -> Result<(SystemState, InteractionMode), DynamicsError> {
    let mode = classify_mode(state, face, params);
    let next = euler_step_in_mode(&state.to_vector(), &u.0, face, mode, params)?;
    let mut next = SystemState::from_vector(&next);
    next.pose.theta = wrap_angle(next.pose.theta);
    Ok((next, mode))
}
