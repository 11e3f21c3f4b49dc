//! Demonstrations: storage format, nearest-demo selection, preprocessing and
//! a scripted pusher that produces demonstrations without a human in the loop.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    classify_mode, face_frame_contact, motion_cone_bounds, rotation2, step, wrap_angle,
    ContactFace, ControlInput, DynamicsError, InteractionMode, PhysicalParams, SliderPose,
    SystemState,
};

pub const DEMO_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("demonstration library is empty")]
    EmptyLibrary,
    #[error("stored switch times {stored:?} disagree with the face schedule {recomputed:?}")]
    InconsistentSchedule {
        stored: Vec<usize>,
        recomputed: Vec<usize>,
    },
    #[error("demo schema version {found} is not supported (reader version {expected})")]
    SchemaMismatch { found: String, expected: u64 },
    #[error("malformed demo file: {0}")]
    MalformedFile(String),
    #[error("invalid demonstration: {0}")]
    Invalid(String),
    #[error(
        "scripted demo missed its target by ({x_err:.4} m, {y_err:.4} m, {theta_err:.4} rad)"
    )]
    ScriptFailed {
        demo: Box<Demonstration>,
        x_err: f64,
        y_err: f64,
        theta_err: f64,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A recorded pushing trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub dt: f64,
    pub states: Vec<SystemState>,
    pub controls: Vec<ControlInput>,
    pub faces: Vec<ContactFace>,
    pub switch_times: Vec<usize>,
    pub reached: SliderPose,
    pub label: String,
}

impl Demonstration {
    /// Builds a demo from a rollout, deriving switch times and the reached pose.
    pub fn from_rollout(
        dt: f64,
        states: Vec<SystemState>,
        controls: Vec<ControlInput>,
        faces: Vec<ContactFace>,
        label: impl Into<String>,
    ) -> Result<Self, DemoError> {
        let reached = states
            .last()
            .map(|s| s.pose)
            .ok_or_else(|| DemoError::Invalid("no states".into()))?;
        let demo = Self {
            dt,
            switch_times: switch_times_of(&faces),
            states,
            controls,
            faces,
            reached,
            label: label.into(),
        };
        demo.validate()?;
        Ok(demo)
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn switch_count(&self) -> usize {
        self.switch_times.len()
    }

    pub fn final_face(&self) -> ContactFace {
        *self.faces.last().expect("validated demos have faces")
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        let t = self.controls.len();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DemoError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if t == 0 {
            return Err(DemoError::Invalid("demo has no controls".into()));
        }
        if self.states.len() != t + 1 || self.faces.len() != t {
            return Err(DemoError::Invalid(format!(
                "length mismatch: {} states, {} controls, {} faces",
                self.states.len(),
                t,
                self.faces.len()
            )));
        }
        if !self.states.iter().all(SystemState::is_finite)
            || !self.controls.iter().all(|u| u.0.iter().all(|c| c.is_finite()))
        {
            return Err(DemoError::Invalid("non-finite state or control".into()));
        }
        if !self.switch_times.windows(2).all(|w| w[0] < w[1])
            || self.switch_times.iter().any(|&s| s == 0 || s >= t)
        {
            return Err(DemoError::Invalid(format!(
                "switch times {:?} must be strictly increasing inside (0, {t})",
                self.switch_times
            )));
        }
        extract_switch_times(self)?;
        if self.reached != self.states[t].pose {
            return Err(DemoError::Invalid(
                "reached pose differs from the final state".into(),
            ));
        }
        Ok(())
    }
}

fn switch_times_of(faces: &[ContactFace]) -> Vec<usize> {
    (1..faces.len()).filter(|&t| faces[t] != faces[t - 1]).collect()
}

/// Indices where the face schedule changes, checked against the stored list.
pub fn extract_switch_times(demo: &Demonstration) -> Result<Vec<usize>, DemoError> {
    let recomputed = switch_times_of(&demo.faces);
    if recomputed != demo.switch_times {
        return Err(DemoError::InconsistentSchedule {
            stored: demo.switch_times.clone(),
            recomputed,
        });
    }
    Ok(recomputed)
}

/// Minkowski distance over `(Δx, Δy, Δθ)` with the angle difference wrapped.
pub fn distance(a: &SliderPose, b: &SliderPose, p: f64) -> f64 {
    let d = [
        (a.x - b.x).abs(),
        (a.y - b.y).abs(),
        wrap_angle(a.theta - b.theta).abs(),
    ];
    if p.is_infinite() {
        return d.into_iter().fold(0.0, f64::max);
    }
    d.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoLibrary {
    pub demos: Vec<Demonstration>,
}

impl DemoLibrary {
    pub fn new(demos: Vec<Demonstration>) -> Self {
        Self { demos }
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DemoError> {
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir).map_err(|source| DemoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        let demos = paths.iter().map(load_demo).collect::<Result<_, _>>()?;
        Ok(Self { demos })
    }
}

/// Index of the demo whose reached pose is closest to `target` (Euclidean,
/// angle wrapped). Ties go to the lowest index.
pub fn select_demo(library: &DemoLibrary, target: &SliderPose) -> Result<usize, DemoError> {
    let mut best: Option<(usize, f64)> = None;
    for (j, demo) in library.demos.iter().enumerate() {
        let d = distance(&demo.reached, target, 2.0);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j).ok_or(DemoError::EmptyLibrary)
}

fn lerp_state(a: &SystemState, b: &SystemState, w: f64) -> SystemState {
    if w == 0.0 {
        return *a;
    }
    let va = a.to_vector();
    let mut d = b.to_vector() - va;
    d[2] = wrap_angle(d[2]);
    let mut s = SystemState::from_vector(&(va + d * w));
    s.pose.theta = wrap_angle(s.pose.theta);
    s
}

/// Re-times a demo onto `new_horizon` steps over the same duration.
///
/// States and controls are interpolated linearly; faces take the value at
/// the nearest original step and switch times are derived from them.
pub fn resample(demo: &Demonstration, new_horizon: usize) -> Demonstration {
    assert!(new_horizon >= 2, "resample needs at least two steps");
    let old = demo.horizon();
    if old == new_horizon {
        return demo.clone();
    }
    let scale = old as f64 / new_horizon as f64;
    let sample = |i: usize, last: usize| {
        let s = i as f64 * scale;
        let lo = (s.floor() as usize).min(last);
        let hi = (lo + 1).min(last);
        (lo, hi, s - lo as f64)
    };

    let states: Vec<SystemState> = (0..=new_horizon)
        .map(|i| {
            if i == new_horizon {
                return demo.states[old];
            }
            let (lo, hi, w) = sample(i, old);
            lerp_state(&demo.states[lo], &demo.states[hi], w)
        })
        .collect();
    let controls = (0..new_horizon)
        .map(|i| {
            let (lo, hi, w) = sample(i, old - 1);
            let (a, b) = (demo.controls[lo].0, demo.controls[hi].0);
            if w == 0.0 {
                ControlInput(a)
            } else {
                ControlInput(a + (b - a) * w)
            }
        })
        .collect();
    let faces: Vec<ContactFace> = (0..new_horizon)
        .map(|i| demo.faces[((i as f64 * scale).round() as usize).min(old - 1)])
        .collect();

    Demonstration {
        dt: demo.dt * scale,
        switch_times: switch_times_of(&faces),
        reached: demo.reached,
        states,
        controls,
        faces,
        label: demo.label.clone(),
    }
}

#[derive(Serialize, Deserialize)]
struct DemoFile {
    version: u64,
    dt: f64,
    states: Vec<SystemState>,
    controls: Vec<ControlInput>,
    faces: Vec<ContactFace>,
    switch_times: Vec<usize>,
    reached: [f64; 3],
    label: String,
}

impl Demonstration {
    pub fn to_json(&self) -> String {
        let file = DemoFile {
            version: DEMO_SCHEMA_VERSION,
            dt: self.dt,
            states: self.states.clone(),
            controls: self.controls.clone(),
            faces: self.faces.clone(),
            switch_times: self.switch_times.clone(),
            reached: self.reached.to_array(),
            label: self.label.clone(),
        };
        serde_json::to_string(&file).expect("demo serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, DemoError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DemoError::MalformedFile(e.to_string()))?;
        let version = value
            .get("version")
            .ok_or_else(|| DemoError::MalformedFile("missing field `version`".into()))?;
        let found = match version {
            serde_json::Value::Number(n) => n.as_u64(),
            serde_json::Value::String(s) => s.parse().ok(),
            _ => None,
        };
        if found != Some(DEMO_SCHEMA_VERSION) {
            return Err(DemoError::SchemaMismatch {
                found: version.to_string(),
                expected: DEMO_SCHEMA_VERSION,
            });
        }
        let file: DemoFile =
            serde_json::from_value(value).map_err(|e| DemoError::MalformedFile(e.to_string()))?;
        let demo = Self {
            dt: file.dt,
            states: file.states,
            controls: file.controls,
            faces: file.faces,
            switch_times: file.switch_times,
            reached: SliderPose::from_array(file.reached),
            label: file.label,
        };
        demo.validate()
            .map_err(|e| DemoError::MalformedFile(e.to_string()))?;
        Ok(demo)
    }
}

pub fn save_demo(path: impl AsRef<Path>, demo: &Demonstration) -> Result<(), DemoError> {
    let path = path.as_ref();
    fs::write(path, demo.to_json()).map_err(|source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_demo(path: impl AsRef<Path>) -> Result<Demonstration, DemoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Demonstration::from_json(&text)
}

/// One pushing phase of a scripted demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushSegment {
    pub face: ContactFace,
    /// Pose to steer to on this face; `None` means the demo's final target.
    pub goal: Option<SliderPose>,
    /// Tangential contact offset on the face (face frame, m).
    pub offset: f64,
}

impl PushSegment {
    pub fn to_target(face: ContactFace) -> Self {
        Self {
            face,
            goal: None,
            offset: 0.0,
        }
    }

    pub fn via(face: ContactFace, goal: SliderPose) -> Self {
        Self {
            face,
            goal: Some(goal),
            offset: 0.0,
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }
}

/// A pushing strategy: which faces to use, in order, and where each one
/// should leave the slider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoScript {
    pub segments: Vec<PushSegment>,
    pub label: String,
}

impl DemoScript {
    pub fn new(label: impl Into<String>, segments: Vec<PushSegment>) -> Self {
        Self {
            segments,
            label: label.into(),
        }
    }
}

/// Speeds and gains of the scripted pusher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptSettings {
    pub horizon: usize,
    pub push_speed: f64,
    pub travel_speed: f64,
    pub approach_speed: f64,
    pub max_accel: f64,
    /// Standoff distance from the slider center while travelling, as a
    /// multiple of `r_s + r_p`.
    pub standoff: f64,
    pub k_rho: f64,
    pub k_alpha: f64,
    pub k_beta: f64,
    /// Fraction of the motion cone width kept free on each side when steering.
    pub cone_margin: f64,
    /// Position tolerance that ends an intermediate push (m).
    pub waypoint_tolerance: f64,
}

impl Default for ScriptSettings {
    fn default() -> Self {
        Self {
            horizon: 200,
            push_speed: 0.1,
            travel_speed: 0.2,
            approach_speed: 0.06,
            max_accel: 1.0,
            standoff: 1.3,
            k_rho: 2.0,
            k_alpha: 1.67,
            k_beta: -0.33,
            cone_margin: 0.1,
            waypoint_tolerance: 0.01,
        }
    }
}

/// Script miss tolerances beyond which a synthesized demo is flagged.
pub const SCRIPT_POSITION_TOLERANCE: f64 = 0.05;
pub const SCRIPT_ANGLE_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone)]
enum Phase {
    Travel {
        waypoints: VecDeque<Vector2<f64>>,
        segment: usize,
    },
    Approach {
        segment: usize,
    },
    Push {
        segment: usize,
        steps: usize,
        best_rho: f64,
    },
    Retreat {
        segment: usize,
    },
    Hold,
}

/// Outcome of running a script, including per-step intended modes.
#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub demo: Demonstration,
    pub intended: Vec<InteractionMode>,
    pub classified: Vec<InteractionMode>,
    /// Script phase name per step (`travel`, `approach`, `push`, `retreat`, `hold`).
    pub phases: Vec<&'static str>,
}

impl ScriptRun {
    /// Fraction of intended-contact steps whose classified mode matches.
    pub fn mode_agreement(&self) -> f64 {
        let contact: Vec<_> = self
            .intended
            .iter()
            .zip(&self.classified)
            .filter(|(i, _)| i.is_contact())
            .collect();
        if contact.is_empty() {
            return 1.0;
        }
        contact.iter().filter(|(i, c)| i == c).count() as f64 / contact.len() as f64
    }
}

struct ScriptedPusher<'a> {
    params: &'a PhysicalParams,
    settings: &'a ScriptSettings,
    segments: Vec<(ContactFace, SliderPose, f64)>,
    phase: Phase,
    label_face: ContactFace,
}

impl ScriptedPusher<'_> {
    fn standoff_point(&self, face: ContactFace, offset: f64) -> Vector2<f64> {
        let d = self.settings.standoff * self.params.contact_offset();
        rotation2(face.theta_f()) * Vector2::new(-d, offset)
    }

    /// Waypoints around the slider from `from` to the standoff of `face`.
    fn route(&self, from: ContactFace, to: ContactFace, offset: f64) -> VecDeque<Vector2<f64>> {
        let centre = |f: ContactFace| self.standoff_point(f, 0.0);
        let quarter = |f: ContactFace| (f.theta_f() / FRAC_PI_2).round() as i32;
        let steps = (quarter(to) - quarter(from)).rem_euclid(4);
        let mut route = VecDeque::new();
        let mut current = from;
        let dir = if steps == 3 { -1 } else { 1 };
        let hops = match steps {
            0 => 0,
            2 => 2,
            _ => 1,
        };
        for _ in 0..hops {
            let next = face_from_quarter(quarter(current) + dir);
            route.push_back(centre(current) + centre(next));
            current = next;
        }
        route.push_back(self.standoff_point(to, offset));
        route
    }

    fn inward(face: ContactFace) -> Vector2<f64> {
        rotation2(face.theta_f()) * Vector2::x()
    }

    /// Velocity command in `F_s` and the mode the script intends for this step.
    fn command(&mut self, state: &SystemState) -> (Vector2<f64>, InteractionMode) {
        loop {
            match &mut self.phase {
                Phase::Travel { waypoints, segment } => {
                    let segment = *segment;
                    let Some(target) = waypoints.front().copied() else {
                        self.label_face = self.segments[segment].0;
                        self.phase = Phase::Approach { segment };
                        continue;
                    };
                    let delta = target - state.contact;
                    let corner = waypoints.len() > 1;
                    if delta.norm() < if corner { 0.01 } else { 1e-3 } {
                        waypoints.pop_front();
                        continue;
                    }
                    let v = if corner {
                        delta.normalize() * self.settings.travel_speed
                    } else {
                        self.move_towards(delta)
                    };
                    return (v, InteractionMode::Separation);
                }
                Phase::Approach { segment } => {
                    let segment = *segment;
                    let face = self.segments[segment].0;
                    if classify_mode(state, face, self.params).is_contact() {
                        self.phase = Phase::Push {
                            segment,
                            steps: 0,
                            best_rho: f64::INFINITY,
                        };
                        continue;
                    }
                    let p = face_frame_contact(state, face);
                    let lateral = (self.segments[segment].2 - p.y) / self.params.dt * 0.5;
                    // land on the face instead of overshooting into it
                    let gap = (-p.x - self.params.contact_offset()).max(0.0);
                    let speed = (0.5 * gap / self.params.dt)
                        .min(0.5 * (2.0 * self.settings.max_accel * gap).sqrt())
                        .clamp(0.005, self.settings.approach_speed);
                    let v_f = Vector2::new(speed, lateral);
                    return (rotation2(face.theta_f()) * v_f, InteractionMode::Separation);
                }
                Phase::Push {
                    segment,
                    steps,
                    best_rho,
                } => {
                    let (seg, count, best) = (*segment, *steps, *best_rho);
                    let (face, goal, _) = self.segments[seg];
                    let last = seg + 1 == self.segments.len();
                    let rho = ((goal.x - state.pose.x).powi(2) + (goal.y - state.pose.y).powi(2))
                        .sqrt();
                    let lost_contact =
                        count > 3 && !classify_mode(state, face, self.params).is_contact();
                    // a push also stops once it has passed its closest approach
                    let tolerance = if last {
                        0.004
                    } else {
                        self.settings.waypoint_tolerance
                    };
                    let done = rho < tolerance || rho > best + 0.005 || lost_contact;
                    if done {
                        self.phase = if last {
                            Phase::Hold
                        } else {
                            Phase::Retreat { segment: seg }
                        };
                        continue;
                    }
                    if let Phase::Push {
                        steps, best_rho, ..
                    } = &mut self.phase
                    {
                        *steps += 1;
                        *best_rho = best_rho.min(rho);
                    }
                    return (self.steer(state, face, &goal), InteractionMode::Sticking);
                }
                Phase::Retreat { segment } => {
                    let seg = *segment;
                    let face = self.segments[seg].0;
                    let p = face_frame_contact(state, face);
                    let standoff = self.settings.standoff * self.params.contact_offset();
                    if -p.x >= standoff - 5e-4 {
                        let next = self.segments[seg + 1];
                        self.phase = Phase::Travel {
                            waypoints: self.route(face, next.0, next.2),
                            segment: seg + 1,
                        };
                        continue;
                    }
                    let delta = Self::inward(face) * (-standoff - p.x);
                    return (self.move_towards(delta), InteractionMode::Separation);
                }
                Phase::Hold => return (Vector2::zeros(), InteractionMode::Separation),
            }
        }
    }

    fn move_towards(&self, delta: Vector2<f64>) -> Vector2<f64> {
        let dist = delta.norm();
        let speed = self
            .settings
            .travel_speed
            .min((2.0 * self.settings.max_accel * dist).sqrt() * 0.7)
            .min(dist / self.params.dt);
        delta / dist * speed
    }

    /// Forward-only pose regulator mapped onto a sticking push.
    fn steer(&self, state: &SystemState, face: ContactFace, goal: &SliderPose) -> Vector2<f64> {
        let s = self.settings;
        let heading = state.pose.theta + face.theta_f();
        let goal_heading = goal.theta + face.theta_f();
        let (dx, dy) = (goal.x - state.pose.x, goal.y - state.pose.y);
        let rho = (dx * dx + dy * dy).sqrt();
        let alpha = wrap_angle(dy.atan2(dx) - heading);
        let beta = wrap_angle(goal_heading - heading - alpha);
        let speed = (s.k_rho * rho).clamp(0.25 * s.push_speed, s.push_speed);
        // keep the regulator's curvature when the speed saturates
        let curvature = (s.k_alpha * alpha + s.k_beta * beta) / rho.max(1e-3);
        let omega = curvature * speed;

        let p = face_frame_contact(state, face);
        let c2 = self.params.c * self.params.c;
        let norm = c2 + p.x * p.x + p.y * p.y;
        let v_n = speed;
        let mut v_t = (omega * norm + p.y * v_n) / p.x;
        if let Ok(cone) = motion_cone_bounds(&p, self.params) {
            let width = cone.gamma_up - cone.gamma_dn;
            let lo = (cone.gamma_dn + s.cone_margin * width) * v_n;
            let hi = (cone.gamma_up - s.cone_margin * width) * v_n;
            v_t = v_t.clamp(lo.min(hi), hi.max(lo));
        }
        rotation2(face.theta_f()) * Vector2::new(v_n, v_t)
    }
}

impl Phase {
    fn name(&self) -> &'static str {
        match self {
            Phase::Travel { .. } => "travel",
            Phase::Approach { .. } => "approach",
            Phase::Push { .. } => "push",
            Phase::Retreat { .. } => "retreat",
            Phase::Hold => "hold",
        }
    }
}

fn face_from_quarter(q: i32) -> ContactFace {
    match q.rem_euclid(4) {
        0 => ContactFace::Left,
        1 => ContactFace::Bottom,
        2 => ContactFace::Right,
        _ => ContactFace::Top,
    }
}

/// Starting state of every plan and demo: slider at the origin, pusher at
/// the stand-off `standoff·(r_s + r_p)` in front of `face`, at rest.
pub fn standoff_state(face: ContactFace, params: &PhysicalParams, standoff: f64) -> SystemState {
    SystemState {
        pose: SliderPose::default(),
        contact: rotation2(face.theta_f()) * Vector2::new(-standoff * params.contact_offset(), 0.0),
        velocity: Vector2::zeros(),
    }
}

/// Runs `script` from the standard start state and records the result.
pub fn run_script(
    target: &SliderPose,
    params: &PhysicalParams,
    script: &DemoScript,
    settings: &ScriptSettings,
) -> Result<ScriptRun, DemoError> {
    let first = script
        .segments
        .first()
        .ok_or_else(|| DemoError::Invalid("script has no segments".into()))?;
    let segments = script
        .segments
        .iter()
        .map(|s| (s.face, s.goal.unwrap_or(*target), s.offset))
        .collect();
    let start = standoff_state(ContactFace::Left, params, settings.standoff);
    let mut pusher = ScriptedPusher {
        params,
        settings,
        segments,
        label_face: ContactFace::Left,
        phase: Phase::Travel {
            waypoints: VecDeque::new(),
            segment: 0,
        },
    };
    pusher.phase = Phase::Travel {
        waypoints: pusher.route(ContactFace::Left, first.face, first.offset),
        segment: 0,
    };

    let mut states = vec![start];
    let mut controls = Vec::with_capacity(settings.horizon);
    let mut faces = Vec::with_capacity(settings.horizon);
    let mut intended = Vec::with_capacity(settings.horizon);
    let mut classified = Vec::with_capacity(settings.horizon);
    let mut phases = Vec::with_capacity(settings.horizon);
    for _ in 0..settings.horizon {
        let state = *states.last().unwrap();
        let (v_cmd, mode) = pusher.command(&state);
        phases.push(pusher.phase.name());
        let accel = ((v_cmd - state.velocity) / params.dt)
            .map(|a| a.clamp(-settings.max_accel, settings.max_accel));
        let u = ControlInput(accel);
        let face = pusher.label_face;
        let (next, used) = step(&state, &u, face, params)?;
        states.push(next);
        controls.push(u);
        faces.push(face);
        intended.push(mode);
        classified.push(used);
    }
    let demo = Demonstration::from_rollout(params.dt, states, controls, faces, &script.label)?;
    Ok(ScriptRun {
        demo,
        intended,
        classified,
        phases,
    })
}

/// Miss distance normalised by the script tolerances; `<= 1` is a hit.
fn script_miss(reached: &SliderPose, target: &SliderPose) -> f64 {
    let (ex, ey, et) = reached.abs_error(target);
    (ex / SCRIPT_POSITION_TOLERANCE)
        .max(ey / SCRIPT_POSITION_TOLERANCE)
        .max(et / SCRIPT_ANGLE_TOLERANCE)
}

/// Regulator gains and final-contact offsets tried, in order, until a
/// rollout lands within tolerance.
const GAIN_CANDIDATES: [(f64, f64); 6] = [
    (1.67, -0.33),
    (3.0, -1.0),
    (3.0, -0.7),
    (4.0, -1.5),
    (2.5, -1.5),
    (2.5, -0.7),
];
const OFFSET_NUDGES: [f64; 5] = [0.0, -0.01, 0.01, -0.02, 0.02];

/// Runs `script` with the default settings and, if it misses, with a fixed
/// sequence of alternative gains and final-contact offsets. Returns the first
/// run that lands within tolerance, or the closest one.
pub fn search_script(
    target: &SliderPose,
    params: &PhysicalParams,
    script: &DemoScript,
    base: &ScriptSettings,
) -> Result<ScriptRun, DemoError> {
    let mut best: Option<(f64, ScriptRun)> = None;
    for nudge in OFFSET_NUDGES {
        let mut variant = script.clone();
        if let Some(last) = variant.segments.last_mut() {
            let limit = params.r_s - 0.015;
            last.offset = (last.offset + nudge).clamp(-limit, limit);
        }
        for (k_alpha, k_beta) in GAIN_CANDIDATES {
            let settings = ScriptSettings {
                k_alpha,
                k_beta,
                ..*base
            };
            let run = run_script(target, params, &variant, &settings)?;
            if run.mode_agreement() < 0.9 {
                continue;
            }
            let miss = script_miss(&run.demo.reached, target);
            if miss <= 1.0 {
                return Ok(run);
            }
            if best.as_ref().is_none_or(|(m, _)| miss < *m) {
                best = Some((miss, run));
            }
        }
    }
    match best {
        Some((_, run)) => Ok(run),
        None => run_script(target, params, script, base),
    }
}

/// Synthesizes a demonstration of `script` towards `target`.
///
/// Returns [`DemoError::ScriptFailed`] (carrying the demo) when the final
/// pose misses the target by more than 5 cm or 0.3 rad.
pub fn synthesize_demo(
    target: &SliderPose,
    params: &PhysicalParams,
    script: &DemoScript,
) -> Result<Demonstration, DemoError> {
    synthesize_demo_with(target, params, script, &ScriptSettings::default())
}

/// [`synthesize_demo`] with explicit pusher speeds and gains.
pub fn synthesize_demo_with(
    target: &SliderPose,
    params: &PhysicalParams,
    script: &DemoScript,
    settings: &ScriptSettings,
) -> Result<Demonstration, DemoError> {
    let run = search_script(target, params, script, settings)?;
    let (x_err, y_err, theta_err) = run.demo.reached.abs_error(target);
    if script_miss(&run.demo.reached, target) > 1.0 {
        return Err(DemoError::ScriptFailed {
            demo: Box::new(run.demo),
            x_err,
            y_err,
            theta_err,
        });
    }
    Ok(run.demo)
}

/// Endpoints of the three reference demonstrations, with 0, 1 and 2 face switches.
pub fn reference_targets() -> [SliderPose; 3] {
    [
        SliderPose::new(0.15, -0.10, -FRAC_PI_2),
        SliderPose::new(0.0, -0.20, FRAC_PI_2),
        SliderPose::new(0.15, -0.15, FRAC_PI_2),
    ]
}

/// Scripts that produce the reference demonstrations.
pub fn reference_scripts() -> [DemoScript; 3] {
    use ContactFace::*;
    [
        DemoScript::new(
            "ns0-left",
            vec![PushSegment::to_target(Left).with_offset(0.02)],
        ),
        DemoScript::new(
            "ns1-left-right",
            vec![
                PushSegment::via(Left, SliderPose::new(0.08, 0.04, 2.0)),
                PushSegment::to_target(Right),
            ],
        ),
        DemoScript::new(
            "ns2-left-top-right",
            vec![
                PushSegment::via(Left, SliderPose::new(0.03, 0.0, 0.0)),
                PushSegment::via(Top, SliderPose::new(0.13, -0.08, FRAC_PI_2)).with_offset(-0.02),
                PushSegment::to_target(Right),
            ],
        ),
    ]
}

/// The three reference demonstrations, synthesized against `params`.
pub fn reference_library(params: &PhysicalParams) -> Result<DemoLibrary, DemoError> {
    reference_library_with(params, &ScriptSettings::default())
}

pub fn reference_library_with(
    params: &PhysicalParams,
    settings: &ScriptSettings,
) -> Result<DemoLibrary, DemoError> {
    let demos = reference_targets()
        .iter()
        .zip(reference_scripts().iter())
        .map(|(target, script)| synthesize_demo_with(target, params, script, settings))
        .collect::<Result<_, _>>()?;
    Ok(DemoLibrary::new(demos))
}
