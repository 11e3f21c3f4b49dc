//! Adapter exposing the hybrid pusher-slider model to the generic solver.

use crate::ddp::{central_differences, Dynamics, Linearization, SolverError};
use crate::dynamics::{
    classify_mode, euler_step_in_mode, step, wrap_angle, ContactFace, ControlInput,
    ControlVector, PhysicalParams, StateVector, SystemState, CONTROL_DIM, STATE_DIM,
};

/// Pusher-slider dynamics under an exogenous per-step face schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PushingDynamics {
    pub params: PhysicalParams,
    pub faces: Vec<ContactFace>,
}

impl PushingDynamics {
    pub fn new(params: PhysicalParams, faces: Vec<ContactFace>) -> Self {
        Self { params, faces }
    }

    fn face(&self, t: usize) -> ContactFace {
        self.faces[t.min(self.faces.len() - 1)]
    }
}

impl Dynamics<STATE_DIM, CONTROL_DIM> for PushingDynamics {
    fn step(
        &self,
        t: usize,
        x: &StateVector,
        u: &ControlVector,
    ) -> Result<StateVector, SolverError> {
        let state = SystemState::from_vector(x);
        let (next, _) = step(&state, &ControlInput(*u), self.face(t), &self.params).map_err(
            |e| SolverError::Dynamics {
                step: t,
                message: e.to_string(),
            },
        )?;
        Ok(next.to_vector())
    }

    /// Central differences with the mode frozen at the one classified at `x`,
    /// and without angle wrapping, so the model stays smooth across ±π.
    fn linearize(
        &self,
        t: usize,
        x: &StateVector,
        u: &ControlVector,
        h: f64,
    ) -> Result<Linearization<STATE_DIM, CONTROL_DIM>, SolverError> {
        let face = self.face(t);
        let mode = classify_mode(&SystemState::from_vector(x), face, &self.params);
        central_differences(
            |x, u| {
                euler_step_in_mode(x, u, face, mode, &self.params).map_err(|e| {
                    SolverError::Dynamics {
                        step: t,
                        message: e.to_string(),
                    }
                })
            },
            x,
            u,
            h,
        )
    }

    fn state_difference(&self, a: &StateVector, b: &StateVector) -> StateVector {
        state_difference(a, b)
    }
}

/// `a - b` with the slider angle component wrapped into `[-π, π)`.
pub fn state_difference(a: &StateVector, b: &StateVector) -> StateVector {
    let mut d = a - b;
    d[2] = wrap_angle(d[2]);
    d
}
