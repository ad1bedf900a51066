//! Kinematic bicycle model augmented with path progress.
//!
//! The state is `(x, y, phi, v, delta, theta)` where `theta` is the arc length
//! of the reference pose along the path, and the input is
//! `(a, delta_dot, theta_dot)`. The reference point of the vehicle is the rear
//! axle, so the yaw rate is `v * tan(delta) / L`.
//!
//! Discretization is classical RK4 with the input held over the step. The
//! Jacobians of the discrete map are propagated through the four stages
//! analytically, so they are exact derivatives of [`discretize_rk4`] and not of
//! the continuous flow.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

/// Number of state components.
pub const NX: usize = 6;
/// Number of control components.
pub const NU: usize = 3;

pub type StateVector = SVector<f64, NX>;
pub type InputVector = SVector<f64, NU>;
pub type StateJacobian = SMatrix<f64, NX, NX>;
pub type InputJacobian = SMatrix<f64, NX, NU>;

/// Time derivative of a [`VehicleState`], in the same component order.
pub type StateDerivative = StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading, kept unwrapped.
    pub phi: f64,
    pub v: f64,
    pub delta: f64,
    /// Arc-length progress of the reference pose.
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, phi: f64, v: f64, delta: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            phi,
            v,
            delta,
            theta,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.x, self.y, self.phi, self.v, self.delta, self.theta)
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub delta_dot: f64,
    pub theta_dot: f64,
}

impl ControlInput {
    pub fn new(a: f64, delta_dot: f64, theta_dot: f64) -> Self {
        Self {
            a,
            delta_dot,
            theta_dot,
        }
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.a, self.delta_dot, self.theta_dot)
    }

    pub fn from_vector(v: &InputVector) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub const fn symmetric(limit: f64) -> Self {
        Self::new(-limit, limit)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    fn is_valid(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Rear-axle to front-axle distance [m].
    pub wheelbase: f64,
    pub v: Bounds,
    pub delta: Bounds,
    pub a: Bounds,
    pub delta_dot: Bounds,
    pub theta_dot: Bounds,
    /// Discretization step [s].
    pub dt: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            v: Bounds::symmetric(2.0),
            delta: Bounds::symmetric(0.6),
            a: Bounds::symmetric(1.0),
            delta_dot: Bounds::symmetric(0.5),
            theta_dot: Bounds::symmetric(2.0),
            dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("wheelbase must be positive and finite, got {0}")]
    Wheelbase(f64),
    #[error("dt must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("bounds for `{name}` are invalid: [{lower}, {upper}]")]
    Bounds {
        name: &'static str,
        lower: f64,
        upper: f64,
    },
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.wheelbase.is_finite() && self.wheelbase > 0.0) {
            return Err(ModelError::Wheelbase(self.wheelbase));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ModelError::TimeStep(self.dt));
        }
        for (name, b) in [
            ("v", self.v),
            ("delta", self.delta),
            ("a", self.a),
            ("delta_dot", self.delta_dot),
            ("theta_dot", self.theta_dot),
        ] {
            if !b.is_valid() {
                return Err(ModelError::Bounds {
                    name,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
        Ok(())
    }

    pub fn input_lower(&self) -> InputVector {
        InputVector::new(self.a.lower, self.delta_dot.lower, self.theta_dot.lower)
    }

    pub fn input_upper(&self) -> InputVector {
        InputVector::new(self.a.upper, self.delta_dot.upper, self.theta_dot.upper)
    }

    /// Clamps every input component into its box.
    pub fn clamp_input(&self, u: &ControlInput) -> ControlInput {
        ControlInput::new(
            self.a.clamp(u.a),
            self.delta_dot.clamp(u.delta_dot),
            self.theta_dot.clamp(u.theta_dot),
        )
    }
}

fn rhs(s: &StateVector, u: &InputVector, wheelbase: f64) -> StateVector {
    let (sin_phi, cos_phi) = s[2].sin_cos();
    let v = s[3];
    StateVector::new(
        v * cos_phi,
        v * sin_phi,
        v * s[4].tan() / wheelbase,
        u[0],
        u[1],
        u[2],
    )
}

fn rhs_jacobians(s: &StateVector, wheelbase: f64) -> (StateJacobian, InputJacobian) {
    let (sin_phi, cos_phi) = s[2].sin_cos();
    let v = s[3];
    let delta = s[4];
    let mut fx = StateJacobian::zeros();
    fx[(0, 2)] = -v * sin_phi;
    fx[(0, 3)] = cos_phi;
    fx[(1, 2)] = v * cos_phi;
    fx[(1, 3)] = sin_phi;
    fx[(2, 3)] = delta.tan() / wheelbase;
    let cos_delta = delta.cos();
    fx[(2, 4)] = v / (wheelbase * cos_delta * cos_delta);
    let mut fu = InputJacobian::zeros();
    fu[(3, 0)] = 1.0;
    fu[(4, 1)] = 1.0;
    fu[(5, 2)] = 1.0;
    (fx, fu)
}

/// Right-hand side of the bicycle ODE.
pub fn continuous_dynamics(s: &VehicleState, u: &ControlInput, p: &ModelParams) -> StateDerivative {
    rhs(&s.to_vector(), &u.to_vector(), p.wheelbase)
}

/// One RK4 step of length `dt` with the input held constant.
pub fn rk4_step(s: &StateVector, u: &InputVector, wheelbase: f64, dt: f64) -> StateVector {
    let k1 = rhs(s, u, wheelbase);
    let k2 = rhs(&(s + k1 * (0.5 * dt)), u, wheelbase);
    let k3 = rhs(&(s + k2 * (0.5 * dt)), u, wheelbase);
    let k4 = rhs(&(s + k3 * dt), u, wheelbase);
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

pub fn discretize_rk4(s: &VehicleState, u: &ControlInput, p: &ModelParams) -> VehicleState {
    VehicleState::from_vector(&rk4_step(&s.to_vector(), &u.to_vector(), p.wheelbase, p.dt))
}

/// Next state together with the Jacobians of the RK4 map.
pub fn rk4_step_with_jacobians(
    s: &StateVector,
    u: &InputVector,
    wheelbase: f64,
    dt: f64,
) -> (StateVector, StateJacobian, InputJacobian) {
    let eye = StateJacobian::identity();
    let half = 0.5 * dt;

    let k1 = rhs(s, u, wheelbase);
    let (fx1, fu1) = rhs_jacobians(s, wheelbase);
    let dk1_dx = fx1;
    let dk1_du = fu1;

    let s2 = s + k1 * half;
    let k2 = rhs(&s2, u, wheelbase);
    let (fx2, fu2) = rhs_jacobians(&s2, wheelbase);
    let dk2_dx = fx2 * (eye + dk1_dx * half);
    let dk2_du = fx2 * dk1_du * half + fu2;

    let s3 = s + k2 * half;
    let k3 = rhs(&s3, u, wheelbase);
    let (fx3, fu3) = rhs_jacobians(&s3, wheelbase);
    let dk3_dx = fx3 * (eye + dk2_dx * half);
    let dk3_du = fx3 * dk2_du * half + fu3;

    let s4 = s + k3 * dt;
    let k4 = rhs(&s4, u, wheelbase);
    let (fx4, fu4) = rhs_jacobians(&s4, wheelbase);
    let dk4_dx = fx4 * (eye + dk3_dx * dt);
    let dk4_du = fx4 * dk3_du * dt + fu4;

    let w = dt / 6.0;
    let next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w;
    let a = eye + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * w;
    let b = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * w;
    (next, a, b)
}

/// Jacobians `(A, B)` of [`discretize_rk4`] with respect to state and input.
pub fn dynamics_jacobians(
    s: &VehicleState,
    u: &ControlInput,
    p: &ModelParams,
) -> (StateJacobian, InputJacobian) {
    let (_, a, b) = rk4_step_with_jacobians(&s.to_vector(), &u.to_vector(), p.wheelbase, p.dt);
    (a, b)
}

/// Integrates an input sequence from `x0`, returning `inputs.len() + 1` states.
pub fn rollout(x0: &VehicleState, inputs: &[ControlInput], p: &ModelParams) -> Vec<VehicleState> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut s = *x0;
    states.push(s);
    for u in inputs {
        s = discretize_rk4(&s, u, p);
        states.push(s);
    }
    states
}
