//! Lag and contouring errors: the vehicle position offset expressed in the
//! frame of the reference pose at the vehicle's progress `theta`.
//!
//! This is the rotation approximation of Frenet coordinates. It equals the
//! true lateral distance only while the lag error is kept near zero, which is
//! why the lag weight dominates the contouring weight.

use nalgebra::SMatrix;

use crate::model::VehicleState;
use crate::path::{Pose, ReferencePath};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrenetErrors {
    /// Longitudinal error along the reference heading [m].
    pub e_l: f64,
    /// Lateral error, positive to the left of the reference heading [m].
    pub e_c: f64,
}

/// Partials of `(e_l, e_c)` with respect to `(x, y, theta)`.
pub type FrenetJacobian = SMatrix<f64, 2, 3>;

/// Errors of the point `(x, y)` relative to `reference`.
pub fn errors_from_reference(x: f64, y: f64, reference: &Pose) -> FrenetErrors {
    let (sin_r, cos_r) = reference.phi.sin_cos();
    let dx = x - reference.x;
    let dy = y - reference.y;
    FrenetErrors {
        e_l: dx * cos_r + dy * sin_r,
        e_c: -dx * sin_r + dy * cos_r,
    }
}

pub fn frenet_errors(s: &VehicleState, path: &ReferencePath) -> FrenetErrors {
    errors_from_reference(s.x, s.y, &path.eval(s.theta))
}

/// Errors and their Jacobian. The reference derivative `d p^r / d theta`
/// comes from a central difference over the sample table.
pub fn frenet_linearization(
    s: &VehicleState,
    path: &ReferencePath,
) -> (FrenetErrors, FrenetJacobian) {
    let reference = path.eval(s.theta);
    let slope = path.eval_derivative(s.theta);
    let e = errors_from_reference(s.x, s.y, &reference);
    let (sin_r, cos_r) = reference.phi.sin_cos();
    let mut j = FrenetJacobian::zeros();
    j[(0, 0)] = cos_r;
    j[(0, 1)] = sin_r;
    j[(1, 0)] = -sin_r;
    j[(1, 1)] = cos_r;
    j[(0, 2)] = -(slope.x * cos_r + slope.y * sin_r) + slope.phi * e.e_c;
    j[(1, 2)] = (slope.x * sin_r - slope.y * cos_r) - slope.phi * e.e_l;
    (e, j)
}

pub fn frenet_jacobian(s: &VehicleState, path: &ReferencePath) -> FrenetJacobian {
    frenet_linearization(s, path).1
}
