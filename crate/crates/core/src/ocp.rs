//! Finite-horizon optimal control problem and its Gauss-Newton SQP solver.
//!
//! The inputs are the only free variables; states are always the rollout of
//! the inputs through the RK4 map, so every iterate is dynamically feasible.
//! Each iteration linearizes dynamics and residuals around the current
//! rollout, solves the resulting structured QP (see [`crate::qp`]) and
//! line-searches the exact-penalty merit function along the input step.

use std::sync::Arc;

use crate::frenet::{frenet_errors, frenet_linearization};
use crate::model::{rk4_step_with_jacobians, rollout, ControlInput, ModelParams, VehicleState, NU};
use crate::path::{wrap_angle, Corridor, Pose, ReferencePath};
use crate::qp::{IpmOptions, MatXZ, OcpQp, QpStage, QpTerminal, Row, VecX, NY};
use crate::weights::{ObjectiveMode, WeightConfig, WeightSchedule};

/// Soft corridor constraint parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorPenalty {
    /// Distance kept from each corridor bound [m].
    pub margin: f64,
    /// Linear slack weight [1/m].
    pub l1: f64,
    /// Quadratic slack weight [1/m^2].
    pub l2: f64,
}

impl Default for CorridorPenalty {
    fn default() -> Self {
        Self {
            margin: 0.1,
            l1: 1e4,
            l2: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the input step.
    pub tolerance: f64,
    /// Smallest Levenberg regularization added to the input Hessian.
    pub regularization: f64,
    /// Consecutive non-improving iterations before giving up.
    pub max_stalls: usize,
    pub armijo: f64,
    pub min_step: f64,
    pub ipm: IpmOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-6,
            regularization: 1e-6,
            max_stalls: 5,
            armijo: 1e-4,
            min_step: 1.0 / 64.0,
            ipm: IpmOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HorizonProblem {
    pub params: ModelParams,
    pub x0: VehicleState,
    pub schedule: WeightSchedule,
    pub weights: WeightConfig,
    pub path: Arc<ReferencePath>,
    pub corridor: Arc<Corridor>,
    /// Goal pose for the terminal cost; velocity, steering and progress are
    /// referenced to zero.
    pub terminal_reference: Pose,
    /// Upper bound on predicted progress, if the vehicle must not run past a
    /// stopping point.
    pub progress_limit: Option<f64>,
    pub penalty: CorridorPenalty,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OcpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("solver failed to reduce the merit function (kkt residual {:e})", .0.kkt_residual)]
    SolveFailed(Box<TrajectorySolution>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    pub states: Vec<VehicleState>,
    pub inputs: Vec<ControlInput>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub stage_modes: Vec<ObjectiveMode>,
    /// Largest corridor slack over the horizon [m].
    pub slack_max: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// One soft bound on the contouring error, evaluated at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftConstraint {
    pub side: Side,
    /// Bound after applying the margin [m].
    pub bound: f64,
    pub e_c: f64,
    /// Amount by which the bound is exceeded, zero when satisfied [m].
    pub slack: f64,
}

impl HorizonProblem {
    pub fn new(
        params: ModelParams,
        x0: VehicleState,
        schedule: WeightSchedule,
        weights: WeightConfig,
        path: Arc<ReferencePath>,
        corridor: Arc<Corridor>,
    ) -> Result<Self, OcpError> {
        let problem = Self {
            params,
            x0,
            schedule,
            weights,
            path,
            corridor,
            terminal_reference: Pose::new(0.0, 0.0, 0.0),
            progress_limit: None,
            penalty: CorridorPenalty::default(),
            options: SolverOptions::default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn horizon(&self) -> usize {
        self.schedule.len()
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        if self.horizon() < 2 {
            return Err(OcpError::InvalidProblem(format!(
                "horizon must have at least 2 stages, got {}",
                self.horizon()
            )));
        }
        if !self.x0.is_finite() {
            return Err(OcpError::InvalidProblem(
                "initial state is not finite".into(),
            ));
        }
        self.params
            .validate()
            .map_err(|e| OcpError::InvalidProblem(e.to_string()))
    }

    fn v_bounds(&self) -> (f64, f64) {
        (
            self.params.v.lower.min(self.x0.v),
            self.params.v.upper.max(self.x0.v),
        )
    }

    fn delta_bounds(&self) -> (f64, f64) {
        (
            self.params.delta.lower.min(self.x0.delta),
            self.params.delta.upper.max(self.x0.delta),
        )
    }

    fn theta_limit(&self) -> Option<f64> {
        self.progress_limit.map(|l| l.max(self.x0.theta))
    }
}

pub fn stage_cost(x: &VehicleState, u: &ControlInput, k: usize, problem: &HorizonProblem) -> f64 {
    let w = &problem.schedule.stages[k];
    let q = &problem.weights.q;
    let r = &problem.weights.r;
    let dx = [x.x, x.y, wrap_angle(x.phi), x.v, x.delta, x.theta];
    let mut cost: f64 = dx.iter().zip(q).map(|(d, q)| q * d * d).sum();
    if w.frenet_active {
        let e = frenet_errors(x, &problem.path);
        cost += w.q_l * e.e_l * e.e_l + w.q_c * e.e_c * e.e_c;
    }
    let du = [u.a, u.delta_dot, u.theta_dot];
    cost += du.iter().zip(r).map(|(d, r)| r * d * d).sum::<f64>();
    cost + w.gamma * u.theta_dot
}

fn terminal_residual(x: &VehicleState, reference: &Pose) -> [f64; 6] {
    [
        x.x - reference.x,
        x.y - reference.y,
        wrap_angle(x.phi - reference.phi),
        x.v,
        x.delta,
        x.theta,
    ]
}

pub fn terminal_cost(x: &VehicleState, problem: &HorizonProblem) -> f64 {
    terminal_residual(x, &problem.terminal_reference)
        .iter()
        .zip(&problem.schedule.terminal)
        .map(|(d, q)| q * d * d)
        .sum()
}

pub fn corridor_constraints(
    x: &VehicleState,
    k: usize,
    problem: &HorizonProblem,
) -> Vec<SoftConstraint> {
    if !problem.schedule.stages[k].frenet_active {
        return Vec::new();
    }
    let e_c = frenet_errors(x, &problem.path).e_c;
    let (lo, hi) = problem.corridor.bounds(x.theta);
    let m = problem.penalty.margin;
    vec![
        SoftConstraint {
            side: Side::Lower,
            bound: lo + m,
            e_c,
            slack: (lo + m - e_c).max(0.0),
        },
        SoftConstraint {
            side: Side::Upper,
            bound: hi - m,
            e_c,
            slack: (e_c - (hi - m)).max(0.0),
        },
    ]
}

pub fn corridor_penalty(x: &VehicleState, k: usize, problem: &HorizonProblem) -> f64 {
    let p = &problem.penalty;
    corridor_constraints(x, k, problem)
        .iter()
        .map(|c| p.l1 * c.slack + p.l2 * c.slack * c.slack)
        .sum()
}

/// Smooth part of the objective: stage costs plus terminal cost.
pub fn smooth_cost(
    states: &[VehicleState],
    inputs: &[ControlInput],
    problem: &HorizonProblem,
) -> f64 {
    let stages: f64 = inputs
        .iter()
        .enumerate()
        .map(|(k, u)| stage_cost(&states[k], u, k, problem))
        .sum();
    stages + terminal_cost(&states[inputs.len()], problem)
}

fn total_penalty(states: &[VehicleState], problem: &HorizonProblem) -> f64 {
    (0..problem.horizon())
        .map(|k| corridor_penalty(&states[k], k, problem))
        .sum()
}

/// Exact-penalty merit: smooth cost plus corridor slack penalties.
pub fn objective(
    states: &[VehicleState],
    inputs: &[ControlInput],
    problem: &HorizonProblem,
) -> f64 {
    smooth_cost(states, inputs, problem) + total_penalty(states, problem)
}

fn slack_max(states: &[VehicleState], problem: &HorizonProblem) -> f64 {
    (0..problem.horizon())
        .flat_map(|k| corridor_constraints(&states[k], k, problem))
        .fold(0.0, |m, c| m.max(c.slack))
}

/// Gauss-Newton QP in the deviations `(dx_k, du_k, s_lo, s_hi)` around the
/// given rollout. The gradient is the exact gradient of the smooth cost plus
/// the slack terms; the Hessian drops second derivatives of the residuals.
pub fn linearize(
    problem: &HorizonProblem,
    states: &[VehicleState],
    inputs: &[ControlInput],
    regularization: f64,
) -> OcpQp {
    let n = problem.horizon();
    let p = &problem.params;
    let cfg = &problem.weights;
    let pen = &problem.penalty;
    let (v_lo, v_hi) = problem.v_bounds();
    let (d_lo, d_hi) = problem.delta_bounds();
    let theta_limit = problem.theta_limit();
    let u_lo = p.input_lower();
    let u_hi = p.input_upper();

    let state_rows = |x: &VehicleState| -> Vec<(usize, f64, f64)> {
        let mut rows = vec![
            (3, 1.0, v_hi - x.v),
            (3, -1.0, x.v - v_lo),
            (4, 1.0, d_hi - x.delta),
            (4, -1.0, x.delta - d_lo),
        ];
        if let Some(limit) = theta_limit {
            rows.push((5, 1.0, limit - x.theta));
        }
        rows
    };

    let mut stages = Vec::with_capacity(n);
    for k in 0..n {
        let x = &states[k];
        let u = &inputs[k];
        let w = &problem.schedule.stages[k];
        let (_, a, b_u) =
            rk4_step_with_jacobians(&x.to_vector(), &u.to_vector(), p.wheelbase, p.dt);
        let mut b = MatXZ::zeros();
        b.fixed_columns_mut::<NU>(0).copy_from(&b_u);
        let mut st = QpStage::new(a, b);

        let dx = [x.x, x.y, wrap_angle(x.phi), x.v, x.delta, x.theta];
        for (i, (q, d)) in cfg.q.iter().zip(dx).enumerate() {
            st.hess[(i, i)] += 2.0 * q;
            st.grad[i] += 2.0 * q * d;
        }
        if w.frenet_active {
            let (e, j) = frenet_linearization(x, &problem.path);
            let row = |r: usize| {
                let mut g = VecX::zeros();
                g[0] = j[(r, 0)];
                g[1] = j[(r, 1)];
                g[5] = j[(r, 2)];
                g
            };
            let (g_l, g_c) = (row(0), row(1));
            for (g, e, wt) in [(&g_l, e.e_l, w.q_l), (&g_c, e.e_c, w.q_c)] {
                let outer = g * g.transpose() * (2.0 * wt);
                let mut block = st.hess.fixed_view_mut::<6, 6>(0, 0);
                block += outer;
                let mut gx = st.grad.fixed_rows_mut::<6>(0);
                gx += g * (2.0 * wt * e);
            }

            let (lo, hi) = problem.corridor.bounds(x.theta);
            let (dlo, dhi) = problem.corridor.slopes(x.theta);
            let mut upper = [0.0; NY];
            let mut lower = [0.0; NY];
            for i in 0..6 {
                upper[i] = g_c[i];
                lower[i] = -g_c[i];
            }
            upper[5] -= dhi;
            lower[5] += dlo;
            upper[NY - 1] = -1.0;
            lower[NY - 2] = -1.0;
            st.rows
                .push(Row::new(upper.into(), hi - pen.margin - e.e_c));
            st.rows
                .push(Row::new(lower.into(), e.e_c - lo - pen.margin));
        }
        let uv = [u.a, u.delta_dot, u.theta_dot];
        for j in 0..NU {
            st.hess[(6 + j, 6 + j)] += 2.0 * cfg.r[j] + regularization;
            st.grad[6 + j] += 2.0 * cfg.r[j] * uv[j];
            st.rows.push(Row::single(6 + j, 1.0, u_hi[j] - uv[j]));
            st.rows.push(Row::single(6 + j, -1.0, uv[j] - u_lo[j]));
        }
        st.grad[6 + 2] += w.gamma;
        for s in [NY - 2, NY - 1] {
            st.hess[(s, s)] = 2.0 * pen.l2;
            st.grad[s] = pen.l1;
            st.rows.push(Row::single(s, -1.0, 0.0));
        }
        if k > 0 {
            for (i, sign, bound) in state_rows(x) {
                st.rows.push(Row::single(i, sign, bound));
            }
        }
        stages.push(st);
    }

    let xn = &states[n];
    let mut terminal = QpTerminal::default();
    let d = terminal_residual(xn, &problem.terminal_reference);
    for (i, (q, d)) in problem.schedule.terminal.iter().zip(d).enumerate() {
        terminal.hess[(i, i)] = 2.0 * q;
        terminal.grad[i] = 2.0 * q * d;
    }
    for (i, sign, bound) in state_rows(xn) {
        terminal.rows.push(Row::single(i, sign, bound));
    }

    OcpQp {
        x0: VecX::zeros(),
        stages,
        terminal,
    }
}

/// Makes an input guess admissible: inputs clamped to their boxes and, stage
/// by stage, to values that keep velocity, steering and progress within
/// their bounds (these states are integrated exactly by RK4).
fn admissible_guess(problem: &HorizonProblem, guess: &[ControlInput]) -> Vec<ControlInput> {
    let p = &problem.params;
    let dt = p.dt;
    let (v_lo, v_hi) = problem.v_bounds();
    let (d_lo, d_hi) = problem.delta_bounds();
    let theta_limit = problem.theta_limit();
    let mut s = problem.x0;
    let mut out = Vec::with_capacity(guess.len());
    for u in guess {
        let mut u = p.clamp_input(u);
        u.a = u.a.clamp(
            ((v_lo - s.v) / dt).max(p.a.lower).min(p.a.upper),
            ((v_hi - s.v) / dt).min(p.a.upper).max(p.a.lower),
        );
        u.delta_dot = u.delta_dot.clamp(
            ((d_lo - s.delta) / dt)
                .max(p.delta_dot.lower)
                .min(p.delta_dot.upper),
            ((d_hi - s.delta) / dt)
                .min(p.delta_dot.upper)
                .max(p.delta_dot.lower),
        );
        if let Some(limit) = theta_limit {
            let cap = ((limit - s.theta) / dt).max(p.theta_dot.lower);
            u.theta_dot = u.theta_dot.min(cap);
        }
        s = crate::model::discretize_rk4(&s, &u, p);
        out.push(u);
    }
    out
}

fn package(
    problem: &HorizonProblem,
    states: Vec<VehicleState>,
    inputs: Vec<ControlInput>,
    kkt_residual: f64,
    iterations: usize,
    converged: bool,
) -> TrajectorySolution {
    let cost = objective(&states, &inputs, problem);
    let slack_max = slack_max(&states, problem);
    TrajectorySolution {
        states,
        inputs,
        cost,
        kkt_residual,
        iterations,
        stage_modes: problem.schedule.modes(),
        slack_max,
        converged,
    }
}

/// Solves the problem starting from `warm_start` (or zero inputs).
///
/// Returns the last accepted iterate; `converged` tells whether the step
/// norm fell below the tolerance within the iteration budget.
pub fn solve(
    problem: &HorizonProblem,
    warm_start: Option<&TrajectorySolution>,
) -> Result<TrajectorySolution, OcpError> {
    problem.validate()?;
    let n = problem.horizon();
    let opts = &problem.options;
    let guess = match warm_start {
        Some(ws) if ws.inputs.len() != n => {
            return Err(OcpError::InvalidProblem(format!(
                "warm start has {} stages, problem has {n}",
                ws.inputs.len()
            )));
        }
        Some(ws) => ws.inputs.clone(),
        None => vec![ControlInput::default(); n],
    };
    let mut inputs = admissible_guess(problem, &guess);
    let mut states = rollout(&problem.x0, &inputs, &problem.params);
    let mut merit = objective(&states, &inputs, problem);
    let mut reg = opts.regularization;
    let mut stalls = 0;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let qp = linearize(problem, &states, &inputs, reg);
        let accepted = match qp.solve(&opts.ipm) {
            Ok(sol) => {
                let step: Vec<[f64; NU]> = sol.z.iter().map(|z| [z[0], z[1], z[2]]).collect();
                kkt = step
                    .iter()
                    .flat_map(|s| s.iter())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                let predicted = total_penalty(&states, problem) - sol.objective;
                log::trace!("sqp {iterations}: merit {merit:.9e}, predicted {predicted:.3e}, step {kkt:.3e}");
                if kkt < opts.tolerance || predicted <= 1e-12 * (1.0 + merit.abs()) {
                    return Ok(package(problem, states, inputs, kkt, iterations, true));
                }
                line_search(problem, &inputs, &step, merit, predicted)
            }
            Err(e) => {
                log::debug!("QP failed: {e}");
                None
            }
        };
        match accepted {
            Some((u, x, m)) => {
                inputs = u;
                states = x;
                merit = m;
                stalls = 0;
                reg = (reg * 0.1).max(opts.regularization);
            }
            None => {
                log::trace!("sqp {iterations}: no acceptable step, regularization {reg:.1e}");
                stalls += 1;
                reg *= 10.0;
                if stalls >= opts.max_stalls {
                    return Err(OcpError::SolveFailed(Box::new(package(
                        problem, states, inputs, kkt, iterations, false,
                    ))));
                }
            }
        }
    }
    Ok(package(problem, states, inputs, kkt, iterations, false))
}

#[allow(clippy::type_complexity)]
fn line_search(
    problem: &HorizonProblem,
    inputs: &[ControlInput],
    step: &[[f64; NU]],
    merit: f64,
    predicted: f64,
) -> Option<(Vec<ControlInput>, Vec<VehicleState>, f64)> {
    let opts = &problem.options;
    let mut alpha = 1.0;
    while alpha >= opts.min_step {
        let trial: Vec<ControlInput> = inputs
            .iter()
            .zip(step)
            .map(|(u, d)| {
                problem.params.clamp_input(&ControlInput::new(
                    u.a + alpha * d[0],
                    u.delta_dot + alpha * d[1],
                    u.theta_dot + alpha * d[2],
                ))
            })
            .collect();
        let states = rollout(&problem.x0, &trial, &problem.params);
        let m = objective(&states, &trial, problem);
        if m.is_finite() && m <= merit - opts.armijo * alpha * predicted {
            return Some((trial, states, m));
        }
        alpha *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::Direction;
    use crate::weights::{build_schedule, cartesian_schedule, path_following_schedule};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight(len: f64) -> Arc<ReferencePath> {
        Arc::new(
            ReferencePath::from_waypoints(&[(0.0, 0.0), (len, 0.0)], Direction::Forward).unwrap(),
        )
    }

    fn corridor(w: f64) -> Arc<Corridor> {
        Arc::new(Corridor::constant(-w, w).unwrap())
    }

    fn following(x0: VehicleState, n: usize, len: f64) -> HorizonProblem {
        let path = straight(len);
        let cfg = WeightConfig::default();
        let thetas = vec![x0.theta; n];
        let schedule = path_following_schedule(&thetas, &path, path.theta_end(), &cfg).unwrap();
        HorizonProblem::new(
            ModelParams::default(),
            x0,
            schedule,
            cfg,
            path,
            corridor(1.5),
        )
        .unwrap()
    }

    #[test]
    fn stage_cost_examples() {
        let mut p = following(VehicleState::default(), 5, 20.0);
        let zero = ControlInput::default();
        p.schedule.stages[0].q_l = 1e3;
        p.schedule.stages[0].q_c = 1.0;
        p.schedule.stages[0].gamma = -100.0;
        let on_path = VehicleState::new(3.0, 0.0, 0.0, 0.0, 0.0, 3.0);
        assert_eq!(stage_cost(&on_path, &zero, 0, &p), 0.0);
        let off = VehicleState::new(3.0, 0.5, 0.0, 0.0, 0.0, 3.0);
        assert_relative_eq!(stage_cost(&off, &zero, 0, &p), 0.25, epsilon = 1e-12);
        assert_relative_eq!(
            stage_cost(&on_path, &ControlInput::new(0.0, 0.0, 1.0), 0, &p),
            -100.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn terminal_cost_examples() {
        let mut p = following(VehicleState::default(), 5, 20.0);
        p.terminal_reference = Pose::new(5.0, 1.0, 0.3);
        let at_goal = VehicleState::new(5.0, 1.0, 0.3, 0.0, 0.0, 7.0);
        p.schedule.terminal = [1e4, 1e4, 1e4, 0.0, 0.0, 0.0];
        assert_eq!(terminal_cost(&at_goal, &p), 0.0);
        let off = VehicleState::new(5.1, 1.0, 0.3 + 2.0 * std::f64::consts::PI, 1.0, 0.2, 7.0);
        assert_relative_eq!(terminal_cost(&off, &p), 100.0, max_relative = 1e-9);
        p.schedule.terminal = [0.0; 6];
        assert_eq!(terminal_cost(&off, &p), 0.0);
    }

    #[test]
    fn corridor_constraint_examples() {
        let p = following(VehicleState::default(), 5, 20.0);
        let inside = VehicleState::new(3.0, 0.0, 0.0, 0.0, 0.0, 3.0);
        let c = corridor_constraints(&inside, 0, &p);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.slack == 0.0));

        let outside = VehicleState::new(3.0, 1.6, 0.0, 0.0, 0.0, 3.0);
        let c = corridor_constraints(&outside, 0, &p);
        let upper = c.iter().find(|c| c.side == Side::Upper).unwrap();
        assert_relative_eq!(upper.slack, 0.2, epsilon = 1e-12);

        let mut cart = p.clone();
        cart.schedule = cartesian_schedule(5, &cart.weights).unwrap();
        let far = VehicleState::new(3.0, 100.0, 0.0, 0.0, 0.0, 3.0);
        assert!(corridor_constraints(&far, 0, &cart).is_empty());
        assert_eq!(corridor_penalty(&far, 0, &cart), 0.0);
    }

    fn random_problem(
        rng: &mut ChaCha8Rng,
    ) -> (HorizonProblem, Vec<VehicleState>, Vec<ControlInput>) {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let t = i as f64;
                (t, 2.0 * (0.3 * t).sin())
            })
            .collect();
        let path = Arc::new(ReferencePath::from_waypoints(&pts, Direction::Forward).unwrap());
        let theta_e = path.theta_end();
        let n = 8;
        let theta0 = rng.random_range(1.0..theta_e - 8.0);
        let r = path.eval(theta0);
        let x0 = VehicleState::new(
            r.x + rng.random_range(-0.3..0.3),
            r.y + rng.random_range(-0.3..0.3),
            r.phi + rng.random_range(-0.2..0.2),
            rng.random_range(0.2..1.5),
            rng.random_range(-0.3..0.3),
            theta0,
        );
        let inputs: Vec<ControlInput> = (0..n)
            .map(|_| {
                ControlInput::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(0.3..1.5),
                )
            })
            .collect();
        let mut cfg = WeightConfig {
            q: std::array::from_fn(|_| rng.random_range(0.0..2.0)),
            ..WeightConfig::default()
        };
        cfg.r = [
            rng.random_range(1.0..10.0),
            rng.random_range(1.0..10.0),
            0.5,
        ];
        let params = ModelParams::default();
        let states = rollout(&x0, &inputs, &params);
        let thetas: Vec<f64> = states[..n].iter().map(|s| s.theta).collect();
        let goal = Pose::new(r.x + 4.0, r.y, r.phi);
        let goal = path.project_goal(goal).unwrap_or_else(|e| match e {
            crate::path::PathError::AmbiguousProjection { resolved, .. } => resolved,
            other => panic!("{other}"),
        });
        let schedule = build_schedule(&thetas, theta0 + 15.0, &path, Some(&goal), &cfg).unwrap();
        let mut p = HorizonProblem::new(params, x0, schedule, cfg, path, corridor(3.0)).unwrap();
        p.terminal_reference = goal.pose();
        (p, states, inputs)
    }

    #[test]
    fn qp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (p, states, inputs) = random_problem(&mut rng);
            let qp = linearize(&p, &states, &inputs, 0.0);
            let h = 1e-6;
            let check = |analytic: f64, plus: f64, minus: f64| {
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    (analytic - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "{analytic} vs {fd}"
                );
            };
            for k in 0..p.horizon() {
                for i in 0..6 {
                    let bump = |d: f64| {
                        let mut v = states[k].to_vector();
                        v[i] += d;
                        stage_cost(&VehicleState::from_vector(&v), &inputs[k], k, &p)
                    };
                    check(qp.stages[k].grad[i], bump(h), bump(-h));
                }
                for j in 0..NU {
                    let bump = |d: f64| {
                        let mut v = inputs[k].to_vector();
                        v[j] += d;
                        stage_cost(&states[k], &ControlInput::from_vector(&v), k, &p)
                    };
                    check(qp.stages[k].grad[6 + j], bump(h), bump(-h));
                }
            }
            let n = p.horizon();
            for i in 0..6 {
                let bump = |d: f64| {
                    let mut v = states[n].to_vector();
                    v[i] += d;
                    terminal_cost(&VehicleState::from_vector(&v), &p)
                };
                check(qp.terminal.grad[i], bump(h), bump(-h));
            }
        }
    }

    #[test]
    fn progress_reward_saturates_progress_rate() {
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut p = following(x0, 20, 200.0);
        for s in &mut p.schedule.stages {
            s.q_l = 0.0;
            s.q_c = 0.0;
        }
        p.weights.q_f = [0.0, 0.0, 0.0];
        let sol = solve(&p, None).unwrap();
        for u in &sol.inputs {
            assert!(
                (u.theta_dot - 2.0).abs() < 1e-6,
                "theta_dot {}",
                u.theta_dot
            );
        }
    }

    #[test]
    fn stationary_at_goal() {
        let goal = Pose::new(4.0, 1.0, 0.2);
        let x0 = VehicleState::new(goal.x, goal.y, goal.phi, 0.0, 0.0, 4.0);
        let mut p = following(x0, 20, 20.0);
        p.weights = WeightConfig {
            r: [0.0; 3],
            ..WeightConfig::default()
        };
        p.schedule = cartesian_schedule(20, &p.weights).unwrap();
        p.terminal_reference = goal;
        let sol = solve(&p, None).unwrap();
        assert!(sol.cost.abs() < 1e-12);
        for u in &sol.inputs {
            assert!(u.a.abs() < 1e-6 && u.delta_dot.abs() < 1e-6);
        }
    }

    #[test]
    fn solution_is_a_rollout() {
        let x0 = VehicleState::new(0.5, 0.4, 0.1, 0.5, 0.0, 0.5);
        let p = following(x0, 30, 30.0);
        let sol = solve(&p, None).unwrap();
        let replay = rollout(&x0, &sol.inputs, &p.params);
        for (a, b) in replay.iter().zip(&sol.states) {
            assert!((a.to_vector() - b.to_vector()).amax() <= 1e-12);
        }
        for u in &sol.inputs {
            assert!(p.params.a.contains(u.a));
            assert!(p.params.delta_dot.contains(u.delta_dot));
            assert!(p.params.theta_dot.contains(u.theta_dot));
        }
        assert_eq!(sol.states.len(), 31);
        assert!(sol.converged);
    }

    #[test]
    fn solve_is_deterministic() {
        let x0 = VehicleState::new(0.5, -0.4, 0.1, 0.5, 0.0, 0.5);
        let p = following(x0, 30, 30.0);
        let a = solve(&p, None).unwrap();
        let b = solve(&p, None).unwrap();
        assert_eq!(a, b);
        let c = solve(&p, Some(&a)).unwrap();
        let d = solve(&p, Some(&a)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn solution_improves_on_warm_start() {
        let x0 = VehicleState::new(0.5, 0.8, -0.2, 1.0, 0.1, 0.5);
        let p = following(x0, 30, 30.0);
        let zero = vec![ControlInput::default(); 30];
        let initial = objective(&rollout(&x0, &zero, &p.params), &zero, &p);
        let sol = solve(&p, None).unwrap();
        assert!(sol.cost < initial);
    }

    #[test]
    fn cartesian_stages_carry_no_frenet_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut p, _, _) = random_problem(&mut rng);
        let n = p.horizon();
        for k in n / 2..n {
            p.schedule.stages[k] = cartesian_schedule(1, &p.weights).unwrap().stages[0];
        }
        let sol = solve(&p, None).unwrap();
        // Recompute with the Frenet pieces of Cartesian stages ablated by
        // hand: only state and input costs remain there.
        let mut total = terminal_cost(&sol.states[n], &p);
        for k in 0..n {
            let x = &sol.states[k];
            let u = &sol.inputs[k];
            if sol.stage_modes[k] == ObjectiveMode::Cartesian {
                let dx = [x.x, x.y, wrap_angle(x.phi), x.v, x.delta, x.theta];
                total += dx
                    .iter()
                    .zip(&p.weights.q)
                    .map(|(d, q)| q * d * d)
                    .sum::<f64>();
                total += p.weights.r[0] * u.a * u.a
                    + p.weights.r[1] * u.delta_dot * u.delta_dot
                    + p.weights.r[2] * u.theta_dot * u.theta_dot;
            } else {
                total += stage_cost(x, u, k, &p) + corridor_penalty(x, k, &p);
            }
        }
        assert_relative_eq!(total, sol.cost, max_relative = 1e-12);
    }

    #[test]
    fn warm_start_length_mismatch_is_rejected() {
        let p = following(VehicleState::default(), 10, 20.0);
        let other = following(VehicleState::default(), 12, 20.0);
        let ws = solve(&other, None).unwrap();
        assert!(matches!(
            solve(&p, Some(&ws)),
            Err(OcpError::InvalidProblem(_))
        ));
    }
}
