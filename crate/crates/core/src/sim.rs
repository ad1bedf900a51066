//! Closed-loop simulation: the plant is the controller's own RK4 model.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{resolve_goal, Controller, ControllerConfig, Phase, Strategy};
use crate::frenet::errors_from_reference;
use crate::metrics::{count_direction_changes, DIRECTION_HYSTERESIS};
use crate::model::{discretize_rk4, ControlInput, ModelParams, VehicleState};
use crate::path::{wrap_angle, Corridor, Direction, GoalLocation, Leg, Pose, ReferencePath};
use crate::weights::{ObjectiveMode, StageWeights, WeightConfig, WeightSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    /// Waypoints of each leg; consecutive legs share their junction point.
    pub waypoints: Vec<Vec<[f64; 2]>>,
    /// Driving direction of each leg.
    pub directions: Vec<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSpec {
    pub theta_breakpoints: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalNoise {
    /// Position noise standard deviation [m].
    pub sigma_xy: f64,
    /// Heading noise standard deviation [rad].
    pub sigma_phi: f64,
}

impl Default for GoalNoise {
    fn default() -> Self {
        Self {
            sigma_xy: 0.02,
            sigma_phi: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub pose: Pose,
    #[serde(default)]
    pub noise: Option<GoalNoise>,
    /// Time before which the goal is unknown to the controller [s].
    #[serde(default)]
    pub reveal_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub position: f64,
    pub heading: f64,
    pub velocity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            position: 0.05,
            heading: 0.02,
            velocity: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    /// Duration limit [s].
    pub duration: f64,
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Time the run continues after the goal is reached [s].
    pub settle_time: f64,
    /// Standard deviation of noise added to the applied acceleration and
    /// steering rate; zero for the perfect-model setting.
    pub actuator_noise: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            duration: 60.0,
            tolerances: Tolerances::default(),
            seed: 0,
            settle_time: 1.0,
            actuator_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub path: PathSpec,
    pub corridor: CorridorSpec,
    pub initial_state: VehicleState,
    #[serde(default)]
    pub goal: Option<GoalSpec>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub weights: WeightConfig,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sim: SimSpec,
}

fn default_strategy() -> Strategy {
    Strategy::Unified
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    ScenarioInvalid(Vec<String>),
    #[error("controller failure at t = {time:.1} s: {message}")]
    Controller { time: f64, message: String },
}

fn finite_positive(name: &str, v: f64, errors: &mut Vec<String>) {
    if !(v.is_finite() && v > 0.0) {
        errors.push(format!("{name}: must be finite and > 0, got {v}"));
    }
}

impl Scenario {
    pub fn build_path(&self) -> Result<ReferencePath, SimError> {
        let legs = self.legs()?;
        ReferencePath::build(&legs)
            .map_err(|e| SimError::ScenarioInvalid(vec![format!("path: {e}")]))
    }

    fn legs(&self) -> Result<Vec<Leg>, SimError> {
        let p = &self.path;
        if p.waypoints.is_empty() {
            return Err(SimError::ScenarioInvalid(vec![
                "path.waypoints: no legs".into()
            ]));
        }
        if p.waypoints.len() != p.directions.len() {
            return Err(SimError::ScenarioInvalid(vec![format!(
                "path.directions: {} entries for {} legs",
                p.directions.len(),
                p.waypoints.len()
            )]));
        }
        Ok(p.waypoints
            .iter()
            .zip(&p.directions)
            .map(|(w, d)| Leg {
                waypoints: w.iter().map(|p| (p[0], p[1])).collect(),
                direction: *d,
            })
            .collect())
    }

    pub fn build_corridor(&self) -> Result<Corridor, SimError> {
        let c = &self.corridor;
        Corridor::new(
            c.theta_breakpoints.clone(),
            c.lower.clone(),
            c.upper.clone(),
        )
        .map_err(|e| SimError::ScenarioInvalid(vec![format!("corridor: {e}")]))
    }

    /// Checks every field, collecting all problems.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errors = Vec::new();
        if let Err(SimError::ScenarioInvalid(e)) = self.build_path() {
            errors.extend(e);
        }
        if let Err(SimError::ScenarioInvalid(e)) = self.build_corridor() {
            errors.extend(e);
        }
        if let Err(e) = self.model.validate() {
            errors.push(format!("model: {e}"));
        }
        if let Err(e) = self.weights.validate() {
            errors.push(format!("weights: {e}"));
        }
        if let Err(e) = self.controller.validate() {
            errors.push(format!("controller: {e}"));
        }
        let s = &self.initial_state;
        if !s.is_finite() {
            errors.push("initial_state: not finite".into());
        } else {
            if !self.model.v.contains(s.v) {
                errors.push(format!(
                    "initial_state.v: {} outside the velocity bounds",
                    s.v
                ));
            }
            if !self.model.delta.contains(s.delta) {
                errors.push(format!(
                    "initial_state.delta: {} outside the steering bounds",
                    s.delta
                ));
            }
        }
        if let Some(g) = &self.goal {
            if !(g.pose.x.is_finite() && g.pose.y.is_finite() && g.pose.phi.is_finite()) {
                errors.push("goal.pose: not finite".into());
            }
            if !(g.reveal_time.is_finite() && g.reveal_time >= 0.0) {
                errors.push(format!(
                    "goal.reveal_time: must be >= 0, got {}",
                    g.reveal_time
                ));
            }
            if let Some(n) = &g.noise {
                if !(n.sigma_xy.is_finite() && n.sigma_xy >= 0.0) {
                    errors.push(format!(
                        "goal.noise.sigma_xy: must be >= 0, got {}",
                        n.sigma_xy
                    ));
                }
                if !(n.sigma_phi.is_finite() && n.sigma_phi >= 0.0) {
                    errors.push(format!(
                        "goal.noise.sigma_phi: must be >= 0, got {}",
                        n.sigma_phi
                    ));
                }
            }
        }
        finite_positive("sim.duration", self.sim.duration, &mut errors);
        finite_positive(
            "sim.tolerances.position",
            self.sim.tolerances.position,
            &mut errors,
        );
        finite_positive(
            "sim.tolerances.heading",
            self.sim.tolerances.heading,
            &mut errors,
        );
        finite_positive(
            "sim.tolerances.velocity",
            self.sim.tolerances.velocity,
            &mut errors,
        );
        if !(self.sim.settle_time.is_finite() && self.sim.settle_time >= 0.0) {
            errors.push(format!(
                "sim.settle_time: must be >= 0, got {}",
                self.sim.settle_time
            ));
        }
        if !(self.sim.actuator_noise.is_finite() && self.sim.actuator_noise >= 0.0) {
            errors.push(format!(
                "sim.actuator_noise: must be >= 0, got {}",
                self.sim.actuator_noise
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SimError::ScenarioInvalid(errors))
        }
    }
}

/// Per-tick controller output and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub input: ControlInput,
    pub theta_0: f64,
    pub phase: Phase,
    pub e_l: f64,
    pub e_c: f64,
    /// Stage-0 weights of the schedule used at this tick.
    pub stage0: StageWeights,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub cost: f64,
    pub converged: bool,
    pub degraded: bool,
    pub slack_max: f64,
    /// Goal as seen by the controller (with noise), if revealed.
    pub observed_goal: Option<Pose>,
}

impl Default for TickRecord {
    fn default() -> Self {
        Self {
            input: ControlInput::default(),
            theta_0: 0.0,
            phase: Phase::FollowPath,
            e_l: 0.0,
            e_c: 0.0,
            stage0: StageWeights {
                q_l: 0.0,
                q_c: 0.0,
                gamma: 0.0,
                frenet_active: false,
                mode: ObjectiveMode::Cartesian,
            },
            iterations: 0,
            kkt_residual: 0.0,
            cost: 0.0,
            converged: true,
            degraded: false,
            slack_max: 0.0,
            observed_goal: None,
        }
    }
}

/// The plan solved at one tick, kept for after-the-fact checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub schedule_thetas: Vec<f64>,
    pub schedule: WeightSchedule,
    pub states: Vec<VehicleState>,
    pub inputs: Vec<ControlInput>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub name: String,
    pub strategy: Option<Strategy>,
    pub dt: f64,
    pub wheelbase: f64,
    /// Plant states, one more than ticks.
    pub states: Vec<VehicleState>,
    pub ticks: Vec<TickRecord>,
    pub plans: Vec<PlanRecord>,
    /// Projected path progress of each plant state [m].
    pub progress: Vec<f64>,
    /// Corridor violation of each plant state [m], zero when inside.
    pub violation: Vec<f64>,
    pub goal_reach_time: Option<f64>,
    pub direction_changes: usize,
    /// Largest gap between the planned and the simulated next state, over
    /// the physical components (progress is re-projected every tick).
    pub max_prediction_error: f64,
    pub theta_end: f64,
    /// Pose that counts as reaching the goal.
    pub target: Pose,
    pub degraded_ticks: usize,
}

impl RunRecord {
    pub fn inputs(&self) -> Vec<ControlInput> {
        self.ticks.iter().map(|t| t.input).collect()
    }

    pub fn duration(&self) -> f64 {
        self.ticks.len() as f64 * self.dt
    }
}

/// Corridor violation of a position whose projection onto the path is
/// `theta`; past the path end there is no corridor.
pub fn corridor_violation(
    path: &ReferencePath,
    corridor: &Corridor,
    x: f64,
    y: f64,
    theta: f64,
) -> f64 {
    if theta >= path.theta_end() && path.distance_past_end(x, y) > 0.0 {
        return 0.0;
    }
    let e_c = errors_from_reference(x, y, &path.eval(theta)).e_c;
    let (lo, hi) = corridor.bounds(theta);
    (e_c - hi).max(lo - e_c).max(0.0)
}

/// Goal check; the heading is only compared when `check_heading` is set.
pub fn reached(state: &VehicleState, target: &Pose, check_heading: bool, tol: &Tolerances) -> bool {
    (state.x - target.x).hypot(state.y - target.y) <= tol.position
        && (!check_heading || wrap_angle(state.phi - target.phi).abs() <= tol.heading)
        && state.v.abs() <= tol.velocity
}

/// Runs the closed loop until the goal has been held for the settle time or
/// the duration limit is hit.
pub fn simulate(scenario: &Scenario) -> Result<RunRecord, SimError> {
    scenario.validate()?;
    let path = Arc::new(scenario.build_path()?);
    let corridor = Arc::new(scenario.build_corridor()?);
    let params = scenario.model;
    let dt = params.dt;
    let tol = scenario.sim.tolerances;
    let theta_e = path.theta_end();
    let target = match &scenario.goal {
        Some(g) => g.pose,
        None => path.eval(theta_e),
    };

    let mut controller = Controller::new(
        Arc::clone(&path),
        Arc::clone(&corridor),
        params,
        scenario.weights.clone(),
        scenario.controller,
        scenario.strategy,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.sim.seed);
    let goal_noise = scenario.goal.and_then(|g| g.noise).map(|n| {
        (
            Normal::new(0.0, n.sigma_xy).expect("validated sigma"),
            Normal::new(0.0, n.sigma_phi).expect("validated sigma"),
        )
    });
    let actuator = (scenario.sim.actuator_noise > 0.0)
        .then(|| Normal::new(0.0, scenario.sim.actuator_noise).expect("validated sigma"));

    let x0 = scenario.initial_state;
    controller.initialize(&x0);
    let mut record = RunRecord {
        name: scenario.name.clone(),
        strategy: Some(scenario.strategy),
        dt,
        wheelbase: params.wheelbase,
        theta_end: theta_e,
        target,
        ..RunRecord::default()
    };
    let check_heading = scenario.goal.is_some();
    record.states.push(x0);

    let max_ticks = (scenario.sim.duration / dt + 1e-9).floor() as usize;
    let mut state = x0;
    for tick in 0..=max_ticks {
        let t = tick as f64 * dt;
        if record.goal_reach_time.is_none() && reached(&state, &target, check_heading, &tol) {
            record.goal_reach_time = Some(t);
        }
        if tick == max_ticks {
            break;
        }
        if let Some(t_reach) = record.goal_reach_time {
            if t >= t_reach + scenario.sim.settle_time - 1e-9 {
                break;
            }
        }

        let observed = scenario.goal.as_ref().and_then(|g| {
            (t + 1e-9 >= g.reveal_time).then(|| match &goal_noise {
                Some((nxy, nphi)) => Pose::new(
                    g.pose.x + nxy.sample(&mut rng),
                    g.pose.y + nxy.sample(&mut rng),
                    g.pose.phi + nphi.sample(&mut rng),
                ),
                None => g.pose,
            })
        });
        let goal = match observed {
            Some(p) => Some(resolve_goal(&path, p).map_err(|e| SimError::Controller {
                time: t,
                message: e.to_string(),
            })?),
            None => None,
        };

        let out = controller
            .tick(&state, goal.as_ref())
            .map_err(|e| SimError::Controller {
                time: t,
                message: e.to_string(),
            })?;
        let mut applied = out.input;
        if let Some(noise) = &actuator {
            applied.a += noise.sample(&mut rng);
            applied.delta_dot += noise.sample(&mut rng);
            applied = params.clamp_input(&applied);
        }
        let next = discretize_rk4(&state, &applied, &params);
        let predicted = out.solution.states[1].to_vector() - next.to_vector();
        record.max_prediction_error = record.max_prediction_error.max(predicted.rows(0, 5).amax());

        let e = errors_from_reference(state.x, state.y, &path.eval(out.theta_0));
        record.progress.push(out.theta_0);
        record.violation.push(corridor_violation(
            &path,
            &corridor,
            state.x,
            state.y,
            out.theta_0,
        ));
        record.degraded_ticks += out.degraded as usize;
        record.ticks.push(TickRecord {
            input: applied,
            theta_0: out.theta_0,
            phase: out.phase,
            e_l: e.e_l,
            e_c: e.e_c,
            stage0: out.schedule.stages[0],
            iterations: out.solution.iterations,
            kkt_residual: out.solution.kkt_residual,
            cost: out.solution.cost,
            converged: out.solution.converged,
            degraded: out.degraded,
            slack_max: out.solution.slack_max,
            observed_goal: observed,
        });
        record.plans.push(PlanRecord {
            schedule_thetas: out.schedule_thetas,
            schedule: out.schedule,
            states: out.solution.states,
            inputs: out.solution.inputs,
        });

        record.states.push(next);
        state = next;
    }
    let theta_last = controller.project(&state).unwrap_or(0.0);
    record.progress.push(theta_last);
    record.violation.push(corridor_violation(
        &path, &corridor, state.x, state.y, theta_last,
    ));
    record.direction_changes =
        count_direction_changes(record.states.iter().map(|s| s.v), DIRECTION_HYSTERESIS);
    Ok(record)
}

fn leg(points: &[(f64, f64)]) -> Vec<[f64; 2]> {
    points.iter().map(|&(x, y)| [x, y]).collect()
}

/// Corridor of half-width `wide` that narrows linearly to `narrow` between
/// `theta_narrow - 0.5` and `theta_narrow`.
fn narrowing_corridor(wide: f64, narrow: f64, theta_narrow: f64, theta_e: f64) -> CorridorSpec {
    CorridorSpec {
        theta_breakpoints: vec![0.0, theta_narrow - 0.5, theta_narrow, theta_e],
        lower: vec![-wide, -wide, -narrow, -narrow],
        upper: vec![wide, wide, narrow, narrow],
    }
}

const DESK_SCALE: &str = "desk-scale stand-in geometry; not the original evaluation corridor";

fn base(
    name: &str,
    description: &str,
    path: PathSpec,
    corridor: CorridorSpec,
    duration: f64,
) -> Scenario {
    Scenario {
        name: name.to_string(),
        description: format!("{description} ({DESK_SCALE})"),
        path,
        corridor,
        initial_state: VehicleState::default(),
        goal: None,
        strategy: Strategy::Unified,
        weights: WeightConfig::default(),
        model: ModelParams::default(),
        controller: ControllerConfig::default(),
        sim: SimSpec {
            duration,
            ..SimSpec::default()
        },
    }
}

/// Path following through one cusp to the path end, no goal.
pub fn cusp_follow() -> Scenario {
    let path = PathSpec {
        waypoints: vec![
            leg(&[
                (0.0, 0.0),
                (5.0, 0.0),
                (10.0, 2.0),
                (15.0, 2.0),
                (20.0, 3.0),
                (24.0, 5.0),
            ]),
            leg(&[
                (24.0, 5.0),
                (22.082, 4.482),
                (20.114, 4.752),
                (18.406, 5.768),
                (17.228, 7.368),
            ]),
        ],
        directions: vec![Direction::Forward, Direction::Reverse],
    };
    let corridor = CorridorSpec {
        theta_breakpoints: vec![0.0],
        lower: vec![-1.5],
        upper: vec![1.5],
    };
    base(
        "cusp-follow",
        "S-shaped forward leg into a cusp, then a reverse leg",
        path,
        corridor,
        60.0,
    )
}

fn scenario_1_path() -> PathSpec {
    PathSpec {
        waypoints: vec![leg(&[
            (0.0, 0.0),
            (10.0, 0.0),
            (20.0, 2.0),
            (30.0, 2.0),
            (45.0, 2.0),
        ])],
        directions: vec![Direction::Forward],
    }
}

/// Goal inside the corridor, 1.3 m to the left of the path.
pub fn scenario_1() -> Scenario {
    let path = scenario_1_path();
    let mut s = base(
        "scenario-1",
        "goal pose inside the corridor, laterally offset from the path",
        path,
        CorridorSpec {
            theta_breakpoints: vec![0.0],
            lower: vec![-2.0],
            upper: vec![2.0],
        },
        60.0,
    );
    s.controller.staging_offset = 8.0;
    let built = s.build_path().expect("built-in path");
    let theta_g = 0.85 * built.theta_end();
    let r = built.eval(theta_g);
    let offset = 1.3;
    s.goal = Some(GoalSpec {
        pose: Pose::new(
            r.x - offset * r.phi.sin(),
            r.y + offset * r.phi.cos(),
            r.phi,
        ),
        noise: None,
        reveal_time: 0.0,
    });
    s
}

/// Goal beyond the path end with a narrowed corridor before it.
pub fn scenario_2() -> Scenario {
    let path = PathSpec {
        waypoints: vec![leg(&[(0.0, 0.0), (10.0, 0.0), (20.0, 1.0), (30.0, 1.0)])],
        directions: vec![Direction::Forward],
    };
    let mut s = base(
        "scenario-2",
        "goal pose beyond the path end, corridor narrowed over the final 5 m",
        path,
        CorridorSpec {
            theta_breakpoints: vec![0.0],
            lower: vec![-1.5],
            upper: vec![1.5],
        },
        60.0,
    );
    let built = s.build_path().expect("built-in path");
    let theta_e = built.theta_end();
    s.corridor = narrowing_corridor(1.5, 0.6, theta_e - 5.0, theta_e);
    let end = built.eval(theta_e);
    let (ahead, lateral) = (3.0, 1.5);
    // Heading of the circular arc from the path end through the goal.
    let (sin, cos) = end.phi.sin_cos();
    s.goal = Some(GoalSpec {
        pose: Pose::new(
            end.x + ahead * cos - lateral * sin,
            end.y + ahead * sin + lateral * cos,
            end.phi + 2.0 * lateral.atan2(ahead),
        ),
        noise: None,
        reveal_time: 0.0,
    });
    s
}

pub fn make_paper_scenarios() -> Vec<Scenario> {
    vec![cusp_follow(), scenario_1(), scenario_2()]
}

/// Where the goal of a scenario projects, if it has one.
pub fn goal_location(scenario: &Scenario) -> Option<GoalLocation> {
    let path = scenario.build_path().ok()?;
    let g = scenario.goal?;
    resolve_goal(&path, g.pose).ok().map(|g| g.location)
}
