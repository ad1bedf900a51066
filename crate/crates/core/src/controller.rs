//! Receding-horizon controller.
//!
//! Every tick the controller re-projects the vehicle onto the path, rebuilds
//! the weight schedule from the shifted previous plan, solves the horizon
//! problem and returns the first input. Only the active direction segment is
//! visible to the optimizer: its cusp acts as a local path end, and the next
//! segment becomes active once the vehicle has stopped at the cusp.
//!
//! Besides the unified strategy the controller hosts two baselines:
//!
//! * `Separated` follows the path to a staging point, waits for a full stop,
//!   then hands over to a pure Cartesian MPC;
//! * `Switched` swaps the whole problem to Cartesian mode once the vehicle is
//!   within `switch_distance` of the path end, without stopping.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{rollout, ControlInput, ModelParams, VehicleState};
use crate::ocp::{solve, HorizonProblem, OcpError, TrajectorySolution};
use crate::path::{
    Corridor, DirectionSegment, GoalLocation, GoalPose, PathError, Pose, ReferencePath,
};
use crate::weights::{
    build_schedule, cartesian_schedule, path_following_schedule, WeightConfig, WeightError,
    WeightSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Unified,
    Separated,
    Switched,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Unified, Strategy::Separated, Strategy::Switched];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Unified => "unified",
            Strategy::Separated => "separated",
            Strategy::Switched => "switched",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                format!("unknown strategy `{s}` (expected unified, separated or switched)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    FollowPath,
    GoalApproach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Number of stages N.
    pub horizon: usize,
    /// Separated baseline: staging point this far before an in-corridor goal [m].
    pub staging_offset: f64,
    /// Switched baseline: switch once the robot is this close to the path end [m].
    pub switch_distance: f64,
    /// Speed below which the vehicle counts as stopped [m/s].
    pub stop_speed: f64,
    /// Distance to the staging pose or cusp within which a stop counts [m].
    pub stop_radius: f64,
    /// Half-width of the progress window searched when re-projecting the
    /// vehicle onto the path [m].
    pub projection_window: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon: 70,
            staging_offset: 5.0,
            switch_distance: 10.0,
            stop_speed: 0.02,
            stop_radius: 0.3,
            projection_window: 2.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 2 {
            return Err(format!("horizon must be at least 2, got {}", self.horizon));
        }
        for (name, v) in [
            ("staging_offset", self.staging_offset),
            ("switch_distance", self.switch_distance),
            ("stop_speed", self.stop_speed),
            ("stop_radius", self.stop_radius),
            ("projection_window", self.projection_window),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("controller not initialized")]
    NotInitialized,
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub last_solution: Option<TrajectorySolution>,
    pub theta_0: f64,
    pub goal: Option<GoalPose>,
    pub strategy: Strategy,
    pub phase: Phase,
    /// Index of the active direction segment.
    pub segment: usize,
    pub tick: u64,
}

/// Everything produced by one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub input: ControlInput,
    pub solution: TrajectorySolution,
    pub schedule: WeightSchedule,
    /// Progress values the schedule was built from.
    pub schedule_thetas: Vec<f64>,
    pub theta_0: f64,
    pub phase: Phase,
    /// True when the solver failed and the shifted previous plan was reused.
    pub degraded: bool,
}

/// Projects a goal pose, accepting the tie-broken result of an ambiguous
/// projection.
pub fn resolve_goal(path: &ReferencePath, pose: Pose) -> Result<GoalPose, PathError> {
    match path.project_goal(pose) {
        Ok(g) => Ok(g),
        Err(PathError::AmbiguousProjection {
            first,
            second,
            resolved,
        }) => {
            log::warn!(
                "goal projects equally onto theta {first:.3} and {second:.3}; using {second:.3}"
            );
            Ok(resolved)
        }
        Err(e) => Err(e),
    }
}

fn project_within(
    path: &ReferencePath,
    seg: &DirectionSegment,
    center: f64,
    window: f64,
    plant: &VehicleState,
) -> f64 {
    path.project_in_window(
        plant.x,
        plant.y,
        (center - window).max(seg.theta_start),
        (center + window).min(seg.theta_end),
    )
    .theta
}

#[derive(Debug, Clone)]
pub struct Controller {
    path: Arc<ReferencePath>,
    corridor: Arc<Corridor>,
    params: ModelParams,
    weights: WeightConfig,
    config: ControllerConfig,
    strategy: Strategy,
    state: Option<ControllerState>,
}

impl Controller {
    pub fn new(
        path: Arc<ReferencePath>,
        corridor: Arc<Corridor>,
        params: ModelParams,
        weights: WeightConfig,
        config: ControllerConfig,
        strategy: Strategy,
    ) -> Self {
        Self {
            path,
            corridor,
            params,
            weights,
            config,
            strategy,
            state: None,
        }
    }

    pub fn path(&self) -> &Arc<ReferencePath> {
        &self.path
    }

    pub fn state(&self) -> Option<&ControllerState> {
        self.state.as_ref()
    }

    /// Resets the controller for a vehicle starting at `plant`.
    pub fn initialize(&mut self, plant: &VehicleState) {
        let theta_e = self.path.theta_end();
        let theta_0 = self
            .path
            .project_in_window(plant.x, plant.y, 0.0, theta_e)
            .theta;
        let segment = self
            .path
            .segments()
            .iter()
            .position(|s| theta_0 < s.theta_end)
            .unwrap_or(self.path.segments().len() - 1);
        self.state = Some(ControllerState {
            last_solution: None,
            theta_0,
            goal: None,
            strategy: self.strategy,
            phase: Phase::FollowPath,
            segment,
            tick: 0,
        });
    }

    /// Projection of `plant` onto the active segment near the current
    /// progress, without advancing the controller.
    pub fn project(&self, plant: &VehicleState) -> Option<f64> {
        let state = self.state.as_ref()?;
        let seg = &self.path.segments()[state.segment];
        Some(project_within(
            &self.path,
            seg,
            state.theta_0,
            self.config.projection_window,
            plant,
        ))
    }

    /// Progress at which the separated baseline stops before switching.
    pub fn staging_theta(&self, goal: Option<&GoalPose>) -> f64 {
        let theta_e = self.path.theta_end();
        match goal {
            Some(g) if g.location == GoalLocation::InsideCorridor => {
                (g.theta_g - self.config.staging_offset).clamp(0.0, theta_e)
            }
            _ => theta_e,
        }
    }

    fn shifted_warm_start(
        &self,
        plant: &VehicleState,
        previous: &TrajectorySolution,
    ) -> TrajectorySolution {
        let mut inputs: Vec<ControlInput> = previous.inputs[1..].to_vec();
        inputs.push(*previous.inputs.last().expect("nonempty plan"));
        let states = rollout(plant, &inputs, &self.params);
        TrajectorySolution {
            states,
            inputs,
            ..previous.clone()
        }
    }

    pub fn tick(
        &mut self,
        plant: &VehicleState,
        goal: Option<&GoalPose>,
    ) -> Result<TickOutput, ControllerError> {
        let n = self.config.horizon;
        let theta_e = self.path.theta_end();
        let staging = self.staging_theta(goal);
        let window = self.config.projection_window;
        let path = Arc::clone(&self.path);
        let config = self.config;
        let state = self.state.as_mut().ok_or(ControllerError::NotInitialized)?;

        let segments = path.segments();
        let project =
            |seg: &DirectionSegment, center: f64| project_within(&path, seg, center, window, plant);
        let mut theta_0 = project(&segments[state.segment], state.theta_0);
        if state.segment + 1 < segments.len() {
            let cusp = path.eval(segments[state.segment].theta_end);
            if plant.v.abs() < config.stop_speed
                && (plant.x - cusp.x).hypot(plant.y - cusp.y) < config.stop_radius
            {
                state.segment += 1;
                let next = &segments[state.segment];
                log::info!(
                    "cusp at theta {:.2} reached at tick {}",
                    next.theta_start,
                    state.tick
                );
                theta_0 = project(next, next.theta_start);
            }
        }
        let active = segments[state.segment];
        let last_segment = state.segment + 1 == segments.len();
        state.theta_0 = theta_0;
        state.goal = goal.copied();
        let start = VehicleState {
            theta: theta_0,
            ..*plant
        };

        // Phase transitions of the baselines.
        if state.phase == Phase::FollowPath && goal.is_some() {
            let switch = match state.strategy {
                Strategy::Unified => false,
                Strategy::Separated => {
                    let p = path.eval(staging);
                    plant.v.abs() < config.stop_speed
                        && (plant.x - p.x).hypot(plant.y - p.y) < config.stop_radius
                }
                Strategy::Switched => theta_0 > theta_e - config.switch_distance,
            };
            if switch {
                log::info!(
                    "{} switches to goal approach at tick {}",
                    state.strategy,
                    state.tick
                );
                state.phase = Phase::GoalApproach;
                state.last_solution = None;
            }
        }
        let phase = state.phase;
        let strategy = state.strategy;
        let previous = state.last_solution.clone();
        let tick = state.tick;

        let warm = previous
            .as_ref()
            .map(|p| self.shifted_warm_start(&start, p));
        // Non-decreasing progress profile starting at θ0.
        let thetas: Vec<f64> = match &warm {
            Some(w) => w.states[..n]
                .iter()
                .scan(theta_0, |m, s| {
                    *m = m.max(s.theta);
                    Some(*m)
                })
                .collect(),
            None => vec![theta_0; n],
        };

        let (schedule, progress_limit) = match (strategy, phase, goal) {
            (_, Phase::FollowPath, _) if !last_segment => (
                path_following_schedule(&thetas, &path, active.theta_end, &self.weights)?,
                Some(active.theta_end),
            ),
            (_, _, None) => (
                path_following_schedule(&thetas, &path, theta_e, &self.weights)?,
                Some(theta_e),
            ),
            (Strategy::Unified, _, Some(g)) => {
                let limit = match g.location {
                    GoalLocation::InsideCorridor => Some(theta_e),
                    GoalLocation::BeyondPathEnd => None,
                };
                (
                    build_schedule(&thetas, theta_0, &path, Some(g), &self.weights)?,
                    limit,
                )
            }
            (Strategy::Separated, Phase::FollowPath, Some(_)) => (
                path_following_schedule(&thetas, &path, staging, &self.weights)?,
                Some(staging),
            ),
            (Strategy::Switched, Phase::FollowPath, Some(_)) => (
                path_following_schedule(&thetas, &path, theta_e, &self.weights)?,
                Some(theta_e),
            ),
            (_, Phase::GoalApproach, Some(_)) => (cartesian_schedule(n, &self.weights)?, None),
        };

        let mut problem = HorizonProblem::new(
            self.params,
            start,
            schedule.clone(),
            self.weights.clone(),
            Arc::clone(&path),
            Arc::clone(&self.corridor),
        )?;
        problem.progress_limit = progress_limit;
        if let Some(g) = goal {
            problem.terminal_reference = g.pose();
        }

        let (solution, degraded) = match solve(&problem, warm.as_ref()) {
            Ok(sol) => (sol, false),
            Err(OcpError::SolveFailed(diag)) => {
                log::warn!("solve failed at tick {tick}; reusing the shifted previous plan");
                match warm {
                    Some(w) => (w, true),
                    None => (*diag, true),
                }
            }
            Err(e) => return Err(e.into()),
        };
        let input = solution.inputs[0];

        let state = self.state.as_mut().expect("initialized above");
        state.last_solution = Some(solution.clone());
        state.tick += 1;

        Ok(TickOutput {
            input,
            solution,
            schedule,
            schedule_thetas: thetas,
            theta_0,
            phase,
            degraded,
        })
    }
}
