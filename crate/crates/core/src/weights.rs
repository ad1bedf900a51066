//! Dynamic weight and objective allocation.
//!
//! Every stage of the horizon gets its own effective lag weight, contouring
//! weight and progress reward, computed from that stage's predicted progress
//! `theta_k`. Three sigmoid blends are used, all with
//! `sigma(eps) = 1 / (1 + exp(alpha * (eps - beta)))`, which is close to 1 when
//! `eps` is small or negative and close to 0 when `eps` is large:
//!
//! * path end / cusp: `q_c_eff = sigma * q_c_e + (1 - sigma) * q_c` with
//!   `eps = theta_e - theta_k`, raising the contouring weight near the end;
//! * goal inside the corridor: `q_c_eff = (1 - sigma) * q_c` and
//!   `gamma_eff = (1 - sigma) * gamma` with `eps = theta_g - theta_k`, fading
//!   both out on approach;
//! * terminal goal weights: `q_N_eff = sigma * q_N_e + (1 - sigma) * q_N` with
//!   `eps = theta_ref - theta_0`, driven by the robot's own progress.
//!
//! On top of the blends, stages at or beyond the path end switch objective:
//! their lag weight drops to zero and every Frenet-based term and constraint
//! is switched off, leaving only the Cartesian terminal cost.

use serde::{Deserialize, Serialize};

use crate::path::{GoalLocation, GoalPose, ReferencePath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    /// Stage state weights for `(x, y, phi, v, delta, theta)`.
    pub q: [f64; 6],
    /// Baseline terminal weights.
    pub q_n: [f64; 6],
    /// Terminal weights once the goal is engaged.
    pub q_n_e: [f64; 6],
    /// Input weights for `(a, delta_dot, theta_dot)`.
    pub r: [f64; 3],
    /// Frenet weights `(q_l, q_c, q_theta_dot)`. The third entry is kept for
    /// completeness and is not applied to any term.
    pub q_f: [f64; 3],
    /// Contouring weight at the path end.
    pub q_c_e: f64,
    /// Progress reward per unit `theta_dot` (non-positive).
    pub gamma: f64,
    /// Sigmoid steepness [1/m].
    pub alpha: f64,
    /// Sigmoid center [m].
    pub beta: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            q: [0.0; 6],
            q_n: [0.0; 6],
            q_n_e: [1e4, 1e4, 1e4, 0.0, 0.0, 0.0],
            r: [1e3, 100.0, 0.0],
            q_f: [1e3, 1.0, 0.0],
            q_c_e: 100.0,
            gamma: -100.0,
            alpha: 1.0,
            beta: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightError {
    #[error("invalid weight config: {0}")]
    InvalidConfig(String),
    #[error("invalid schedule at stage {stage}: {reason}")]
    InvalidSchedule { stage: usize, reason: String },
}

impl WeightConfig {
    pub fn q_l(&self) -> f64 {
        self.q_f[0]
    }

    pub fn q_c(&self) -> f64 {
        self.q_f[1]
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        let bad = |m: String| Err(WeightError::InvalidConfig(m));
        let vectors: [(&str, &[f64]); 5] = [
            ("q", &self.q),
            ("q_n", &self.q_n),
            ("q_n_e", &self.q_n_e),
            ("r", &self.r),
            ("q_f", &self.q_f),
        ];
        for (name, v) in vectors {
            if let Some(w) = v.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
                return bad(format!("{name} entries must be finite and >= 0, got {w}"));
            }
        }
        if !(self.gamma.is_finite() && self.gamma <= 0.0) {
            return bad(format!("gamma must be <= 0, got {}", self.gamma));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.q_c_e.is_finite() && self.q_c_e >= self.q_c()) {
            return bad(format!(
                "q_c_e ({}) must be >= q_c ({})",
                self.q_c_e,
                self.q_c()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveMode {
    Contouring,
    Cartesian,
}

impl ObjectiveMode {
    /// One-letter tag used in trace files.
    pub fn tag(self) -> &'static str {
        match self {
            ObjectiveMode::Contouring => "C",
            ObjectiveMode::Cartesian => "X",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageWeights {
    pub q_l: f64,
    pub q_c: f64,
    pub gamma: f64,
    pub frenet_active: bool,
    pub mode: ObjectiveMode,
}

impl StageWeights {
    fn cartesian() -> Self {
        Self {
            q_l: 0.0,
            q_c: 0.0,
            gamma: 0.0,
            frenet_active: false,
            mode: ObjectiveMode::Cartesian,
        }
    }

    fn contouring(q_l: f64, q_c: f64, gamma: f64) -> Self {
        Self {
            q_l,
            q_c,
            gamma,
            frenet_active: true,
            mode: ObjectiveMode::Contouring,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    pub stages: Vec<StageWeights>,
    pub terminal: [f64; 6],
}

impl WeightSchedule {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn modes(&self) -> Vec<ObjectiveMode> {
        self.stages.iter().map(|s| s.mode).collect()
    }

    /// Index of the first Cartesian stage, if any.
    pub fn first_cartesian(&self) -> Option<usize> {
        self.stages
            .iter()
            .position(|s| s.mode == ObjectiveMode::Cartesian)
    }

    fn validate(&self, cfg: &WeightConfig) -> Result<(), WeightError> {
        let q_c_max = cfg.q_c().max(cfg.q_c_e);
        for (k, s) in self.stages.iter().enumerate() {
            let fail = |reason: &str| {
                Err(WeightError::InvalidSchedule {
                    stage: k,
                    reason: reason.to_string(),
                })
            };
            if s.q_l != 0.0 && s.q_l != cfg.q_l() {
                return fail("lag weight must be 0 or q_l");
            }
            if !(s.q_c >= 0.0 && s.q_c <= q_c_max) {
                return fail("contouring weight out of range");
            }
            if !(s.gamma >= cfg.gamma && s.gamma <= 0.0) {
                return fail("progress reward out of range");
            }
            let cartesian = s.mode == ObjectiveMode::Cartesian;
            if cartesian == s.frenet_active {
                return fail("mode and frenet flag disagree");
            }
            if cartesian && (s.q_l != 0.0 || s.q_c != 0.0 || s.gamma != 0.0) {
                return fail("Cartesian stage carries Frenet weights");
            }
            if !cartesian && s.q_l != cfg.q_l() {
                return fail("contouring stage lost its lag weight");
            }
        }
        if self.terminal.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(WeightError::InvalidSchedule {
                stage: self.stages.len(),
                reason: "terminal weights must be finite and >= 0".into(),
            });
        }
        Ok(())
    }
}

pub fn sigmoid(epsilon: f64, alpha: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (alpha * (epsilon - beta)).exp())
}

/// Contouring weight raised toward `q_c_e` as the stage approaches the end
/// of its direction segment.
pub fn path_end_contouring_weight(theta_k: f64, theta_e_local: f64, cfg: &WeightConfig) -> f64 {
    let s = sigmoid(theta_e_local - theta_k, cfg.alpha, cfg.beta);
    s * cfg.q_c_e + (1.0 - s) * cfg.q_c()
}

/// `(q_c_eff, gamma_eff)` fading to zero as the stage approaches `theta_g`.
pub fn goal_inside_weights(theta_k: f64, theta_g: f64, cfg: &WeightConfig) -> (f64, f64) {
    let keep = 1.0 - sigmoid(theta_g - theta_k, cfg.alpha, cfg.beta);
    (keep * cfg.q_c(), keep * cfg.gamma)
}

/// Terminal weights blended by the robot's own distance to the target.
pub fn terminal_weights(theta_0: f64, theta_ref_end: f64, cfg: &WeightConfig) -> [f64; 6] {
    let s = sigmoid(theta_ref_end - theta_0, cfg.alpha, cfg.beta);
    std::array::from_fn(|i| s * cfg.q_n_e[i] + (1.0 - s) * cfg.q_n[i])
}

/// Lag weight and objective for a stage; stages at or past `theta_e` are
/// Cartesian.
pub fn objective_mode(
    theta_k: f64,
    theta_e_global: f64,
    cfg: &WeightConfig,
) -> (f64, ObjectiveMode) {
    if theta_k < theta_e_global {
        (cfg.q_l(), ObjectiveMode::Contouring)
    } else {
        (0.0, ObjectiveMode::Cartesian)
    }
}

/// Plain path following toward `end` (the path end, or an earlier stopping
/// point): each stage blends its contouring weight against the nearer of its
/// segment end and `end`.
pub fn path_following_schedule(
    theta_traj: &[f64],
    path: &ReferencePath,
    end: f64,
    cfg: &WeightConfig,
) -> Result<WeightSchedule, WeightError> {
    let stages = theta_traj
        .iter()
        .map(|&theta| {
            let local_end = path.segment_end(theta).min(end);
            StageWeights::contouring(
                cfg.q_l(),
                path_end_contouring_weight(theta, local_end, cfg),
                cfg.gamma,
            )
        })
        .collect();
    let schedule = WeightSchedule {
        stages,
        terminal: cfg.q_n,
    };
    schedule.validate(cfg)?;
    Ok(schedule)
}

/// Every stage Cartesian with fully engaged terminal weights.
pub fn cartesian_schedule(
    stages: usize,
    cfg: &WeightConfig,
) -> Result<WeightSchedule, WeightError> {
    let schedule = WeightSchedule {
        stages: vec![StageWeights::cartesian(); stages],
        terminal: cfg.q_n_e,
    };
    schedule.validate(cfg)?;
    Ok(schedule)
}

/// Full per-stage schedule for the unified controller.
///
/// Without a goal this is plain path following to the path end. With a goal
/// inside the corridor the contouring weight and reward fade out toward
/// `theta_g`; with a goal beyond the end they fade toward `theta_e` and stages
/// past `theta_e` become Cartesian. In both goal cases the terminal weights
/// ramp up with the robot's progress `theta_0`.
pub fn build_schedule(
    theta_traj: &[f64],
    theta_0: f64,
    path: &ReferencePath,
    goal: Option<&GoalPose>,
    cfg: &WeightConfig,
) -> Result<WeightSchedule, WeightError> {
    let Some(goal) = goal else {
        return path_following_schedule(theta_traj, path, path.theta_end(), cfg);
    };
    let theta_e = path.theta_end();
    let fade_target = match goal.location {
        GoalLocation::InsideCorridor => goal.theta_g,
        GoalLocation::BeyondPathEnd => theta_e,
    };
    let stages = theta_traj
        .iter()
        .map(|&theta| match objective_mode(theta, theta_e, cfg) {
            (_, ObjectiveMode::Cartesian) => StageWeights::cartesian(),
            (q_l, ObjectiveMode::Contouring) => {
                let (q_c, gamma) = goal_inside_weights(theta, fade_target, cfg);
                StageWeights::contouring(q_l, q_c, gamma)
            }
        })
        .collect();
    let schedule = WeightSchedule {
        stages,
        terminal: terminal_weights(theta_0, fade_target, cfg),
    };
    schedule.validate(cfg)?;
    Ok(schedule)
}
