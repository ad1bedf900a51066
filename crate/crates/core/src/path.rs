//! Arc-length parameterized reference path with driving-direction segments,
//! the lateral corridor around it, and goal-pose projection.
//!
//! Each leg is smoothed with a centripetal Catmull-Rom spline and resampled so
//! that consecutive samples are at most [`MAX_SAMPLE_SPACING`] apart. The
//! progress coordinate of a sample is the cumulative chord length of the
//! resampled polyline. Between samples, position and heading are cubic
//! Hermite interpolants, so the reference is continuously differentiable in
//! progress everywhere except at cusps.
//!
//! Headings are *driving* headings: on reverse legs the stored heading points
//! opposite to the direction of travel, which is the heading the vehicle has
//! while backing along the leg.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Upper bound on the spacing of resampled points [m].
pub const MAX_SAMPLE_SPACING: f64 = 0.25;
const TARGET_SPACING: f64 = 0.2;
const MIN_LEG_LENGTH: f64 = 0.5;
const DENSE_PER_SPAN: usize = 64;
const BEYOND_END_THRESHOLD: f64 = 0.01;
/// Step of the central difference used for `d p^r / d theta`.
pub const REFERENCE_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Option<Self> {
        match sign {
            1 => Some(Direction::Forward),
            -1 => Some(Direction::Reverse),
            _ => None,
        }
    }
}

/// Planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, phi: f64) -> Self {
        Self { x, y, phi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionSegment {
    pub theta_start: f64,
    pub theta_end: f64,
    pub direction: Direction,
}

/// One leg of waypoints driven in a single direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub waypoints: Vec<(f64, f64)>,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("leg {leg} is degenerate: {reason}")]
    DegeneratePath { leg: usize, reason: String },
    #[error(
        "ambiguous goal projection: minima at theta {first:.3} and {second:.3}, using {resolved:?}"
    )]
    AmbiguousProjection {
        first: f64,
        second: f64,
        resolved: GoalPose,
    },
    #[error("invalid corridor: {0}")]
    InvalidCorridor(String),
}

/// Hermite slopes at a sample, one-sided at cusps and at the path ends.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Knot {
    tangent_in: (f64, f64),
    tangent_out: (f64, f64),
    dphi_in: f64,
    dphi_out: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    samples: Vec<PathSample>,
    knots: Vec<Knot>,
    segments: Vec<DirectionSegment>,
    theta_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalLocation {
    InsideCorridor,
    BeyondPathEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    /// Projected progress of the goal.
    pub theta_g: f64,
    pub location: GoalLocation,
}

impl GoalPose {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.phi)
    }
}

/// Closest point on the path within a progress window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub theta: f64,
    pub distance: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Centripetal Catmull-Rom evaluation on the span `p1 -> p2`.
fn catmull_rom(p: [(f64, f64); 4], t: f64) -> (f64, f64) {
    let knot = |a: (f64, f64), b: (f64, f64)| dist(a, b).sqrt().max(1e-9);
    let t0 = 0.0;
    let t1 = t0 + knot(p[0], p[1]);
    let t2 = t1 + knot(p[1], p[2]);
    let t3 = t2 + knot(p[2], p[3]);
    let tt = lerp(t1, t2, t);
    let mix = |a: (f64, f64), b: (f64, f64), ta: f64, tb: f64| {
        let wa = (tb - tt) / (tb - ta);
        let wb = (tt - ta) / (tb - ta);
        (wa * a.0 + wb * b.0, wa * a.1 + wb * b.1)
    };
    let a1 = mix(p[0], p[1], t0, t1);
    let a2 = mix(p[1], p[2], t1, t2);
    let a3 = mix(p[2], p[3], t2, t3);
    let b1 = mix(a1, a2, t0, t2);
    let b2 = mix(a2, a3, t1, t3);
    mix(b1, b2, t1, t2)
}

fn densify(waypoints: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = waypoints.len();
    if n == 2 {
        return waypoints.to_vec();
    }
    let reflect = |a: (f64, f64), b: (f64, f64)| (2.0 * a.0 - b.0, 2.0 * a.1 - b.1);
    let ghost_start = reflect(waypoints[0], waypoints[1]);
    let ghost_end = reflect(waypoints[n - 1], waypoints[n - 2]);
    let at = |i: isize| -> (f64, f64) {
        if i < 0 {
            ghost_start
        } else if i as usize >= n {
            ghost_end
        } else {
            waypoints[i as usize]
        }
    };
    let mut dense = Vec::with_capacity((n - 1) * DENSE_PER_SPAN + 1);
    for span in 0..n - 1 {
        let i = span as isize;
        let ctrl = [at(i - 1), at(i), at(i + 1), at(i + 2)];
        for j in 0..DENSE_PER_SPAN {
            dense.push(catmull_rom(ctrl, j as f64 / DENSE_PER_SPAN as f64));
        }
    }
    dense.push(waypoints[n - 1]);
    dense
}

fn resample(dense: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut cumulative = Vec::with_capacity(dense.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in dense.windows(2) {
        acc += dist(w[0], w[1]);
        cumulative.push(acc);
    }
    let count = (acc / TARGET_SPACING).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(count + 1);
    let mut seg = 0;
    for j in 0..=count {
        let s = acc * j as f64 / count as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let t = if span > 0.0 {
            ((s - cumulative[seg]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push((
            lerp(dense[seg].0, dense[seg + 1].0, t),
            lerp(dense[seg].1, dense[seg + 1].1, t),
        ));
    }
    out
}

fn tangent_headings(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i.saturating_sub(1)];
            let b = points[(i + 1).min(n - 1)];
            (b.1 - a.1).atan2(b.0 - a.0)
        })
        .collect()
}

fn unit(dx: f64, dy: f64) -> (f64, f64) {
    let n = dx.hypot(dy);
    if n > 0.0 {
        (dx / n, dy / n)
    } else {
        (0.0, 0.0)
    }
}

fn hermite_knots(samples: &[PathSample], segments: &[DirectionSegment]) -> Vec<Knot> {
    let n = samples.len();
    let breaks: Vec<f64> = segments.iter().skip(1).map(|s| s.theta_start).collect();
    let is_break = |i: usize| i == 0 || i == n - 1 || breaks.iter().any(|&b| samples[i].theta == b);
    let chord = |i: usize, j: usize| {
        let (a, b) = (&samples[i], &samples[j]);
        (
            unit(b.x - a.x, b.y - a.y),
            (b.phi - a.phi) / (b.theta - a.theta),
        )
    };
    (0..n)
        .map(|i| {
            if is_break(i) {
                let (tangent_in, dphi_in) = if i > 0 { chord(i - 1, i) } else { chord(0, 1) };
                let (tangent_out, dphi_out) = if i + 1 < n {
                    chord(i, i + 1)
                } else {
                    chord(n - 2, n - 1)
                };
                Knot {
                    tangent_in,
                    tangent_out,
                    dphi_in,
                    dphi_out,
                }
            } else {
                let (t, dphi) = chord(i - 1, i + 1);
                Knot {
                    tangent_in: t,
                    tangent_out: t,
                    dphi_in: dphi,
                    dphi_out: dphi,
                }
            }
        })
        .collect()
}

/// Returns `angle` shifted by a multiple of 2π to lie within π of `reference`.
pub fn unwrap_near(angle: f64, reference: f64) -> f64 {
    reference + wrap_angle(angle - reference)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn validate_leg(index: usize, leg: &Leg) -> Result<(), PathError> {
    let degenerate = |reason: String| PathError::DegeneratePath { leg: index, reason };
    if leg.waypoints.len() < 2 {
        return Err(degenerate(format!(
            "needs at least 2 waypoints, got {}",
            leg.waypoints.len()
        )));
    }
    if leg
        .waypoints
        .iter()
        .any(|p| !(p.0.is_finite() && p.1.is_finite()))
    {
        return Err(degenerate("non-finite waypoint".into()));
    }
    if let Some(i) = leg
        .waypoints
        .windows(2)
        .position(|w| dist(w[0], w[1]) < 1e-9)
    {
        return Err(degenerate(format!("repeated waypoint at index {}", i + 1)));
    }
    let length: f64 = leg.waypoints.windows(2).map(|w| dist(w[0], w[1])).sum();
    if length < MIN_LEG_LENGTH {
        return Err(degenerate(format!(
            "length {length:.3} m is below {MIN_LEG_LENGTH} m"
        )));
    }
    Ok(())
}

impl ReferencePath {
    /// Builds a path from consecutive legs. Each leg must start where the
    /// previous one ended; every leg boundary with a direction flip is a cusp,
    /// and adjacent legs with the same direction are merged into one segment.
    pub fn build(legs: &[Leg]) -> Result<Self, PathError> {
        if legs.is_empty() {
            return Err(PathError::DegeneratePath {
                leg: 0,
                reason: "no legs".into(),
            });
        }
        for (i, leg) in legs.iter().enumerate() {
            validate_leg(i, leg)?;
            if i > 0 {
                let prev = *legs[i - 1].waypoints.last().expect("validated");
                if dist(prev, leg.waypoints[0]) > 1e-6 {
                    return Err(PathError::DegeneratePath {
                        leg: i,
                        reason: "does not start at the end of the previous leg".into(),
                    });
                }
            }
        }

        let mut samples: Vec<PathSample> = Vec::new();
        let mut segments: Vec<DirectionSegment> = Vec::new();
        let mut theta = 0.0;
        for leg in legs {
            let points = resample(&densify(&leg.waypoints));
            let headings = tangent_headings(&points);
            let flip = match leg.direction {
                Direction::Forward => 0.0,
                Direction::Reverse => PI,
            };
            let leg_start = theta;
            let skip_first = !samples.is_empty();
            for (k, (p, h)) in points.iter().zip(&headings).enumerate() {
                if k == 0 && skip_first {
                    continue;
                }
                if let Some(last) = samples.last() {
                    theta += dist((last.x, last.y), *p);
                }
                let driving = h + flip;
                let phi = match samples.last() {
                    Some(last) => unwrap_near(driving, last.phi),
                    None => wrap_angle(driving),
                };
                samples.push(PathSample {
                    theta,
                    x: p.0,
                    y: p.1,
                    phi,
                    direction: leg.direction,
                });
            }
            match segments.last_mut() {
                Some(last) if last.direction == leg.direction => last.theta_end = theta,
                _ => segments.push(DirectionSegment {
                    theta_start: leg_start,
                    theta_end: theta,
                    direction: leg.direction,
                }),
            }
        }
        let knots = hermite_knots(&samples, &segments);
        Ok(Self {
            samples,
            knots,
            segments,
            theta_end: theta,
        })
    }

    /// Convenience constructor for a single leg.
    pub fn from_waypoints(
        waypoints: &[(f64, f64)],
        direction: Direction,
    ) -> Result<Self, PathError> {
        Self::build(&[Leg {
            waypoints: waypoints.to_vec(),
            direction,
        }])
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn segments(&self) -> &[DirectionSegment] {
        &self.segments
    }

    pub fn theta_end(&self) -> f64 {
        self.theta_end
    }

    /// Cusp locations (segment boundaries) in increasing order.
    pub fn cusps(&self) -> Vec<f64> {
        self.segments
            .iter()
            .skip(1)
            .map(|s| s.theta_start)
            .collect()
    }

    fn end_direction(&self) -> f64 {
        self.segments.last().map_or(1.0, |s| s.direction.sign())
    }

    fn start_direction(&self) -> f64 {
        self.segments.first().map_or(1.0, |s| s.direction.sign())
    }

    /// Index `i` such that `samples[i].theta <= theta < samples[i + 1].theta`.
    fn bracket(&self, theta: f64) -> usize {
        let idx = self.samples.partition_point(|s| s.theta <= theta);
        idx.saturating_sub(1).min(self.samples.len() - 2)
    }

    /// Reference pose at progress `theta`. Outside `[0, θe]` the pose is
    /// extrapolated along the travel direction at the nearest end.
    pub fn eval(&self, theta: f64) -> Pose {
        let first = &self.samples[0];
        let last = &self.samples[self.samples.len() - 1];
        if theta <= 0.0 {
            let d = self.start_direction() * theta;
            return Pose::new(
                first.x + d * first.phi.cos(),
                first.y + d * first.phi.sin(),
                first.phi,
            );
        }
        if theta >= self.theta_end {
            let d = self.end_direction() * (theta - self.theta_end);
            return Pose::new(
                last.x + d * last.phi.cos(),
                last.y + d * last.phi.sin(),
                last.phi,
            );
        }
        let i = self.bracket(theta);
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        let (ka, kb) = (&self.knots[i], &self.knots[i + 1]);
        let h = b.theta - a.theta;
        let t = (theta - a.theta) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = (t3 - 2.0 * t2 + t) * h;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = (t3 - t2) * h;
        Pose::new(
            h00 * a.x + h10 * ka.tangent_out.0 + h01 * b.x + h11 * kb.tangent_in.0,
            h00 * a.y + h10 * ka.tangent_out.1 + h01 * b.y + h11 * kb.tangent_in.1,
            h00 * a.phi + h10 * ka.dphi_out + h01 * b.phi + h11 * kb.dphi_in,
        )
    }

    /// Central difference of the reference pose with step
    /// [`REFERENCE_FD_STEP`].
    pub fn eval_derivative(&self, theta: f64) -> Pose {
        let h = REFERENCE_FD_STEP;
        let plus = self.eval(theta + h);
        let minus = self.eval(theta - h);
        Pose::new(
            (plus.x - minus.x) / (2.0 * h),
            (plus.y - minus.y) / (2.0 * h),
            (plus.phi - minus.phi) / (2.0 * h),
        )
    }

    /// End of the direction segment containing `theta`, i.e. the next cusp or
    /// the path end. A cusp belongs to the segment that starts there.
    pub fn segment_end(&self, theta: f64) -> f64 {
        if theta >= self.theta_end {
            return self.theta_end;
        }
        self.segments
            .iter()
            .find(|s| theta < s.theta_end)
            .map_or(self.theta_end, |s| s.theta_end)
    }

    pub fn direction_at(&self, theta: f64) -> Direction {
        let clamped = theta.clamp(0.0, self.theta_end);
        self.segments
            .iter()
            .find(|s| clamped < s.theta_end)
            .or(self.segments.last())
            .map_or(Direction::Forward, |s| s.direction)
    }

    fn segment_projection(&self, i: usize, px: f64, py: f64) -> (f64, f64) {
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (a.x + t * dx, a.y + t * dy);
        (lerp(a.theta, b.theta, t), (px - qx).hypot(py - qy))
    }

    /// Closest point of the path to `(px, py)` with progress in `[lo, hi]`
    /// (clamped to the path): the sample polyline gives the candidate, which
    /// is then refined on the interpolated curve.
    pub fn project_in_window(&self, px: f64, py: f64, lo: f64, hi: f64) -> Projection {
        let lo = lo.clamp(0.0, self.theta_end);
        let hi = hi.clamp(lo, self.theta_end);
        let mut theta = self.project_polyline(px, py, lo, hi).theta;
        let p = self.eval(theta);
        let mut best = Projection {
            theta,
            distance: (px - p.x).hypot(py - p.y),
        };
        for _ in 0..3 {
            let r = self.eval(theta);
            let d = self.eval_derivative(theta);
            let norm2 = d.x * d.x + d.y * d.y;
            if norm2 <= 0.0 {
                break;
            }
            theta = (theta + ((px - r.x) * d.x + (py - r.y) * d.y) / norm2).clamp(lo, hi);
            let p = self.eval(theta);
            let distance = (px - p.x).hypot(py - p.y);
            if distance < best.distance {
                best = Projection { theta, distance };
            }
        }
        best
    }

    fn project_polyline(&self, px: f64, py: f64, lo: f64, hi: f64) -> Projection {
        let lo = lo.clamp(0.0, self.theta_end);
        let hi = hi.clamp(lo, self.theta_end);
        let first = self.bracket(lo);
        let last = self.bracket(hi);
        let mut best = Projection {
            theta: lo,
            distance: f64::INFINITY,
        };
        for i in first..=last {
            let (raw, d) = self.segment_projection(i, px, py);
            let theta = raw.clamp(lo, hi);
            let d = if theta != raw {
                let p = self.eval(theta);
                (px - p.x).hypot(py - p.y)
            } else {
                d
            };
            if d < best.distance {
                best = Projection { theta, distance: d };
            }
        }
        best
    }

    /// Signed distance of `(px, py)` past the path end along the terminal
    /// travel direction.
    pub fn distance_past_end(&self, px: f64, py: f64) -> f64 {
        let last = &self.samples[self.samples.len() - 1];
        let s = self.end_direction();
        ((px - last.x) * last.phi.cos() + (py - last.y) * last.phi.sin()) * s
    }

    /// Projects a goal pose onto the path. Goals past the terminal tangent
    /// line (by more than 1 cm) are classified as beyond the path end and get
    /// `theta_g = θe`.
    pub fn project_goal(&self, goal: Pose) -> Result<GoalPose, PathError> {
        if self.distance_past_end(goal.x, goal.y) > BEYOND_END_THRESHOLD {
            return Ok(GoalPose {
                x: goal.x,
                y: goal.y,
                phi: goal.phi,
                theta_g: self.theta_end,
                location: GoalLocation::BeyondPathEnd,
            });
        }
        let per_segment: Vec<(f64, f64)> = (0..self.samples.len() - 1)
            .map(|i| self.segment_projection(i, goal.x, goal.y))
            .collect();
        let (best_theta, best_dist) =
            per_segment
                .iter()
                .copied()
                .fold(
                    (0.0, f64::INFINITY),
                    |acc, c| if c.1 < acc.1 { c } else { acc },
                );

        // Local minima of the per-segment distance profile.
        let n = per_segment.len();
        let mut minima = Vec::new();
        for i in 0..n {
            let d = per_segment[i].1;
            let left = if i > 0 {
                per_segment[i - 1].1
            } else {
                f64::INFINITY
            };
            let right = if i + 1 < n {
                per_segment[i + 1].1
            } else {
                f64::INFINITY
            };
            if d <= left && d <= right {
                minima.push(per_segment[i]);
            }
        }
        let rival = minima
            .iter()
            .filter(|m| (m.1 - best_dist).abs() <= 1e-6 && (m.0 - best_theta).abs() > 1.0)
            .map(|m| m.0)
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.max(t)))
            });

        let make = |theta_g: f64| GoalPose {
            x: goal.x,
            y: goal.y,
            phi: goal.phi,
            theta_g,
            location: GoalLocation::InsideCorridor,
        };
        match rival {
            Some(other) => {
                let resolved = make(best_theta.max(other));
                Err(PathError::AmbiguousProjection {
                    first: best_theta.min(other),
                    second: best_theta.max(other),
                    resolved,
                })
            }
            None => Ok(make(best_theta)),
        }
    }
}

/// Lateral bounds on the contouring error, piecewise linear in progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    breakpoints: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Corridor {
    pub fn new(breakpoints: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PathError> {
        let bad = |m: String| Err(PathError::InvalidCorridor(m));
        if breakpoints.is_empty() {
            return bad("no breakpoints".into());
        }
        if breakpoints.len() != lower.len() || breakpoints.len() != upper.len() {
            return bad(format!(
                "length mismatch: {} breakpoints, {} lower, {} upper",
                breakpoints.len(),
                lower.len(),
                upper.len()
            ));
        }
        if breakpoints
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return bad("breakpoints must be strictly increasing".into());
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && breakpoints[i].is_finite()) {
                return bad(format!("non-finite value at breakpoint {i}"));
            }
            if !(lo < 0.0 && hi > 0.0) {
                return bad(format!(
                    "breakpoint {i}: need lower < 0 < upper, got [{lo}, {hi}]"
                ));
            }
        }
        Ok(Self {
            breakpoints,
            lower,
            upper,
        })
    }

    pub fn constant(lower: f64, upper: f64) -> Result<Self, PathError> {
        Self::new(vec![0.0], vec![lower], vec![upper])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let n = self.breakpoints.len();
        if n == 1 || theta <= self.breakpoints[0] {
            return (0, 0.0);
        }
        if theta >= self.breakpoints[n - 1] {
            return (n - 2, 1.0);
        }
        let i = self.breakpoints.partition_point(|&b| b <= theta) - 1;
        let t = (theta - self.breakpoints[i]) / (self.breakpoints[i + 1] - self.breakpoints[i]);
        (i, t)
    }

    /// `(lower, upper)` at `theta`, clamped to the end values outside the
    /// breakpoint range.
    pub fn bounds(&self, theta: f64) -> (f64, f64) {
        if self.breakpoints.len() == 1 {
            return (self.lower[0], self.upper[0]);
        }
        let (i, t) = self.locate(theta);
        (
            lerp(self.lower[i], self.lower[i + 1], t),
            lerp(self.upper[i], self.upper[i + 1], t),
        )
    }

    /// Derivatives of `(lower, upper)` with respect to `theta`; zero in the
    /// clamped regions.
    pub fn slopes(&self, theta: f64) -> (f64, f64) {
        let n = self.breakpoints.len();
        if n == 1 || theta <= self.breakpoints[0] || theta >= self.breakpoints[n - 1] {
            return (0.0, 0.0);
        }
        let (i, _) = self.locate(theta);
        let span = self.breakpoints[i + 1] - self.breakpoints[i];
        (
            (self.lower[i + 1] - self.lower[i]) / span,
            (self.upper[i + 1] - self.upper[i]) / span,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn straight(len: f64) -> ReferencePath {
        ReferencePath::from_waypoints(&[(0.0, 0.0), (len, 0.0)], Direction::Forward).unwrap()
    }

    fn there_and_back() -> ReferencePath {
        ReferencePath::build(&[
            Leg {
                waypoints: vec![(0.0, 0.0), (10.0, 0.0)],
                direction: Direction::Forward,
            },
            Leg {
                waypoints: vec![(10.0, 0.0), (5.0, 0.0)],
                direction: Direction::Reverse,
            },
        ])
        .unwrap()
    }

    fn quarter_circle(radius: f64, n: usize) -> ReferencePath {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64;
                (radius * a.sin(), radius * (1.0 - a.cos()))
            })
            .collect();
        ReferencePath::from_waypoints(&pts, Direction::Forward).unwrap()
    }

    #[test]
    fn straight_path_geometry() {
        let p = straight(10.0);
        assert!((p.theta_end() - 10.0).abs() < 1e-3);
        assert!(p.samples().iter().all(|s| s.phi == 0.0));
        let q = p.eval(5.0);
        assert_relative_eq!(q.x, 5.0, epsilon = 1e-12);
        assert_eq!((q.y, q.phi), (0.0, 0.0));
        let q = p.eval(p.theta_end() + 2.0);
        assert_relative_eq!(q.x, 12.0, epsilon = 1e-9);
        assert_eq!(q.y, 0.0);
    }

    #[test]
    fn end_query_returns_last_sample() {
        let p = quarter_circle(5.0, 50);
        let last = p.samples().last().unwrap();
        let q = p.eval(p.theta_end());
        assert_eq!((q.x, q.y, q.phi), (last.x, last.y, last.phi));
    }

    #[test]
    fn cusp_segmentation() {
        let p = there_and_back();
        assert_eq!(p.segments().len(), 2);
        assert!((p.theta_end() - 15.0).abs() < 1e-9);
        assert!((p.segments()[0].theta_end - 10.0).abs() < 1e-9);
        assert_eq!(p.segments()[1].direction, Direction::Reverse);
        // Driving heading stays east while backing up.
        assert!(p.samples().iter().all(|s| s.phi.abs() < 1e-12));
        assert_eq!(p.segment_end(3.0), p.segments()[0].theta_end);
        assert_eq!(p.segment_end(12.0), p.theta_end());
        assert_eq!(p.segment_end(p.segments()[1].theta_start), p.theta_end());
        assert_eq!(p.segment_end(40.0), p.theta_end());
        // Extrapolation continues in the travel direction (west).
        let q = p.eval(p.theta_end() + 1.0);
        assert_relative_eq!(q.x, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn quarter_circle_length() {
        let p = quarter_circle(5.0, 50);
        assert!((p.theta_end() - 5.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-2);
    }

    #[test]
    fn resampling_invariants() {
        for p in [
            quarter_circle(5.0, 50),
            there_and_back(),
            quarter_circle(2.0, 7),
        ] {
            let s = p.samples();
            assert_eq!(s[0].theta, 0.0);
            assert_eq!(s.last().unwrap().theta, p.theta_end());
            let mut chord = 0.0;
            for w in s.windows(2) {
                assert!(w[1].theta > w[0].theta);
                assert!(w[1].theta - w[0].theta <= MAX_SAMPLE_SPACING);
                assert!((w[1].phi - w[0].phi).abs() < PI);
                chord += (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            }
            let ratio = chord / p.theta_end();
            assert!((0.999..=1.001).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn degenerate_legs_rejected() {
        let err = ReferencePath::from_waypoints(&[(0.0, 0.0), (0.3, 0.0)], Direction::Forward);
        assert!(matches!(err, Err(PathError::DegeneratePath { leg: 0, .. })));
        let err = ReferencePath::from_waypoints(
            &[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (3.0, 0.0)],
            Direction::Forward,
        );
        assert!(matches!(err, Err(PathError::DegeneratePath { .. })));
        let err = ReferencePath::from_waypoints(&[(0.0, 0.0)], Direction::Forward);
        assert!(matches!(err, Err(PathError::DegeneratePath { .. })));
    }

    #[test]
    fn goal_projection_straight() {
        let p = straight(10.0);
        let g = p.project_goal(Pose::new(4.0, 1.0, 0.0)).unwrap();
        assert!((g.theta_g - 4.0).abs() < 1e-9);
        assert_eq!(g.location, GoalLocation::InsideCorridor);
        let g = p.project_goal(Pose::new(12.0, -1.0, 0.0)).unwrap();
        assert_eq!(g.theta_g, p.theta_end());
        assert_eq!(g.location, GoalLocation::BeyondPathEnd);
        // Within the 1 cm threshold the goal still counts as inside.
        let g = p
            .project_goal(Pose::new(p.theta_end() + 0.005, 0.5, 0.0))
            .unwrap();
        assert_eq!(g.location, GoalLocation::InsideCorridor);
    }

    fn brute_force_projection(p: &ReferencePath, x: f64, y: f64) -> f64 {
        let steps = (p.theta_end() / 1e-4).round() as usize;
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=steps {
            let theta = p.theta_end() * i as f64 / steps as f64;
            let q = p.eval(theta);
            let d = (q.x - x).hypot(q.y - y);
            if d < best.1 {
                best = (theta, d);
            }
        }
        best.0
    }

    #[test]
    fn goal_projection_quarter_circle() {
        let p = quarter_circle(5.0, 50);
        let mid = std::f64::consts::FRAC_PI_4;
        // Radial offset of 0.5 m outward from the arc midpoint (center at (0, 5)).
        let (x, y) = (5.5 * mid.sin(), 5.0 - 5.5 * mid.cos());
        let g = p.project_goal(Pose::new(x, y, 0.0)).unwrap();
        let oracle = brute_force_projection(&p, x, y);
        assert!((g.theta_g - oracle).abs() < 1e-3);
        assert!((g.theta_g - 0.5 * p.theta_end()).abs() < 0.05);
    }

    #[test]
    fn projection_recovers_on_path_progress() {
        let p = quarter_circle(5.0, 50);
        for k in 1..20 {
            let theta = p.theta_end() * k as f64 / 20.0;
            let q = p.eval(theta);
            let g = p.project_goal(q).unwrap();
            assert!((g.theta_g - theta).abs() < 1e-3);
        }
    }

    #[test]
    fn ambiguous_projection_breaks_tie_upward() {
        let p = there_and_back();
        // Lateral to the overlapping stretch: equidistant from both passes.
        let err = p.project_goal(Pose::new(7.0, 1.0, 0.0)).unwrap_err();
        match err {
            PathError::AmbiguousProjection {
                resolved,
                first,
                second,
            } => {
                assert!((first - 7.0).abs() < 1e-6);
                assert!((second - 13.0).abs() < 1e-6);
                assert_eq!(resolved.theta_g, second);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_is_continuous_at_ends() {
        let p = quarter_circle(5.0, 50);
        for theta in [0.0, p.theta_end()] {
            let a = p.eval(theta - 1e-7);
            let b = p.eval(theta + 1e-7);
            assert!((a.x - b.x).hypot(a.y - b.y) < 1e-6);
            assert!((a.phi - b.phi).abs() < 1e-4);
        }
    }

    #[test]
    fn corridor_interpolation() {
        let c = Corridor::constant(-1.5, 1.5).unwrap();
        assert_eq!(c.bounds(3.7), (-1.5, 1.5));
        let c = Corridor::new(vec![0.0, 10.0], vec![-1.5, -0.5], vec![1.5, 0.5]).unwrap();
        let (lo, hi) = c.bounds(5.0);
        assert_relative_eq!(lo, -1.0);
        assert_relative_eq!(hi, 1.0);
        assert_eq!(c.bounds(13.0), (-0.5, 0.5));
        assert_eq!(c.bounds(-2.0), (-1.5, 1.5));
        assert_eq!(c.slopes(5.0), (0.1, -0.1));
        assert_eq!(c.slopes(12.0), (0.0, 0.0));
    }

    #[test]
    fn corridor_must_contain_path() {
        assert!(Corridor::new(vec![0.0, 5.0], vec![-1.0, 0.2], vec![1.0, 1.0]).is_err());
        assert!(Corridor::new(vec![0.0, 0.0], vec![-1.0, -1.0], vec![1.0, 1.0]).is_err());
        assert!(Corridor::new(vec![0.0], vec![-1.0, -1.0], vec![1.0]).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0);
        assert_relative_eq!(unwrap_near(0.1, 2.0 * PI), 2.0 * PI + 0.1);
    }
}
