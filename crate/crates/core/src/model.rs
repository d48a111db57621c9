//! Aircraft state, the discrete point-mass dynamics and the geometric
//! margins shared by the ATC and pilot planners.
//!
//! Distances are nautical miles and speeds are nautical miles per timestep.
//! Headings are kept unwrapped: the dynamics add the angle difference
//! linearly and nothing here reduces modulo 2π.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position `[x, y]`.
pub type Point = [f64; 2];

/// Smoothing added under every square root of a distance so that norms stay
/// differentiable at coincident points.
pub const NORM_SMOOTHING: f64 = 1e-12;

pub type AircraftId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AircraftState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

impl AircraftState {
    pub const fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        Self { x, y, v, theta }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.v, self.theta]
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.v.is_finite() && self.theta.is_finite()
    }
}

/// Speed difference `u` and heading difference `psi` applied over one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub u: f64,
    pub psi: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { u: 0.0, psi: 0.0 };

    pub const fn new(u: f64, psi: f64) -> Self {
        Self { u, psi }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.psi.is_finite()
    }
}

/// Additive displacement of the position per timestep (wind).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub dx: f64,
    pub dy: f64,
}

impl Disturbance {
    pub const ZERO: Disturbance = Disturbance { dx: 0.0, dy: 0.0 };

    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

/// Operating limits and cost weights shared by every aircraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    /// Largest heading change per step, radians.
    pub psi_max: f64,
    /// Largest speed change per step.
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Half-width of the terminal speed window.
    pub delta_v: f64,
    /// Half-width of the terminal heading window, radians.
    pub delta_theta: f64,
    /// Required separation between disks of different aircraft.
    pub safety_margin: f64,
    /// Offset inside the radius logarithm.
    pub eps: f64,
    /// Weight of the deviation-from-standard term.
    pub alpha: f64,
    /// Allowed terminal position miss for pilots flying in wind.
    pub tol_terminal: f64,
    /// Global terminal speed reference. When absent each aircraft uses the
    /// speed of its own terminal state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_ter: Option<f64>,
    /// Global terminal heading reference, as `v_ter`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_ter: Option<f64>,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            psi_max: PI / 4.0,
            u_max: 10.0,
            v_min: 10.0,
            v_max: 80.0,
            delta_v: 1.0,
            delta_theta: 0.1,
            safety_margin: 3.0,
            eps: 0.1,
            alpha: 0.01,
            tol_terminal: 0.5,
            v_ter: None,
            theta_ter: None,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 9] = [
            ("psi_max", self.psi_max > 0.0),
            ("u_max", self.u_max > 0.0),
            ("v_min", self.v_min >= 0.0 && self.v_min < self.v_max),
            ("delta_v", self.delta_v >= 0.0),
            ("delta_theta", self.delta_theta >= 0.0),
            ("safety_margin", self.safety_margin > 0.0),
            ("eps", self.eps > 0.0),
            ("alpha", self.alpha >= 0.0),
            ("tol_terminal", self.tol_terminal >= 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::validation(format!("limits.{name}"), "out of range"));
            }
        }
        let all = [
            self.psi_max,
            self.u_max,
            self.v_min,
            self.v_max,
            self.delta_v,
            self.delta_theta,
            self.safety_margin,
            self.eps,
            self.alpha,
            self.tol_terminal,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("limits", "non-finite value"));
        }
        Ok(())
    }
}

/// States of one aircraft at consecutive timesteps `t_start, t_start + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub aircraft_id: AircraftId,
    pub t_start: usize,
    pub states: Vec<AircraftState>,
}

impl Trajectory {
    pub fn t_end(&self) -> usize {
        self.t_start + self.states.len().saturating_sub(1)
    }

    pub fn state_at(&self, k: usize) -> Option<&AircraftState> {
        k.checked_sub(self.t_start).and_then(|i| self.states.get(i))
    }

    pub fn position_at(&self, k: usize) -> Option<Point> {
        self.state_at(k).map(AircraftState::position)
    }

    pub fn positions(&self) -> Vec<Point> {
        self.states.iter().map(AircraftState::position).collect()
    }

    /// Controls reproducing consecutive states; exact inverse of [`rollout`].
    pub fn implied_controls(&self) -> Vec<ControlInput> {
        self.states
            .windows(2)
            .map(|w| ControlInput::new(w[1].v - w[0].v, w[1].theta - w[0].theta))
            .collect()
    }

    /// States reconstructed from positions by inverse dynamics: each state
    /// carries the speed and heading of the segment leaving it, and the last
    /// state repeats the final segment's.
    pub fn from_positions(
        aircraft_id: AircraftId,
        t_start: usize,
        points: &[Point],
        initial_heading: f64,
    ) -> Trajectory {
        let segs = segment_kinematics(points, None, initial_heading);
        let states = points
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let (v, theta) = segs
                    .get(k)
                    .or(segs.last())
                    .copied()
                    .unwrap_or((0.0, initial_heading));
                AircraftState::new(p[0], p[1], v, theta)
            })
            .collect();
        Trajectory {
            aircraft_id,
            t_start,
            states,
        }
    }

    /// Sub-trajectory over `[from, t_end]`.
    pub fn tail_from(&self, from: usize) -> Option<Trajectory> {
        let skip = from.checked_sub(self.t_start)?;
        if skip >= self.states.len() {
            return None;
        }
        Some(Trajectory {
            aircraft_id: self.aircraft_id,
            t_start: from,
            states: self.states[skip..].to_vec(),
        })
    }
}

/// Disk sequence `{center(k), radius(k)}` over `k = t_start ..= t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub aircraft_id: AircraftId,
    pub t_start: usize,
    pub centers: Vec<Point>,
    pub radii: Vec<f64>,
}

impl Corridor {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn t_end(&self) -> usize {
        self.t_start + self.centers.len().saturating_sub(1)
    }

    /// Timesteps strictly between the first and last disk.
    pub fn interior(&self) -> std::ops::Range<usize> {
        if self.len() < 2 {
            return self.t_start..self.t_start;
        }
        self.t_start + 1..self.t_end()
    }

    pub fn disk_at(&self, k: usize) -> Option<(Point, f64)> {
        let i = k.checked_sub(self.t_start)?;
        Some((*self.centers.get(i)?, *self.radii.get(i)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.len() != self.radii.len() {
            return Err(Error::invalid(format!(
                "corridor {}: {} centers but {} radii",
                self.aircraft_id,
                self.centers.len(),
                self.radii.len()
            )));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid(format!(
                "corridor {}: radii must be finite and non-negative",
                self.aircraft_id
            )));
        }
        if let (Some(first), Some(last)) = (self.radii.first(), self.radii.last()) {
            if *first != 0.0 || *last != 0.0 {
                return Err(Error::invalid(format!(
                    "corridor {}: boundary radii must be zero",
                    self.aircraft_id
                )));
            }
        }
        Ok(())
    }
}

/// One aircraft's planning data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftRecord {
    pub id: AircraftId,
    pub t_start: usize,
    pub t_end: usize,
    pub initial: AircraftState,
    pub terminal: AircraftState,
    pub standard: Trajectory,
    /// Wind for `k = t_start .. t_end`, one entry per step.
    pub disturbances: Vec<Disturbance>,
}

impl AircraftRecord {
    pub fn steps(&self) -> usize {
        self.t_end - self.t_start
    }

    pub fn interior(&self) -> std::ops::Range<usize> {
        self.t_start + 1..self.t_end
    }

    pub fn validate(&self) -> Result<()> {
        let path = format!("aircraft[id={}]", self.id);
        if self.t_end < self.t_start + 2 {
            return Err(Error::validation(
                format!("{path}.T"),
                "need at least one interior timestep (T > t + 1)",
            ));
        }
        if !self.initial.is_finite() {
            return Err(Error::validation(format!("{path}.x0"), "non-finite state"));
        }
        if !self.terminal.is_finite() {
            return Err(Error::validation(format!("{path}.xT"), "non-finite state"));
        }
        if self.standard.t_start != self.t_start || self.standard.t_end() != self.t_end {
            return Err(Error::validation(
                format!("{path}.standard"),
                format!(
                    "standard trajectory must span [{}, {}], got [{}, {}]",
                    self.t_start,
                    self.t_end,
                    self.standard.t_start,
                    self.standard.t_end()
                ),
            ));
        }
        if self.standard.states.iter().any(|s| !s.is_finite()) {
            return Err(Error::validation(format!("{path}.standard"), "non-finite point"));
        }
        if self.disturbances.len() != self.steps() {
            return Err(Error::validation(
                format!("{path}.wind"),
                format!("expected {} per-step entries, got {}", self.steps(), self.disturbances.len()),
            ));
        }
        if self.disturbances.iter().any(|d| !d.is_finite()) {
            return Err(Error::validation(format!("{path}.wind"), "non-finite entry"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub aircraft: Vec<AircraftRecord>,
    pub limits: Limits,
    /// Wall-clock length of one timestep. Metadata only.
    pub timestep_seconds: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.aircraft.is_empty() {
            return Err(Error::invalid("scenario has no aircraft"));
        }
        self.limits.validate()?;
        let mut ids: Vec<_> = self.aircraft.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("aircraft", "duplicate aircraft id"));
        }
        self.aircraft.iter().try_for_each(AircraftRecord::validate)
    }

    pub fn record(&self, id: AircraftId) -> Option<&AircraftRecord> {
        self.aircraft.iter().find(|a| a.id == id)
    }

    /// Earliest start over all aircraft.
    pub fn earliest_start(&self) -> usize {
        self.aircraft.iter().map(|a| a.t_start).min().unwrap_or(0)
    }
}

fn check_finite(state: &AircraftState, control: &ControlInput) -> Result<()> {
    if !state.is_finite() || !control.is_finite() {
        return Err(Error::invalid("non-finite state or control"));
    }
    Ok(())
}

pub fn step(state: &AircraftState, control: &ControlInput) -> Result<AircraftState> {
    check_finite(state, control)?;
    Ok(step_unchecked(state, control, &Disturbance::ZERO))
}

pub fn step_disturbed(
    state: &AircraftState,
    control: &ControlInput,
    d: &Disturbance,
) -> Result<AircraftState> {
    check_finite(state, control)?;
    if !d.is_finite() {
        return Err(Error::invalid("non-finite disturbance"));
    }
    Ok(step_unchecked(state, control, d))
}

#[inline]
pub(crate) fn step_unchecked(s: &AircraftState, c: &ControlInput, d: &Disturbance) -> AircraftState {
    let (sin, cos) = s.theta.sin_cos();
    AircraftState {
        x: s.x + s.v * cos + d.dx,
        y: s.y + s.v * sin + d.dy,
        v: s.v + c.u,
        theta: s.theta + c.psi,
    }
}

/// Iterates the dynamics from `x0`. Element `k + 1` of the result is the
/// successor of element `k` under `controls[k]` (and `disturbances[k]`).
pub fn rollout(
    x0: &AircraftState,
    controls: &[ControlInput],
    disturbances: Option<&[Disturbance]>,
) -> Result<Vec<AircraftState>> {
    if let Some(d) = disturbances {
        if d.len() != controls.len() {
            return Err(Error::invalid(format!(
                "{} controls but {} disturbances",
                controls.len(),
                d.len()
            )));
        }
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    let mut s = *x0;
    for (k, c) in controls.iter().enumerate() {
        s = match disturbances {
            Some(d) => step_disturbed(&s, c, &d[k])?,
            None => step(&s, c)?,
        };
        states.push(s);
    }
    Ok(states)
}

/// Rollout without validation, used inside objective evaluations.
pub(crate) fn rollout_into(
    x0: &AircraftState,
    controls: impl Iterator<Item = ControlInput>,
    disturbances: Option<&[Disturbance]>,
    out: &mut Vec<AircraftState>,
) {
    out.clear();
    out.push(*x0);
    let mut s = *x0;
    for (k, c) in controls.enumerate() {
        let d = disturbances.map_or(Disturbance::ZERO, |d| d[k]);
        s = step_unchecked(&s, &c, &d);
        out.push(s);
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance with [`NORM_SMOOTHING`] under the root.
#[inline]
pub fn smooth_distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy + NORM_SMOOTHING).sqrt()
}

/// Gradient of [`smooth_distance`] with respect to `a` (negate for `b`).
#[inline]
pub fn smooth_distance_gradient(a: Point, b: Point) -> [f64; 2] {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let n = (dx * dx + dy * dy + NORM_SMOOTHING).sqrt();
    [dx / n, dy / n]
}

/// Clearance between two disks: `‖ci − cj‖ − (ri + rj)`. Two aircraft are
/// separated when this is at least the safety margin.
pub fn conflict_margin(ci: Point, cj: Point, ri: f64, rj: f64) -> f64 {
    distance(ci, cj) - (ri + rj)
}

/// `(min_gap, max_gap)` between each pair of adjacent disks.
pub fn feasibility_margins(corridor: &Corridor) -> Vec<(f64, f64)> {
    corridor
        .centers
        .windows(2)
        .zip(corridor.radii.windows(2))
        .map(|(c, r)| {
            let d = distance(c[1], c[0]);
            let s = r[0] + r[1];
            (d - s, d + s)
        })
        .collect()
}

/// `radius − ‖center − point‖`; non-negative iff the point lies in the disk.
pub fn containment_margin(center: Point, radius: f64, point: Point) -> f64 {
    radius - distance(center, point)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// The representative of `angle` modulo 2π closest to `reference`.
pub fn unwrap_near(angle: f64, reference: f64) -> f64 {
    reference + wrap_angle(angle - reference)
}

/// Speed and heading of each segment of a polyline after removing the
/// per-segment disturbance. Headings are unwrapped continuously starting from
/// `initial_heading`; a zero-length segment keeps the previous heading.
pub fn segment_kinematics(
    points: &[Point],
    disturbances: Option<&[Disturbance]>,
    initial_heading: f64,
) -> Vec<(f64, f64)> {
    let mut prev = initial_heading;
    points
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let d = disturbances.and_then(|d| d.get(k)).copied().unwrap_or_default();
            let sx = w[1][0] - w[0][0] - d.dx;
            let sy = w[1][1] - w[0][1] - d.dy;
            let v = sx.hypot(sy);
            let heading = if v > 1e-12 {
                unwrap_near(sy.atan2(sx), prev)
            } else {
                prev
            };
            prev = heading;
            (v, heading)
        })
        .collect()
}

/// Partial derivatives of a scalar function with respect to one state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StateWeight {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

/// Reverse-mode sensitivity through a rollout.
///
/// `states` are the rolled-out states `0..=n` and `weights[j]` holds
/// `∂F/∂state_j` for a scalar `F`. Returns `[∂F/∂u_m, ∂F/∂psi_m]` for
/// `m = 0..n`. Additive disturbances do not enter the derivative.
pub fn control_gradient(states: &[AircraftState], weights: &[StateWeight]) -> Vec<[f64; 2]> {
    let n = states.len().saturating_sub(1);
    let mut grads = vec![[0.0; 2]; n];
    let mut q = [0.0_f64; 2];
    let mut acc = [0.0_f64; 2];
    for l in (1..=n).rev() {
        let w = weights[l];
        let mut a = w.v;
        let mut b = w.theta;
        if l < n {
            let s = &states[l];
            let (sin, cos) = s.theta.sin_cos();
            a += cos * q[0] + sin * q[1];
            b += s.v * (-sin * q[0] + cos * q[1]);
        }
        acc[0] += a;
        acc[1] += b;
        grads[l - 1] = acc;
        q[0] += w.x;
        q[1] += w.y;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= TOL * (1.0 + b.abs())
    }

    #[test]
    fn step_identity_control() {
        let s = step(&AircraftState::new(0.0, 0.0, 1.0, 0.0), &ControlInput::ZERO).unwrap();
        assert_eq!(s, AircraftState::new(1.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn step_quarter_turn() {
        let s = step(
            &AircraftState::new(0.0, 0.0, 2.0, PI / 2.0),
            &ControlInput::new(0.5, 0.1),
        )
        .unwrap();
        assert!(s.x.abs() < 1e-15);
        assert!(close(s.y, 2.0));
        assert!(close(s.v, 2.5));
        assert!(close(s.theta, PI / 2.0 + 0.1));
    }

    #[test]
    fn step_on_first_departure_state() {
        // Scalar-calculator values of 4.71 + 16.4 cos(-1.58), -8.42 + 16.4 sin(-1.58).
        let s = step(&AircraftState::new(4.71, -8.42, 16.4, -1.58), &ControlInput::ZERO).unwrap();
        assert!((s.x - 4.559_061_89).abs() < 1e-8, "{}", s.x);
        assert!((s.y - (-24.819_305_40)).abs() < 1e-8, "{}", s.y);
        assert_eq!(s.v, 16.4);
        assert_eq!(s.theta, -1.58);
    }

    #[test]
    fn step_rejects_non_finite() {
        let bad = AircraftState::new(f64::NAN, 0.0, 1.0, 0.0);
        assert!(matches!(step(&bad, &ControlInput::ZERO), Err(Error::InvalidInput(_))));
        let ok = AircraftState::new(0.0, 0.0, 1.0, 0.0);
        assert!(step(&ok, &ControlInput::new(f64::INFINITY, 0.0)).is_err());
        assert!(step_disturbed(&ok, &ControlInput::ZERO, &Disturbance::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn disturbed_step_examples() {
        let s0 = AircraftState::new(0.0, 0.0, 1.0, 0.0);
        let s = step_disturbed(&s0, &ControlInput::ZERO, &Disturbance::ZERO).unwrap();
        assert_eq!(s, AircraftState::new(1.0, 0.0, 1.0, 0.0));
        let s = step_disturbed(
            &AircraftState::default(),
            &ControlInput::ZERO,
            &Disturbance::new(0.236, 0.236),
        )
        .unwrap();
        assert_eq!(s, AircraftState::new(0.236, 0.236, 0.0, 0.0));
    }

    #[test]
    fn rollout_basics() {
        let x0 = AircraftState::new(0.0, 0.0, 1.0, 0.0);
        assert_eq!(rollout(&x0, &[], None).unwrap(), vec![x0]);
        let traj = rollout(&x0, &[ControlInput::ZERO; 3], None).unwrap();
        let xs: Vec<f64> = traj.iter().map(|s| s.x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(rollout(&x0, &[ControlInput::ZERO; 2], Some(&[Disturbance::ZERO])).is_err());
    }

    #[test]
    fn margins_examples() {
        assert_eq!(conflict_margin([0.0, 0.0], [5.0, 0.0], 1.0, 1.0), 3.0);
        assert_eq!(conflict_margin([0.0, 0.0], [0.0, 0.0], 0.0, 0.0), 0.0);
        assert_eq!(conflict_margin([3.0, 4.0], [0.0, 0.0], 2.0, 1.0), 2.0);

        assert_eq!(containment_margin([0.0, 0.0], 5.0, [3.0, 4.0]), 0.0);
        assert_eq!(containment_margin([1.0, 1.0], 2.0, [1.0, 1.0]), 2.0);
        assert_eq!(containment_margin([0.0, 0.0], 1.0, [3.0, 0.0]), -2.0);
    }

    fn corridor(centers: Vec<Point>, radii: Vec<f64>) -> Corridor {
        Corridor {
            aircraft_id: 1,
            t_start: 0,
            centers,
            radii,
        }
    }

    #[test]
    fn feasibility_examples() {
        let c = corridor(vec![[0.0, 0.0], [20.0, 0.0]], vec![0.0, 0.0]);
        assert_eq!(feasibility_margins(&c), vec![(20.0, 20.0)]);
        let c = corridor(vec![[0.0, 0.0], [20.0, 0.0]], vec![2.0, 3.0]);
        assert_eq!(feasibility_margins(&c), vec![(15.0, 25.0)]);
        let c = corridor(vec![[0.0, 0.0]], vec![0.0]);
        assert!(feasibility_margins(&c).is_empty());
    }

    #[test]
    fn corridor_validation() {
        assert!(corridor(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![0.0, 1.0, 0.0])
            .validate()
            .is_ok());
        assert!(corridor(vec![[0.0, 0.0], [1.0, 0.0]], vec![0.0]).validate().is_err());
        assert!(corridor(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![0.0, 1.0, 0.5])
            .validate()
            .is_err());
        assert!(corridor(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![0.0, -1.0, 0.0])
            .validate()
            .is_err());
    }

    #[test]
    fn angle_helpers() {
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0));
        assert!(close(wrap_angle(PI), PI));
        assert!(close(wrap_angle(-PI), PI));
        // Heading 2.63 seen from a path that has turned clockwise past -pi.
        assert!(close(unwrap_near(2.63, -3.5), 2.63 - 2.0 * PI));
    }

    #[test]
    fn segment_kinematics_carries_heading_over_degenerate_segment() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [0.0, 1.0], [-1.0, 1.0]];
        let segs = segment_kinematics(&pts, None, 0.0);
        assert!(close(segs[0].0, 1.0) && close(segs[0].1, PI / 2.0));
        assert_eq!(segs[1], (0.0, segs[0].1));
        assert!(close(segs[2].1, PI));
    }

    #[test]
    fn segment_kinematics_removes_wind() {
        let w = Disturbance::new(0.5, 0.25);
        let pts = [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]];
        let segs = segment_kinematics(&pts, Some(&[w, w]), 0.0);
        for (v, h) in segs {
            assert!(close(v, (9.5_f64).hypot(-0.25)));
            assert!(close(h, (-0.25_f64).atan2(9.5)));
        }
    }

    #[test]
    fn control_gradient_matches_finite_differences() {
        let x0 = AircraftState::new(1.0, -2.0, 12.0, 0.3);
        let controls = vec![
            ControlInput::new(0.5, 0.1),
            ControlInput::new(-1.0, -0.2),
            ControlInput::new(2.0, 0.05),
            ControlInput::new(0.0, 0.3),
        ];
        // F = sum_j (a_j x_j + b_j y_j + c_j v_j + e_j theta_j) + x_3 * y_4
        let f = |cs: &[ControlInput]| {
            let st = rollout(&x0, cs, None).unwrap();
            st.iter()
                .enumerate()
                .map(|(j, s)| {
                    let j = j as f64;
                    (0.3 * j) * s.x - 0.2 * s.y + j * s.v - 0.7 * j * s.theta
                })
                .sum::<f64>()
                + st[3].x * st[4].y
        };
        let states = rollout(&x0, &controls, None).unwrap();
        let mut w: Vec<StateWeight> = (0..states.len())
            .map(|j| {
                let j = j as f64;
                StateWeight {
                    x: 0.3 * j,
                    y: -0.2,
                    v: j,
                    theta: -0.7 * j,
                }
            })
            .collect();
        w[3].x += states[4].y;
        w[4].y += states[3].x;
        let g = control_gradient(&states, &w);
        let h = 1e-6;
        for m in 0..controls.len() {
            for c in 0..2 {
                let mut p = controls.clone();
                let mut q = controls.clone();
                if c == 0 {
                    p[m].u += h;
                    q[m].u -= h;
                } else {
                    p[m].psi += h;
                    q[m].psi -= h;
                }
                let fd = (f(&p) - f(&q)) / (2.0 * h);
                assert!((fd - g[m][c]).abs() < 1e-5 * (1.0 + fd.abs()), "m={m} c={c}: {fd} vs {}", g[m][c]);
            }
        }
    }
}
