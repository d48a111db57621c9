//! Synthetic standard trajectories for scenarios without recorded tracks.
//!
//! A route is a polyline from the initial position through waypoints to the
//! terminal position. It leaves along the initial heading and arrives along
//! the terminal heading. Points are placed along it at one step's travel
//! apart, with a speed profile that blends the initial and terminal speeds
//! plus a half-sine cruise bump sized so the steps cover the whole route.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{distance, AircraftId, AircraftRecord, AircraftState, Disturbance, Point, Trajectory};

/// Per-step speeds `v_0 .. v_{n-1}` with `v_0 = v_start`, summing to `length`.
pub fn speed_profile(v_start: f64, v_end: f64, steps: usize, length: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("route needs at least one step"));
    }
    let n = steps as f64;
    let base: Vec<f64> = (0..steps)
        .map(|k| v_start + (v_end - v_start) * k as f64 / n)
        .collect();
    let bump: Vec<f64> = (0..steps)
        .map(|k| (std::f64::consts::PI * k as f64 / n).sin())
        .collect();
    let bump_sum: f64 = bump.iter().sum();
    let missing = length - base.iter().sum::<f64>();
    let amp = if bump_sum > 0.0 { missing / bump_sum } else { 0.0 };
    let v: Vec<f64> = base.iter().zip(&bump).map(|(b, s)| b + amp * s).collect();
    if bump_sum == 0.0 && missing.abs() > 1e-9 * length.max(1.0) {
        return Err(Error::invalid("single-step route must match the initial speed"));
    }
    if v.iter().any(|s| *s <= 0.0) {
        return Err(Error::invalid("route too short for the given speeds"));
    }
    Ok(v)
}

/// Point at arc length `s` along `poly` (clamped to the ends).
fn point_at(poly: &[Point], mut s: f64) -> Point {
    for w in poly.windows(2) {
        let l = distance(w[0], w[1]);
        if s <= l && l > 0.0 {
            let t = s / l;
            return [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
        }
        s -= l;
    }
    *poly.last().expect("non-empty polyline")
}

/// Standard positions for `steps` steps from `initial` to `terminal` via
/// `waypoints`. The first and last legs have the length of one step at the
/// initial and terminal speeds.
pub fn route_standard(
    initial: &AircraftState,
    terminal: &AircraftState,
    waypoints: &[Point],
    steps: usize,
) -> Result<Vec<Point>> {
    let p0 = initial.position();
    let pn = terminal.position();
    let mut poly = vec![
        p0,
        [p0[0] + initial.v * initial.theta.cos(), p0[1] + initial.v * initial.theta.sin()],
    ];
    poly.extend_from_slice(waypoints);
    poly.push([pn[0] - terminal.v * terminal.theta.cos(), pn[1] - terminal.v * terminal.theta.sin()]);
    poly.push(pn);
    let length: f64 = poly.windows(2).map(|w| distance(w[0], w[1])).sum();
    let speeds = speed_profile(initial.v, terminal.v, steps, length)?;
    let mut s = 0.0;
    let mut out = vec![p0];
    for v in &speeds[..steps - 1] {
        s += v;
        out.push(point_at(&poly, s));
    }
    out.push(pn);
    Ok(out)
}

/// Aircraft record whose standard trajectory follows the given route.
pub fn routed_aircraft(
    id: AircraftId,
    t_start: usize,
    t_end: usize,
    initial: AircraftState,
    terminal: AircraftState,
    waypoints: &[Point],
    wind: Disturbance,
) -> Result<AircraftRecord> {
    if t_end <= t_start {
        return Err(Error::invalid("t_end must follow t_start"));
    }
    let steps = t_end - t_start;
    let pts = route_standard(&initial, &terminal, waypoints, steps)?;
    Ok(AircraftRecord {
        id,
        t_start,
        t_end,
        initial,
        terminal,
        standard: Trajectory::from_positions(id, t_start, &pts, initial.theta),
        disturbances: vec![wind; steps],
    })
}

/// Aircraft flying straight across a circle of the given radius around the
/// origin, entering at a random bearing. Used to build random encounter
/// scenarios for property tests.
pub fn random_crossing<R: Rng>(
    rng: &mut R,
    id: AircraftId,
    t_start: usize,
    steps: usize,
    radius: f64,
    speed: f64,
) -> Result<AircraftRecord> {
    let bearing: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let heading = bearing + std::f64::consts::PI + rng.gen_range(-0.3..0.3);
    let start = [radius * bearing.cos(), radius * bearing.sin()];
    let initial = AircraftState::new(start[0], start[1], speed, heading);
    let end = [
        start[0] + steps as f64 * speed * heading.cos(),
        start[1] + steps as f64 * speed * heading.sin(),
    ];
    let terminal = AircraftState::new(end[0], end[1], speed, heading);
    routed_aircraft(id, t_start, t_start + steps, initial, terminal, &[], Disturbance::ZERO)
}
