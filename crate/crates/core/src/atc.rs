//! Corridor design: the ATC stage.
//!
//! All aircraft are planned jointly. Decision variables per aircraft are the
//! controls `(u, psi)` for every step of its horizon followed by the radii of
//! its interior disks; the disk centers are reconstructed by rolling the
//! controls out from the initial state, so the dynamics hold exactly.
//!
//! Variable layout for an aircraft with `n = T - t` steps, starting at
//! `offset`:
//!
//! ```text
//! offset + 2j      u(t + j)      j = 0 .. n-1
//! offset + 2j + 1  psi(t + j)
//! offset + 2n + i  r(t + 1 + i)  i = 0 .. n-2
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, control_gradient, rollout_into, segment_kinematics, smooth_distance,
    smooth_distance_gradient, unwrap_near, AircraftId, AircraftRecord, AircraftState, ControlInput,
    Corridor, Limits, Point, Scenario, StateWeight, Trajectory,
};
use crate::nlp::{self, NlpProblem, SolveResult, SolverConfig};

/// `−Σ ln(r + eps)` over the given interior radii.
pub fn j1(radii: &[f64], eps: f64) -> f64 {
    -radii.iter().map(|r| (r + eps).ln()).sum::<f64>()
}

/// Deviation cost of interior centers from the standard positions:
/// `Σ‖Δ(k)‖² + Σ‖Δ(k+1) − Δ(k)‖²` with `Δ = center − standard`.
pub fn j2(centers: &[Point], standard: &[Point]) -> Result<f64> {
    if centers.len() != standard.len() {
        return Err(Error::invalid(format!(
            "{} centers but {} standard points",
            centers.len(),
            standard.len()
        )));
    }
    let delta: Vec<Point> = centers
        .iter()
        .zip(standard)
        .map(|(c, s)| [c[0] - s[0], c[1] - s[1]])
        .collect();
    let first: f64 = delta.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum();
    let second: f64 = delta
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2))
        .sum();
    Ok(first + second)
}

/// Per-aircraft slice of the ATC problem.
#[derive(Debug, Clone)]
struct Block {
    id: AircraftId,
    t_start: usize,
    steps: usize,
    initial: AircraftState,
    terminal_position: Point,
    v_ter: f64,
    theta_ter: f64,
    offset: usize,
    /// Standard positions for `k = t_start ..= t_end`.
    standard: Vec<Point>,
    /// Reference polyline for the initial guess (standard or last selection).
    reference: Vec<Point>,
    /// Last pilot selection for `k = t_start ..= t_end` when re-planning.
    previous: Option<Vec<Point>>,
}

impl Block {
    fn t_end(&self) -> usize {
        self.t_start + self.steps
    }

    fn radius_offset(&self) -> usize {
        self.offset + 2 * self.steps
    }

    fn num_vars(&self) -> usize {
        3 * self.steps - 1
    }

    fn controls<'x>(&self, x: &'x [f64]) -> impl Iterator<Item = ControlInput> + 'x {
        let off = self.offset;
        (0..self.steps).map(move |j| ControlInput::new(x[off + 2 * j], x[off + 2 * j + 1]))
    }

    /// Radius at relative index `j`; boundary disks are fixed at zero.
    fn radius(&self, x: &[f64], j: usize) -> f64 {
        if j == 0 || j >= self.steps {
            0.0
        } else {
            x[self.radius_offset() + j - 1]
        }
    }

    fn radius_index(&self, j: usize) -> Option<usize> {
        (j > 0 && j < self.steps).then(|| self.radius_offset() + j - 1)
    }

    fn rel(&self, k: usize) -> usize {
        k - self.t_start
    }

    fn states(&self, x: &[f64], buf: &mut Vec<AircraftState>) {
        rollout_into(&self.initial, self.controls(x), None, buf);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ineq {
    SpeedMin { a: usize, j: usize },
    SpeedMax { a: usize, j: usize },
    TerminalSpeedHigh { a: usize },
    TerminalSpeedLow { a: usize },
    TerminalHeadingHigh { a: usize },
    TerminalHeadingLow { a: usize },
    GapMin { a: usize, j: usize },
    GapMax { a: usize, j: usize },
    Conflict { a: usize, b: usize, k: usize },
    Operation { a: usize, j: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Eq {
    TerminalX { a: usize },
    TerminalY { a: usize },
}

/// Number of scalar constraints per family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintCounts {
    /// Sides of the control boxes `|u| <= U`, `|psi| <= Psi` (variable bounds).
    pub control_bounds: usize,
    /// `r >= 0` (variable bounds).
    pub radius_bounds: usize,
    pub speed: usize,
    pub terminal: usize,
    pub conflict: usize,
    pub feasibility: usize,
    pub operation: usize,
    /// Scalar equalities pinning the final center to the terminal position.
    pub terminal_position: usize,
}

impl ConstraintCounts {
    pub fn total(&self) -> usize {
        self.control_bounds
            + self.radius_bounds
            + self.speed
            + self.terminal
            + self.conflict
            + self.feasibility
            + self.operation
            + self.terminal_position
    }
}

/// The joint corridor-design NLP.
#[derive(Debug, Clone)]
pub struct AtcProblem {
    limits: Limits,
    blocks: Vec<Block>,
    n: usize,
    ineqs: Vec<Ineq>,
    eqs: Vec<Eq>,
}

/// Moves every aircraft still flying at `plan_time` to start there, taking
/// its initial state from its last selection. Aircraft that would be left
/// without an interior step are dropped. Returns the advanced scenario and,
/// per remaining aircraft, the selection restricted to the new horizon.
pub fn advance_scenario(
    scenario: &Scenario,
    selections: &[Trajectory],
    plan_time: usize,
) -> Result<(Scenario, Vec<Trajectory>)> {
    let mut aircraft = Vec::new();
    let mut tails = Vec::new();
    for rec in &scenario.aircraft {
        let start = rec.t_start.max(plan_time);
        if start + 1 >= rec.t_end {
            continue;
        }
        let sel = selections
            .iter()
            .find(|s| s.aircraft_id == rec.id)
            .ok_or_else(|| Error::invalid(format!("no previous selection for aircraft {}", rec.id)))?;
        if sel.t_start > start || sel.t_end() < rec.t_end {
            return Err(Error::invalid(format!(
                "selection for aircraft {} spans [{}, {}], need [{}, {}]",
                rec.id,
                sel.t_start,
                sel.t_end(),
                start,
                rec.t_end
            )));
        }
        let tail = sel.tail_from(start).expect("span checked above");
        let tail = Trajectory {
            states: tail.states[..=rec.t_end - start].to_vec(),
            ..tail
        };
        let skip = start - rec.t_start;
        let standard = rec
            .standard
            .tail_from(start)
            .ok_or_else(|| Error::invalid(format!("standard of aircraft {} too short", rec.id)))?;
        aircraft.push(AircraftRecord {
            id: rec.id,
            t_start: start,
            t_end: rec.t_end,
            initial: tail.states[0],
            terminal: rec.terminal,
            standard,
            disturbances: rec.disturbances[skip..].to_vec(),
        });
        tails.push(tail);
    }
    if aircraft.is_empty() {
        return Err(Error::invalid(format!(
            "no aircraft left to re-plan at time {plan_time}"
        )));
    }
    Ok((
        Scenario {
            aircraft,
            limits: scenario.limits.clone(),
            timestep_seconds: scenario.timestep_seconds,
        },
        tails,
    ))
}

/// Builds the corridor-design problem.
///
/// Without `tau` this is a first planning over each aircraft's full horizon.
/// With `tau`, the plan is made `tau` steps after the scenario's earliest
/// start: aircraft are advanced along `prev_selections` and every redesigned
/// interior disk must contain the corresponding previous selection point.
pub fn build_problem(
    scenario: &Scenario,
    prev_selections: Option<&[Trajectory]>,
    tau: Option<usize>,
) -> Result<AtcProblem> {
    match (prev_selections, tau) {
        (None, None) => AtcProblem::new(scenario, None),
        (None, Some(_)) => Err(Error::invalid("re-plan offset given without previous selections")),
        (Some(_), Some(0)) => Err(Error::invalid("re-plan offset must be positive")),
        (Some(sel), Some(tau)) => {
            let plan_time = scenario.earliest_start() + tau;
            let (advanced, tails) = advance_scenario(scenario, sel, plan_time)?;
            AtcProblem::new(&advanced, Some(&tails))
        }
        (Some(sel), None) => AtcProblem::new(scenario, Some(sel)),
    }
}

impl AtcProblem {
    /// Problem over `scenario` as given. When `previous` is present every
    /// interior disk must contain the matching point of the selection.
    pub fn new(scenario: &Scenario, previous: Option<&[Trajectory]>) -> Result<Self> {
        scenario.validate()?;
        let limits = scenario.limits.clone();
        let mut blocks = Vec::with_capacity(scenario.aircraft.len());
        let mut offset = 0;
        for rec in &scenario.aircraft {
            let prev = match previous {
                None => None,
                Some(sel) => {
                    let s = sel.iter().find(|s| s.aircraft_id == rec.id).ok_or_else(|| {
                        Error::invalid(format!("no previous selection for aircraft {}", rec.id))
                    })?;
                    let pts: Option<Vec<Point>> =
                        (rec.t_start..=rec.t_end).map(|k| s.position_at(k)).collect();
                    Some(pts.ok_or_else(|| {
                        Error::invalid(format!(
                            "previous selection for aircraft {} does not span [{}, {}]",
                            rec.id, rec.t_start, rec.t_end
                        ))
                    })?)
                }
            };
            let standard = rec.standard.positions();
            let reference = prev.clone().unwrap_or_else(|| standard.clone());
            let segs = segment_kinematics(&reference, None, rec.initial.theta);
            let ref_heading = if segs.len() > 1 {
                segs[segs.len() - 1].1
            } else {
                rec.initial.theta
            };
            let theta_target = limits.theta_ter.unwrap_or(rec.terminal.theta);
            let block = Block {
                id: rec.id,
                t_start: rec.t_start,
                steps: rec.steps(),
                initial: rec.initial,
                terminal_position: rec.terminal.position(),
                v_ter: limits.v_ter.unwrap_or(rec.terminal.v),
                theta_ter: unwrap_near(theta_target, ref_heading),
                offset,
                standard,
                reference,
                previous: prev,
            };
            offset += block.num_vars();
            blocks.push(block);
        }

        let mut ineqs = Vec::new();
        let mut eqs = Vec::new();
        for (a, b) in blocks.iter().enumerate() {
            for j in 1..=b.steps {
                ineqs.push(Ineq::SpeedMin { a, j });
                ineqs.push(Ineq::SpeedMax { a, j });
            }
            ineqs.push(Ineq::TerminalSpeedHigh { a });
            ineqs.push(Ineq::TerminalSpeedLow { a });
            ineqs.push(Ineq::TerminalHeadingHigh { a });
            ineqs.push(Ineq::TerminalHeadingLow { a });
            for j in 0..b.steps {
                ineqs.push(Ineq::GapMin { a, j });
                ineqs.push(Ineq::GapMax { a, j });
            }
            if b.previous.is_some() {
                for j in 1..b.steps {
                    ineqs.push(Ineq::Operation { a, j });
                }
            }
            eqs.push(Eq::TerminalX { a });
            eqs.push(Eq::TerminalY { a });
        }
        for a in 0..blocks.len() {
            for b in a + 1..blocks.len() {
                let lo = blocks[a].t_start.max(blocks[b].t_start) + 1;
                let hi = blocks[a].t_end().min(blocks[b].t_end());
                for k in lo..hi {
                    ineqs.push(Ineq::Conflict { a, b, k });
                }
            }
        }

        Ok(Self {
            limits,
            n: offset,
            blocks,
            ineqs,
            eqs,
        })
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn aircraft_ids(&self) -> Vec<AircraftId> {
        self.blocks.iter().map(|b| b.id).collect()
    }

    /// Terminal heading reference of each aircraft, on the branch nearest
    /// to its reference path.
    pub fn terminal_headings(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.theta_ter).collect()
    }

    pub fn counts(&self) -> ConstraintCounts {
        let mut c = ConstraintCounts::default();
        for b in &self.blocks {
            c.control_bounds += 4 * b.steps;
            c.radius_bounds += b.steps - 1;
        }
        for i in &self.ineqs {
            match i {
                Ineq::SpeedMin { .. } | Ineq::SpeedMax { .. } => c.speed += 1,
                Ineq::TerminalSpeedHigh { .. }
                | Ineq::TerminalSpeedLow { .. }
                | Ineq::TerminalHeadingHigh { .. }
                | Ineq::TerminalHeadingLow { .. } => c.terminal += 1,
                Ineq::GapMin { .. } | Ineq::GapMax { .. } => c.feasibility += 1,
                Ineq::Conflict { .. } => c.conflict += 1,
                Ineq::Operation { .. } => c.operation += 1,
            }
        }
        c.terminal_position = self.eqs.len();
        c
    }

    /// Warm start: controls from inverse dynamics on each reference polyline
    /// (standard trajectory, or last selection when re-planning), all radii 0.
    pub fn initial_guess(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        let l = &self.limits;
        for b in &self.blocks {
            let controls = reference_controls(
                &b.initial,
                &b.reference,
                b.v_ter,
                b.theta_ter,
                None,
                l,
            );
            for (j, c) in controls.iter().enumerate() {
                x[b.offset + 2 * j] = c.u;
                x[b.offset + 2 * j + 1] = c.psi;
            }
        }
        x
    }

    fn rollouts(&self, x: &[f64]) -> Vec<Vec<AircraftState>> {
        self.blocks
            .iter()
            .map(|b| {
                let mut buf = Vec::with_capacity(b.steps + 1);
                b.states(x, &mut buf);
                buf
            })
            .collect()
    }

    fn ineq_value(&self, c: &Ineq, x: &[f64], st: &[Vec<AircraftState>]) -> f64 {
        let l = &self.limits;
        match *c {
            Ineq::SpeedMin { a, j } => l.v_min - st[a][j].v,
            Ineq::SpeedMax { a, j } => st[a][j].v - l.v_max,
            Ineq::TerminalSpeedHigh { a } => {
                let b = &self.blocks[a];
                st[a][b.steps].v - b.v_ter - l.delta_v
            }
            Ineq::TerminalSpeedLow { a } => {
                let b = &self.blocks[a];
                b.v_ter - st[a][b.steps].v - l.delta_v
            }
            Ineq::TerminalHeadingHigh { a } => {
                let b = &self.blocks[a];
                st[a][b.steps].theta - b.theta_ter - l.delta_theta
            }
            Ineq::TerminalHeadingLow { a } => {
                let b = &self.blocks[a];
                b.theta_ter - st[a][b.steps].theta - l.delta_theta
            }
            Ineq::GapMin { a, j } => {
                let b = &self.blocks[a];
                let d = smooth_distance(st[a][j + 1].position(), st[a][j].position());
                l.v_min - (d - b.radius(x, j) - b.radius(x, j + 1))
            }
            Ineq::GapMax { a, j } => {
                let b = &self.blocks[a];
                let d = smooth_distance(st[a][j + 1].position(), st[a][j].position());
                d + b.radius(x, j) + b.radius(x, j + 1) - l.v_max
            }
            Ineq::Conflict { a, b, k } => {
                let (ba, bb) = (&self.blocks[a], &self.blocks[b]);
                let (ja, jb) = (ba.rel(k), bb.rel(k));
                let d = smooth_distance(st[a][ja].position(), st[b][jb].position());
                l.safety_margin - (d - ba.radius(x, ja) - bb.radius(x, jb))
            }
            Ineq::Operation { a, j } => {
                let b = &self.blocks[a];
                let prev = b.previous.as_ref().expect("operation constraint without selection")[j];
                smooth_distance(st[a][j].position(), prev) - b.radius(x, j)
            }
        }
    }

    /// Writes the gradient of inequality `c` into `row` (zeroed by caller).
    fn ineq_gradient(
        &self,
        c: &Ineq,
        x: &[f64],
        st: &[Vec<AircraftState>],
        weights: &mut [Vec<StateWeight>],
        row: &mut [f64],
    ) {
        // Accumulate state sensitivities per involved aircraft, then map them
        // through the rollout.
        let mut touched: [Option<usize>; 2] = [None, None];
        let put = |a: usize, j: usize, w: StateWeight, weights: &mut [Vec<StateWeight>], t: &mut [Option<usize>; 2]| {
            let e = &mut weights[a][j];
            e.x += w.x;
            e.y += w.y;
            e.v += w.v;
            e.theta += w.theta;
            if t[0] != Some(a) && t[1] != Some(a) {
                if t[0].is_none() {
                    t[0] = Some(a);
                } else {
                    t[1] = Some(a);
                }
            }
        };
        let sw = |x: f64, y: f64, v: f64, theta: f64| StateWeight { x, y, v, theta };
        match *c {
            Ineq::SpeedMin { a, j } => put(a, j, sw(0.0, 0.0, -1.0, 0.0), weights, &mut touched),
            Ineq::SpeedMax { a, j } => put(a, j, sw(0.0, 0.0, 1.0, 0.0), weights, &mut touched),
            Ineq::TerminalSpeedHigh { a } => {
                let n = self.blocks[a].steps;
                put(a, n, sw(0.0, 0.0, 1.0, 0.0), weights, &mut touched)
            }
            Ineq::TerminalSpeedLow { a } => {
                let n = self.blocks[a].steps;
                put(a, n, sw(0.0, 0.0, -1.0, 0.0), weights, &mut touched)
            }
            Ineq::TerminalHeadingHigh { a } => {
                let n = self.blocks[a].steps;
                put(a, n, sw(0.0, 0.0, 0.0, 1.0), weights, &mut touched)
            }
            Ineq::TerminalHeadingLow { a } => {
                let n = self.blocks[a].steps;
                put(a, n, sw(0.0, 0.0, 0.0, -1.0), weights, &mut touched)
            }
            Ineq::GapMin { a, j } | Ineq::GapMax { a, j } => {
                let sign = if matches!(c, Ineq::GapMin { .. }) { -1.0 } else { 1.0 };
                let e = smooth_distance_gradient(st[a][j + 1].position(), st[a][j].position());
                put(a, j + 1, sw(sign * e[0], sign * e[1], 0.0, 0.0), weights, &mut touched);
                put(a, j, sw(-sign * e[0], -sign * e[1], 0.0, 0.0), weights, &mut touched);
                let b = &self.blocks[a];
                for jj in [j, j + 1] {
                    if let Some(i) = b.radius_index(jj) {
                        row[i] += 1.0;
                    }
                }
            }
            Ineq::Conflict { a, b, k } => {
                let (ba, bb) = (&self.blocks[a], &self.blocks[b]);
                let (ja, jb) = (ba.rel(k), bb.rel(k));
                let e = smooth_distance_gradient(st[a][ja].position(), st[b][jb].position());
                put(a, ja, sw(-e[0], -e[1], 0.0, 0.0), weights, &mut touched);
                put(b, jb, sw(e[0], e[1], 0.0, 0.0), weights, &mut touched);
                if let Some(i) = ba.radius_index(ja) {
                    row[i] += 1.0;
                }
                if let Some(i) = bb.radius_index(jb) {
                    row[i] += 1.0;
                }
            }
            Ineq::Operation { a, j } => {
                let b = &self.blocks[a];
                let prev = b.previous.as_ref().expect("operation constraint without selection")[j];
                let e = smooth_distance_gradient(st[a][j].position(), prev);
                put(a, j, sw(e[0], e[1], 0.0, 0.0), weights, &mut touched);
                if let Some(i) = b.radius_index(j) {
                    row[i] -= 1.0;
                }
            }
        }
        let _ = x;
        for a in touched.into_iter().flatten() {
            self.scatter_controls(a, &st[a], &mut weights[a], row);
        }
    }

    /// Maps state weights of block `a` onto its control variables and clears them.
    fn scatter_controls(
        &self,
        a: usize,
        states: &[AircraftState],
        weights: &mut [StateWeight],
        row: &mut [f64],
    ) {
        let b = &self.blocks[a];
        let g = control_gradient(states, weights);
        for (j, gj) in g.iter().enumerate() {
            row[b.offset + 2 * j] += gj[0];
            row[b.offset + 2 * j + 1] += gj[1];
        }
        weights.iter_mut().for_each(|w| *w = StateWeight::default());
    }

    fn weight_buffers(&self) -> Vec<Vec<StateWeight>> {
        self.blocks
            .iter()
            .map(|b| vec![StateWeight::default(); b.steps + 1])
            .collect()
    }

    /// Corridors, controls and reconstructed states encoded by `x`.
    pub fn decode(&self, x: &[f64]) -> Vec<AircraftPlan> {
        let st = self.rollouts(x);
        self.blocks
            .iter()
            .zip(st)
            .map(|(b, states)| {
                let radii = (0..=b.steps).map(|j| b.radius(x, j)).collect();
                AircraftPlan {
                    corridor: Corridor {
                        aircraft_id: b.id,
                        t_start: b.t_start,
                        centers: states.iter().map(AircraftState::position).collect(),
                        radii,
                    },
                    controls: b.controls(x).collect(),
                    states: Trajectory {
                        aircraft_id: b.id,
                        t_start: b.t_start,
                        states,
                    },
                }
            })
            .collect()
    }

    /// `(j1, j2)` at `x`.
    pub fn cost_terms(&self, x: &[f64]) -> (f64, f64) {
        let st = self.rollouts(x);
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        for (b, states) in self.blocks.iter().zip(&st) {
            let radii: Vec<f64> = (1..b.steps).map(|j| b.radius(x, j)).collect();
            c1 += j1(&radii, self.limits.eps);
            let centers: Vec<Point> = states[1..b.steps].iter().map(|s| s.position()).collect();
            c2 += j2(&centers, &b.standard[1..b.steps]).expect("aligned by construction");
        }
        (c1, c2)
    }
}

impl NlpProblem for AtcProblem {
    fn dimension(&self) -> usize {
        self.n
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; self.n];
        let mut hi = vec![f64::INFINITY; self.n];
        for b in &self.blocks {
            for j in 0..b.steps {
                lo[b.offset + 2 * j] = -self.limits.u_max;
                hi[b.offset + 2 * j] = self.limits.u_max;
                lo[b.offset + 2 * j + 1] = -self.limits.psi_max;
                hi[b.offset + 2 * j + 1] = self.limits.psi_max;
            }
        }
        (lo, hi)
    }

    fn variable_scale(&self) -> Option<Vec<f64>> {
        let mut s = vec![1.0; self.n];
        for b in &self.blocks {
            let v = b.initial.v.max(self.limits.v_min).max(1.0);
            for j in 0..b.steps {
                // A control at step j moves the positions of the remaining
                // steps; normalize so a unit change moves them about one unit.
                let lever = (b.steps - j) as f64;
                s[b.offset + 2 * j] = 1.0 / lever;
                s[b.offset + 2 * j + 1] = 1.0 / (v * lever);
            }
        }
        Some(s)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let (c1, c2) = self.cost_terms(x);
        c1 + self.limits.alpha * c2
    }

    fn objective_gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let st = self.rollouts(x);
        let alpha = self.limits.alpha;
        for (b, states) in self.blocks.iter().zip(&st) {
            for j in 1..b.steps {
                let i = b.radius_index(j).expect("interior");
                grad[i] = -1.0 / (x[i] + self.limits.eps);
            }
            let n = b.steps;
            // Δ(j) for interior j = 1 .. n-1.
            let delta = |j: usize| {
                let c = states[j].position();
                [c[0] - b.standard[j][0], c[1] - b.standard[j][1]]
            };
            let mut w = vec![StateWeight::default(); n + 1];
            for j in 1..n {
                let d = delta(j);
                let mut gx = 2.0 * d[0];
                let mut gy = 2.0 * d[1];
                if j > 1 {
                    let p = delta(j - 1);
                    gx += 2.0 * (d[0] - p[0]);
                    gy += 2.0 * (d[1] - p[1]);
                }
                if j + 1 < n {
                    let q = delta(j + 1);
                    gx -= 2.0 * (q[0] - d[0]);
                    gy -= 2.0 * (q[1] - d[1]);
                }
                w[j].x = alpha * gx;
                w[j].y = alpha * gy;
            }
            let g = control_gradient(states, &w);
            for (j, gj) in g.iter().enumerate() {
                grad[b.offset + 2 * j] += gj[0];
                grad[b.offset + 2 * j + 1] += gj[1];
            }
        }
    }

    fn num_inequalities(&self) -> usize {
        self.ineqs.len()
    }

    fn num_equalities(&self) -> usize {
        self.eqs.len()
    }

    fn inequalities(&self, x: &[f64], out: &mut [f64]) {
        let st = self.rollouts(x);
        for (o, c) in out.iter_mut().zip(&self.ineqs) {
            *o = self.ineq_value(c, x, &st);
        }
    }

    fn inequality_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let st = self.rollouts(x);
        let mut weights = self.weight_buffers();
        let n = self.n;
        for (row, c) in jac.chunks_mut(n).zip(&self.ineqs) {
            row.fill(0.0);
            self.ineq_gradient(c, x, &st, &mut weights, row);
        }
    }

    fn equalities(&self, x: &[f64], out: &mut [f64]) {
        let st = self.rollouts(x);
        for (o, e) in out.iter_mut().zip(&self.eqs) {
            *o = match *e {
                Eq::TerminalX { a } => {
                    let b = &self.blocks[a];
                    st[a][b.steps].x - b.terminal_position[0]
                }
                Eq::TerminalY { a } => {
                    let b = &self.blocks[a];
                    st[a][b.steps].y - b.terminal_position[1]
                }
            };
        }
    }

    fn equality_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let st = self.rollouts(x);
        let mut weights = self.weight_buffers();
        let n = self.n;
        for (row, e) in jac.chunks_mut(n).zip(&self.eqs) {
            row.fill(0.0);
            let (a, w) = match *e {
                Eq::TerminalX { a } => (a, StateWeight { x: 1.0, ..Default::default() }),
                Eq::TerminalY { a } => (a, StateWeight { y: 1.0, ..Default::default() }),
            };
            let last = self.blocks[a].steps;
            weights[a][last] = w;
            self.scatter_controls(a, &st[a], &mut weights[a], row);
        }
    }

    fn inequality_label(&self, j: usize) -> String {
        let id = |a: usize| self.blocks[a].id;
        let k = |a: usize, j: usize| self.blocks[a].t_start + j;
        match self.ineqs[j] {
            Ineq::SpeedMin { a, j } => format!("speed_min[{}@{}]", id(a), k(a, j)),
            Ineq::SpeedMax { a, j } => format!("speed_max[{}@{}]", id(a), k(a, j)),
            Ineq::TerminalSpeedHigh { a } => format!("terminal_speed_high[{}]", id(a)),
            Ineq::TerminalSpeedLow { a } => format!("terminal_speed_low[{}]", id(a)),
            Ineq::TerminalHeadingHigh { a } => format!("terminal_heading_high[{}]", id(a)),
            Ineq::TerminalHeadingLow { a } => format!("terminal_heading_low[{}]", id(a)),
            Ineq::GapMin { a, j } => format!("gap_min[{}@{}]", id(a), k(a, j)),
            Ineq::GapMax { a, j } => format!("gap_max[{}@{}]", id(a), k(a, j)),
            Ineq::Conflict { a, b, k } => format!("conflict[{}-{}@{}]", id(a), id(b), k),
            Ineq::Operation { a, j } => format!("operation[{}@{}]", id(a), k(a, j)),
        }
    }

    fn equality_label(&self, m: usize) -> String {
        match self.eqs[m] {
            Eq::TerminalX { a } => format!("terminal_x[{}]", self.blocks[a].id),
            Eq::TerminalY { a } => format!("terminal_y[{}]", self.blocks[a].id),
        }
    }
}

/// Controls that follow a reference polyline from `initial`.
///
/// Segment speeds and headings come from inverse dynamics on the polyline
/// (with `disturbances` removed when given). The first segment is fixed by
/// the initial state, so the first control steers towards the second
/// segment; the last control aims at the terminal speed and heading. Every
/// control is clipped into its box.
pub fn reference_controls(
    initial: &AircraftState,
    reference: &[Point],
    v_ter: f64,
    theta_ter: f64,
    disturbances: Option<&[model::Disturbance]>,
    limits: &Limits,
) -> Vec<ControlInput> {
    let n = reference.len().saturating_sub(1);
    let segs = segment_kinematics(reference, disturbances, initial.theta);
    let mut speeds: Vec<f64> = segs.iter().map(|s| s.0).collect();
    let mut headings: Vec<f64> = segs.iter().map(|s| s.1).collect();
    if n > 0 {
        speeds[0] = initial.v;
        headings[0] = initial.theta;
    }
    speeds.push(v_ter);
    headings.push(theta_ter);
    (0..n)
        .map(|j| {
            let u = speeds[j + 1] - speeds[j];
            // Differences between unwrapped headings already lie in (−π, π]
            // except at the terminal target, which is on its nearest branch.
            let psi = headings[j + 1] - headings[j];
            ControlInput::new(
                u.clamp(-limits.u_max, limits.u_max),
                psi.clamp(-limits.psi_max, limits.psi_max),
            )
        })
        .collect()
}

/// Corridor, controls and center states of one aircraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftPlan {
    pub corridor: Corridor,
    pub controls: Vec<ControlInput>,
    pub states: Trajectory,
}

/// Smallest margin of each constraint family; `>= 0` means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub speed: f64,
    pub terminal_speed: f64,
    pub terminal_heading: f64,
    /// Largest distance between a final center and its terminal position.
    pub terminal_position_error: f64,
    pub feasibility: f64,
    pub conflict: Option<f64>,
    /// Aircraft pair and timestep of the smallest conflict margin.
    pub conflict_at: Option<(AircraftId, AircraftId, usize)>,
    pub operation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtcSolution {
    pub plans: Vec<AircraftPlan>,
    pub objective: f64,
    pub j1: f64,
    pub j2: f64,
    pub result: SolveResult,
    pub residuals: ResidualSummary,
}

impl AtcSolution {
    pub fn corridors(&self) -> Vec<Corridor> {
        self.plans.iter().map(|p| p.corridor.clone()).collect()
    }

    pub fn corridor(&self, id: AircraftId) -> Option<&Corridor> {
        self.plans.iter().find(|p| p.corridor.aircraft_id == id).map(|p| &p.corridor)
    }

    pub fn converged(&self) -> bool {
        self.result.status.is_converged()
    }
}

/// Re-evaluates every constraint family on decoded plans with exact norms.
pub fn residuals(
    plans: &[AircraftPlan],
    limits: &Limits,
    terminal: &[(AircraftState, f64)],
    previous: Option<&[Trajectory]>,
) -> ResidualSummary {
    let mut speed = f64::INFINITY;
    let mut terminal_speed = f64::INFINITY;
    let mut terminal_heading = f64::INFINITY;
    let mut terminal_position_error = 0.0_f64;
    let mut feasibility = f64::INFINITY;
    let mut operation: Option<f64> = None;
    for (p, (term, theta_ter)) in plans.iter().zip(terminal) {
        for s in &p.states.states[1..] {
            speed = speed.min(s.v - limits.v_min).min(limits.v_max - s.v);
        }
        let last = p.states.states.last().expect("non-empty");
        let v_ter = limits.v_ter.unwrap_or(term.v);
        terminal_speed = terminal_speed.min(limits.delta_v - (last.v - v_ter).abs());
        terminal_heading = terminal_heading.min(limits.delta_theta - (last.theta - theta_ter).abs());
        terminal_position_error = terminal_position_error.max(model::distance(last.position(), term.position()));
        for (lo, hi) in model::feasibility_margins(&p.corridor) {
            feasibility = feasibility.min(lo - limits.v_min).min(limits.v_max - hi);
        }
        if let Some(sel) = previous.and_then(|s| s.iter().find(|s| s.aircraft_id == p.corridor.aircraft_id)) {
            for k in p.corridor.interior() {
                let (c, r) = p.corridor.disk_at(k).expect("interior");
                if let Some(q) = sel.position_at(k) {
                    let m = model::containment_margin(c, r, q);
                    operation = Some(operation.map_or(m, |o: f64| o.min(m)));
                }
            }
        }
    }
    let (conflict, conflict_at) = match min_conflict_margin(
        &plans.iter().map(|p| p.corridor.clone()).collect::<Vec<_>>(),
        limits.safety_margin,
    ) {
        Some((m, at)) => (Some(m), Some(at)),
        None => (None, None),
    };
    ResidualSummary {
        speed,
        terminal_speed,
        terminal_heading,
        terminal_position_error,
        feasibility,
        conflict,
        conflict_at,
        operation,
    }
}

/// Smallest `conflict_margin − D` over every pair and shared interior step.
pub fn min_conflict_margin(
    corridors: &[Corridor],
    safety_margin: f64,
) -> Option<(f64, (AircraftId, AircraftId, usize))> {
    let mut best: Option<(f64, (AircraftId, AircraftId, usize))> = None;
    for (i, a) in corridors.iter().enumerate() {
        for b in &corridors[i + 1..] {
            let lo = a.interior().start.max(b.interior().start);
            let hi = a.interior().end.min(b.interior().end);
            for k in lo..hi {
                let (ca, ra) = a.disk_at(k).expect("interior");
                let (cb, rb) = b.disk_at(k).expect("interior");
                let m = model::conflict_margin(ca, cb, ra, rb) - safety_margin;
                if best.is_none_or(|(bm, _)| m < bm) {
                    best = Some((m, (a.aircraft_id, b.aircraft_id, k)));
                }
            }
        }
    }
    best
}

/// Designs corridors for every aircraft of `scenario` (first planning).
pub fn design_sets(scenario: &Scenario, config: &SolverConfig) -> Result<AtcSolution> {
    let problem = AtcProblem::new(scenario, None)?;
    solve_problem(scenario, &problem, None, config)
}

/// Designs corridors `tau` steps after the scenario's earliest start,
/// constrained to contain `prev_selections`.
pub fn redesign_sets(
    scenario: &Scenario,
    prev_selections: &[Trajectory],
    tau: usize,
    config: &SolverConfig,
) -> Result<AtcSolution> {
    if tau == 0 {
        return Err(Error::invalid("re-plan offset must be positive"));
    }
    let plan_time = scenario.earliest_start() + tau;
    let (advanced, tails) = advance_scenario(scenario, prev_selections, plan_time)?;
    let problem = AtcProblem::new(&advanced, Some(&tails))?;
    solve_problem(&advanced, &problem, Some(&tails), config)
}

/// Solves an already-built problem whose aircraft match `scenario`.
pub fn solve_problem(
    scenario: &Scenario,
    problem: &AtcProblem,
    previous: Option<&[Trajectory]>,
    config: &SolverConfig,
) -> Result<AtcSolution> {
    config.validate()?;
    let x0 = problem.initial_guess();
    let result = nlp::solve(problem, &x0, config);
    let plans = problem.decode(&result.x_opt);
    let (c1, c2) = problem.cost_terms(&result.x_opt);
    let terminal: Vec<(AircraftState, f64)> = scenario
        .aircraft
        .iter()
        .zip(problem.terminal_headings())
        .map(|(r, th)| (r.terminal, th))
        .collect();
    let residuals = residuals(&plans, &scenario.limits, &terminal, previous);
    Ok(AtcSolution {
        plans,
        objective: c1 + scenario.limits.alpha * c2,
        j1: c1,
        j2: c2,
        result,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Disturbance;

    pub(crate) fn straight_record(id: AircraftId, t0: usize, steps: usize, y: f64, v: f64) -> AircraftRecord {
        let initial = AircraftState::new(0.0, y, v, 0.0);
        let states: Vec<AircraftState> = (0..=steps)
            .map(|j| AircraftState::new(j as f64 * v, y, v, 0.0))
            .collect();
        AircraftRecord {
            id,
            t_start: t0,
            t_end: t0 + steps,
            initial,
            terminal: *states.last().unwrap(),
            standard: Trajectory {
                aircraft_id: id,
                t_start: t0,
                states,
            },
            disturbances: vec![Disturbance::ZERO; steps],
        }
    }

    fn scenario(aircraft: Vec<AircraftRecord>) -> Scenario {
        Scenario {
            aircraft,
            limits: Limits {
                v_min: 10.0,
                v_max: 40.0,
                ..Limits::default()
            },
            timestep_seconds: 360.0,
        }
    }

    #[test]
    fn j1_examples() {
        assert_eq!(j1(&[0.0], 1.0), 0.0);
        assert!((j1(&[std::f64::consts::E - 1.0], 1.0) + 1.0).abs() < 1e-15);
        assert!((j1(&[1.0, 1.0], 1.0) + 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn j2_examples() {
        let s = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert_eq!(j2(&s, &s).unwrap(), 0.0);
        let c = [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        assert_eq!(j2(&c, &s).unwrap(), 3.0);
        let s2 = [[0.0, 0.0], [0.0, 0.0]];
        let c2 = [[0.0, 0.0], [1.0, 0.0]];
        assert_eq!(j2(&c2, &s2).unwrap(), 2.0);
        assert!(j2(&c2, &s).is_err());
    }

    #[test]
    fn constraint_count_single_aircraft_horizon_three() {
        let sc = scenario(vec![straight_record(1, 0, 3, 0.0, 20.0)]);
        let p = build_problem(&sc, None, None).unwrap();
        let c = p.counts();
        // 3 steps: 6 controls with two box sides each, 2 interior radii.
        assert_eq!(c.control_bounds, 12);
        assert_eq!(c.radius_bounds, 2);
        // Speed at the 3 reconstructed states, both sides.
        assert_eq!(c.speed, 6);
        assert_eq!(c.terminal, 4);
        // Min and max gap for each of the 3 adjacent pairs.
        assert_eq!(c.feasibility, 6);
        assert_eq!(c.conflict, 0);
        assert_eq!(c.operation, 0);
        assert_eq!(c.terminal_position, 2);
        assert_eq!(c.total(), 32);
        assert_eq!(p.dimension(), 8);
        assert_eq!(p.num_inequalities(), 16);
        assert_eq!(p.num_equalities(), 2);
    }

    #[test]
    fn disjoint_spans_have_no_conflicts() {
        let sc = scenario(vec![
            straight_record(1, 0, 4, 0.0, 20.0),
            straight_record(2, 5, 4, 0.0, 20.0),
        ]);
        assert_eq!(build_problem(&sc, None, None).unwrap().counts().conflict, 0);
    }

    #[test]
    fn overlapping_spans_count_shared_interior_steps() {
        // Interiors {1,2,3} and {3,4,5}: one shared step.
        let sc = scenario(vec![
            straight_record(1, 0, 4, 0.0, 20.0),
            straight_record(2, 2, 4, 50.0, 20.0),
        ]);
        assert_eq!(build_problem(&sc, None, None).unwrap().counts().conflict, 1);
    }

    #[test]
    fn replan_argument_errors() {
        let sc = scenario(vec![straight_record(1, 0, 6, 0.0, 20.0)]);
        assert!(matches!(build_problem(&sc, None, Some(2)), Err(Error::InvalidInput(_))));
        let sel = vec![sc.aircraft[0].standard.clone()];
        assert!(build_problem(&sc, Some(&sel), Some(0)).is_err());
        let short = vec![Trajectory {
            states: sel[0].states[..4].to_vec(),
            ..sel[0].clone()
        }];
        assert!(matches!(build_problem(&sc, Some(&short), Some(2)), Err(Error::InvalidInput(_))));
        let p = build_problem(&sc, Some(&sel), Some(2)).unwrap();
        // Advanced to t = 2: four steps left, three interior disks to contain.
        assert_eq!(p.counts().operation, 3);
    }

    #[test]
    fn straight_reference_gives_zero_controls() {
        let sc = scenario(vec![straight_record(1, 0, 5, 0.0, 20.0)]);
        let p = build_problem(&sc, None, None).unwrap();
        let x = p.initial_guess();
        assert!(x.iter().all(|v| *v == 0.0), "{x:?}");
    }

    #[test]
    fn guess_reproduces_consistent_reference() {
        let x0 = AircraftState::new(1.0, 2.0, 20.0, 0.2);
        let controls = [
            ControlInput::new(2.0, 0.1),
            ControlInput::new(-1.0, 0.3),
            ControlInput::new(0.5, -0.2),
            ControlInput::new(0.0, 0.0),
        ];
        let states = model::rollout(&x0, &controls, None).unwrap();
        let mut rec = straight_record(1, 0, 4, 0.0, 20.0);
        rec.initial = x0;
        rec.terminal = *states.last().unwrap();
        rec.standard = Trajectory {
            aircraft_id: 1,
            t_start: 0,
            states: states.clone(),
        };
        let sc = scenario(vec![rec]);
        let p = build_problem(&sc, None, None).unwrap();
        let plan = &p.decode(&p.initial_guess())[0];
        for (a, b) in plan.states.states.iter().zip(&states) {
            assert!(model::distance(a.position(), b.position()) < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut a = straight_record(1, 0, 6, 0.0, 20.0);
        let b = straight_record(2, 1, 6, 8.0, 22.0);
        a.standard.states[3].y += 4.0;
        let sc = scenario(vec![a, b]);
        let sel: Vec<Trajectory> = sc.aircraft.iter().map(|r| r.standard.clone()).collect();
        for p in [
            build_problem(&sc, None, None).unwrap(),
            build_problem(&sc, Some(&sel), Some(2)).unwrap(),
        ] {
            let mut x = p.initial_guess();
            for (i, v) in x.iter_mut().enumerate() {
                *v += 0.01 * ((i * 7 % 5) as f64 - 2.0);
            }
            let (lo, _) = p.bounds();
            for (v, l) in x.iter_mut().zip(lo) {
                if l == 0.0 {
                    *v = v.abs() + 1.5;
                }
            }
            let report = nlp::check_gradient(&p, &x, 1e-6, 1e-6);
            assert!(report.passed(), "{:?}", report.worst());
        }
    }

    #[test]
    fn epsilon_lowers_objective() {
        let sc = scenario(vec![straight_record(1, 0, 5, 0.0, 20.0)]);
        let p = build_problem(&sc, None, None).unwrap();
        let mut x = p.initial_guess();
        let n = x.len();
        x[n - 1] = 2.0;
        let mut prev = f64::INFINITY;
        for eps in [0.01, 0.1, 1.0, 10.0] {
            let mut sc2 = sc.clone();
            sc2.limits.eps = eps;
            let v = build_problem(&sc2, None, None).unwrap().objective(&x);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn alpha_zero_is_j1_and_zero_radii_at_standard_is_zero() {
        let mut sc = scenario(vec![straight_record(1, 0, 5, 0.0, 20.0)]);
        sc.limits.eps = 1.0;
        let p = build_problem(&sc, None, None).unwrap();
        let x = p.initial_guess();
        assert_eq!(p.objective(&x), 0.0);
        sc.limits.alpha = 0.0;
        let p = build_problem(&sc, None, None).unwrap();
        let mut x = p.initial_guess();
        let n = x.len();
        x[n - 2] = 1.0;
        x[0] = 0.5;
        let (c1, _) = p.cost_terms(&x);
        assert_eq!(p.objective(&x), c1);
    }

    #[test]
    fn single_aircraft_opens_every_radius() {
        let sc = scenario(vec![straight_record(1, 0, 6, 0.0, 25.0)]);
        let sol = design_sets(&sc, &SolverConfig::default()).unwrap();
        assert!(sol.converged(), "{:?}", sol.result.trace.last());
        let c = &sol.plans[0].corridor;
        assert!(c.radii[1..c.len() - 1].iter().all(|r| *r > 0.0), "{:?}", c.radii);
        assert!(sol.residuals.feasibility >= -1e-6);
    }

    #[test]
    fn head_on_pair_stays_separated() {
        let steps = 8;
        let v = 20.0;
        let a = straight_record(1, 0, steps, 0.0, v);
        let mut b = straight_record(2, 0, steps, 0.0, v);
        let len = steps as f64 * v;
        b.initial = AircraftState::new(len, 0.3, v, std::f64::consts::PI);
        b.terminal = AircraftState::new(0.0, 0.3, v, std::f64::consts::PI);
        b.standard.states = (0..=steps)
            .map(|j| AircraftState::new(len - j as f64 * v, 0.3, v, std::f64::consts::PI))
            .collect();
        let sc = scenario(vec![a, b]);
        let sol = design_sets(&sc, &SolverConfig::default()).unwrap();
        assert!(sol.converged(), "{:?}", sol.result.trace.last());
        let m = sol.residuals.conflict.unwrap();
        assert!(m >= -1e-6, "conflict margin {m}");
    }
}
