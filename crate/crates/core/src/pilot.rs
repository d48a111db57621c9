//! Trajectory selection: the pilot stage.
//!
//! Each pilot independently picks the cheapest controls (sum of normalized
//! squared inputs) whose wind-affected trajectory stays inside the corridor
//! handed down by ATC. Variables are `[u(t), psi(t), u(t+1), psi(t+1), ...]`;
//! states come from the disturbed rollout.

use serde::{Deserialize, Serialize};

use crate::atc::reference_controls;
use crate::error::{Error, Result};
use crate::model::{
    self, control_gradient, rollout_into, segment_kinematics, smooth_distance,
    smooth_distance_gradient, unwrap_near, AircraftRecord, AircraftState, ControlInput, Corridor,
    Disturbance, Limits, StateWeight, Trajectory,
};
use crate::nlp::{self, NlpProblem, SolveResult, SolverConfig};

/// `Σ (u/U)² + (psi/Psi)²` over every control except the last one.
pub fn j_pilot(controls: &[ControlInput], limits: &Limits) -> f64 {
    let k = controls.len().saturating_sub(1);
    controls[..k]
        .iter()
        .map(|c| (c.u / limits.u_max).powi(2) + (c.psi / limits.psi_max).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ineq {
    SpeedMin(usize),
    SpeedMax(usize),
    TerminalSpeedHigh,
    TerminalSpeedLow,
    TerminalHeadingHigh,
    TerminalHeadingLow,
    Containment(usize),
    TerminalPosition,
}

/// The single-aircraft selection NLP.
#[derive(Debug, Clone)]
pub struct PilotProblem {
    limits: Limits,
    corridor: Corridor,
    initial: AircraftState,
    disturbances: Vec<Disturbance>,
    steps: usize,
    v_ter: f64,
    theta_ter: f64,
    ineqs: Vec<Ineq>,
}

/// Builds the selection problem for `record` inside `corridor` under the
/// given per-step `disturbances`.
pub fn build_problem(
    corridor: &Corridor,
    record: &AircraftRecord,
    limits: &Limits,
    disturbances: &[Disturbance],
) -> Result<PilotProblem> {
    corridor.validate()?;
    let steps = record.steps();
    if corridor.aircraft_id != record.id
        || corridor.t_start != record.t_start
        || corridor.len() != steps + 1
    {
        return Err(Error::invalid(format!(
            "corridor of aircraft {} spans [{}, {}], aircraft {} flies [{}, {}]",
            corridor.aircraft_id,
            corridor.t_start,
            corridor.t_end(),
            record.id,
            record.t_start,
            record.t_end
        )));
    }
    if disturbances.len() != steps {
        return Err(Error::invalid(format!(
            "{} disturbances for {} steps of aircraft {}",
            disturbances.len(),
            steps,
            record.id
        )));
    }
    if disturbances.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite disturbance"));
    }
    let segs = segment_kinematics(&corridor.centers, Some(disturbances), record.initial.theta);
    let ref_heading = if segs.len() > 1 {
        segs[segs.len() - 1].1
    } else {
        record.initial.theta
    };
    let theta_target = limits.theta_ter.unwrap_or(record.terminal.theta);
    let mut ineqs = Vec::new();
    for j in 1..=steps {
        ineqs.push(Ineq::SpeedMin(j));
        ineqs.push(Ineq::SpeedMax(j));
    }
    ineqs.extend([
        Ineq::TerminalSpeedHigh,
        Ineq::TerminalSpeedLow,
        Ineq::TerminalHeadingHigh,
        Ineq::TerminalHeadingLow,
    ]);
    ineqs.extend((1..steps).map(Ineq::Containment));
    ineqs.push(Ineq::TerminalPosition);
    Ok(PilotProblem {
        limits: limits.clone(),
        corridor: corridor.clone(),
        initial: record.initial,
        disturbances: disturbances.to_vec(),
        steps,
        v_ter: limits.v_ter.unwrap_or(record.terminal.v),
        theta_ter: unwrap_near(theta_target, ref_heading),
        ineqs,
    })
}

impl PilotProblem {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Terminal heading reference on the branch nearest the corridor.
    pub fn terminal_heading(&self) -> f64 {
        self.theta_ter
    }

    fn controls<'x>(&self, x: &'x [f64]) -> impl Iterator<Item = ControlInput> + 'x {
        (0..self.steps).map(move |j| ControlInput::new(x[2 * j], x[2 * j + 1]))
    }

    fn states(&self, x: &[f64]) -> Vec<AircraftState> {
        let mut buf = Vec::with_capacity(self.steps + 1);
        rollout_into(&self.initial, self.controls(x), Some(&self.disturbances), &mut buf);
        buf
    }

    pub fn decode(&self, x: &[f64]) -> (Vec<ControlInput>, Trajectory) {
        (
            self.controls(x).collect(),
            Trajectory {
                aircraft_id: self.corridor.aircraft_id,
                t_start: self.corridor.t_start,
                states: self.states(x),
            },
        )
    }

    pub fn encode(controls: &[ControlInput]) -> Vec<f64> {
        controls.iter().flat_map(|c| [c.u, c.psi]).collect()
    }

    /// Center-tracking warm start: inverse dynamics on the corridor centers
    /// with each segment's disturbance removed, clipped into the control box.
    pub fn initial_guess(&self) -> Vec<f64> {
        Self::encode(&reference_controls(
            &self.initial,
            &self.corridor.centers,
            self.v_ter,
            self.theta_ter,
            Some(&self.disturbances),
            &self.limits,
        ))
    }

    fn ineq_value(&self, c: Ineq, st: &[AircraftState]) -> f64 {
        let l = &self.limits;
        let n = self.steps;
        match c {
            Ineq::SpeedMin(j) => l.v_min - st[j].v,
            Ineq::SpeedMax(j) => st[j].v - l.v_max,
            Ineq::TerminalSpeedHigh => st[n].v - self.v_ter - l.delta_v,
            Ineq::TerminalSpeedLow => self.v_ter - st[n].v - l.delta_v,
            Ineq::TerminalHeadingHigh => st[n].theta - self.theta_ter - l.delta_theta,
            Ineq::TerminalHeadingLow => self.theta_ter - st[n].theta - l.delta_theta,
            Ineq::Containment(j) => {
                smooth_distance(st[j].position(), self.corridor.centers[j]) - self.corridor.radii[j]
            }
            Ineq::TerminalPosition => {
                smooth_distance(st[n].position(), self.corridor.centers[n]) - l.tol_terminal
            }
        }
    }

    /// Largest violation of any constraint (control box included) at `x`
    /// using exact norms; `+inf` if the rollout is not finite.
    pub fn exact_violation(&self, x: &[f64]) -> f64 {
        let st = self.states(x);
        let l = &self.limits;
        let mut v = 0.0_f64;
        for c in self.controls(x) {
            v = v.max(c.u.abs() - l.u_max).max(c.psi.abs() - l.psi_max);
        }
        for c in &self.ineqs {
            let g = match *c {
                Ineq::Containment(j) => {
                    -model::containment_margin(self.corridor.centers[j], self.corridor.radii[j], st[j].position())
                }
                Ineq::TerminalPosition => {
                    model::distance(st[self.steps].position(), self.corridor.centers[self.steps]) - l.tol_terminal
                }
                other => self.ineq_value(other, &st),
            };
            v = v.max(g);
        }
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

impl NlpProblem for PilotProblem {
    fn dimension(&self) -> usize {
        2 * self.steps
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let hi: Vec<f64> = (0..self.steps)
            .flat_map(|_| [self.limits.u_max, self.limits.psi_max])
            .collect();
        (hi.iter().map(|h| -h).collect(), hi)
    }

    fn variable_scale(&self) -> Option<Vec<f64>> {
        let v = self.initial.v.max(self.limits.v_min).max(1.0);
        Some(
            (0..self.steps)
                .flat_map(|j| {
                    let lever = (self.steps - j) as f64;
                    [1.0 / lever, 1.0 / (v * lever)]
                })
                .collect(),
        )
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let c: Vec<ControlInput> = self.controls(x).collect();
        j_pilot(&c, &self.limits)
    }

    fn objective_gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let (u2, p2) = (self.limits.u_max.powi(2), self.limits.psi_max.powi(2));
        for j in 0..self.steps.saturating_sub(1) {
            grad[2 * j] = 2.0 * x[2 * j] / u2;
            grad[2 * j + 1] = 2.0 * x[2 * j + 1] / p2;
        }
    }

    fn num_inequalities(&self) -> usize {
        self.ineqs.len()
    }

    fn inequalities(&self, x: &[f64], out: &mut [f64]) {
        let st = self.states(x);
        for (o, c) in out.iter_mut().zip(&self.ineqs) {
            *o = self.ineq_value(*c, &st);
        }
    }

    fn inequality_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let st = self.states(x);
        let n = self.steps;
        let dim = 2 * n;
        let mut w = vec![StateWeight::default(); n + 1];
        for (row, c) in jac.chunks_mut(dim).zip(&self.ineqs) {
            w.iter_mut().for_each(|e| *e = StateWeight::default());
            match *c {
                Ineq::SpeedMin(j) => w[j].v = -1.0,
                Ineq::SpeedMax(j) => w[j].v = 1.0,
                Ineq::TerminalSpeedHigh => w[n].v = 1.0,
                Ineq::TerminalSpeedLow => w[n].v = -1.0,
                Ineq::TerminalHeadingHigh => w[n].theta = 1.0,
                Ineq::TerminalHeadingLow => w[n].theta = -1.0,
                Ineq::Containment(j) => {
                    let e = smooth_distance_gradient(st[j].position(), self.corridor.centers[j]);
                    w[j].x = e[0];
                    w[j].y = e[1];
                }
                Ineq::TerminalPosition => {
                    let e = smooth_distance_gradient(st[n].position(), self.corridor.centers[n]);
                    w[n].x = e[0];
                    w[n].y = e[1];
                }
            }
            for (j, g) in control_gradient(&st, &w).iter().enumerate() {
                row[2 * j] = g[0];
                row[2 * j + 1] = g[1];
            }
        }
    }

    fn inequality_label(&self, j: usize) -> String {
        let id = self.corridor.aircraft_id;
        let k = |j: usize| self.corridor.t_start + j;
        match self.ineqs[j] {
            Ineq::SpeedMin(j) => format!("speed_min[{id}@{}]", k(j)),
            Ineq::SpeedMax(j) => format!("speed_max[{id}@{}]", k(j)),
            Ineq::TerminalSpeedHigh => format!("terminal_speed_high[{id}]"),
            Ineq::TerminalSpeedLow => format!("terminal_speed_low[{id}]"),
            Ineq::TerminalHeadingHigh => format!("terminal_heading_high[{id}]"),
            Ineq::TerminalHeadingLow => format!("terminal_heading_low[{id}]"),
            Ineq::Containment(j) => format!("containment[{id}@{}]", k(j)),
            Ineq::TerminalPosition => format!("terminal_position[{id}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSolution {
    /// Selected trajectory, `t_start ..= t_end`.
    pub trajectory: Trajectory,
    pub controls: Vec<ControlInput>,
    pub disturbances: Vec<Disturbance>,
    pub cost: f64,
    /// Cost of the center-tracking warm start.
    pub center_tracking_cost: f64,
    /// True when a warm start was kept because the solver did not improve on it.
    pub used_warm_start: bool,
    pub result: SolveResult,
    /// `radius − ‖point − center‖` at each interior step.
    pub containment_margins: Vec<f64>,
    /// Largest exact constraint violation of the returned controls.
    #[serde(with = "crate::serde_float")]
    pub max_violation: f64,
}

/// Center-tracking warm start for `record` inside `corridor`.
pub fn initial_guess_track_centers(
    corridor: &Corridor,
    record: &AircraftRecord,
    limits: &Limits,
    disturbances: &[Disturbance],
) -> Result<Vec<ControlInput>> {
    let p = build_problem(corridor, record, limits, disturbances)?;
    Ok(p.decode(&p.initial_guess()).0)
}

/// Solves the selection problem from the center-tracking guess. When the
/// guess is feasible and the solver's answer is infeasible or not cheaper by
/// more than the constraint tolerance, the guess is returned instead.
pub fn select_trajectory(
    corridor: &Corridor,
    record: &AircraftRecord,
    limits: &Limits,
    disturbances: &[Disturbance],
    config: &SolverConfig,
) -> Result<PilotSolution> {
    select_trajectory_from(corridor, record, limits, disturbances, config, None)
}

/// As [`select_trajectory`], but when `warm` controls are given the solver
/// starts from them, and they join the center-tracking guess as fallbacks.
pub fn select_trajectory_from(
    corridor: &Corridor,
    record: &AircraftRecord,
    limits: &Limits,
    disturbances: &[Disturbance],
    config: &SolverConfig,
    warm: Option<&[ControlInput]>,
) -> Result<PilotSolution> {
    config.validate()?;
    let problem = build_problem(corridor, record, limits, disturbances)?;
    let guess = problem.initial_guess();
    let guess_cost = problem.objective(&guess);
    let mut candidates = vec![guess];
    if let Some(w) = warm {
        if w.len() != problem.steps() {
            return Err(Error::invalid(format!(
                "{} warm-start controls for {} steps",
                w.len(),
                problem.steps()
            )));
        }
        candidates.push(PilotProblem::encode(w));
    }
    let start = candidates.last().expect("non-empty").clone();
    let result = nlp::solve(&problem, &start, config);

    let tol = config.constraint_tol;
    // Cheapest feasible fallback, earliest on ties.
    let fallback = candidates
        .into_iter()
        .map(|x| (problem.objective(&x), problem.exact_violation(&x), x))
        .filter(|(_, v, _)| *v <= tol)
        .reduce(|best, c| if c.0 < best.0 { c } else { best });
    let solved_violation = problem.exact_violation(&result.x_opt);
    let solved_cost = problem.objective(&result.x_opt);
    // A gain below the constraint tolerance does not justify a point that
    // may sit up to that tolerance outside the corridor.
    let (x, max_violation, used_warm_start) = match fallback {
        Some((c, v, x)) if solved_violation > tol || solved_cost > c - tol => (x, v, true),
        _ => (result.x_opt.clone(), solved_violation, false),
    };
    let (controls, trajectory) = problem.decode(&x);
    let containment_margins = corridor
        .interior()
        .map(|k| {
            let (c, r) = corridor.disk_at(k).expect("interior");
            model::containment_margin(c, r, trajectory.position_at(k).expect("same span"))
        })
        .collect();
    Ok(PilotSolution {
        cost: j_pilot(&controls, limits),
        center_tracking_cost: guess_cost,
        used_warm_start,
        trajectory,
        controls,
        disturbances: disturbances.to_vec(),
        result,
        containment_margins,
        max_violation,
    })
}
