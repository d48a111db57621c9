//! Planning cycles, re-planning and the post-hoc safety audit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atc::{self, AtcProblem, AtcSolution};
use crate::error::{Error, Result};
use crate::model::{self, AircraftId, AircraftRecord, ControlInput, Corridor, Scenario, Trajectory};
use crate::nlp::{self, GradientCheckReport, NlpProblem, SolverConfig};
use crate::pilot::{self, PilotSolution};

/// Version tag written into run records.
pub const RUN_FORMAT: &str = "skyset-run/1";

/// Outcome of one pilot's selection within a cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotOutcome {
    pub aircraft_id: AircraftId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<PilotSolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One ATC design and the pilot selections made inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCycle {
    pub plan_time: usize,
    /// Steps since the previous cycle; absent for the first planning.
    pub tau: Option<usize>,
    /// Aircraft as planned in this cycle (start and initial state advanced).
    pub aircraft: Vec<AircraftRecord>,
    pub atc: AtcSolution,
    /// Selections every redesigned interior disk had to contain.
    pub previous: Option<Vec<Trajectory>>,
    /// Empty when pilots were not asked to re-select.
    pub pilots: Vec<PilotOutcome>,
}

impl PlanCycle {
    pub fn corridors(&self) -> Vec<Corridor> {
        self.atc.corridors()
    }

    pub fn selections(&self) -> Vec<&Trajectory> {
        self.pilots
            .iter()
            .filter_map(|p| p.solution.as_ref().map(|s| &s.trajectory))
            .collect()
    }
}

/// A scenario together with every planning cycle run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub format: String,
    pub scenario: Scenario,
    pub solver: SolverConfig,
    pub history: Vec<PlanCycle>,
    /// Latest pilot selection of every aircraft, ordered by id.
    pub selections: Vec<Trajectory>,
}

impl Session {
    pub fn new(scenario: Scenario, solver: SolverConfig) -> Result<Self> {
        scenario.validate()?;
        solver.validate()?;
        Ok(Self {
            format: RUN_FORMAT.to_string(),
            scenario,
            solver,
            history: Vec::new(),
            selections: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Session = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(format!("run.{path}"), e.into_inner().to_string())
        })?;
        if s.format != RUN_FORMAT {
            return Err(Error::validation("run.format", format!("unsupported format {:?}", s.format)));
        }
        Ok(s)
    }

    pub fn last_cycle(&self) -> Option<&PlanCycle> {
        self.history.last()
    }

    /// First planning: ATC designs corridors for every aircraft, then each
    /// pilot selects a trajectory inside its own corridor.
    pub fn plan_cycle(&mut self) -> Result<&PlanCycle> {
        if !self.history.is_empty() {
            return Err(Error::invalid("session already planned; use replan"));
        }
        let problem = AtcProblem::new(&self.scenario, None)?;
        let sol = atc::solve_problem(&self.scenario, &problem, None, &self.solver)?;
        check_converged(&sol)?;
        let pilots = run_pilots(&self.scenario, &self.scenario.aircraft, &sol, &self.solver, |_| None);
        self.push_cycle(PlanCycle {
            plan_time: self.scenario.earliest_start(),
            tau: None,
            aircraft: self.scenario.aircraft.clone(),
            atc: sol,
            previous: None,
            pilots,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Re-plans `tau` steps after the previous cycle. Every aircraft still
    /// flying starts from its selected state at the new time and its new
    /// corridor must contain the rest of its current selection. Pilots
    /// re-select only when `rerun_pilots` is set.
    pub fn replan(&mut self, tau: usize, rerun_pilots: bool) -> Result<&PlanCycle> {
        let last = self
            .history
            .last()
            .ok_or_else(|| Error::invalid("nothing to re-plan; run plan_cycle first"))?;
        if tau == 0 {
            return Err(Error::invalid("re-plan offset must be positive"));
        }
        let plan_time = last.plan_time + tau;
        let (advanced, tails) = atc::advance_scenario(&self.scenario, &self.selections, plan_time)?;
        let problem = AtcProblem::new(&advanced, Some(&tails))?;
        let sol = atc::solve_problem(&advanced, &problem, Some(&tails), &self.solver)?;
        check_converged(&sol)?;
        let pilots = if rerun_pilots {
            let history = &self.history;
            run_pilots(&advanced, &advanced.aircraft, &sol, &self.solver, |rec| {
                previous_controls(history, rec.id, rec.t_start)
            })
        } else {
            Vec::new()
        };
        self.push_cycle(PlanCycle {
            plan_time,
            tau: Some(tau),
            aircraft: advanced.aircraft,
            atc: sol,
            previous: Some(tails),
            pilots,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    fn push_cycle(&mut self, cycle: PlanCycle) {
        for sel in cycle.selections() {
            match self.selections.iter_mut().find(|s| s.aircraft_id == sel.aircraft_id) {
                Some(s) => *s = sel.clone(),
                None => self.selections.push(sel.clone()),
            }
        }
        self.selections.sort_by_key(|s| s.aircraft_id);
        self.history.push(cycle);
    }

    /// Audits every cycle of the session.
    pub fn verify(&self) -> SafetyReport {
        verify(self)
    }
}

fn check_converged(sol: &AtcSolution) -> Result<()> {
    if sol.converged() {
        return Ok(());
    }
    let r = &sol.residuals;
    Err(Error::AtcFailed(format!(
        "solver stopped with status {} (violation {:.3e}, stationarity {:.3e}); \
         smallest margins: speed {:.3e}, feasibility {:.3e}, conflict {}",
        sol.result.status,
        sol.result.max_constraint_violation,
        sol.result.stationarity,
        r.speed,
        r.feasibility,
        r.conflict.map_or("none".to_string(), |c| format!("{c:.3e}")),
    )))
}

/// Controls of the most recent selection of `id`, from time `from` on.
fn previous_controls(history: &[PlanCycle], id: AircraftId, from: usize) -> Option<Vec<ControlInput>> {
    history.iter().rev().find_map(|c| {
        let s = c.pilots.iter().find(|p| p.aircraft_id == id)?.solution.as_ref()?;
        let skip = from.checked_sub(s.trajectory.t_start)?;
        (skip < s.controls.len()).then(|| s.controls[skip..].to_vec())
    })
}

fn run_pilots(
    scenario: &Scenario,
    records: &[AircraftRecord],
    sol: &AtcSolution,
    config: &SolverConfig,
    warm: impl Fn(&AircraftRecord) -> Option<Vec<ControlInput>> + Sync,
) -> Vec<PilotOutcome> {
    let mut out: Vec<PilotOutcome> = records
        .par_iter()
        .map(|rec| {
            let result = sol
                .corridor(rec.id)
                .ok_or_else(|| Error::invalid(format!("no corridor for aircraft {}", rec.id)))
                .and_then(|cor| {
                    let w = warm(rec);
                    pilot::select_trajectory_from(
                        cor,
                        rec,
                        &scenario.limits,
                        &rec.disturbances,
                        config,
                        w.as_deref(),
                    )
                });
            match result {
                Ok(s) => PilotOutcome {
                    aircraft_id: rec.id,
                    solution: Some(s),
                    error: None,
                },
                Err(e) => PilotOutcome {
                    aircraft_id: rec.id,
                    solution: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    out.sort_by_key(|p| p.aircraft_id);
    out
}

/// Smallest value of a pairwise quantity and where it occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMinimum {
    pub a: AircraftId,
    pub b: AircraftId,
    pub value: f64,
    pub at: usize,
}

/// Smallest value of a per-aircraft quantity and where it occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftMinimum {
    pub aircraft_id: AircraftId,
    pub value: f64,
    pub at: usize,
}

/// Adjacent-disk margins: `min(gap_min − v_min)` and `min(v_max − gap_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityMargins {
    pub aircraft_id: AircraftId,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleAudit {
    pub plan_time: usize,
    /// `‖c_i − c_j‖ − r_i − r_j` per pair over shared interior steps.
    pub corridor_separation: Vec<PairMinimum>,
    /// `‖p_i − p_j‖` between selected trajectories over shared interior steps.
    pub pilot_separation: Vec<PairMinimum>,
    /// `r − ‖p − c‖` of each selection in its own corridor.
    pub containment: Vec<AircraftMinimum>,
    /// `r − ‖p_prev − c‖` of the previous selection in the redesigned corridor.
    pub operation: Vec<AircraftMinimum>,
    pub feasibility: Vec<FeasibilityMargins>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub constraint_tol: f64,
    pub safety_margin: f64,
    pub cycles: Vec<CycleAudit>,
    pub failures: Vec<String>,
    pub passed: bool,
}

fn pair_minima(
    items: &[(AircraftId, usize, usize)],
    value: impl Fn(usize, usize, usize) -> f64,
) -> Vec<PairMinimum> {
    let mut out = Vec::new();
    for (i, &(a, _, _)) in items.iter().enumerate() {
        for (j, &(b, _, _)) in items.iter().enumerate().skip(i + 1) {
            let lo = items[i].1.max(items[j].1);
            let hi = items[i].2.min(items[j].2);
            let mut best: Option<PairMinimum> = None;
            for k in lo..hi {
                let v = value(i, j, k);
                if best.as_ref().is_none_or(|m| v < m.value || v.is_nan()) {
                    best = Some(PairMinimum { a, b, value: v, at: k });
                }
            }
            out.extend(best);
        }
    }
    out
}

/// Recomputes every safety-relevant margin of `corridors` and `selections`
/// with exact norms. `previous`, when given, must be contained in the
/// corridors at every interior step.
pub fn audit_cycle(
    plan_time: usize,
    corridors: &[Corridor],
    selections: &[&Trajectory],
    previous: Option<&[Trajectory]>,
    limits: &model::Limits,
) -> CycleAudit {
    let spans: Vec<(AircraftId, usize, usize)> = corridors
        .iter()
        .map(|c| (c.aircraft_id, c.interior().start, c.interior().end))
        .collect();
    let corridor_separation = pair_minima(&spans, |i, j, k| {
        let (ci, ri) = corridors[i].disk_at(k).expect("interior");
        let (cj, rj) = corridors[j].disk_at(k).expect("interior");
        model::conflict_margin(ci, cj, ri, rj)
    });

    // Pilot separation over steps where both selections and corridors are interior.
    let sel_spans: Vec<(AircraftId, usize, usize)> = selections
        .iter()
        .map(|s| {
            let c = corridors.iter().find(|c| c.aircraft_id == s.aircraft_id);
            let (lo, hi) = c.map_or((s.t_start + 1, s.t_end()), |c| (c.interior().start, c.interior().end));
            (s.aircraft_id, lo.max(s.t_start), hi.min(s.t_end() + 1))
        })
        .collect();
    let pilot_separation = pair_minima(&sel_spans, |i, j, k| {
        model::distance(
            selections[i].position_at(k).expect("span"),
            selections[j].position_at(k).expect("span"),
        )
    });

    let contained = |traj: &Trajectory| -> Option<AircraftMinimum> {
        let c = corridors.iter().find(|c| c.aircraft_id == traj.aircraft_id)?;
        c.interior()
            .filter_map(|k| {
                let (ctr, r) = c.disk_at(k)?;
                let p = traj.position_at(k)?;
                Some(AircraftMinimum {
                    aircraft_id: traj.aircraft_id,
                    value: model::containment_margin(ctr, r, p),
                    at: k,
                })
            })
            .reduce(|a, b| if b.value < a.value || b.value.is_nan() { b } else { a })
    };
    let containment = selections.iter().filter_map(|s| contained(s)).collect();
    let operation = previous
        .map(|prev| prev.iter().filter_map(contained).collect())
        .unwrap_or_default();

    let feasibility = corridors
        .iter()
        .map(|c| {
            let m = model::feasibility_margins(c);
            FeasibilityMargins {
                aircraft_id: c.aircraft_id,
                lower: m.iter().map(|(lo, _)| lo - limits.v_min).fold(f64::INFINITY, f64::min),
                upper: m.iter().map(|(_, hi)| limits.v_max - hi).fold(f64::INFINITY, f64::min),
            }
        })
        .collect();

    CycleAudit {
        plan_time,
        corridor_separation,
        pilot_separation,
        containment,
        operation,
        feasibility,
    }
}

/// Independent audit of a session from its recorded corridors and
/// trajectories only.
pub fn verify(session: &Session) -> SafetyReport {
    let tol = session.solver.constraint_tol;
    let d = session.scenario.limits.safety_margin;
    let mut failures = Vec::new();
    let mut cycles = Vec::new();
    if session.history.is_empty() {
        failures.push("run has no planning cycles".to_string());
    }
    for (n, cycle) in session.history.iter().enumerate() {
        let corridors = cycle.corridors();
        for c in &corridors {
            if let Err(e) = c.validate() {
                failures.push(format!("cycle {n}: corridor {}: {e}", c.aircraft_id));
            }
            if c.radii.iter().any(|r| *r < 0.0 || !r.is_finite()) {
                failures.push(format!("cycle {n}: corridor {} has a negative radius", c.aircraft_id));
            }
        }
        for p in &cycle.pilots {
            if let Some(e) = &p.error {
                failures.push(format!("cycle {n}: aircraft {} has no selection: {e}", p.aircraft_id));
            }
        }
        let selections = cycle.selections();
        let a = audit_cycle(
            cycle.plan_time,
            &corridors,
            &selections,
            cycle.previous.as_deref(),
            &session.scenario.limits,
        );
        let ok = |v: f64, bound: f64| v >= bound && !v.is_nan();
        for m in &a.corridor_separation {
            if !ok(m.value, d - tol) {
                failures.push(format!(
                    "cycle {n}: corridors of aircraft {} and {} conflict at k={}: clearance {:.6} < D={d}",
                    m.a, m.b, m.at, m.value
                ));
            }
        }
        for m in &a.pilot_separation {
            if !ok(m.value, d - 2.0 * tol) {
                failures.push(format!(
                    "cycle {n}: selections of aircraft {} and {} are {:.6} apart at k={} (< D={d})",
                    m.a, m.b, m.value, m.at
                ));
            }
        }
        for m in &a.containment {
            if !ok(m.value, -tol) {
                failures.push(format!(
                    "cycle {n}: selection of aircraft {} leaves its corridor at k={} by {:.3e}",
                    m.aircraft_id, m.at, -m.value
                ));
            }
        }
        for m in &a.operation {
            if !ok(m.value, -tol) {
                failures.push(format!(
                    "cycle {n}: redesigned corridor of aircraft {} drops the previous selection at k={} by {:.3e}",
                    m.aircraft_id, m.at, -m.value
                ));
            }
        }
        for f in &a.feasibility {
            if !ok(f.lower, -tol) || !ok(f.upper, -tol) {
                failures.push(format!(
                    "cycle {n}: corridor of aircraft {} breaks the speed window (margins {:.3e}, {:.3e})",
                    f.aircraft_id, f.lower, f.upper
                ));
            }
        }
        cycles.push(a);
    }
    SafetyReport {
        constraint_tol: tol,
        safety_margin: d,
        passed: failures.is_empty(),
        cycles,
        failures,
    }
}

/// One gradient check of one problem at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckCase {
    /// `atc`, `atc-replan` or `pilot[<id>]`.
    pub problem: String,
    /// 0 is the initial guess, then the random perturbations.
    pub point: usize,
    pub report: GradientCheckReport,
}

fn perturbed_points<P: NlpProblem>(p: &P, x0: Vec<f64>, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (lo, hi) = p.bounds();
    let scale = p.variable_scale().unwrap_or_else(|| vec![1.0; x0.len()]);
    let mut out = vec![x0.clone()];
    for _ in 0..count {
        let x = x0
            .iter()
            .enumerate()
            .map(|(i, v)| (v + 0.1 * scale[i] * rng.gen_range(-1.0..1.0)).clamp(lo[i], hi[i]))
            .collect();
        out.push(x);
    }
    out
}

/// Checks the analytic gradients of the corridor design problem and of each
/// pilot problem at their initial guesses and `perturbations` random points
/// around them. Pilot problems use the corridors decoded from the ATC
/// initial guess with unit interior radii.
pub fn gradient_suite(
    scenario: &Scenario,
    config: &SolverConfig,
    perturbations: usize,
    tol: f64,
) -> Result<Vec<GradcheckCase>> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let h = config.finite_diff_step;
    let mut out = Vec::new();
    let atc = AtcProblem::new(scenario, None)?;
    let guess = atc.initial_guess();
    for (point, x) in perturbed_points(&atc, guess.clone(), perturbations, &mut rng).iter().enumerate() {
        out.push(GradcheckCase {
            problem: "atc".to_string(),
            point,
            report: nlp::check_gradient(&atc, x, tol, h),
        });
    }
    // Re-plan problem with the standard routes as previous selections, so
    // the operation constraints are covered too.
    let steps = scenario.aircraft.iter().map(|a| a.steps()).min().unwrap_or(0);
    let plan_time = scenario.earliest_start() + (steps / 2).max(1);
    let standards: Vec<Trajectory> = scenario.aircraft.iter().map(|a| a.standard.clone()).collect();
    if let Ok((advanced, tails)) = atc::advance_scenario(scenario, &standards, plan_time) {
        if !advanced.aircraft.is_empty() {
            let replan = AtcProblem::new(&advanced, Some(&tails))?;
            let x0 = replan.initial_guess();
            for (point, x) in perturbed_points(&replan, x0, perturbations, &mut rng).iter().enumerate() {
                out.push(GradcheckCase {
                    problem: "atc-replan".to_string(),
                    point,
                    report: nlp::check_gradient(&replan, x, tol, h),
                });
            }
        }
    }
    for plan in atc.decode(&guess) {
        let mut corridor = plan.corridor;
        for k in corridor.interior() {
            corridor.radii[k - corridor.t_start] = 1.0;
        }
        let rec = scenario
            .record(corridor.aircraft_id)
            .ok_or_else(|| Error::invalid(format!("no record for aircraft {}", corridor.aircraft_id)))?;
        let p = pilot::build_problem(&corridor, rec, &scenario.limits, &rec.disturbances)?;
        for (point, x) in perturbed_points(&p, p.initial_guess(), perturbations, &mut rng).iter().enumerate() {
            out.push(GradcheckCase {
                problem: format!("pilot[{}]", rec.id),
                point,
                report: nlp::check_gradient(&p, x, tol, h),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AircraftState, Disturbance, Limits};
    use crate::synth;

    fn single() -> Scenario {
        let rec = synth::routed_aircraft(
            1,
            0,
            8,
            AircraftState::new(0.0, 0.0, 20.0, 0.0),
            AircraftState::new(150.0, 20.0, 20.0, 0.3),
            &[[80.0, 0.0]],
            Disturbance::new(0.2, 0.1),
        )
        .unwrap();
        Scenario {
            aircraft: vec![rec],
            limits: Limits {
                v_min: 10.0,
                v_max: 40.0,
                ..Limits::default()
            },
            timestep_seconds: 360.0,
        }
    }

    #[test]
    fn empty_scenario_is_rejected() {
        let mut s = single();
        s.aircraft.clear();
        assert!(matches!(Session::new(s, SolverConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn single_aircraft_cycle_and_replan() {
        let mut session = Session::new(single(), SolverConfig::default()).unwrap();
        assert!(session.replan(2, false).is_err());
        let cycle = session.plan_cycle().unwrap();
        let p = cycle.pilots[0].solution.as_ref().unwrap();
        assert!(p.cost <= p.center_tracking_cost);
        assert!(session.plan_cycle().is_err());
        assert!(session.replan(0, false).is_err());
        let first = session.history[0].clone();
        session.replan(3, true).unwrap();
        assert_eq!(session.history[0], first);
        assert_eq!(session.history[1].plan_time, 3);
        let report = session.verify();
        assert!(report.passed, "{:?}", report.failures);
        assert_eq!(report.cycles[1].operation.len(), 1);
        let back = Session::from_json(&session.to_json().unwrap()).unwrap();
        assert_eq!(back, session);
    }

    #[test]
    fn inflated_radius_is_reported_with_pair_and_step() {
        let straight = |id, y: f64| {
            synth::routed_aircraft(
                id,
                0,
                6,
                AircraftState::new(0.0, y, 20.0, 0.0),
                AircraftState::new(120.0, y, 20.0, 0.0),
                &[],
                Disturbance::ZERO,
            )
            .unwrap()
        };
        let mut s = single();
        s.aircraft = vec![straight(1, 0.0), straight(2, 40.0)];
        let mut session = Session::new(s, SolverConfig::default()).unwrap();
        session.plan_cycle().unwrap();
        assert!(session.verify().passed);
        let plan = &mut session.history[0].atc.plans[0];
        plan.corridor.radii[3] += 40.0;
        let report = session.verify();
        assert!(!report.passed);
        assert!(
            report.failures.iter().any(|f| f.contains("aircraft 1 and 2") && f.contains("k=3")),
            "{:?}",
            report.failures
        );
    }
}
