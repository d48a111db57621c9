//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, then exits nonzero if any failed.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyset::model::{
    AircraftRecord, AircraftState, ControlInput, Corridor, Disturbance, Limits, Point, Trajectory,
};
use skyset::nlp::SolverConfig;
use skyset::orchestrator::{self, Session};
use skyset::{io, pilot};

const TOL: f64 = 1e-6;

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/haneda3.json")
}

fn skyset(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_skyset"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn disk(c: &Corridor, k: usize) -> (Point, f64) {
    let j = k - c.t_start;
    (c.centers[j], c.radii[j])
}

fn interior(c: &Corridor) -> std::ops::Range<usize> {
    c.t_start + 1..c.t_start + c.radii.len() - 1
}

fn shared(a: &Corridor, b: &Corridor) -> std::ops::Range<usize> {
    let (ra, rb) = (interior(a), interior(b));
    ra.start.max(rb.start)..ra.end.min(rb.end)
}

/// `J_pilot` written out from its definition: squared normalized inputs
/// over every step but the last.
fn pilot_cost(controls: &[ControlInput], l: &Limits) -> f64 {
    let n = controls.len().saturating_sub(1);
    controls[..n]
        .iter()
        .map(|c| (c.u / l.u_max).powi(2) + (c.psi / l.psi_max).powi(2))
        .sum()
}

fn rollout(x0: AircraftState, controls: &[ControlInput], wind: &[Disturbance]) -> Vec<AircraftState> {
    let mut out = vec![x0];
    for (c, d) in controls.iter().zip(wind) {
        let s = *out.last().unwrap();
        out.push(AircraftState::new(
            s.x + s.v * s.theta.cos() + d.dx,
            s.y + s.v * s.theta.sin() + d.dy,
            s.v + c.u,
            s.theta + c.psi,
        ));
    }
    out
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run_session() -> (Session, f64) {
    let scenario = io::load_scenario(scenario_path()).expect("bundled scenario loads");
    let start = Instant::now();
    let mut s = Session::new(scenario, SolverConfig::default()).expect("valid");
    s.plan_cycle().expect("first planning converges");
    s.replan(4, false).expect("re-plan converges");
    (s, start.elapsed().as_secs_f64())
}

fn c1_sets_are_separated(s: &Session, secs: f64) -> Outcome {
    let d = s.scenario.limits.safety_margin;
    let mut worst = f64::INFINITY;
    for cycle in &s.history {
        let cs = cycle.corridors();
        for (i, a) in cs.iter().enumerate() {
            for b in &cs[i + 1..] {
                for k in shared(a, b) {
                    let ((ca, ra), (cb, rb)) = (disk(a, k), disk(b, k));
                    worst = worst.min(dist(ca, cb) - ra - rb);
                }
            }
        }
    }
    outcome(
        worst >= d - TOL && secs < 60.0,
        format!("min disk clearance {worst:.6} (D = {d}) over {} solves in {secs:.1} s", s.history.len()),
    )
}

fn sample_in_disk(rng: &mut ChaCha8Rng, c: Point, r: f64) -> Point {
    let rho = r * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    [c[0] + rho * phi.cos(), c[1] + rho * phi.sin()]
}

fn c2_points_are_separated(s: &Session) -> Outcome {
    let d = s.scenario.limits.safety_margin;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut checked) = (f64::INFINITY, 0usize);
    for cycle in &s.history {
        let cs = cycle.corridors();
        for (i, a) in cs.iter().enumerate() {
            for b in &cs[i + 1..] {
                for k in shared(a, b) {
                    let ((ca, ra), (cb, rb)) = (disk(a, k), disk(b, k));
                    for _ in 0..1000 {
                        let p = sample_in_disk(&mut rng, ca, ra);
                        let q = sample_in_disk(&mut rng, cb, rb);
                        worst = worst.min(dist(p, q));
                        checked += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst >= d - TOL && checked > 0,
        format!("{checked} sampled pairs, closest {worst:.6} (D = {d})"),
    )
}

fn c3_pilots_improve(s: &Session) -> Outcome {
    let l = &s.scenario.limits;
    let cycle = &s.history[0];
    let (mut total_sel, mut total_ctr) = (0.0, 0.0);
    let mut strict = true;
    let mut parts = Vec::new();
    for (p, rec) in cycle.pilots.iter().zip(&cycle.aircraft) {
        let Some(sol) = &p.solution else {
            return outcome(false, format!("aircraft {} has no selection", p.aircraft_id));
        };
        let corridor = cycle.atc.corridor(rec.id).expect("corridor");
        // The selection must be what its controls fly to, inside the corridor.
        let flown = rollout(rec.initial, &sol.controls, &rec.disturbances);
        let replay = flown.iter().zip(&sol.trajectory.states).all(|(a, b)| dist(a.position(), b.position()) < 1e-9);
        let inside = interior(corridor).all(|k| {
            let (c, r) = disk(corridor, k);
            dist(flown[k - rec.t_start].position(), c) <= r + TOL
        });
        let center =
            pilot::initial_guess_track_centers(corridor, rec, l, &rec.disturbances).expect("center tracking");
        let (sel, ctr) = (pilot_cost(&sol.controls, l), pilot_cost(&center, l));
        strict &= replay && inside && sel < ctr;
        total_sel += sel;
        total_ctr += ctr;
        parts.push(format!("{}: {sel:.3} < {ctr:.3}", rec.id));
    }
    let reduction = 1.0 - total_sel / total_ctr;
    outcome(
        strict && reduction >= 0.05,
        format!("{}; total {total_sel:.3} vs {total_ctr:.3} ({:.1}% lower)", parts.join(", "), 100.0 * reduction),
    )
}

fn c4_replan_contains_selections(dir: &Path) -> Outcome {
    let (run, run2) = (dir.join("c4.json"), dir.join("c4b.json"));
    let scenario = scenario_path();
    let plan = skyset(&["plan", scenario.to_str().unwrap(), "-o", run.to_str().unwrap()]);
    let replan = skyset(&["replan", run.to_str().unwrap(), "--tau", "4", "-o", run2.to_str().unwrap()]);
    if plan != 0 || replan != 0 {
        return outcome(false, format!("plan exited {plan}, replan exited {replan}"));
    }
    let s = Session::from_json(&std::fs::read_to_string(&run2).unwrap()).unwrap();
    let (first, second) = (&s.history[0], &s.history[1]);
    let mut worst = f64::INFINITY;
    let mut steps = 0;
    for sel in first.selections() {
        let corridor = second.atc.corridor(sel.aircraft_id).expect("still flying");
        for k in interior(corridor) {
            let (c, r) = disk(corridor, k);
            let p = sel.states[k - sel.t_start].position();
            worst = worst.min(r - dist(p, c));
            steps += 1;
        }
    }
    let verify = skyset(&["verify", run2.to_str().unwrap()]);
    outcome(
        second.plan_time == 5 && worst >= -TOL && steps > 0 && verify == 0,
        format!(
            "re-plan at k={}, {steps} constrained steps, min containment margin {worst:.3e}, verify exit {verify}",
            second.plan_time
        ),
    )
}

fn c5_radius_magnitudes(s: &Session) -> Outcome {
    let cycle = &s.history[0];
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cycle.corridors() {
        let r: Vec<f64> = interior(&c).map(|k| disk(&c, k).1).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        ok &= (1.0..=100.0).contains(&mean);
        parts.push(format!("{}: {mean:.2}", c.aircraft_id));
    }
    outcome(ok, format!("mean interior radii {} (reference 13.5 / 21.6 / 15.5)", parts.join(", ")))
}

fn c6_gradients() -> Outcome {
    let scenario = scenario_path();
    let exit = skyset(&["gradcheck", scenario.to_str().unwrap(), "--tol", "1e-4", "--perturbations", "5"]);
    let sc = io::load_scenario(&scenario).unwrap();
    let cases = orchestrator::gradient_suite(&sc, &SolverConfig::default(), 5, 1e-4).unwrap();
    let atc_families = [
        "objective",
        "speed_min",
        "speed_max",
        "terminal_speed_high",
        "terminal_speed_low",
        "terminal_heading_high",
        "terminal_heading_low",
        "gap_min",
        "gap_max",
        "conflict",
        "terminal_x",
        "terminal_y",
    ];
    let pilot_families = [
        "objective",
        "speed_min",
        "speed_max",
        "terminal_speed_high",
        "terminal_speed_low",
        "terminal_heading_high",
        "terminal_heading_low",
        "containment",
        "terminal_position",
    ];
    let covers = |problem: &str, families: &[&str]| {
        let mine: Vec<_> = cases.iter().filter(|c| c.problem.starts_with(problem)).collect();
        !mine.is_empty()
            && families
                .iter()
                .all(|f| mine.iter().any(|c| c.report.worst_in_family(f).is_some()))
    };
    let covered = covers("atc", &atc_families)
        && covers("atc-replan", &["operation"])
        && covers("pilot", &pilot_families);
    let worst = cases
        .iter()
        .filter_map(|c| c.report.worst().map(|w| w.max_rel_error))
        .fold(0.0, f64::max);
    let points = cases.iter().filter(|c| c.problem == "atc").count();
    outcome(
        exit == 0 && covered && points == 6 && cases.iter().all(|c| c.report.passed()),
        format!("{} checks, worst relative error {worst:.2e}, every family covered: {covered}", cases.len()),
    )
}

fn c7_grid_oracle() -> Outcome {
    let start = Instant::now();
    let limits = Limits {
        psi_max: 0.2,
        u_max: 2.0,
        v_min: 5.0,
        v_max: 20.0,
        delta_v: 0.5,
        delta_theta: 0.1,
        tol_terminal: 1.5,
        ..Limits::default()
    };
    let n = 4;
    let wind = vec![Disturbance::new(0.0, 0.3); n];
    let centers: Vec<Point> = vec![[0.0, 0.0], [10.0, 0.0], [20.7, 0.0], [32.0, 0.0], [44.0, 0.0]];
    let corridor = Corridor {
        aircraft_id: 1,
        t_start: 0,
        centers: centers.clone(),
        radii: vec![0.0, 2.0, 2.0, 2.0, 0.0],
    };
    let initial = AircraftState::new(0.0, 0.0, 10.0, 0.0);
    let record = AircraftRecord {
        id: 1,
        t_start: 0,
        t_end: n,
        initial,
        terminal: AircraftState::new(44.0, 0.0, 14.5, 0.0),
        standard: Trajectory::from_positions(1, 0, &centers, 0.0),
        disturbances: wind.clone(),
    };
    let feasible = |controls: &[ControlInput]| {
        let st = rollout(initial, controls, &wind);
        let l = &limits;
        controls.iter().all(|c| c.u.abs() <= l.u_max + TOL && c.psi.abs() <= l.psi_max + TOL)
            && st[1..].iter().all(|s| s.v >= l.v_min - TOL && s.v <= l.v_max + TOL)
            && (st[n].v - 14.5).abs() <= l.delta_v + TOL
            && st[n].theta.abs() <= l.delta_theta + TOL
            && (1..n).all(|k| dist(st[k].position(), centers[k]) <= corridor.radii[k] + TOL)
            && dist(st[n].position(), centers[n]) <= l.tol_terminal + TOL
    };
    let sol = match pilot::select_trajectory(&corridor, &record, &limits, &wind, &SolverConfig::default()) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("solver error: {e}")),
    };
    let solved = pilot_cost(&sol.controls, &limits);

    let us = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let psis = [-0.2, -0.1, 0.0, 0.1, 0.2];
    let (mut best, mut feasible_points) = (f64::INFINITY, 0usize);
    let mut controls = vec![ControlInput::new(0.0, 0.0); n];
    for code in 0..5usize.pow(2 * n as u32) {
        let mut c = code;
        for ctl in controls.iter_mut() {
            ctl.u = us[c % 5];
            c /= 5;
            ctl.psi = psis[c % 5];
            c /= 5;
        }
        if feasible(&controls) {
            feasible_points += 1;
            best = best.min(pilot_cost(&controls, &limits));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        feasible(&sol.controls) && feasible_points > 0 && best >= solved - 1e-3 && secs < 10.0,
        format!("solver {solved:.4}, best of {feasible_points} feasible grid points {best:.4}, {secs:.2} s"),
    )
}

fn c8_determinism(dir: &Path) -> Outcome {
    let scenario = scenario_path();
    let mut runs = Vec::new();
    let mut svgs = Vec::new();
    for i in 0..2 {
        let run = dir.join(format!("det{i}.json"));
        let svg = dir.join(format!("det{i}.svg"));
        let a = skyset(&["plan", scenario.to_str().unwrap(), "-o", run.to_str().unwrap(), "--seed", "7"]);
        let b = skyset(&["plot", run.to_str().unwrap(), "-o", svg.to_str().unwrap()]);
        if a != 0 || b != 0 {
            return outcome(false, format!("plan exited {a}, plot exited {b}"));
        }
        runs.push(std::fs::read(run).unwrap());
        svgs.push(std::fs::read(svg).unwrap());
    }
    outcome(
        runs[0] == runs[1] && svgs[0] == svgs[1],
        format!("run records {} bytes, SVGs {} bytes, identical: {}", runs[0].len(), svgs[0].len(), runs[0] == runs[1] && svgs[0] == svgs[1]),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let (session, secs) = run_session();
    let results = [
        ("1 safety of sets", c1_sets_are_separated(&session, secs)),
        ("2 disk-implies-point safety", c2_points_are_separated(&session)),
        ("3 pilot improvement", c3_pilots_improve(&session)),
        ("4 re-plan containment", c4_replan_contains_selections(dir.path())),
        ("5 radius magnitudes", c5_radius_magnitudes(&session)),
        ("6 gradient suite", c6_gradients()),
        ("7 grid oracle", c7_grid_oracle()),
        ("8 determinism", c8_determinism(dir.path())),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
