//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime error (I/O, parse, solver failure),
//! 2 a check ran and failed (`verify`, `gradcheck`), 64 usage error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::io::{self, FlownTrajectory, SvgOptions};
use crate::model::{Limits, Scenario};
use crate::nlp::SolverConfig;
use crate::orchestrator::{self, Session};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const OPTIONAL_LIMITS: [&str; 2] = ["v_ter", "theta_ter"];

#[derive(Debug, Parser)]
#[command(name = "skyset", version, about = "Corridor design by ATC and trajectory selection by pilots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Override a limits or solver field, e.g. `--config v_max=60`. Repeatable.
    #[arg(long = "config", value_name = "KEY=VALUE")]
    config: Vec<String>,
    /// Seed for sampled diagnostics.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design corridors and select pilot trajectories for a scenario.
    Plan {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the corridor solver's iteration trace as CSV.
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Re-plan an existing run `tau` steps after its last cycle.
    Replan {
        run: PathBuf,
        #[arg(long)]
        tau: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Let pilots re-select inside the redesigned corridors.
        #[arg(long)]
        pilots: bool,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Audit a run record; exits 2 when any safety check fails.
    Verify {
        run: PathBuf,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Draw a run record as SVG.
    Plot {
        run: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Draw only the first planning cycle.
        #[arg(long)]
        first_only: bool,
        #[arg(long)]
        no_pilots: bool,
        #[arg(long)]
        no_centers: bool,
    },
    /// Compare analytic and finite-difference gradients of both problems.
    Gradcheck {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 5)]
        perturbations: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export corridors and selected trajectories of one cycle (CSV, or JSON
    /// for `.json` paths).
    Export {
        run: PathBuf,
        /// Cycle index; defaults to the last.
        #[arg(long)]
        cycle: Option<usize>,
        #[arg(long)]
        corridors: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Sets `key` on whichever of `limits` or `solver` has a field of that name.
/// Values are parsed as JSON, so `null` clears optional fields.
pub fn apply_override(limits: &mut Limits, solver: &mut SolverConfig, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("--config expects KEY=VALUE, got {spec:?}"))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|_| format!("--config {key}: {raw:?} is not a number or literal"))?;
    fn set<T: serde::Serialize + serde::de::DeserializeOwned>(
        target: &mut T,
        key: &str,
        value: &serde_json::Value,
    ) -> Option<Result<(), String>> {
        let mut doc = serde_json::to_value(&*target).ok()?;
        let obj = doc.as_object_mut()?;
        // Unset optional limits are omitted when serialized.
        let optional = obj.contains_key("psi_max") && OPTIONAL_LIMITS.contains(&key);
        if !obj.contains_key(key) && !optional {
            return None;
        }
        obj.insert(key.to_string(), value.clone());
        Some(
            serde_json::from_value(doc)
                .map(|t| *target = t)
                .map_err(|e| format!("--config {key}: {e}")),
        )
    }
    set(limits, key, &value)
        .or_else(|| set(solver, key, &value))
        .unwrap_or_else(|| Err(format!("--config: unknown field {key:?}")))
}

fn configure(limits: &mut Limits, solver: &mut SolverConfig, o: &Overrides) -> Result<(), Failure> {
    for spec in &o.config {
        apply_override(limits, solver, spec).map_err(Failure::Usage)?;
    }
    if let Some(seed) = o.seed {
        solver.rng_seed = seed;
    }
    limits.validate()?;
    solver.validate()?;
    Ok(())
}

fn load_run(path: &PathBuf) -> Result<Session, Error> {
    Session::from_json(&std::fs::read_to_string(path)?)
}

fn write_trace(path: &Option<PathBuf>, session: &Session) -> Result<(), Error> {
    if let (Some(p), Some(c)) = (path, session.last_cycle()) {
        std::fs::write(p, c.atc.result.trace_csv())?;
    }
    Ok(())
}

fn summarize(session: &Session) {
    let Some(c) = session.last_cycle() else { return };
    outln!(
        "cycle {} at k={}: objective {:.6} ({} outer iterations)",
        session.history.len() - 1,
        c.plan_time,
        c.atc.objective,
        c.atc.result.trace.len()
    );
    for plan in &c.atc.plans {
        let r: Vec<f64> = plan.corridor.interior().map(|k| plan.corridor.radii[k - plan.corridor.t_start]).collect();
        let mean = if r.is_empty() { 0.0 } else { r.iter().sum::<f64>() / r.len() as f64 };
        outln!("  aircraft {}: mean interior radius {:.3}", plan.corridor.aircraft_id, mean);
    }
    for p in &c.pilots {
        match (&p.solution, &p.error) {
            (Some(s), _) => outln!(
                "  pilot {}: cost {:.6} (center tracking {:.6})",
                p.aircraft_id, s.cost, s.center_tracking_cost
            ),
            (None, Some(e)) => outln!("  pilot {}: failed: {e}", p.aircraft_id),
            _ => {}
        }
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Plan {
            scenario,
            output,
            overrides,
            trace_csv,
        } => {
            let mut sc: Scenario = io::load_scenario(&scenario)?;
            let mut solver = SolverConfig::default();
            configure(&mut sc.limits, &mut solver, &overrides)?;
            let mut session = Session::new(sc, solver)?;
            session.plan_cycle()?;
            std::fs::write(&output, session.to_json()?).map_err(Error::from)?;
            write_trace(&trace_csv, &session)?;
            summarize(&session);
        }
        Command::Replan {
            run,
            tau,
            output,
            pilots,
            overrides,
            trace_csv,
        } => {
            let mut session = load_run(&run)?;
            configure(&mut session.scenario.limits, &mut session.solver, &overrides)?;
            session.replan(tau, pilots)?;
            std::fs::write(&output, session.to_json()?).map_err(Error::from)?;
            write_trace(&trace_csv, &session)?;
            summarize(&session);
        }
        Command::Verify { run, json } => {
            let session = load_run(&run)?;
            let report = session.verify();
            if json {
                outln!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            } else {
                for (n, c) in report.cycles.iter().enumerate() {
                    let min_sep = c.corridor_separation.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
                    let min_pilot = c.pilot_separation.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
                    outln!(
                        "cycle {n} (k={}): corridor clearance {min_sep:.6}, pilot separation {min_pilot:.6}, D={}",
                        c.plan_time, report.safety_margin
                    );
                }
                for f in &report.failures {
                    outln!("FAIL {f}");
                }
                outln!("{}", if report.passed { "PASS" } else { "FAIL" });
            }
            if !report.passed {
                return Err(Failure::Check);
            }
        }
        Command::Plot {
            run,
            output,
            first_only,
            no_pilots,
            no_centers,
        } => {
            let session = load_run(&run)?;
            let options = SvgOptions {
                disks: true,
                centers: !no_centers,
                pilots: !no_pilots,
                replans: !first_only,
            };
            io::write_svg(&session, &output, &options)?;
        }
        Command::Gradcheck {
            scenario,
            tol,
            perturbations,
            overrides,
        } => {
            let mut sc = io::load_scenario(&scenario)?;
            let mut solver = SolverConfig::default();
            configure(&mut sc.limits, &mut solver, &overrides)?;
            let cases = orchestrator::gradient_suite(&sc, &solver, perturbations, tol)?;
            let mut ok = true;
            for c in &cases {
                let worst = c.report.worst().map_or(0.0, |w| w.max_rel_error);
                let pass = c.report.passed();
                ok &= pass;
                let label = c.report.worst().map_or("-", |w| w.label.as_str());
                outln!(
                    "{} {} point {}: max relative error {worst:.3e} ({label})",
                    if pass { "ok  " } else { "FAIL" },
                    c.problem,
                    c.point
                );
            }
            if !ok {
                return Err(Failure::Check);
            }
        }
        Command::Export {
            run,
            cycle,
            corridors,
            trajectories,
        } => {
            let session = load_run(&run)?;
            let n = cycle.unwrap_or(session.history.len().saturating_sub(1));
            let c = session
                .history
                .get(n)
                .ok_or_else(|| Failure::Usage(format!("run has no cycle {n}")))?;
            if let Some(p) = corridors {
                io::export_corridors(&c.corridors(), p)?;
            }
            if let Some(p) = trajectories {
                let flown: Vec<FlownTrajectory> = c
                    .pilots
                    .iter()
                    .filter_map(|p| p.solution.as_ref())
                    .map(|s| FlownTrajectory {
                        trajectory: s.trajectory.clone(),
                        controls: s.controls.clone(),
                    })
                    .collect();
                io::export_trajectories(&flown, p)?;
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Check) => EXIT_CHECK_FAILED,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
