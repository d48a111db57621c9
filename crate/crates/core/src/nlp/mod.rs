//! Smooth constrained nonlinear programs and their solver.
//!
//! Problems are posed as
//!
//! ```text
//! minimize f(x)  subject to  g_j(x) <= 0,  h_m(x) = 0,  lower <= x <= upper
//! ```
//!
//! and solved by an augmented Lagrangian outer loop wrapped around a
//! projected limited-memory quasi-Newton method for the box-constrained
//! subproblems.

mod gradcheck;
mod solver;

use serde::{Deserialize, Serialize};

pub use gradcheck::{check_gradient, finite_diff_gradient, FunctionCheck, GradientCheckReport};
pub use solver::{max_violation, solve};

/// A smooth NLP with analytic first derivatives.
///
/// Jacobians are written dense and row-major: row `j` of an `m x n` matrix
/// occupies `jac[j * n .. (j + 1) * n]`.
pub trait NlpProblem {
    fn dimension(&self) -> usize;

    /// Lower and upper variable bounds; infinite entries are allowed.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn objective(&self, x: &[f64]) -> f64;

    /// Typical magnitude of each variable. The solver works on `x / scale`,
    /// so variables with very different sensitivities can be balanced.
    fn variable_scale(&self) -> Option<Vec<f64>> {
        None
    }

    fn objective_gradient(&self, x: &[f64], grad: &mut [f64]);

    fn num_inequalities(&self) -> usize {
        0
    }

    fn num_equalities(&self) -> usize {
        0
    }

    /// Writes `g(x)`; the feasible side is `g <= 0`.
    fn inequalities(&self, _x: &[f64], _out: &mut [f64]) {}

    fn inequality_jacobian(&self, _x: &[f64], _jac: &mut [f64]) {}

    fn equalities(&self, _x: &[f64], _out: &mut [f64]) {}

    fn equality_jacobian(&self, _x: &[f64], _jac: &mut [f64]) {}

    /// Human-readable label for inequality `j`, used in reports.
    fn inequality_label(&self, j: usize) -> String {
        format!("g[{j}]")
    }

    fn equality_label(&self, m: usize) -> String {
        format!("h[{m}]")
    }
}

type ValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A scalar function paired with its gradient.
pub struct ScalarFn {
    value: ValueFn,
    gradient: GradFn,
}

impl ScalarFn {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
}

/// Closure-backed problem, mostly for small tests and tools.
pub struct FnProblem {
    pub objective: ScalarFn,
    pub inequalities: Vec<ScalarFn>,
    pub equalities: Vec<ScalarFn>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FnProblem {
    pub fn unbounded(n: usize, objective: ScalarFn) -> Self {
        Self {
            objective,
            inequalities: Vec::new(),
            equalities: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_inequality(mut self, g: ScalarFn) -> Self {
        self.inequalities.push(g);
        self
    }

    pub fn with_equality(mut self, h: ScalarFn) -> Self {
        self.equalities.push(h);
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }
}

impl NlpProblem for FnProblem {
    fn dimension(&self) -> usize {
        self.lower.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    fn objective_gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.objective.gradient(x, grad)
    }

    fn num_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    fn inequalities(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.inequalities) {
            *o = g.value(x);
        }
    }

    fn inequality_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let n = x.len();
        for (row, g) in jac.chunks_mut(n).zip(&self.inequalities) {
            g.gradient(x, row);
        }
    }

    fn equalities(&self, x: &[f64], out: &mut [f64]) {
        for (o, h) in out.iter_mut().zip(&self.equalities) {
            *o = h.value(x);
        }
    }

    fn equality_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let n = x.len();
        for (row, h) in jac.chunks_mut(n).zip(&self.equalities) {
            h.gradient(x, row);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Largest accepted constraint violation (absolute, problem units).
    pub constraint_tol: f64,
    /// Largest accepted projected-gradient entry of the Lagrangian.
    pub stationarity_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Step used by finite-difference gradient checks.
    pub finite_diff_step: f64,
    /// Seed for sampled diagnostics (gradient checks at random points).
    pub rng_seed: u64,
    /// Number of curvature pairs kept by the quasi-Newton inner solver.
    pub memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 50,
            max_inner_iters: 500,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-5,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            finite_diff_step: 1e-6,
            rng_seed: 0,
            memory: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.constraint_tol > 0.0
            && self.stationarity_tol > 0.0
            && self.initial_penalty > 0.0
            && self.penalty_growth > 1.0
            && self.finite_diff_step > 0.0
            && self.max_outer_iters > 0
            && self.max_inner_iters > 0
            && self.memory > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::validation("solver", "tolerances must be positive and penalty_growth > 1"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    InfeasibleStart,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::InfeasibleStart => "infeasible_start",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// One outer iteration of the augmented Lagrangian loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer_iter: usize,
    #[serde(with = "crate::serde_float")]
    pub objective: f64,
    #[serde(with = "crate::serde_float")]
    pub violation: f64,
    #[serde(with = "crate::serde_float")]
    pub stationarity: f64,
    pub penalty: f64,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub x_opt: Vec<f64>,
    #[serde(with = "crate::serde_float")]
    pub objective_value: f64,
    #[serde(with = "crate::serde_float")]
    pub max_constraint_violation: f64,
    pub status: SolveStatus,
    /// Infinity norm of the projected Lagrangian gradient at `x_opt`, in the
    /// solver's (possibly scaled) coordinates.
    #[serde(with = "crate::serde_float")]
    pub stationarity: f64,
    pub inequality_multipliers: Vec<f64>,
    pub equality_multipliers: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

impl SolveResult {
    /// The iteration trace as CSV with columns `outer_iter,objective,violation`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("outer_iter,objective,violation\n");
        for t in &self.trace {
            out.push_str(&format!("{},{:.9e},{:.9e}\n", t.outer_iter, t.objective, t.violation));
        }
        out
    }
}
