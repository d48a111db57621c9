use std::collections::VecDeque;

use super::{NlpProblem, SolveResult, SolveStatus, SolverConfig, TraceEntry};

const MAX_PENALTY: f64 = 1e12;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Largest violation of `g <= 0` and `h = 0` at `x`.
pub fn max_violation<P: NlpProblem + ?Sized>(problem: &P, x: &[f64]) -> f64 {
    let mut g = vec![0.0; problem.num_inequalities()];
    let mut h = vec![0.0; problem.num_equalities()];
    problem.inequalities(x, &mut g);
    problem.equalities(x, &mut h);
    violation_of(&g, &h)
}

fn violation_of(g: &[f64], h: &[f64]) -> f64 {
    let vg = g.iter().fold(0.0_f64, |m, &v| if v.is_nan() { f64::NAN } else { m.max(v) });
    let vh = h.iter().fold(0.0_f64, |m, &v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
    if vg.is_nan() || vh.is_nan() {
        f64::NAN
    } else {
        vg.max(vh)
    }
}

/// Augmented Lagrangian of a problem for fixed multipliers and penalty.
struct Lagrangian<'a, P: ?Sized> {
    problem: &'a P,
    n: usize,
    g: Vec<f64>,
    h: Vec<f64>,
    gjac: Vec<f64>,
    hjac: Vec<f64>,
    mu: Vec<f64>,
    lam: Vec<f64>,
    rho: f64,
}

impl<'a, P: NlpProblem + ?Sized> Lagrangian<'a, P> {
    fn new(problem: &'a P, rho: f64) -> Self {
        let n = problem.dimension();
        let mi = problem.num_inequalities();
        let me = problem.num_equalities();
        Self {
            problem,
            n,
            g: vec![0.0; mi],
            h: vec![0.0; me],
            gjac: vec![0.0; mi * n],
            hjac: vec![0.0; me * n],
            mu: vec![0.0; mi],
            lam: vec![0.0; me],
            rho,
        }
    }

    fn constraints(&mut self, x: &[f64]) {
        self.g.fill(0.0);
        self.h.fill(0.0);
        self.problem.inequalities(x, &mut self.g);
        self.problem.equalities(x, &mut self.h);
    }

    fn penalty_terms(&self) -> f64 {
        let rho = self.rho;
        let mut val = 0.0;
        for (&g, &mu) in self.g.iter().zip(&self.mu) {
            let t = (mu + rho * g).max(0.0);
            val += (t * t - mu * mu) / (2.0 * rho);
        }
        for (&h, &lam) in self.h.iter().zip(&self.lam) {
            val += lam * h + 0.5 * rho * h * h;
        }
        val
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        let f = self.problem.objective(x);
        self.constraints(x);
        f + self.penalty_terms()
    }

    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n;
        let f = self.problem.objective(x);
        grad.fill(0.0);
        self.problem.objective_gradient(x, grad);
        self.constraints(x);
        self.gjac.fill(0.0);
        self.hjac.fill(0.0);
        self.problem.inequality_jacobian(x, &mut self.gjac);
        self.problem.equality_jacobian(x, &mut self.hjac);
        let rho = self.rho;
        for (j, (&g, &mu)) in self.g.iter().zip(&self.mu).enumerate() {
            let t = (mu + rho * g).max(0.0);
            if t > 0.0 {
                axpy(t, &self.gjac[j * n..(j + 1) * n], grad);
            }
        }
        for (m, (&h, &lam)) in self.h.iter().zip(&self.lam).enumerate() {
            let t = lam + rho * h;
            if t != 0.0 {
                axpy(t, &self.hjac[m * n..(m + 1) * n], grad);
            }
        }
        f + self.penalty_terms()
    }

    fn update_multipliers(&mut self) {
        let rho = self.rho;
        for (mu, &g) in self.mu.iter_mut().zip(&self.g) {
            *mu = (*mu + rho * g).max(0.0);
        }
        for (lam, &h) in self.lam.iter_mut().zip(&self.h) {
            *lam += rho * h;
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.max(l).min(u);
    }
}

/// Infinity norm of `P(x − g) − x`.
fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&l, &u))| ((xi - gi).max(l).min(u) - xi).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InnerStop {
    Converged,
    MaxIters,
    Stalled,
    NonFinite,
}

struct InnerOutcome {
    stop: InnerStop,
    iters: usize,
    pg_norm: f64,
}

/// Projected limited-memory BFGS on the box `[lower, upper]`.
///
/// Variables sitting on a bound with the gradient pushing outward are frozen
/// for the direction computation; the step is projected back onto the box and
/// accepted by an Armijo test along the projected path.
fn minimize_box<P: NlpProblem + ?Sized>(
    lag: &mut Lagrangian<'_, P>,
    x: &mut [f64],
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_iters: usize,
    memory: usize,
) -> InnerOutcome {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut f = lag.value_grad(x, &mut grad);
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return InnerOutcome {
            stop: InnerStop::NonFinite,
            iters: 0,
            pg_norm: f64::NAN,
        };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut free = vec![true; n];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut alphas = vec![0.0; memory];
    let mut flat_steps = 0;

    for it in 0..max_iters {
        let pg = projected_gradient_norm(x, &grad, lower, upper);
        if pg <= tol {
            return InnerOutcome {
                stop: InnerStop::Converged,
                iters: it,
                pg_norm: pg,
            };
        }

        for i in 0..n {
            free[i] = !((x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0));
        }

        // Two-loop recursion on the free subspace.
        for i in 0..n {
            dir[i] = if free[i] { grad[i] } else { 0.0 };
        }
        for (k, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * masked_dot(s, &dir, &free);
            alphas[k] = a;
            for i in 0..n {
                if free[i] {
                    dir[i] -= a * y[i];
                }
            }
        }
        if let Some((s, y, _)) = hist.back() {
            let yy = masked_dot(y, y, &free);
            let sy = masked_dot(s, y, &free);
            if yy > 0.0 && sy > 0.0 {
                let gamma = sy / yy;
                dir.iter_mut().for_each(|d| *d *= gamma);
            }
        }
        for (k, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * masked_dot(y, &dir, &free);
            for i in 0..n {
                if free[i] {
                    dir[i] += s[i] * (alphas[k] - b);
                }
            }
        }
        for i in 0..n {
            dir[i] = if free[i] { -dir[i] } else { 0.0 };
        }

        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 || hist.is_empty() {
            hist.clear();
            for i in 0..n {
                dir[i] = if free[i] { -grad[i] } else { 0.0 };
            }
            slope = dot(&grad, &dir);
        }
        let mut alpha = if hist.is_empty() {
            let dmax = dir.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
            if dmax > 0.0 {
                (1.0 / dmax).min(1.0)
            } else {
                1.0
            }
        } else {
            1.0
        };
        debug_assert!(slope <= 0.0);

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = x[i] + alpha * dir[i];
            }
            clamp_into(&mut trial, lower, upper);
            let mut dec = 0.0;
            let mut moved = false;
            for i in 0..n {
                let s = trial[i] - x[i];
                moved |= s != 0.0;
                dec += grad[i] * s;
            }
            if !moved {
                break;
            }
            let ft = lag.value(&trial);
            if ft.is_finite() && dec < 0.0 && ft <= f + ARMIJO * dec {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }

        let Some(_) = accepted else {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            return InnerOutcome {
                stop: InnerStop::Stalled,
                iters: it,
                pg_norm: pg,
            };
        };

        let ft = lag.value_grad(&trial, &mut trial_grad);
        if !ft.is_finite() || trial_grad.iter().any(|g| !g.is_finite()) {
            return InnerOutcome {
                stop: InnerStop::NonFinite,
                iters: it,
                pg_norm: pg,
            };
        }
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }

        if f - ft <= 1e-15 * (1.0 + f.abs()) {
            flat_steps += 1;
        } else {
            flat_steps = 0;
        }
        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        f = ft;
        if flat_steps >= 10 {
            return InnerOutcome {
                stop: InnerStop::Stalled,
                iters: it + 1,
                pg_norm: projected_gradient_norm(x, &grad, lower, upper),
            };
        }
    }
    InnerOutcome {
        stop: InnerStop::MaxIters,
        iters: max_iters,
        pg_norm: projected_gradient_norm(x, &grad, lower, upper),
    }
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| x * y)
        .sum()
}

/// `problem` in the coordinates `z = x / scale`.
struct Scaled<'a, P: ?Sized> {
    inner: &'a P,
    scale: Vec<f64>,
    x: std::cell::RefCell<Vec<f64>>,
}

impl<P: NlpProblem + ?Sized> Scaled<'_, P> {
    fn unscale(&self, z: &[f64]) -> std::cell::Ref<'_, Vec<f64>> {
        {
            let mut x = self.x.borrow_mut();
            for ((xi, zi), si) in x.iter_mut().zip(z).zip(&self.scale) {
                *xi = zi * si;
            }
        }
        self.x.borrow()
    }

    fn scale_rows(&self, jac: &mut [f64]) {
        let n = self.scale.len();
        if n == 0 {
            return;
        }
        for row in jac.chunks_mut(n) {
            for (j, s) in row.iter_mut().zip(&self.scale) {
                *j *= s;
            }
        }
    }
}

impl<P: NlpProblem + ?Sized> NlpProblem for Scaled<'_, P> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = self.inner.bounds();
        for ((l, h), s) in lo.iter_mut().zip(hi.iter_mut()).zip(&self.scale) {
            *l /= s;
            *h /= s;
        }
        (lo, hi)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.inner.objective(&self.unscale(z))
    }

    fn objective_gradient(&self, z: &[f64], grad: &mut [f64]) {
        self.inner.objective_gradient(&self.unscale(z), grad);
        self.scale_rows(grad);
    }

    fn num_inequalities(&self) -> usize {
        self.inner.num_inequalities()
    }

    fn num_equalities(&self) -> usize {
        self.inner.num_equalities()
    }

    fn inequalities(&self, z: &[f64], out: &mut [f64]) {
        self.inner.inequalities(&self.unscale(z), out)
    }

    fn inequality_jacobian(&self, z: &[f64], jac: &mut [f64]) {
        self.inner.inequality_jacobian(&self.unscale(z), jac);
        self.scale_rows(jac);
    }

    fn equalities(&self, z: &[f64], out: &mut [f64]) {
        self.inner.equalities(&self.unscale(z), out)
    }

    fn equality_jacobian(&self, z: &[f64], jac: &mut [f64]) {
        self.inner.equality_jacobian(&self.unscale(z), jac);
        self.scale_rows(jac);
    }
}

/// Minimizes `problem` from the warm start `x0` (clamped into the box).
///
/// When the problem reports a variable scale the iteration runs in scaled
/// coordinates; the result is always in the original ones.
///
/// Deterministic: identical inputs give bit-identical results.
pub fn solve<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64], config: &SolverConfig) -> SolveResult {
    let Some(scale) = problem.variable_scale() else {
        return solve_unscaled(problem, x0, config);
    };
    assert_eq!(scale.len(), problem.dimension(), "scale has wrong dimension");
    assert!(scale.iter().all(|s| *s > 0.0 && s.is_finite()), "scale must be positive");
    let scaled = Scaled {
        inner: problem,
        x: std::cell::RefCell::new(vec![0.0; scale.len()]),
        scale,
    };
    let z0: Vec<f64> = x0.iter().zip(&scaled.scale).map(|(x, s)| x / s).collect();
    let mut r = solve_unscaled(&scaled, &z0, config);
    for (x, s) in r.x_opt.iter_mut().zip(&scaled.scale) {
        *x *= s;
    }
    r
}

fn solve_unscaled<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64], config: &SolverConfig) -> SolveResult {
    let n = problem.dimension();
    let (lower, upper) = problem.bounds();
    assert_eq!(x0.len(), n, "initial point has wrong dimension");
    assert!(lower.len() == n && upper.len() == n, "bounds have wrong dimension");

    let mut x = x0.to_vec();
    clamp_into(&mut x, &lower, &upper);

    let mut lag = Lagrangian::new(problem, config.initial_penalty);
    let f0 = problem.objective(&x);
    lag.constraints(&x);
    let v0 = violation_of(&lag.g, &lag.h);
    if !f0.is_finite() || !v0.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return SolveResult {
            objective_value: f0,
            max_constraint_violation: v0,
            status: SolveStatus::InfeasibleStart,
            stationarity: f64::NAN,
            inequality_multipliers: lag.mu.clone(),
            equality_multipliers: lag.lam.clone(),
            x_opt: x,
            trace: Vec::new(),
        };
    }

    let mut trace = Vec::new();
    let mut prev_violation = v0;
    let mut omega = 1e-2_f64.max(config.stationarity_tol);
    // (x, objective, violation, stationarity)
    let mut best: (Vec<f64>, f64, f64, f64) = (x.clone(), f0, v0, f64::INFINITY);
    let mut last_finite = x.clone();

    for outer in 0..config.max_outer_iters {
        let inner = minimize_box(
            &mut lag,
            &mut x,
            &lower,
            &upper,
            omega,
            config.max_inner_iters,
            config.memory,
        );
        if inner.stop == InnerStop::NonFinite {
            let f = problem.objective(&last_finite);
            let v = max_violation(problem, &last_finite);
            return SolveResult {
                x_opt: last_finite,
                objective_value: f,
                max_constraint_violation: v,
                status: SolveStatus::NumericalFailure,
                stationarity: f64::NAN,
                inequality_multipliers: lag.mu.clone(),
                equality_multipliers: lag.lam.clone(),
                trace,
            };
        }
        last_finite.copy_from_slice(&x);

        let f = problem.objective(&x);
        lag.constraints(&x);
        let v = violation_of(&lag.g, &lag.h);
        // An inner solve cut off by its iteration budget says little about
        // the multipliers or the penalty; keep both and resume minimizing.
        let finished = inner.stop != InnerStop::MaxIters;
        if finished {
            lag.update_multipliers();
        }
        let stationarity = inner.pg_norm;
        trace.push(TraceEntry {
            outer_iter: outer,
            objective: f,
            violation: v,
            stationarity,
            penalty: lag.rho,
            inner_iters: inner.iters,
        });

        if v <= config.constraint_tol && stationarity <= config.stationarity_tol {
            return SolveResult {
                x_opt: x,
                objective_value: f,
                max_constraint_violation: v,
                status: SolveStatus::Converged,
                stationarity,
                inequality_multipliers: lag.mu.clone(),
                equality_multipliers: lag.lam.clone(),
                trace,
            };
        }

        let better = match (v <= config.constraint_tol, best.2 <= config.constraint_tol) {
            (true, true) => f < best.1,
            (true, false) => true,
            (false, true) => false,
            (false, false) => v < best.2,
        };
        if better {
            best = (x.clone(), f, v, stationarity);
        }

        if !finished {
            continue;
        }
        if v > config.constraint_tol && v > 0.25 * prev_violation {
            lag.rho = (lag.rho * config.penalty_growth).min(MAX_PENALTY);
        }
        prev_violation = v;
        omega = if v <= config.constraint_tol {
            config.stationarity_tol
        } else {
            (omega * 0.1).max(config.stationarity_tol)
        };
    }

    SolveResult {
        x_opt: best.0,
        objective_value: best.1,
        max_constraint_violation: best.2,
        status: SolveStatus::MaxIters,
        stationarity: best.3,
        inequality_multipliers: lag.mu.clone(),
        equality_multipliers: lag.lam.clone(),
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{FnProblem, ScalarFn};

    fn sq_norm() -> ScalarFn {
        ScalarFn::new(
            |x| x.iter().map(|v| v * v).sum(),
            |x, g| {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = 2.0 * xi;
                }
            },
        )
    }

    /// min |x|^2 s.t. x1 >= 1
    fn projection_problem() -> FnProblem {
        FnProblem::unbounded(2, sq_norm()).with_inequality(ScalarFn::new(
            |x| 1.0 - x[0],
            |_, g| {
                g[0] = -1.0;
                g[1] = 0.0;
            },
        ))
    }

    /// min -ln(r + 1) s.t. r <= 3, r >= 0 (bound)
    fn log_problem() -> FnProblem {
        FnProblem::unbounded(
            1,
            ScalarFn::new(|x| -(x[0] + 1.0).ln(), |x, g| g[0] = -1.0 / (x[0] + 1.0)),
        )
        .with_inequality(ScalarFn::new(|x| x[0] - 3.0, |_, g| g[0] = 1.0))
        .with_bounds(vec![0.0], vec![f64::INFINITY])
    }

    /// min (x - 2)^2 s.t. x = 5
    fn pinned_problem() -> FnProblem {
        FnProblem::unbounded(
            1,
            ScalarFn::new(|x| (x[0] - 2.0).powi(2), |x, g| g[0] = 2.0 * (x[0] - 2.0)),
        )
        .with_equality(ScalarFn::new(|x| x[0] - 5.0, |_, g| g[0] = 1.0))
    }

    #[test]
    fn projection_example() {
        let cfg = SolverConfig::default();
        let r = solve(&projection_problem(), &[3.0, -2.0], &cfg);
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x_opt[0] - 1.0).abs() < 1e-5, "{:?}", r.x_opt);
        assert!(r.x_opt[1].abs() < 1e-5);
        assert!((r.objective_value - 1.0).abs() < 1e-5);
        assert!(r.max_constraint_violation <= cfg.constraint_tol);
    }

    #[test]
    fn log_example_hits_upper_constraint() {
        let r = solve(&log_problem(), &[0.0], &SolverConfig::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x_opt[0] - 3.0).abs() < 1e-5, "{:?}", r.x_opt);
    }

    #[test]
    fn equality_example() {
        let r = solve(&pinned_problem(), &[0.0], &SolverConfig::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x_opt[0] - 5.0).abs() < 1e-6);
        assert!((r.objective_value - 9.0).abs() < 1e-5);
    }

    #[test]
    fn violation_is_monotone_after_first_update() {
        let cfg = SolverConfig::default();
        let runs = [
            solve(&projection_problem(), &[3.0, -2.0], &cfg),
            solve(&log_problem(), &[0.0], &cfg),
            solve(&pinned_problem(), &[0.0], &cfg),
        ];
        for r in runs {
            for w in r.trace.windows(2).skip(1) {
                assert!(w[1].violation <= w[0].violation + 1e-15, "{:?}", r.trace);
            }
        }
    }

    /// Projected gradient of f + mu^T g + lam^T h at the returned point.
    fn lagrangian_pg(p: &FnProblem, r: &SolveResult) -> f64 {
        let x = &r.x_opt;
        let n = x.len();
        let mut grad = vec![0.0; n];
        p.objective_gradient(x, &mut grad);
        let mut row = vec![0.0; n];
        for (g, mu) in p.inequalities.iter().zip(&r.inequality_multipliers) {
            g.gradient(x, &mut row);
            axpy(*mu, &row, &mut grad);
        }
        for (h, lam) in p.equalities.iter().zip(&r.equality_multipliers) {
            h.gradient(x, &mut row);
            axpy(*lam, &row, &mut grad);
        }
        projected_gradient_norm(x, &grad, &p.lower, &p.upper)
    }

    #[test]
    fn kkt_spot_check() {
        let cfg = SolverConfig::default();
        for (p, x0) in [
            (projection_problem(), vec![3.0, -2.0]),
            (log_problem(), vec![0.0]),
            (pinned_problem(), vec![0.0]),
        ] {
            let r = solve(&p, &x0, &cfg);
            assert!(r.status.is_converged());
            assert!(lagrangian_pg(&p, &r) <= 10.0 * cfg.stationarity_tol);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SolverConfig::default();
        let a = solve(&projection_problem(), &[3.0, -2.0], &cfg);
        let b = solve(&projection_problem(), &[3.0, -2.0], &cfg);
        assert_eq!(a, b);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn start_outside_box_is_clamped() {
        let r = solve(&log_problem(), &[-5.0], &SolverConfig::default());
        assert!(r.status.is_converged());
        assert!((r.x_opt[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn nan_at_start_is_infeasible_start() {
        let p = FnProblem::unbounded(1, ScalarFn::new(|x| x[0].sqrt(), |x, g| g[0] = 0.5 / x[0].sqrt()));
        let r = solve(&p, &[-1.0], &SolverConfig::default());
        assert_eq!(r.status, SolveStatus::InfeasibleStart);
    }

    #[test]
    fn nan_mid_run_is_numerical_failure() {
        // Finite at the start, but the gradient turns NaN once x passes 1.5.
        let p = FnProblem::unbounded(
            1,
            ScalarFn::new(|x| -x[0], |x, g| g[0] = if x[0] > 1.5 { f64::NAN } else { -1.0 }),
        );
        let r = solve(&p, &[0.0], &SolverConfig::default());
        assert_eq!(r.status, SolveStatus::NumericalFailure);
        assert!(r.x_opt[0].is_finite());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let r = solve(&pinned_problem(), &[0.0], &SolverConfig::default());
        let csv = r.trace_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "outer_iter,objective,violation");
        assert_eq!(lines.len(), r.trace.len() + 1);
    }
}
