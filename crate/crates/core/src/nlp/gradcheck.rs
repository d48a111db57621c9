use serde::Serialize;

use super::NlpProblem;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x`, Richardson-extrapolated from
/// steps `h` and `h/2` so the truncation error is fourth order in `h`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut central = |s: f64| {
            xp[i] = x[i] + s;
            let fp = f(&xp);
            xp[i] = x[i] - s;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * s)
        };
        let (d1, d2) = (central(h), central(0.5 * h));
        let d = (4.0 * d2 - d1) / 3.0;
        if !d.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite evaluation while differencing component {i}"
            )));
        }
        grad.push(d);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionCheck {
    pub label: String,
    /// `max_i |analytic_i − fd_i| / max(‖fd‖_inf, 1)`.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub tol: f64,
    pub functions: Vec<FunctionCheck>,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.functions.iter().all(|f| f.max_rel_error <= self.tol)
    }

    pub fn worst(&self) -> Option<&FunctionCheck> {
        self.functions
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    /// Largest error among functions whose label starts with `prefix`.
    pub fn worst_in_family(&self, prefix: &str) -> Option<f64> {
        self.functions
            .iter()
            .filter(|f| f.label.starts_with(prefix))
            .map(|f| f.max_rel_error)
            .reduce(f64::max)
    }
}

fn rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0_f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
    diff / scale
}

/// Compares every analytic gradient of `problem` (objective, each
/// inequality, each equality) with central differences at `x`.
pub fn check_gradient<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    tol: f64,
    h: f64,
) -> GradientCheckReport {
    let n = problem.dimension();
    let mi = problem.num_inequalities();
    let me = problem.num_equalities();

    let mut grad = vec![0.0; n];
    problem.objective_gradient(x, &mut grad);
    let mut gjac = vec![0.0; mi * n];
    problem.inequality_jacobian(x, &mut gjac);
    let mut hjac = vec![0.0; me * n];
    problem.equality_jacobian(x, &mut hjac);

    // Finite-difference columns of every function at once, extrapolated as
    // in `finite_diff_gradient`.
    let mut fd_obj = vec![0.0; n];
    let mut fd_g = vec![0.0; mi * n];
    let mut fd_h = vec![0.0; me * n];
    let mut xp = x.to_vec();
    let (mut gp, mut gm) = (vec![0.0; mi], vec![0.0; mi]);
    let (mut hp, mut hm) = (vec![0.0; me], vec![0.0; me]);
    for i in 0..n {
        for (s, w) in [(h, -1.0 / 3.0), (0.5 * h, 4.0 / 3.0)] {
            xp[i] = x[i] + s;
            let fp = problem.objective(&xp);
            problem.inequalities(&xp, &mut gp);
            problem.equalities(&xp, &mut hp);
            xp[i] = x[i] - s;
            let fm = problem.objective(&xp);
            problem.inequalities(&xp, &mut gm);
            problem.equalities(&xp, &mut hm);
            xp[i] = x[i];
            fd_obj[i] += w * (fp - fm) / (2.0 * s);
            for j in 0..mi {
                fd_g[j * n + i] += w * (gp[j] - gm[j]) / (2.0 * s);
            }
            for m in 0..me {
                fd_h[m * n + i] += w * (hp[m] - hm[m]) / (2.0 * s);
            }
        }
    }

    let mut functions = vec![FunctionCheck {
        label: "objective".to_string(),
        max_rel_error: rel_error(&grad, &fd_obj),
    }];
    for j in 0..mi {
        functions.push(FunctionCheck {
            label: problem.inequality_label(j),
            max_rel_error: rel_error(&gjac[j * n..(j + 1) * n], &fd_g[j * n..(j + 1) * n]),
        });
    }
    for m in 0..me {
        functions.push(FunctionCheck {
            label: problem.equality_label(m),
            max_rel_error: rel_error(&hjac[m * n..(m + 1) * n], &fd_h[m * n..(m + 1) * n]),
        });
    }
    GradientCheckReport { tol, functions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{FnProblem, ScalarFn};

    #[test]
    fn quadratic() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_is_zero() {
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn bilinear() {
        let g = finite_diff_gradient(|x| x[0] * x[1], &[2.0, 3.0], 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-6 && (g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = finite_diff_gradient(|x| x[0].ln(), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    fn cubic(scale: f64) -> FnProblem {
        FnProblem::unbounded(
            2,
            ScalarFn::new(
                |x| x[0].powi(3) + 4.0 * x[0] * x[1],
                move |x, g| {
                    g[0] = scale * (3.0 * x[0] * x[0] + 4.0 * x[1]);
                    g[1] = scale * 4.0 * x[0];
                },
            ),
        )
        .with_inequality(ScalarFn::new(
            |x| x[0].sin() - x[1],
            |x, g| {
                g[0] = x[0].cos();
                g[1] = -1.0;
            },
        ))
        .with_equality(ScalarFn::new(
            |x| x[0] * x[1] - 1.0,
            |x, g| {
                g[0] = x[1];
                g[1] = x[0];
            },
        ))
    }

    #[test]
    fn correct_gradients_pass() {
        let r = check_gradient(&cubic(1.0), &[1.3, -0.7], 1e-4, 1e-6);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.functions.len(), 3);
    }

    #[test]
    fn planted_factor_two_fails() {
        let r = check_gradient(&cubic(2.0), &[1.3, -0.7], 1e-4, 1e-6);
        assert!(!r.passed());
        let obj = &r.functions[0];
        assert_eq!(obj.label, "objective");
        assert!((obj.max_rel_error - 1.0).abs() < 1e-4, "{}", obj.max_rel_error);
        // The constraints are untouched.
        assert!(r.functions[1..].iter().all(|f| f.max_rel_error < 1e-4));
    }
}
