//! Dense BFGS minimiser with backtracking line search, sized for the handful
//! of parameters in an AFT fit.

/// Objective returning value and gradient at a point.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.value(x), self.gradient(x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop when the gradient max-norm falls below this.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-8,
            max_iterations: 500,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// The line search could not find an acceptable step.
    LineSearchFailed,
    /// Objective or gradient became non-finite at the starting point.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl BfgsOutcome {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradientTolerance
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimise `objective` from `x0`.
///
/// The line search accepts a step on the Armijo condition, or, once the
/// objective has become flat to rounding error, on a strict decrease of the
/// gradient max-norm. The second rule lets large-sample likelihoods reach a
/// tight gradient tolerance that value comparisons alone cannot certify.
pub fn minimize<O: Objective + ?Sized>(objective: &O, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective.value_and_gradient(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsOutcome {
            x,
            value: f,
            gradient: g,
            iterations: 0,
            termination: Termination::NonFinite,
        };
    }
    // Row-major inverse Hessian approximation.
    let mut h = identity(n);
    let mut scaled = false;

    for iter in 0..opts.max_iterations {
        let gnorm = max_norm(&g);
        if gnorm < opts.gradient_tolerance {
            return BfgsOutcome {
                x,
                value: f,
                gradient: g,
                iterations: iter,
                termination: Termination::GradientTolerance,
            };
        }

        let mut d = mat_vec(&h, &g, n);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(n);
            scaled = false;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let flat = 1e-11 * f.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = objective.value(&trial);
            if ft.is_finite() {
                let armijo = ft <= f + opts.armijo * alpha * slope;
                let near_flat = (ft - f).abs() <= flat;
                if armijo || near_flat {
                    let gt = objective.gradient(&trial);
                    if gt.iter().all(|v| v.is_finite()) && (armijo || max_norm(&gt) < gnorm) {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            return BfgsOutcome {
                x,
                value: f,
                gradient: g,
                iterations: iter,
                termination: Termination::LineSearchFailed,
            };
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy, n);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }

    let termination = if max_norm(&g) < opts.gradient_tolerance {
        Termination::GradientTolerance
    } else {
        Termination::MaxIterations
    };
    BfgsOutcome {
        x,
        value: f,
        gradient: g,
        iterations: opts.max_iterations,
        termination,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, n);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Central-difference gradient with per-coordinate step `rel_step * max(1, |x_i|)`.
pub fn central_difference_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Symmetric central-difference Hessian (row-major).
pub fn central_difference_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let mut hess = vec![0.0; n * n];
    let mut p = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        let hi = steps[i];
        p[i] = x[i] + hi;
        let up = f(&p);
        p[i] = x[i] - hi;
        let down = f(&p);
        p[i] = x[i];
        hess[i * n + i] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let mut eval = |di: f64, dj: f64| {
                p[i] = x[i] + di;
                p[j] = x[j] + dj;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (eval(hi, hj) - eval(hi, -hj) - eval(-hi, hj) + eval(-hi, -hj)) / (4.0 * hi * hj);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    hess
}
