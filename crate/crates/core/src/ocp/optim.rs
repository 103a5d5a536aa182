//! Equality-constrained nonlinear programming: the problem interface and an
//! augmented Lagrangian method with a limited-memory BFGS inner minimizer.

use std::collections::VecDeque;

pub type SparseRows = Vec<Vec<(usize, f64)>>;

/// Smooth equality-constrained problem `min f(x) s.t. c(x) = 0`.
pub trait EqualityNlp {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Returns `f(x)` and writes `c(x)`.
    fn evaluate(&self, x: &[f64], c: &mut [f64]) -> f64;
    /// Writes `grad f(x) + J(x)^T w`.
    fn gradient(&self, x: &[f64], w: &[f64], grad: &mut [f64]);
    /// Half bandwidth of the Lagrangian Hessian and of `J^T J`, if banded.
    fn hessian_bandwidth(&self) -> Option<usize> {
        None
    }
    /// Constraint Jacobian as sparse rows of `(column, value)`; structurally
    /// nonzero entries may be stored with value zero.
    fn constraint_jacobian(&self, x: &[f64]) -> SparseRows {
        let (m, d) = (self.num_constraints(), self.dim());
        let mut base = vec![0.0; d];
        self.gradient(x, &vec![0.0; m], &mut base);
        let mut w = vec![0.0; m];
        let mut row = vec![0.0; d];
        (0..m)
            .map(|r| {
                w[r] = 1.0;
                self.gradient(x, &w, &mut row);
                w[r] = 0.0;
                (0..d)
                    .filter_map(|j| {
                        let v = row[j] - base[j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AugLagSettings {
    pub max_outer: usize,
    pub max_inner: usize,
    /// infinity norm on `c`
    pub feasibility_tol: f64,
    /// infinity norm on the Lagrangian gradient
    pub optimality_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub memory: usize,
}

impl Default for AugLagSettings {
    fn default() -> Self {
        AugLagSettings {
            max_outer: 60,
            max_inner: 5000,
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e10,
            memory: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugLagReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub constraint_norm: f64,
    pub stationarity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` subject to `c = 0` starting from `x0`.
pub fn augmented_lagrangian<P: EqualityNlp + ?Sized>(nlp: &P, x0: &[f64], settings: &AugLagSettings) -> AugLagReport {
    let m = nlp.num_constraints();
    let mut x = x0.to_vec();
    let mut lambda = vec![0.0; m];
    let mut rho = settings.penalty_init;
    let mut omega = (1.0 / rho).max(settings.optimality_tol);
    let mut eta = (1.0 / rho.powf(0.1)).max(settings.feasibility_tol);
    let mut c = vec![0.0; m];
    let mut inner_total = 0;
    let mut stationarity = f64::INFINITY;
    let mut converged = false;
    let mut outer = 0;

    while outer < settings.max_outer {
        outer += 1;
        let merit = |z: &[f64], g: &mut [f64], c: &mut Vec<f64>| -> f64 {
            let f = nlp.evaluate(z, c);
            let w: Vec<f64> = lambda.iter().zip(c.iter()).map(|(l, ci)| l + rho * ci).collect();
            nlp.gradient(z, &w, g);
            f + dot(&lambda, c) + 0.5 * rho * dot(c, c)
        };
        let mut scratch = vec![0.0; m];
        let fg = |z: &[f64], g: &mut [f64]| merit(z, g, &mut scratch);
        let inner = lbfgs(fg, &mut x, omega, settings.max_inner, settings.memory);
        inner_total += inner.iterations;
        stationarity = inner.gradient_norm;
        nlp.evaluate(&x, &mut c);
        let feas = inf_norm(&c);
        log::trace!(
            "outer {outer}: rho={rho:.1e} |c|={feas:.2e} |g|={stationarity:.2e} inner={}",
            inner.iterations
        );

        if feas <= eta {
            if feas <= settings.feasibility_tol && stationarity <= settings.optimality_tol {
                converged = true;
                break;
            }
            for (l, ci) in lambda.iter_mut().zip(&c) {
                *l += rho * ci;
            }
            eta /= rho.powf(0.9);
            omega /= rho;
        } else {
            if rho >= settings.penalty_max {
                if inner.stalled {
                    break;
                }
            } else {
                rho = (rho * settings.penalty_growth).min(settings.penalty_max);
            }
            eta = 1.0 / rho.powf(0.1);
            omega = 1.0 / rho;
        }
        eta = eta.max(settings.feasibility_tol);
        omega = omega.max(settings.optimality_tol);
    }

    let objective = nlp.evaluate(&x, &mut c);
    let constraint_norm = inf_norm(&c);
    if !converged && constraint_norm <= settings.feasibility_tol && stationarity <= settings.optimality_tol {
        converged = true;
    }
    AugLagReport {
        x,
        objective,
        multipliers: lambda,
        constraint_norm,
        stationarity,
        outer_iterations: outer,
        inner_iterations: inner_total,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// line search could not make progress
    pub stalled: bool,
}

/// Limited-memory BFGS with a strong Wolfe line search. Stops when the
/// gradient infinity norm drops below `gtol`.
pub fn lbfgs<F>(mut fg: F, x: &mut [f64], gtol: f64, max_iter: usize, memory: usize) -> InnerOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut f = fg(x, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut dir = vec![0.0; d];
    let mut x_new = vec![0.0; d];
    let mut g_new = vec![0.0; d];
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < max_iter {
        if inf_norm(&g) <= gtol {
            break;
        }
        // two-loop recursion
        dir.iter_mut().zip(&g).for_each(|(p, gi)| *p = -gi);
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(p, yi)| *p -= a * yi);
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / inf_norm(&g).max(1e-300));
        dir.iter_mut().for_each(|p| *p *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(p, si)| *p += (a - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir.iter_mut().zip(&g).for_each(|(p, gi)| *p = -gi / inf_norm(&g).max(1e-300));
            slope = dot(&g, &dir);
        }

        let Some((step, f_new)) = wolfe_search(&mut fg, x, f, slope, &dir, &mut x_new, &mut g_new) else {
            if hist.is_empty() {
                stalled = true;
                break;
            }
            hist.clear();
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = dir.iter().map(|p| step * p).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        let decrease = f - f_new;
        f = f_new;
        if decrease.abs() <= 1e-16 * f.abs().max(1e-300) && inf_norm(&g) > gtol && hist.is_empty() {
            stalled = true;
            break;
        }
    }
    InnerOutcome {
        value: f,
        gradient_norm: inf_norm(&g),
        iterations,
        stalled,
    }
}

/// Strong Wolfe line search (bracketing and cubic-interpolation zoom).
/// On success `x_new`/`g_new` hold the accepted point.
fn wolfe_search<F>(
    fg: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<(f64, f64)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut eval = |t: f64, x_new: &mut [f64], g_new: &mut [f64]| -> (f64, f64) {
        for i in 0..x.len() {
            x_new[i] = x[i] + t * dir[i];
        }
        let f = fg(x_new, g_new);
        (f, dot(g_new, dir))
    };

    let mut t_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = slope0;
    let mut t = 1.0;
    for i in 0..30 {
        let (ft, dt) = eval(t, x_new, g_new);
        if !ft.is_finite() {
            t = 0.5 * (t_prev + t);
            continue;
        }
        if ft > f0 + C1 * t * slope0 || (i > 0 && ft >= f_prev) {
            return zoom(&mut eval, f0, slope0, (t_prev, f_prev, d_prev), (t, ft, dt), x_new, g_new);
        }
        if dt.abs() <= -C2 * slope0 {
            return Some((t, ft));
        }
        if dt >= 0.0 {
            return zoom(&mut eval, f0, slope0, (t, ft, dt), (t_prev, f_prev, d_prev), x_new, g_new);
        }
        t_prev = t;
        f_prev = ft;
        d_prev = dt;
        t *= 2.0;
    }
    None
}

type Probe = (f64, f64, f64);

fn zoom<E>(
    eval: &mut E,
    f0: f64,
    slope0: f64,
    mut lo: Probe,
    mut hi: Probe,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<(f64, f64)>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> (f64, f64),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let t = cubic_minimizer(lo, hi);
        let (ft, dt) = eval(t, x_new, g_new);
        if !ft.is_finite() || ft > f0 + C1 * t * slope0 || ft >= lo.1 {
            hi = (t, ft, dt);
        } else {
            if dt.abs() <= -C2 * slope0 {
                return Some((t, ft));
            }
            if dt * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, ft, dt);
        }
        if (hi.0 - lo.0).abs() <= 1e-14 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // accept the best sufficient-decrease point found, if any
    if lo.0 > 0.0 && lo.1 < f0 {
        let (ft, _) = eval(lo.0, x_new, g_new);
        return Some((lo.0, ft));
    }
    None
}

/// Minimizer of the cubic interpolating two probes, safeguarded into the
/// middle of the bracket.
fn cubic_minimizer(a: Probe, b: Probe) -> f64 {
    let (ta, fa, da) = a;
    let (tb, fb, db) = b;
    let lo = ta.min(tb);
    let hi = ta.max(tb);
    let width = hi - lo;
    let d1 = da + db - 3.0 * (fa - fb) / (ta - tb);
    let disc = d1 * d1 - da * db;
    let mut t = 0.5 * (ta + tb);
    if disc >= 0.0 && fb.is_finite() {
        let d2 = disc.sqrt() * (tb - ta).signum();
        let cand = tb - (tb - ta) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if cand.is_finite() {
            t = cand;
        }
    }
    t.clamp(lo + 0.1 * width, hi - 0.1 * width)
}
