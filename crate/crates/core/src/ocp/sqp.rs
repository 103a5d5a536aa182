//! Sequential quadratic programming for equality-constrained problems.
//!
//! Each step solves the Newton-KKT system
//!
//! ```text
//! [H + rho J^T J   J^T] [p]   [-grad f]
//! [J               0  ] [y] = [-c     ]
//! ```
//!
//! where `H` is the Lagrangian Hessian from colored central differences of
//! the analytic gradient. The augmentation `rho J^T J` leaves the step
//! unchanged (the multiplier shifts by `rho c`) and makes the leading block
//! positive definite once `rho` is large enough; a banded Cholesky test
//! detects when a diagonal shift is needed instead. The KKT matrix is
//! factorized as a banded LU after interleaving constraints with variables.
//! Steps are globalized by an l1 merit line search with a second-order
//! correction and Levenberg-style damping after short steps.

use super::banded::{BandLu, BandedSym};
use super::optim::{dot, inf_norm, EqualityNlp, SparseRows};

#[derive(Debug, Clone)]
pub struct SqpSettings {
    pub max_iterations: usize,
    /// infinity norm on `c`
    pub feasibility_tol: f64,
    /// infinity norm on `grad f + J^T lambda`
    pub optimality_tol: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            max_iterations: 200,
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SqpReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub constraint_norm: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
}

impl Point {
    fn new<P: EqualityNlp + ?Sized>(nlp: &P, x: Vec<f64>) -> Self {
        let mut c = vec![0.0; nlp.num_constraints()];
        let f = nlp.evaluate(&x, &mut c);
        Point { x, f, c }
    }

    fn merit(&self, nu: f64) -> f64 {
        self.f + nu * l1(&self.c)
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Banded Lagrangian Hessian by colored central differences of `grad f + J^T lambda`.
fn lagrangian_hessian<P: EqualityNlp + ?Sized>(nlp: &P, x: &[f64], lambda: &[f64], bw: usize) -> BandedSym {
    let d = x.len();
    let mut hess = BandedSym::zeros(d, bw);
    let stride = 2 * bw + 1;
    let mut z = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for color in 0..stride.min(d) {
        let cols: Vec<usize> = (color..d).step_by(stride).collect();
        let steps: Vec<f64> = cols.iter().map(|&j| 1e-5 * x[j].abs().max(1.0)).collect();
        for (&j, &s) in cols.iter().zip(&steps) {
            z[j] = x[j] + s;
        }
        nlp.gradient(&z, lambda, &mut gp);
        for (&j, &s) in cols.iter().zip(&steps) {
            z[j] = x[j] - s;
        }
        nlp.gradient(&z, lambda, &mut gm);
        for (&j, &s) in cols.iter().zip(&steps) {
            z[j] = x[j];
            for i in j.saturating_sub(bw)..=(j + bw).min(d - 1) {
                // off-diagonal entries are estimated from both columns; average them
                let weight = if i == j { 1.0 } else { 0.5 };
                hess.add(i, j, weight * (gp[i] - gm[i]) / (2.0 * s));
            }
        }
    }
    hess
}

/// Damping increases tried before falling back to backtracking.
const MAX_DAMPED_RETRIES: usize = 8;

/// Banded `J^T J`.
fn gram(jac: &SparseRows, d: usize, bw: usize) -> BandedSym {
    let mut out = BandedSym::zeros(d, bw);
    for row in jac {
        for &(a, va) in row {
            for &(b, vb) in row {
                if b <= a {
                    assert!(a - b <= bw, "Jacobian couples variables beyond the Hessian bandwidth");
                    out.add(a, b, va * vb);
                }
            }
        }
    }
    out
}

/// KKT system in an interleaved ordering where each constraint follows the
/// last variable it touches, which keeps the matrix banded.
struct KktLayout {
    /// position of each variable, then each constraint
    position: Vec<usize>,
    half_bandwidth: usize,
}

impl KktLayout {
    fn new(jac: &SparseRows, d: usize, hess_bw: usize) -> Self {
        let m = jac.len();
        let mut after: Vec<Vec<usize>> = vec![Vec::new(); d];
        let mut orphans = Vec::new();
        for (r, row) in jac.iter().enumerate() {
            match row.iter().map(|&(j, _)| j).max() {
                Some(j) => after[j].push(r),
                None => orphans.push(r),
            }
        }
        let mut position = vec![0usize; d + m];
        let mut next = 0;
        for (j, rows) in after.iter().enumerate() {
            position[j] = next;
            next += 1;
            for &r in rows {
                position[d + r] = next;
                next += 1;
            }
        }
        for r in orphans {
            position[d + r] = next;
            next += 1;
        }
        let mut half_bandwidth = 0usize;
        for i in 0..d {
            for j in i..(i + hess_bw + 1).min(d) {
                half_bandwidth = half_bandwidth.max(position[i].abs_diff(position[j]));
            }
        }
        for (r, row) in jac.iter().enumerate() {
            for &(j, _) in row {
                half_bandwidth = half_bandwidth.max(position[d + r].abs_diff(position[j]));
            }
        }
        KktLayout {
            position,
            half_bandwidth,
        }
    }

    /// Factorizes `[H J^T; J 0]`.
    fn factorize(&self, hess: &BandedSym, jac: &SparseRows) -> Option<BandLu> {
        let d = hess.size();
        let size = self.position.len();
        let bw = self.half_bandwidth;
        let mut lu = BandLu::zeros(size, bw, bw);
        let hb = hess.bandwidth();
        for i in 0..d {
            for j in i.saturating_sub(hb)..(i + hb + 1).min(d) {
                lu.add(self.position[i], self.position[j], hess.get(i, j));
            }
        }
        for (r, row) in jac.iter().enumerate() {
            let pr = self.position[d + r];
            for &(j, v) in row {
                lu.add(pr, self.position[j], v);
                lu.add(self.position[j], pr, v);
            }
        }
        lu.factorize().then_some(lu)
    }

    /// Solves for `(p, y)` with right-hand side `(-g, -c)`.
    fn solve(&self, lu: &BandLu, g: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = g.len();
        let mut rhs = vec![0.0; self.position.len()];
        for (i, gi) in g.iter().enumerate() {
            rhs[self.position[i]] = -gi;
        }
        for (r, cr) in c.iter().enumerate() {
            rhs[self.position[d + r]] = -cr;
        }
        lu.solve_in_place(&mut rhs);
        let p = (0..d).map(|i| rhs[self.position[i]]).collect();
        let y = (0..c.len()).map(|r| rhs[self.position[d + r]]).collect();
        (p, y)
    }
}

/// Smallest augmentation `H + rho J^T J + shift I` that is positive definite.
/// `damping` is a relative shift applied before any further increase.
fn convexify(hess: &BandedSym, jtj: &BandedSym, rho: &mut f64, damping: f64) -> Option<BandedSym> {
    let d = hess.size();
    let scale = (0..d).map(|i| hess.get(i, i).abs()).fold(0.0, f64::max).max(1e-12);
    let jscale = (0..d).map(|i| jtj.get(i, i)).fold(0.0, f64::max).max(1e-300);
    let floor = 1e-6 * scale / jscale;
    *rho = rho.max(floor);
    let mut shift = 0.0;
    loop {
        let mut trial = hess.clone();
        trial.add_scaled(jtj, *rho);
        if damping > 0.0 {
            for i in 0..d {
                let a = trial.get(i, i).abs().max(1e-8 * scale);
                trial.add(i, i, damping * a);
            }
        }
        trial.shift_diagonal(shift);
        if trial.clone().cholesky() {
            return Some(trial);
        }
        if *rho < 1e12 * floor {
            *rho *= 10.0;
        } else if shift < 1e6 * scale {
            shift = if shift == 0.0 { 1e-8 * scale } else { 10.0 * shift };
        } else {
            return None;
        }
    }
}

/// Least-squares multipliers `argmin |g + J^T lambda|`.
fn least_squares_multipliers(layout: &KktLayout, jac: &SparseRows, g: &[f64]) -> Vec<f64> {
    let d = g.len();
    let mut eye = BandedSym::zeros(d, 0);
    eye.shift_diagonal(1.0);
    match layout.factorize(&eye, jac) {
        Some(lu) => layout.solve(&lu, g, &vec![0.0; jac.len()]).1,
        None => vec![0.0; jac.len()],
    }
}

/// Minimizes `f` subject to `c = 0` starting from `x0`.
pub fn sqp<P: EqualityNlp + ?Sized>(nlp: &P, x0: &[f64], settings: &SqpSettings) -> SqpReport {
    let d = nlp.dim();
    let m = nlp.num_constraints();
    let bw = nlp.hessian_bandwidth().unwrap_or(d.saturating_sub(1)).min(d.saturating_sub(1));
    let mut pt = Point::new(nlp, x0.to_vec());
    let zeros = vec![0.0; m];
    let mut g = vec![0.0; d];
    nlp.gradient(&pt.x, &zeros, &mut g);
    let mut jac = nlp.constraint_jacobian(&pt.x);
    let layout = KktLayout::new(&jac, d, bw);
    let mut lambda = least_squares_multipliers(&layout, &jac, &g);
    let mut nu: f64 = 0.0;
    let mut rho: f64 = 0.0;
    // Levenberg-style damping: grows after short steps, decays after full ones
    let mut damping: f64 = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut stationarity;

    loop {
        let mut lag = vec![0.0; d];
        nlp.gradient(&pt.x, &lambda, &mut lag);
        stationarity = inf_norm(&lag);
        let feas = inf_norm(&pt.c);
        log::trace!("sqp {iterations}: f={:.12e} |c|={feas:.2e} |L|={stationarity:.2e} rho={rho:.1e}", pt.f);
        if feas <= settings.feasibility_tol && stationarity <= settings.optimality_tol {
            converged = true;
            break;
        }
        if iterations >= settings.max_iterations {
            break;
        }
        iterations += 1;

        let hess = lagrangian_hessian(nlp, &pt.x, &lambda, bw);
        rho *= 0.1;
        let jtj = gram(&jac, d, bw);
        let mut retries = 0;
        let step = loop {
            let Some(haug) = convexify(&hess, &jtj, &mut rho, damping) else {
                break None;
            };
            let Some(lu) = layout.factorize(&haug, &jac) else {
                break None;
            };
            let (p, y) = layout.solve(&lu, &g, &pt.c);
            let lambda_new: Vec<f64> = y.iter().zip(&pt.c).map(|(y, c)| y - rho * c).collect();

            let gp = dot(&g, &p);
            let c1 = l1(&pt.c);
            // curvature of the step from the KKT rows: p^T W p = -g^T p + y^T c
            let curvature = (-gp + dot(&y, &pt.c)).max(0.0);
            nu = nu.max(1.1 * inf_norm(&lambda_new));
            if c1 > 0.0 {
                nu = nu.max((gp + 0.5 * curvature) / (0.7 * c1));
            }
            let slope = gp - nu * c1;
            let phi0 = pt.merit(nu);
            let slack = 1e-13 * phi0.abs().max(1.0);
            let sufficient =
                |cand: &Point, t: f64| cand.f.is_finite() && cand.merit(nu) <= phi0 + 1e-4 * t * slope + slack;
            let step_to = |t: f64, extra: Option<&[f64]>| -> Point {
                let x: Vec<f64> = match extra {
                    Some(e) => pt.x.iter().zip(&p).zip(e).map(|((x, p), e)| x + t * p + e).collect(),
                    None => pt.x.iter().zip(&p).map(|(x, p)| x + t * p).collect(),
                };
                Point::new(nlp, x)
            };

            let full = step_to(1.0, None);
            if sufficient(&full, 1.0) {
                break Some((full, 1.0, lambda_new));
            }
            if full.f.is_finite() {
                // second-order correction toward the constraint manifold
                let (corr, _) = layout.solve(&lu, &vec![0.0; d], &full.c);
                let soc = step_to(1.0, Some(&corr));
                if sufficient(&soc, 1.0) {
                    break Some((soc, 1.0, lambda_new));
                }
            }
            // a rejected full step is retried with a shorter damped step first
            if retries < MAX_DAMPED_RETRIES {
                retries += 1;
                damping = (4.0 * damping).max(1e-6);
                continue;
            }
            let mut t = 0.5;
            let mut found = None;
            while t > 1e-10 {
                let cand = step_to(t, None);
                if sufficient(&cand, t) {
                    found = Some((cand, t, lambda_new.clone()));
                    break;
                }
                t *= 0.5;
            }
            if found.is_some() || damping >= 1e4 {
                break found;
            }
            damping = (10.0 * damping).max(1e-6);
        };
        let Some((next, t, lambda_new)) = step else {
            log::debug!("sqp step computation failed at iteration {iterations}");
            break;
        };
        log::trace!("   t={t} retries={retries} damping={damping:.1e} nu={nu:.2e}");
        if t == 1.0 && retries == 0 {
            damping = if damping > 1e-9 { damping / 3.0 } else { 0.0 };
        }
        for (l, ln) in lambda.iter_mut().zip(&lambda_new) {
            *l += t * (ln - *l);
        }
        pt = next;
        nlp.gradient(&pt.x, &zeros, &mut g);
        jac = nlp.constraint_jacobian(&pt.x);
    }

    SqpReport {
        constraint_norm: inf_norm(&pt.c),
        objective: pt.f,
        x: pt.x,
        multipliers: lambda,
        stationarity,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x^2 - y^2 + 3 y  s.t. y - x^2 = 0: indefinite Hessian, convex on the manifold.
    struct Saddle;
    impl EqualityNlp for Saddle {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64], c: &mut [f64]) -> f64 {
            c[0] = x[1] - x[0] * x[0];
            x[0] * x[0] - x[1] * x[1] + 3.0 * x[1]
        }
        fn gradient(&self, x: &[f64], w: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * x[0] - 2.0 * w[0] * x[0];
            g[1] = -2.0 * x[1] + 3.0 + w[0];
        }
    }

    #[test]
    fn solves_problem_with_indefinite_hessian() {
        // on y = x^2: f = 4x^2 - x^4, local minimum at the origin
        let rep = sqp(&Saddle, &[0.3, 0.2], &SqpSettings::default());
        assert!(rep.converged, "{rep:?}");
        assert!(rep.x[0].abs() < 1e-8 && rep.x[1].abs() < 1e-8, "{:?}", rep.x);
        assert!((rep.multipliers[0] + 3.0).abs() < 1e-6);
    }
}
