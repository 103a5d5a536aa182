//! Cubic point-to-point prior and the boundary scaling function.
//!
//! The prior moves from `q_0` to `q_f` in normalized time `xi = t / t_f`
//! with zero velocity at both ends. Residual regressors multiply their raw
//! output by [`scaling`], which vanishes together with its derivative at
//! `xi = 0` and `xi = 1`, so `prior + residual` keeps the boundary
//! conditions exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-time point-to-point problem: total time and boundary positions.
/// Boundary velocities are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub t_f: f64,
    pub q_0: Vec<f64>,
    pub q_f: Vec<f64>,
}

impl ProblemSpec {
    pub fn new(t_f: f64, q_0: Vec<f64>, q_f: Vec<f64>) -> Result<Self> {
        let spec = ProblemSpec { t_f, q_0, q_f };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return Err(Error::InvalidSpec(format!("t_f must be positive, got {}", self.t_f)));
        }
        if self.q_0.is_empty() || self.q_0.len() != self.q_f.len() {
            return Err(Error::InvalidSpec(format!(
                "q_0 and q_f must be non-empty and equal length ({} vs {})",
                self.q_0.len(),
                self.q_f.len()
            )));
        }
        if self.q_0.iter().chain(&self.q_f).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite boundary position".into()));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.q_0.len()
    }

    /// Regression features `(t_f, q_0, q_f)`; the normalized time is prepended by callers.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(1 + 2 * self.dof());
        f.push(self.t_f);
        f.extend_from_slice(&self.q_0);
        f.extend_from_slice(&self.q_f);
        f
    }

    /// Lexicographic order on `(t_f, q_0, q_f)`, used for deterministic tie breaking.
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.features()
            .iter()
            .zip(other.features().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.dof().cmp(&other.dof()))
    }
}

/// Normalized time in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormalizedTime(f64);

impl NormalizedTime {
    pub fn new(xi: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&xi) {
            Ok(NormalizedTime(xi))
        } else {
            Err(Error::NormalizedTimeOutOfRange(xi))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Uniform grid of `points` normalized times including both ends.
pub fn normalized_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let last = (points - 1) as f64;
            (0..points)
                .map(|k| if k + 1 == points { 1.0 } else { k as f64 / last })
                .collect()
        }
    }
}

#[inline]
fn blend(xi: f64) -> f64 {
    xi * xi * (3.0 - 2.0 * xi)
}

#[inline]
fn blend_d1(xi: f64) -> f64 {
    6.0 * xi * (1.0 - xi)
}

#[inline]
fn blend_d2(xi: f64) -> f64 {
    6.0 - 12.0 * xi
}

/// Cubic prior position `q_0 + (q_f - q_0)(3 xi^2 - 2 xi^3)`.
pub fn cubic_prior(spec: &ProblemSpec, xi: NormalizedTime) -> Vec<f64> {
    // convex-combination form is exact at both ends in floating point
    let b = blend(xi.0);
    spec.q_0.iter().zip(&spec.q_f).map(|(a, f)| a * (1.0 - b) + f * b).collect()
}

/// `dp/dxi`; divide by `t_f` for the physical velocity.
pub fn cubic_prior_derivative(spec: &ProblemSpec, xi: NormalizedTime) -> Vec<f64> {
    let b = blend_d1(xi.0);
    spec.q_0.iter().zip(&spec.q_f).map(|(a, f)| (f - a) * b).collect()
}

/// `d^2p/dxi^2`; divide by `t_f^2` for the physical acceleration.
pub fn cubic_prior_second_derivative(spec: &ProblemSpec, xi: NormalizedTime) -> Vec<f64> {
    let b = blend_d2(xi.0);
    spec.q_0.iter().zip(&spec.q_f).map(|(a, f)| (f - a) * b).collect()
}

/// `s(xi) = xi^2 (1 - xi)^2`.
#[inline]
pub fn scaling(xi: f64) -> f64 {
    let a = xi * (1.0 - xi);
    a * a
}

/// `s'(xi) = 4 xi^3 - 6 xi^2 + 2 xi`.
#[inline]
pub fn scaling_derivative(xi: f64) -> f64 {
    2.0 * xi * (1.0 - xi) * (1.0 - 2.0 * xi)
}

/// Physical positions, velocities and accelerations of the cubic prior on a grid.
pub(crate) fn prior_kinematics(spec: &ProblemSpec, grid: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let tf = spec.t_f;
    let mut q = Vec::with_capacity(grid.len());
    let mut v = Vec::with_capacity(grid.len());
    let mut a = Vec::with_capacity(grid.len());
    for &x in grid {
        let xi = NormalizedTime(x);
        q.push(cubic_prior(spec, xi));
        v.push(cubic_prior_derivative(spec, xi).into_iter().map(|d| d / tf).collect());
        a.push(
            cubic_prior_second_derivative(spec, xi)
                .into_iter()
                .map(|d| d / (tf * tf))
                .collect(),
        );
    }
    (q, v, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec01() -> ProblemSpec {
        ProblemSpec::new(1.0, vec![0.0], vec![1.0]).unwrap()
    }

    fn nt(x: f64) -> NormalizedTime {
        NormalizedTime::new(x).unwrap()
    }

    #[test]
    fn prior_hits_boundaries() {
        let spec = ProblemSpec::new(1.3, vec![0.2, -1.0], vec![-0.7, 2.5]).unwrap();
        assert_eq!(cubic_prior(&spec, nt(0.0)), spec.q_0);
        assert_eq!(cubic_prior(&spec, nt(1.0)), spec.q_f);
        let mid = cubic_prior(&spec, nt(0.5));
        for j in 0..2 {
            assert!((mid[j] - 0.5 * (spec.q_0[j] + spec.q_f[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_quarter_point() {
        assert!((cubic_prior(&spec01(), nt(0.25))[0] - 0.15625).abs() < 1e-15);
    }

    #[test]
    fn prior_derivative_values() {
        let s = spec01();
        assert_eq!(cubic_prior_derivative(&s, nt(0.0))[0], 0.0);
        assert_eq!(cubic_prior_derivative(&s, nt(1.0))[0], 0.0);
        assert!((cubic_prior_derivative(&s, nt(0.5))[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn scaling_values() {
        assert_eq!(scaling(0.0), 0.0);
        assert_eq!(scaling(1.0), 0.0);
        assert_eq!(scaling(0.5), 0.0625);
        assert_eq!(scaling_derivative(0.0), 0.0);
        assert_eq!(scaling_derivative(1.0), 0.0);
        assert_eq!(scaling_derivative(0.5), 0.0);
    }

    #[test]
    fn scaling_derivative_matches_polynomial_form() {
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            let poly = 4.0 * x.powi(3) - 6.0 * x * x + 2.0 * x;
            assert!((scaling_derivative(x) - poly).abs() < 1e-15);
        }
    }

    #[test]
    fn scaling_derivative_matches_finite_differences() {
        let h = 1e-6;
        for k in 1..=100 {
            let x = k as f64 / 101.0;
            let fd = (scaling(x + h) - scaling(x - h)) / (2.0 * h);
            assert!((fd - scaling_derivative(x)).abs() < 1e-8, "xi={x}");
        }
    }

    #[test]
    fn normalized_time_rejects_out_of_range() {
        assert!(NormalizedTime::new(-1e-12).is_err());
        assert!(NormalizedTime::new(1.0 + 1e-12).is_err());
        assert!(NormalizedTime::new(f64::NAN).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::new(0.0, vec![0.0], vec![1.0]).is_err());
        assert!(ProblemSpec::new(1.0, vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(ProblemSpec::new(1.0, vec![], vec![]).is_err());
    }

    #[test]
    fn grid_is_exact_at_ends() {
        let g = normalized_grid(7);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[6], 1.0);
        assert_eq!(g.len(), 7);
    }

    proptest::proptest! {
        #[test]
        fn scaled_residual_keeps_boundaries(q0 in -3.0..3.0f64, qf in -3.0..3.0f64, o0 in -50.0..50.0f64, o1 in -50.0..50.0f64) {
            let spec = ProblemSpec::new(1.0, vec![q0], vec![qf]).unwrap();
            let start = cubic_prior(&spec, nt(0.0))[0] + scaling(0.0) * o0;
            let end = cubic_prior(&spec, nt(1.0))[0] + scaling(1.0) * o1;
            proptest::prop_assert_eq!(start, q0);
            proptest::prop_assert_eq!(end, qf);
        }
    }
}
