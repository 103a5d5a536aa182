//! Rigid-body dynamics of planar serial chains (one or two revolute links)
//! driven by DC motors.
//!
//! Joint angles are measured from the downward vertical, so `q = 0` is the
//! stable hanging equilibrium. The second joint angle is relative to the
//! first link. The equations of motion are
//!
//! ```text
//! M(q) a + C(q, v) v + g(q) + B v = u
//! ```
//!
//! with viscous friction `B = diag(b_i)`. Electrical power per joint is
//! `r_i u_i^2 + v_i u_i` with the Joule weight `r_i = R_a / k_t^2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub(crate) const MAX_DOF: usize = 2;

pub(crate) type Vec2 = [f64; MAX_DOF];
pub(crate) type Mat2 = [[f64; MAX_DOF]; MAX_DOF];

/// One rigid link. Inertia is about the center of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    /// kg
    pub mass: f64,
    /// joint-to-joint length, m
    pub length: f64,
    /// distance from the proximal joint to the center of mass, m
    pub com: f64,
    /// rotational inertia about the center of mass, kg m^2
    pub inertia: f64,
}

/// Armature parameters of the motor driving one joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motor {
    /// armature resistance, ohm
    pub resistance: f64,
    /// torque constant, N m / A
    pub torque_constant: f64,
}

impl Motor {
    /// Joule weight `R_a / k_t^2`.
    pub fn joule_weight(&self) -> f64 {
        self.resistance / (self.torque_constant * self.torque_constant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    #[serde(default)]
    pub name: String,
    /// m/s^2, acting along the downward vertical of the motion plane
    pub gravity: f64,
    pub links: Vec<Link>,
    /// viscous friction per joint, N m s / rad
    pub friction: Vec<f64>,
    pub motors: Vec<Motor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        State { q, v }
    }
}

/// Joint torques, N m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector(pub Vec<f64>);

impl RobotModel {
    /// Point-mass pendulum: 1 kg at 0.5 m, b = 0.1, R_a = 1, k_t = 1.
    pub fn pendulum() -> Self {
        RobotModel {
            name: "pendulum".into(),
            gravity: 9.81,
            links: vec![Link {
                mass: 1.0,
                length: 0.5,
                com: 0.5,
                inertia: 0.0,
            }],
            friction: vec![0.1],
            motors: vec![Motor {
                resistance: 1.0,
                torque_constant: 1.0,
            }],
        }
    }

    /// SCARA-like two-link arm of uniform rods moving in a horizontal plane.
    pub fn scara() -> Self {
        let rod = |mass: f64, length: f64| Link {
            mass,
            length,
            com: 0.5 * length,
            inertia: mass * length * length / 12.0,
        };
        RobotModel {
            name: "scara".into(),
            gravity: 0.0,
            links: vec![rod(1.0, 0.5), rod(1.0, 0.4)],
            friction: vec![0.1, 0.1],
            motors: vec![
                Motor {
                    resistance: 1.0,
                    torque_constant: 1.0,
                },
                Motor {
                    resistance: 1.0,
                    torque_constant: 1.0,
                },
            ],
        }
    }

    /// Unit-inertia single joint with no gravity, no friction and `r = 1`:
    /// the double integrator `u = a`.
    pub fn double_integrator() -> Self {
        RobotModel {
            name: "double_integrator".into(),
            gravity: 0.0,
            links: vec![Link {
                mass: 1.0,
                length: 1.0,
                com: 0.0,
                inertia: 1.0,
            }],
            friction: vec![0.0],
            motors: vec![Motor {
                resistance: 1.0,
                torque_constant: 1.0,
            }],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: RobotModel = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.links.len();
        if n == 0 || n > MAX_DOF {
            return Err(Error::InvalidModel(format!(
                "only planar chains with 1 or 2 links are supported, got {n}"
            )));
        }
        if self.friction.len() != n || self.motors.len() != n {
            return Err(Error::InvalidModel(format!(
                "expected {n} friction coefficients and motors, got {} and {}",
                self.friction.len(),
                self.motors.len()
            )));
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            return Err(Error::InvalidModel("gravity must be finite and non-negative".into()));
        }
        for (i, l) in self.links.iter().enumerate() {
            let ok = l.mass > 0.0
                && l.length > 0.0
                && l.inertia >= 0.0
                && l.com.is_finite()
                && l.mass.is_finite()
                && l.length.is_finite()
                && l.inertia.is_finite();
            if !ok {
                return Err(Error::InvalidModel(format!(
                    "link {i}: mass and length must be positive, inertia non-negative"
                )));
            }
            if l.inertia + l.mass * l.com * l.com <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "link {i} has zero rotational inertia about its joint"
                )));
            }
        }
        for (i, b) in self.friction.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                return Err(Error::InvalidModel(format!("friction {i} must be non-negative")));
            }
        }
        for (i, m) in self.motors.iter().enumerate() {
            if !(m.resistance > 0.0 && m.torque_constant > 0.0 && m.joule_weight().is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "motor {i}: resistance and torque constant must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn joule_weights(&self) -> Vec<f64> {
        self.motors.iter().map(Motor::joule_weight).collect()
    }

    /// Stable identifier of the model parameters (hex SHA-256 of the canonical JSON).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("model serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn mass_matrix(&self, q: &[f64]) -> Mat2 {
        let l1 = &self.links[0];
        if self.links.len() == 1 {
            return [[l1.inertia + l1.mass * l1.com * l1.com, 0.0], [0.0, 1.0]];
        }
        let l2 = &self.links[1];
        let beta = l2.mass * l1.length * l2.com;
        let c2 = q[1].cos();
        let m22 = l2.inertia + l2.mass * l2.com * l2.com;
        let m12 = m22 + beta * c2;
        let m11 = l1.inertia
            + l1.mass * l1.com * l1.com
            + m22
            + l2.mass * l1.length * l1.length
            + 2.0 * beta * c2;
        [[m11, m12], [m12, m22]]
    }

    /// `C(q, v) v + g(q) + B v`.
    pub(crate) fn bias(&self, q: &[f64], v: &[f64]) -> Vec2 {
        let g = self.gravity;
        let l1 = &self.links[0];
        if self.links.len() == 1 {
            return [
                l1.mass * g * l1.com * q[0].sin() + self.friction[0] * v[0],
                0.0,
            ];
        }
        let l2 = &self.links[1];
        let beta = l2.mass * l1.length * l2.com;
        let s2 = q[1].sin();
        let s12 = (q[0] + q[1]).sin();
        let g2 = l2.mass * g * l2.com * s12;
        let g1 = (l1.mass * l1.com + l2.mass * l1.length) * g * q[0].sin() + g2;
        let c1 = -beta * s2 * (2.0 * v[0] * v[1] + v[1] * v[1]);
        let c2 = beta * s2 * v[0] * v[0];
        [
            c1 + g1 + self.friction[0] * v[0],
            c2 + g2 + self.friction[1] * v[1],
        ]
    }

    /// Partial derivatives of [`Self::bias`]: `(d bias / dq, d bias / dv)`,
    /// indexed `[row][column]`.
    fn bias_jacobians(&self, q: &[f64], v: &[f64]) -> (Mat2, Mat2) {
        let g = self.gravity;
        let l1 = &self.links[0];
        if self.links.len() == 1 {
            return (
                [[l1.mass * g * l1.com * q[0].cos(), 0.0], [0.0, 0.0]],
                [[self.friction[0], 0.0], [0.0, 0.0]],
            );
        }
        let l2 = &self.links[1];
        let beta = l2.mass * l1.length * l2.com;
        let (s2, c2) = q[1].sin_cos();
        let c12 = (q[0] + q[1]).cos();
        let dg2 = l2.mass * g * l2.com * c12;
        let dg1_dq1 = (l1.mass * l1.com + l2.mass * l1.length) * g * q[0].cos() + dg2;
        let w = 2.0 * v[0] * v[1] + v[1] * v[1];
        let dq = [
            [dg1_dq1, -beta * c2 * w + dg2],
            [dg2, beta * c2 * v[0] * v[0] + dg2],
        ];
        let dv = [
            [
                -beta * s2 * 2.0 * v[1] + self.friction[0],
                -beta * s2 * (2.0 * v[0] + 2.0 * v[1]),
            ],
            [beta * s2 * 2.0 * v[0], self.friction[1]],
        ];
        (dq, dv)
    }

    /// `dM/dq_j` for each joint `j`.
    fn mass_matrix_derivatives(&self, q: &[f64]) -> [Mat2; MAX_DOF] {
        let zero = [[0.0; MAX_DOF]; MAX_DOF];
        if self.links.len() == 1 {
            return [zero, zero];
        }
        let beta = self.links[1].mass * self.links[0].length * self.links[1].com;
        let s2 = q[1].sin();
        [zero, [[-2.0 * beta * s2, -beta * s2], [-beta * s2, 0.0]]]
    }

    pub(crate) fn forward_raw(&self, q: &[f64], v: &[f64], u: &[f64]) -> Vec2 {
        let m = self.mass_matrix(q);
        let b = self.bias(q, v);
        let n = self.links.len();
        let mut rhs = [0.0; MAX_DOF];
        for i in 0..n {
            rhs[i] = u[i] - b[i];
        }
        solve(&m, &rhs, n)
    }

    /// Forward dynamics together with its Jacobians with respect to `q`, `v`, `u`.
    pub(crate) fn forward_with_jacobians(&self, q: &[f64], v: &[f64], u: &[f64]) -> (Vec2, Mat2, Mat2, Mat2) {
        let n = self.links.len();
        let m = self.mass_matrix(q);
        let minv = inverse(&m, n);
        let b = self.bias(q, v);
        let mut rhs = [0.0; MAX_DOF];
        for i in 0..n {
            rhs[i] = u[i] - b[i];
        }
        let a = mat_vec(&minv, &rhs, n);
        let (db_dq, db_dv) = self.bias_jacobians(q, v);
        let dm = self.mass_matrix_derivatives(q);
        let mut da_dq = [[0.0; MAX_DOF]; MAX_DOF];
        let mut da_dv = [[0.0; MAX_DOF]; MAX_DOF];
        for j in 0..n {
            let dma = mat_vec(&dm[j], &a, n);
            let mut col_q = [0.0; MAX_DOF];
            let mut col_v = [0.0; MAX_DOF];
            for i in 0..n {
                col_q[i] = -db_dq[i][j] - dma[i];
                col_v[i] = -db_dv[i][j];
            }
            let xq = mat_vec(&minv, &col_q, n);
            let xv = mat_vec(&minv, &col_v, n);
            for i in 0..n {
                da_dq[i][j] = xq[i];
                da_dv[i][j] = xv[i];
            }
        }
        (a, da_dq, da_dv, minv)
    }

    pub(crate) fn inverse_raw(&self, q: &[f64], v: &[f64], a: &[f64]) -> Vec2 {
        let n = self.links.len();
        let m = self.mass_matrix(q);
        let b = self.bias(q, v);
        let ma = mat_vec(&m, a, n);
        let mut u = [0.0; MAX_DOF];
        for i in 0..n {
            u[i] = ma[i] + b[i];
        }
        u
    }

    /// Joint accelerations `M^-1 (u - C v - g - B v)`.
    pub fn forward_dynamics(&self, state: &State, u: &ControlVector) -> Result<Vec<f64>> {
        let n = self.dof();
        check_dim("q", n, state.q.len())?;
        check_dim("v", n, state.v.len())?;
        check_dim("u", n, u.0.len())?;
        let a = self.forward_raw(&state.q, &state.v, &u.0);
        debug_assert!(a[..n].iter().all(|x| x.is_finite()));
        Ok(a[..n].to_vec())
    }

    /// Torques `M a + C v + g + B v`; the exact inverse of [`Self::forward_dynamics`].
    pub fn inverse_dynamics(&self, q: &[f64], v: &[f64], a: &[f64]) -> Result<ControlVector> {
        let n = self.dof();
        check_dim("q", n, q.len())?;
        check_dim("v", n, v.len())?;
        check_dim("a", n, a.len())?;
        Ok(ControlVector(self.inverse_raw(q, v, a)[..n].to_vec()))
    }

    /// Instantaneous electrical power `sum_i r_i u_i^2 + v_i u_i` in watts.
    /// Negative values (net back-driving) are kept.
    pub fn electrical_power(&self, state: &State, u: &ControlVector) -> Result<f64> {
        let n = self.dof();
        check_dim("v", n, state.v.len())?;
        check_dim("u", n, u.0.len())?;
        Ok(self.power_raw(&state.v, &u.0))
    }

    pub(crate) fn power_raw(&self, v: &[f64], u: &[f64]) -> f64 {
        self.motors
            .iter()
            .zip(u.iter().zip(v))
            .map(|(m, (u, v))| m.joule_weight() * u * u + v * u)
            .sum()
    }

    /// Energy of a trajectory by trapezoidal quadrature of the electrical power.
    /// Missing controls are recovered by inverse dynamics with accelerations
    /// finite-differenced from the velocities. Stores the result in `traj.energy`.
    pub fn trajectory_energy(&self, traj: &mut Trajectory) -> Result<f64> {
        traj.validate(self.dof())?;
        if traj.u.is_none() {
            if traj.q.len() < 4 {
                return Err(Error::MissingControls {
                    points: traj.q.len(),
                });
            }
            let h = traj.t_f / (traj.q.len() - 1) as f64;
            let acc = differentiate_uniform(&traj.v, h);
            let u = traj
                .q
                .iter()
                .zip(&traj.v)
                .zip(&acc)
                .map(|((q, v), a)| self.inverse_raw(q, v, a)[..self.dof()].to_vec())
                .collect();
            traj.u = Some(u);
        }
        let u = traj.u.as_ref().expect("controls present");
        let power: Vec<f64> = traj
            .v
            .iter()
            .zip(u)
            .map(|(v, u)| self.power_raw(v, u))
            .collect();
        let e = trapezoid(&traj.times, &power);
        traj.energy = Some(e);
        Ok(e)
    }
}

/// Time-indexed joint trajectory on a uniform grid from 0 to `t_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t_f: f64,
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub u: Option<Vec<Vec<f64>>>,
    pub energy: Option<f64>,
}

impl Trajectory {
    /// Uniform grid with `intervals + 1` points.
    pub fn uniform_times(t_f: f64, intervals: usize) -> Vec<f64> {
        crate::prior::normalized_grid(intervals + 1)
            .into_iter()
            .map(|x| x * t_f)
            .collect()
    }

    pub fn intervals(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let pts = self.times.len();
        if pts < 3 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least 2 intervals, got {}",
                pts.saturating_sub(1)
            )));
        }
        if self.times[0] != 0.0 || (self.times[pts - 1] - self.t_f).abs() > 1e-9 * self.t_f.max(1.0) {
            return Err(Error::InvalidTrajectory("time grid must span [0, t_f]".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidTrajectory("time grid must be strictly increasing".into()));
        }
        let rows_ok = |rows: &Vec<Vec<f64>>| rows.len() == pts && rows.iter().all(|r| r.len() == n);
        if !rows_ok(&self.q) || !rows_ok(&self.v) || self.u.as_ref().is_some_and(|u| !rows_ok(u)) {
            return Err(Error::InvalidTrajectory(format!(
                "array shapes must be {pts} x {n}"
            )));
        }
        Ok(())
    }
}

/// Trapezoidal rule on an arbitrary increasing grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum()
}

/// Second-order finite-difference derivative of rows sampled with spacing `h`:
/// central in the interior, one-sided three-point stencils at the ends.
pub fn differentiate_uniform(rows: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let m = rows.len();
    assert!(m >= 3, "need at least three samples");
    let n = rows[0].len();
    (0..m)
        .map(|k| {
            (0..n)
                .map(|j| {
                    if k == 0 {
                        (-3.0 * rows[0][j] + 4.0 * rows[1][j] - rows[2][j]) / (2.0 * h)
                    } else if k == m - 1 {
                        (3.0 * rows[m - 1][j] - 4.0 * rows[m - 2][j] + rows[m - 3][j]) / (2.0 * h)
                    } else {
                        (rows[k + 1][j] - rows[k - 1][j]) / (2.0 * h)
                    }
                })
                .collect()
        })
        .collect()
}

fn solve(m: &Mat2, rhs: &Vec2, n: usize) -> Vec2 {
    mat_vec(&inverse(m, n), rhs, n)
}

fn inverse(m: &Mat2, n: usize) -> Mat2 {
    if n == 1 {
        assert!(m[0][0] > 0.0, "singular mass matrix");
        return [[1.0 / m[0][0], 0.0], [0.0, 0.0]];
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    assert!(det > 0.0, "singular mass matrix");
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

fn mat_vec(m: &Mat2, x: &[f64], n: usize) -> Vec2 {
    let mut out = [0.0; MAX_DOF];
    for i in 0..n {
        for j in 0..n {
            out[i] += m[i][j] * x[j];
        }
    }
    out
}
