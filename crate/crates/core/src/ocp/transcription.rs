//! Trapezoidal direct collocation of the fixed-time minimum-energy problem.
//!
//! Decision vector, node-major:
//!
//! ```text
//! [u_0 | q_1 v_1 u_1 | ... | q_{K-1} v_{K-1} u_{K-1} | u_K]
//! ```
//!
//! The boundary states `q_0, v_0 = 0, q_K, v_K = 0` are pinned and do not
//! appear, so the dimension is `3n(K+1) - 4n`. The `2nK` equality constraints
//! are the collocation defects
//!
//! ```text
//! q_{k+1} - q_k - h/2 (v_k + v_{k+1})
//! v_{k+1} - v_k - h/2 (a_k + a_{k+1}),   a_k = FD(q_k, v_k, u_k)
//! ```
//!
//! each divided by `h` so that both rows are rates. The objective is the
//! trapezoidal quadrature of the electrical power.

use crate::dynamics::{Mat2, RobotModel, Vec2, MAX_DOF};
use crate::prior::{prior_kinematics, normalized_grid, ProblemSpec};

use super::optim::{EqualityNlp, SparseRows};

#[derive(Debug, Clone)]
pub struct Transcription<'a> {
    model: &'a RobotModel,
    spec: ProblemSpec,
    intervals: usize,
    h: f64,
    n: usize,
}

/// Full node arrays reconstructed from a decision vector.
#[derive(Debug, Clone)]
pub struct NodeValues {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

struct NodeCache {
    a: Vec<Vec2>,
    da_dq: Vec<Mat2>,
    da_dv: Vec<Mat2>,
    da_du: Vec<Mat2>,
}

impl<'a> Transcription<'a> {
    pub fn new(model: &'a RobotModel, spec: &ProblemSpec, intervals: usize) -> Self {
        assert!(intervals >= 2);
        Transcription {
            model,
            spec: spec.clone(),
            intervals,
            h: spec.t_f / intervals as f64,
            n: model.dof(),
        }
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// Offset of node `k`'s first free variable and whether it carries a state.
    fn node_offset(&self, k: usize) -> (usize, bool) {
        let n = self.n;
        if k == 0 {
            (0, false)
        } else if k == self.intervals {
            (n + 3 * n * (self.intervals - 1), false)
        } else {
            (n + 3 * n * (k - 1), true)
        }
    }

    pub fn unpack(&self, x: &[f64]) -> NodeValues {
        let n = self.n;
        let nodes = self.intervals + 1;
        let mut q = Vec::with_capacity(nodes);
        let mut v = Vec::with_capacity(nodes);
        let mut u = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let (off, has_state) = self.node_offset(k);
            if has_state {
                q.push(x[off..off + n].to_vec());
                v.push(x[off + n..off + 2 * n].to_vec());
                u.push(x[off + 2 * n..off + 3 * n].to_vec());
            } else {
                q.push(if k == 0 { self.spec.q_0.clone() } else { self.spec.q_f.clone() });
                v.push(vec![0.0; n]);
                u.push(x[off..off + n].to_vec());
            }
        }
        NodeValues { q, v, u }
    }

    /// Inverse of [`Self::unpack`]; boundary states in `nodes` are ignored.
    pub fn pack(&self, nodes: &NodeValues) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; EqualityNlp::dim(self)];
        for k in 0..=self.intervals {
            let (off, has_state) = self.node_offset(k);
            if has_state {
                x[off..off + n].copy_from_slice(&nodes.q[k]);
                x[off + n..off + 2 * n].copy_from_slice(&nodes.v[k]);
                x[off + 2 * n..off + 3 * n].copy_from_slice(&nodes.u[k]);
            } else {
                x[off..off + n].copy_from_slice(&nodes.u[k]);
            }
        }
        x
    }

    /// Cubic prior positions and velocities with inverse-dynamics torques.
    pub fn prior_guess(&self) -> Vec<f64> {
        let grid = normalized_grid(self.intervals + 1);
        let (q, v, a) = prior_kinematics(&self.spec, &grid);
        let u = q
            .iter()
            .zip(&v)
            .zip(&a)
            .map(|((q, v), a)| self.model.inverse_raw(q, v, a)[..self.n].to_vec())
            .collect();
        self.pack(&NodeValues { q, v, u })
    }

    fn quadrature_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.intervals {
            0.5 * self.h
        } else {
            self.h
        }
    }

    fn cache(&self, nodes: &NodeValues, with_jacobians: bool) -> NodeCache {
        let count = self.intervals + 1;
        let mut c = NodeCache {
            a: Vec::with_capacity(count),
            da_dq: Vec::new(),
            da_dv: Vec::new(),
            da_du: Vec::new(),
        };
        for k in 0..count {
            if with_jacobians {
                let (a, dq, dv, du) = self.model.forward_with_jacobians(&nodes.q[k], &nodes.v[k], &nodes.u[k]);
                c.a.push(a);
                c.da_dq.push(dq);
                c.da_dv.push(dv);
                c.da_du.push(du);
            } else {
                c.a.push(self.model.forward_raw(&nodes.q[k], &nodes.v[k], &nodes.u[k]));
            }
        }
        c
    }

    fn objective_of(&self, nodes: &NodeValues) -> f64 {
        (0..=self.intervals)
            .map(|k| self.quadrature_weight(k) * self.model.power_raw(&nodes.v[k], &nodes.u[k]))
            .sum()
    }

    fn defects_of(&self, nodes: &NodeValues, cache: &NodeCache, c: &mut [f64]) {
        let n = self.n;
        let h = self.h;
        for k in 0..self.intervals {
            let base = 2 * n * k;
            for i in 0..n {
                c[base + i] = (nodes.q[k + 1][i] - nodes.q[k][i]) / h - 0.5 * (nodes.v[k][i] + nodes.v[k + 1][i]);
                c[base + n + i] =
                    (nodes.v[k + 1][i] - nodes.v[k][i]) / h - 0.5 * (cache.a[k][i] + cache.a[k + 1][i]);
            }
        }
    }

    /// Largest unscaled position and velocity defects (rad, rad/s).
    pub fn max_defects(&self, x: &[f64]) -> (f64, f64) {
        let nodes = self.unpack(x);
        let cache = self.cache(&nodes, false);
        let mut c = vec![0.0; EqualityNlp::num_constraints(self)];
        self.defects_of(&nodes, &cache, &mut c);
        let n = self.n;
        let mut dq: f64 = 0.0;
        let mut dv: f64 = 0.0;
        for k in 0..self.intervals {
            for i in 0..n {
                dq = dq.max((c[2 * n * k + i] * self.h).abs());
                dv = dv.max((c[2 * n * k + n + i] * self.h).abs());
            }
        }
        (dq, dv)
    }

    /// `J(x)^T w` without the objective gradient.
    pub fn jacobian_transpose_product(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let nodes = self.unpack(x);
        let cache = self.cache(&nodes, true);
        out.iter_mut().for_each(|g| *g = 0.0);
        self.accumulate_jt(&cache, w, out);
    }

    fn accumulate_jt(&self, cache: &NodeCache, w: &[f64], grad: &mut [f64]) {
        let n = self.n;
        let h = self.h;
        // gradient contributions per node in full (q, v, u) coordinates
        let mut gq = vec![[0.0; MAX_DOF]; self.intervals + 1];
        let mut gv = vec![[0.0; MAX_DOF]; self.intervals + 1];
        let mut gu = vec![[0.0; MAX_DOF]; self.intervals + 1];
        for k in 0..self.intervals {
            let base = 2 * n * k;
            for i in 0..n {
                let wq = w[base + i];
                let wv = w[base + n + i];
                gq[k + 1][i] += wq / h;
                gq[k][i] -= wq / h;
                gv[k][i] -= 0.5 * wq;
                gv[k + 1][i] -= 0.5 * wq;
                gv[k + 1][i] += wv / h;
                gv[k][i] -= wv / h;
                for node in [k, k + 1] {
                    for j in 0..n {
                        gq[node][j] -= 0.5 * wv * cache.da_dq[node][i][j];
                        gv[node][j] -= 0.5 * wv * cache.da_dv[node][i][j];
                        gu[node][j] -= 0.5 * wv * cache.da_du[node][i][j];
                    }
                }
            }
        }
        self.scatter(&gq, &gv, &gu, grad);
    }

    fn scatter(&self, gq: &[Vec2], gv: &[Vec2], gu: &[Vec2], grad: &mut [f64]) {
        let n = self.n;
        for k in 0..=self.intervals {
            let (off, has_state) = self.node_offset(k);
            if has_state {
                for i in 0..n {
                    grad[off + i] += gq[k][i];
                    grad[off + n + i] += gv[k][i];
                    grad[off + 2 * n + i] += gu[k][i];
                }
            } else {
                for i in 0..n {
                    grad[off + i] += gu[k][i];
                }
            }
        }
    }

    fn accumulate_objective_gradient(&self, nodes: &NodeValues, grad: &mut [f64]) {
        let weights = self.model.joule_weights();
        let zero = vec![[0.0; MAX_DOF]; self.intervals + 1];
        let mut gv = zero.clone();
        let mut gu = zero.clone();
        for k in 0..=self.intervals {
            let w = self.quadrature_weight(k);
            for i in 0..self.n {
                gu[k][i] = w * (2.0 * weights[i] * nodes.u[k][i] + nodes.v[k][i]);
                gv[k][i] = w * nodes.u[k][i];
            }
        }
        self.scatter(&zero, &gv, &gu, grad);
    }
}

impl EqualityNlp for Transcription<'_> {
    fn dim(&self) -> usize {
        3 * self.n * (self.intervals + 1) - 4 * self.n
    }

    fn num_constraints(&self) -> usize {
        2 * self.n * self.intervals
    }

    fn evaluate(&self, x: &[f64], c: &mut [f64]) -> f64 {
        let nodes = self.unpack(x);
        let cache = self.cache(&nodes, false);
        self.defects_of(&nodes, &cache, c);
        self.objective_of(&nodes)
    }

    fn gradient(&self, x: &[f64], w: &[f64], grad: &mut [f64]) {
        let nodes = self.unpack(x);
        let cache = self.cache(&nodes, true);
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.accumulate_objective_gradient(&nodes, grad);
        self.accumulate_jt(&cache, w, grad);
    }

    fn constraint_jacobian(&self, x: &[f64]) -> SparseRows {
        let n = self.n;
        let h = self.h;
        let nodes = self.unpack(x);
        let cache = self.cache(&nodes, true);
        let mut rows = Vec::with_capacity(self.num_constraints());
        for k in 0..self.intervals {
            let (lo, lo_state) = self.node_offset(k);
            let (hi, hi_state) = self.node_offset(k + 1);
            for i in 0..n {
                let mut row = Vec::with_capacity(4);
                if lo_state {
                    row.push((lo + i, -1.0 / h));
                    row.push((lo + n + i, -0.5));
                }
                if hi_state {
                    row.push((hi + i, 1.0 / h));
                    row.push((hi + n + i, -0.5));
                }
                rows.push(row);
            }
            for i in 0..n {
                let mut row = Vec::with_capacity(6 * n);
                for (node, off, has_state, sign) in [(k, lo, lo_state, -1.0), (k + 1, hi, hi_state, 1.0)] {
                    if has_state {
                        for j in 0..n {
                            let dv = -0.5 * cache.da_dv[node][i][j] + if i == j { sign / h } else { 0.0 };
                            row.push((off + j, -0.5 * cache.da_dq[node][i][j]));
                            row.push((off + n + j, dv));
                        }
                        for j in 0..n {
                            row.push((off + 2 * n + j, -0.5 * cache.da_du[node][i][j]));
                        }
                    } else {
                        for j in 0..n {
                            row.push((off + j, -0.5 * cache.da_du[node][i][j]));
                        }
                    }
                }
                rows.push(row);
            }
        }
        rows
    }

    fn hessian_bandwidth(&self) -> Option<usize> {
        // nodes couple only with their neighbours
        Some(6 * self.n - 1)
    }
}
