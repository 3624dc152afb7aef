//! Damped Gauss-Newton (Levenberg-Marquardt) over the entries of a 3x3
//! matrix with one entry frozen to fix the projective scale.
//!
//! The residual model is `pi(outer * M * [x, y, 1]) - target`, which covers
//! both plain homography refinement (`outer = I`) and the correction matrix
//! fit (`outer = H`, `M = H_delta`).

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::W_EPSILON;

pub(crate) type Normal9 = SMatrix<f64, 9, 9>;
pub(crate) type Vec9 = SVector<f64, 9>;

/// Damping schedule and stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub initial_damping: f64,
    /// Multiplier applied on rejected steps; its inverse on accepted ones.
    pub damping_factor: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_factor: 10.0,
            max_iterations: 100,
            relative_tolerance: 1e-10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.initial_damping > 0.0 && self.initial_damping.is_finite()) {
            return Err("solver.initial_damping must be positive".into());
        }
        if !(self.damping_factor > 1.0 && self.damping_factor.is_finite()) {
            return Err("solver.damping_factor must be > 1".into());
        }
        if self.max_iterations == 0 {
            return Err("solver.max_iterations must be >= 1".into());
        }
        if self.relative_tolerance.is_nan() || self.relative_tolerance < 0.0 {
            return Err("solver.relative_tolerance must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SolverOutcome {
    pub matrix: Matrix3<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected-point residuals `pi(outer * M * x) - target` for a point set.
pub(crate) struct ProjectionProblem {
    pub outer: Matrix3<f64>,
    pub points: Vec<(Vector3<f64>, [f64; 2])>,
}

impl ProjectionProblem {
    /// Sum of squared residuals; `None` if any point maps to infinity.
    pub fn cost(&self, m: &Matrix3<f64>) -> Option<f64> {
        let full = self.outer * m;
        let mut cost = 0.0;
        for (x, t) in &self.points {
            let z = full * x;
            if z.z.abs() <= W_EPSILON {
                return None;
            }
            let du = z.x / z.z - t[0];
            let dv = z.y / z.z - t[1];
            cost += du * du + dv * dv;
        }
        cost.is_finite().then_some(cost)
    }

    /// Cost together with `J^T J` and `J^T r` for the nine row-major
    /// entries of `m`.
    pub fn normal_equations(&self, m: &Matrix3<f64>) -> Option<(f64, Normal9, Vec9)> {
        let full = self.outer * m;
        let mut jtj = Normal9::zeros();
        let mut jtr = Vec9::zeros();
        let mut cost = 0.0;
        for (x, t) in &self.points {
            let z = full * x;
            if z.z.abs() <= W_EPSILON {
                return None;
            }
            let (pu, pv) = (z.x / z.z, z.y / z.z);
            let (ru, rv) = (pu - t[0], pv - t[1]);
            cost += ru * ru + rv * rv;
            let mut ju = Vec9::zeros();
            let mut jv = Vec9::zeros();
            for a in 0..3 {
                let col = self.outer.column(a);
                for b in 0..3 {
                    let k = 3 * a + b;
                    let dz = col * x[b];
                    ju[k] = (dz.x - pu * dz.z) / z.z;
                    jv[k] = (dz.y - pv * dz.z) / z.z;
                }
            }
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        cost.is_finite().then_some((cost, jtj, jtr))
    }
}

pub(crate) fn flatten(m: &Matrix3<f64>) -> Vec9 {
    Vec9::from_fn(|k, _| m[(k / 3, k % 3)])
}

pub(crate) fn unflatten(v: &Vec9) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| v[3 * r + c])
}

/// Index of the largest-magnitude entry; ties go to the later index so the
/// identity freezes `h33`.
pub(crate) fn gauge_index(m: &Matrix3<f64>) -> usize {
    let v = flatten(m);
    let mut best = 0;
    for k in 1..9 {
        if v[k].abs() >= v[best].abs() {
            best = k;
        }
    }
    best
}

/// Solves `(J^T J + lambda diag(J^T J)) d = -J^T r` over the eight free
/// entries. The frozen entry of the returned step is zero.
pub(crate) fn damped_step(jtj: &Normal9, jtr: &Vec9, frozen: usize, lambda: f64) -> Option<Vec9> {
    let free: Vec<usize> = (0..9).filter(|&k| k != frozen).collect();
    let max_diag = free.iter().map(|&k| jtj[(k, k)]).fold(0.0_f64, f64::max);
    let floor = (max_diag * 1e-12).max(1e-300);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut g = SVector::<f64, 8>::zeros();
    for (i, &ki) in free.iter().enumerate() {
        g[i] = -jtr[ki];
        for (j, &kj) in free.iter().enumerate() {
            a[(i, j)] = jtj[(ki, kj)];
        }
        a[(i, i)] += lambda * jtj[(ki, ki)].max(floor);
    }
    let d = match a.cholesky() {
        Some(ch) => ch.solve(&g),
        None => a.lu().solve(&g)?,
    };
    if d.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut step = Vec9::zeros();
    for (i, &k) in free.iter().enumerate() {
        step[k] = d[i];
    }
    Some(step)
}

/// Levenberg-Marquardt from `start`, keeping entry `frozen` fixed. Only
/// cost-decreasing steps are accepted, so the final cost never exceeds the
/// initial one. Returns `None` if the start itself is not evaluable.
pub(crate) fn minimize(
    problem: &ProjectionProblem,
    start: Matrix3<f64>,
    frozen: usize,
    settings: &SolverSettings,
) -> Option<SolverOutcome> {
    let (mut cost, mut jtj, mut jtr) = problem.normal_equations(&start)?;
    let mut m = start;
    let mut lambda = settings.initial_damping;
    let mut iterations = 0;
    let mut converged = cost == 0.0;

    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        let accepted = damped_step(&jtj, &jtr, frozen, lambda).and_then(|step| {
            let cand = m + unflatten(&step);
            if cand == m {
                return None;
            }
            let c = problem.cost(&cand)?;
            (c < cost).then_some((cand, c))
        });
        match accepted {
            Some((cand, c)) => {
                let rel = (cost - c) / cost;
                m = cand;
                // cost() and normal_equations() agree on evaluability.
                let (c2, j2, r2) = problem.normal_equations(&m)?;
                cost = c2.min(c);
                jtj = j2;
                jtr = r2;
                lambda = (lambda / settings.damping_factor).max(1e-12);
                if rel < settings.relative_tolerance || cost == 0.0 {
                    converged = true;
                }
            }
            None => {
                lambda *= settings.damping_factor;
                // No descent direction left at any damping: local minimum.
                if lambda > 1e16 {
                    converged = true;
                }
            }
        }
    }

    Some(SolverOutcome {
        matrix: m,
        iterations,
        converged,
    })
}
