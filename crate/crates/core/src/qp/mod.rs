//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    ½·xᵀQx + qᵀx
//! subject to  aᵀx = b            (optional, at most one)
//!             lo ≤ x ≤ hi
//!             g_kᵀx ≤ h_k        (k = 1..m)
//! ```
//!
//! with `Q` symmetric positive semidefinite, by a primal active-set method.
//! The working-set KKT matrix is kept nonsingular at every iteration
//! (inertia control): constraints whose removal would expose a direction of
//! zero curvature are exchanged for the blocking constraint instead of being
//! dropped outright. This lets the same solver handle LPs and the
//! rank-deficient objectives produced by the bilevel reduction.

mod active_set;
mod dense;
mod kkt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use active_set::DEFAULT_MAX_ITER_PER_DIM;

/// Symmetry tolerance on `Q`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted in `Q`.
pub const PSD_TOL: f64 = 1e-10;
/// Certificate thresholds for an optimal solution.
pub const KKT_TOL: f64 = 1e-8;
pub const PRIMAL_TOL: f64 = 1e-9;
pub const DUAL_TOL: f64 = 1e-10;

/// `coeffsᵀx (= or ≤) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        LinearConstraint { coeffs, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub dim: usize,
    /// Row-major `dim × dim` Hessian.
    pub hessian: Vec<f64>,
    pub linear: Vec<f64>,
    pub equality: Option<LinearConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub inequalities: Vec<LinearConstraint>,
}

impl QpProblem {
    /// Unconstrained problem with zero objective and infinite bounds.
    pub fn new(dim: usize) -> Self {
        QpProblem {
            dim,
            hessian: vec![0.0; dim * dim],
            linear: vec![0.0; dim],
            equality: None,
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            inequalities: Vec::new(),
        }
    }

    #[inline]
    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.dim + j]
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut quad = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            let row = &self.hessian[i * n..(i + 1) * n];
            let qi: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            quad += x[i] * qi;
        }
        0.5 * quad + self.linear.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let row = &self.hessian[i * n..(i + 1) * n];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.linear[i]
            })
            .collect()
    }

    /// Largest violation of any constraint at `x`.
    pub fn primal_infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        if let Some(eq) = &self.equality {
            worst = worst.max((dot(&eq.coeffs, x) - eq.rhs).abs());
        }
        for i in 0..self.dim {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        for g in &self.inequalities {
            worst = worst.max(dot(&g.coeffs, x) - g.rhs);
        }
        worst
    }

    /// Checks dimensions, finiteness, bound order, symmetry and PSD-ness.
    pub fn check(&self) -> Result<()> {
        let n = self.dim;
        let bad = |m: String| Err(Error::Qp(m));
        if self.hessian.len() != n * n {
            return bad(format!(
                "hessian has {} entries, expected {}",
                self.hessian.len(),
                n * n
            ));
        }
        if self.linear.len() != n || self.lower.len() != n || self.upper.len() != n {
            return bad("linear term or bounds have wrong length".into());
        }
        if self
            .hessian
            .iter()
            .chain(&self.linear)
            .any(|v| !v.is_finite())
        {
            return bad("objective has non-finite entries".into());
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return bad(format!("bounds of variable {i} are inverted or NaN"));
            }
            if self.lower[i] == f64::INFINITY || self.upper[i] == f64::NEG_INFINITY {
                return bad(format!("bounds of variable {i} exclude every real value"));
            }
        }
        for c in self.equality.iter().chain(&self.inequalities) {
            if c.coeffs.len() != n {
                return bad("constraint has wrong length".into());
            }
            if c.coeffs.iter().any(|v| !v.is_finite()) || !c.rhs.is_finite() {
                return bad("constraint has non-finite entries".into());
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.h(i, j) - self.h(j, i)).abs() > SYMMETRY_TOL {
                    return bad(format!("hessian is not symmetric at ({i}, {j})"));
                }
            }
        }
        if let Some(v) = dense::psd_violation(&self.hessian, n, PSD_TOL) {
            return bad(format!(
                "hessian is not positive semidefinite (pivot {v:e})"
            ));
        }
        Ok(())
    }
}

/// Identifies one constraint of a [`QpProblem`]. The derived order is the
/// tie-breaking order of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintId {
    Equality,
    /// Variable with `lo == hi`.
    Fixed(usize),
    Lower(usize),
    Upper(usize),
    Inequality(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Working set at termination, with multipliers of `h(x) ≤ 0` form
    /// (non-negative for inequalities, free for the equality and fixed
    /// variables).
    pub multipliers: BTreeMap<ConstraintId, f64>,
    pub iterations: usize,
    pub status: QpStatus,
}

impl QpSolution {
    pub fn active_set(&self) -> impl Iterator<Item = ConstraintId> + '_ {
        self.multipliers.keys().copied()
    }

    pub fn into_optimal(self) -> Result<Self> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(Error::Infeasible),
            QpStatus::MaxIter => Err(Error::Qp(format!(
                "iteration limit reached after {} iterations",
                self.iterations
            ))),
        }
    }
}

/// Optimality certificate recomputed from the problem data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// `‖Qx + q + Σ λ_k ∇h_k‖∞`.
    pub stationarity: f64,
    /// `max |λ_k · h_k(x)|`.
    pub complementarity: f64,
    /// Most negative inequality multiplier (0 if none negative).
    pub dual_feasibility: f64,
    pub primal_infeasibility: f64,
}

impl Certificate {
    pub fn kkt_residual(&self) -> f64 {
        self.stationarity.max(self.complementarity)
    }

    pub fn holds(&self) -> bool {
        self.stationarity <= KKT_TOL
            && self.complementarity <= KKT_TOL
            && self.dual_feasibility >= -DUAL_TOL
            && self.primal_infeasibility <= PRIMAL_TOL
    }
}

pub fn certificate(problem: &QpProblem, sol: &QpSolution) -> Certificate {
    let x = &sol.x;
    let mut grad = problem.gradient(x);
    let mut comp = 0.0f64;
    let mut dual = 0.0f64;
    for (&id, &lam) in &sol.multipliers {
        let h = match id {
            ConstraintId::Equality => {
                let eq = problem
                    .equality
                    .as_ref()
                    .expect("equality multiplier without equality");
                axpy(&mut grad, lam, &eq.coeffs);
                dot(&eq.coeffs, x) - eq.rhs
            }
            ConstraintId::Fixed(i) => {
                grad[i] -= lam;
                problem.lower[i] - x[i]
            }
            ConstraintId::Lower(i) => {
                grad[i] -= lam;
                dual = dual.min(lam);
                problem.lower[i] - x[i]
            }
            ConstraintId::Upper(i) => {
                grad[i] += lam;
                dual = dual.min(lam);
                x[i] - problem.upper[i]
            }
            ConstraintId::Inequality(k) => {
                let g = &problem.inequalities[k];
                axpy(&mut grad, lam, &g.coeffs);
                dual = dual.min(lam);
                dot(&g.coeffs, x) - g.rhs
            }
        };
        comp = comp.max((lam * h).abs());
    }
    Certificate {
        stationarity: grad.iter().fold(0.0, |m, v| m.max(v.abs())),
        complementarity: comp,
        dual_feasibility: dual,
        primal_infeasibility: problem.primal_infeasibility(x),
    }
}

/// Solves `problem` with at most `max_iter` active-set iterations.
pub fn solve_qp(problem: &QpProblem, max_iter: usize) -> Result<QpSolution> {
    problem.check()?;
    active_set::solve(problem, max_iter)
}

/// [`solve_qp`] with an iteration cap proportional to the problem size.
pub fn solve_qp_default(problem: &QpProblem) -> Result<QpSolution> {
    let m = problem.inequalities.len();
    solve_qp(problem, DEFAULT_MAX_ITER_PER_DIM * (problem.dim + m) + 100)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
