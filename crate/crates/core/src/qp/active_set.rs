//! Primal active-set iteration with inertia control.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::kkt::{Elem, Kkt, Prepared};
use super::{ConstraintId, LinearConstraint, QpProblem, QpSolution, QpStatus};

/// Iteration budget of [`super::solve_qp_default`] per variable/constraint.
pub const DEFAULT_MAX_ITER_PER_DIM: usize = 20;

/// Steps shorter than this count as degenerate.
const MIN_STEP: f64 = 1e-12;
/// Consecutive degenerate steps before switching to Bland's rule.
const CYCLE_GUARD: usize = 30;
/// Relative size below which a blocking constraint is taken to be
/// dependent on the working set (its rate along the step is round-off).
const DEPENDENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Free,
    Lower,
    Upper,
    /// `lo == hi`.
    Fixed,
    /// Artificial bound pinning the variable at its starting value.
    Temp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Bound { var: usize, upper: bool },
    Row(usize),
}

impl Block {
    fn id(self, p: &Prepared) -> ConstraintId {
        match self {
            Block::Bound { var, upper: false } => ConstraintId::Lower(var),
            Block::Bound { var, upper: true } => ConstraintId::Upper(var),
            Block::Row(r) => p.rows[r].id,
        }
    }
}

/// A working-set constraint to release at a stationary point.
#[derive(Debug, Clone, Copy)]
enum Release {
    /// Variable leaves its bound (or temporary pin) in direction `sign`.
    Var {
        var: usize,
        sign: f64,
    },
    Row(usize),
}

pub(super) fn solve(problem: &QpProblem, max_iter: usize) -> Result<QpSolution> {
    let prep = Prepared::new(problem);
    match initial_point(&prep, max_iter)? {
        Some(x) => Solver::new(&prep, x).run(max_iter),
        None => Ok(QpSolution {
            x: vec![f64::NAN; problem.dim],
            objective: f64::NAN,
            multipliers: BTreeMap::new(),
            iterations: 0,
            status: QpStatus::Infeasible,
        }),
    }
}

fn feas_tol(rhs: f64) -> f64 {
    1e-10 * rhs.abs().max(1.0)
}

/// Feasible starting point: projection onto the equality, clipping to the
/// bounds, greedy repair of the equality residual, then an auxiliary LP if
/// general inequalities are still violated. `None` if infeasible.
fn initial_point(p: &Prepared, max_iter: usize) -> Result<Option<Vec<f64>>> {
    let n = p.n;
    let mut x: Vec<f64> = (0..n).map(|i| 0.0f64.clamp(p.lo[i], p.hi[i])).collect();

    if let Some(eq) = p.rows.first().filter(|r| r.id == ConstraintId::Equality) {
        let norm2: f64 = eq.nz.iter().map(|(_, v)| v * v).sum();
        if norm2 == 0.0 {
            if eq.rhs.abs() > feas_tol(eq.rhs) {
                return Ok(None);
            }
        } else {
            let shift = (eq.rhs - p.row_dot(0, &x)) / norm2;
            for &(j, v) in &eq.nz {
                x[j] = (x[j] + v * shift).clamp(p.lo[j], p.hi[j]);
            }
            let mut order: Vec<(usize, f64)> = eq.nz.clone();
            order.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            for _pass in 0..2 {
                for &(j, v) in &order {
                    let r = eq.rhs - p.row_dot(0, &x);
                    if r == 0.0 {
                        break;
                    }
                    x[j] = (x[j] + r / v).clamp(p.lo[j], p.hi[j]);
                }
            }
            if (eq.rhs - p.row_dot(0, &x)).abs() > feas_tol(eq.rhs) {
                return Ok(None);
            }
        }
    }

    let violation = p
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.id != ConstraintId::Equality)
        .map(|(k, r)| p.row_dot(k, &x) - r.rhs)
        .fold(0.0f64, f64::max);
    let scale = p.rows.iter().map(|r| r.rhs.abs()).fold(1.0f64, f64::max);
    if violation <= 1e-10 * scale {
        return Ok(Some(x));
    }

    // Auxiliary LP: minimize v subject to g_kᵀx − v ≤ h_k, 0 ≤ v ≤ violation.
    let mut aux = QpProblem::new(n + 1);
    aux.linear[n] = 1.0;
    aux.lower[..n].copy_from_slice(&p.lo);
    aux.upper[..n].copy_from_slice(&p.hi);
    aux.lower[n] = 0.0;
    aux.upper[n] = violation;
    for r in &p.rows {
        let mut coeffs = r.dense.clone();
        if r.id == ConstraintId::Equality {
            coeffs.push(0.0);
            aux.equality = Some(LinearConstraint::new(coeffs, r.rhs));
        } else {
            coeffs.push(-1.0);
            aux.inequalities.push(LinearConstraint::new(coeffs, r.rhs));
        }
    }
    let aux_prep = Prepared::new(&aux);
    let mut x1 = x;
    x1.push(violation);
    let sol = Solver::new(&aux_prep, x1).run(max_iter)?;
    if sol.status != QpStatus::Optimal || sol.x[n] > 1e-9 * scale {
        return Ok(None);
    }
    let mut x = sol.x;
    x.truncate(n);
    for i in 0..n {
        x[i] = x[i].clamp(p.lo[i], p.hi[i]);
    }
    Ok(Some(x))
}

struct Solver<'a> {
    p: &'a Prepared,
    x: Vec<f64>,
    state: Vec<VarState>,
    kkt: Kkt,
    bland: bool,
    degenerate: usize,
}

impl<'a> Solver<'a> {
    fn new(p: &'a Prepared, mut x: Vec<f64>) -> Self {
        let n = p.n;
        let at = |v: f64, b: f64| b.is_finite() && (v - b).abs() <= 1e-12 * b.abs().max(1.0);
        let mut state: Vec<VarState> = (0..n)
            .map(|i| {
                if p.lo[i] == p.hi[i] {
                    x[i] = p.lo[i];
                    VarState::Fixed
                } else if at(x[i], p.lo[i]) {
                    x[i] = p.lo[i];
                    VarState::Lower
                } else if at(x[i], p.hi[i]) {
                    x[i] = p.hi[i];
                    VarState::Upper
                } else {
                    VarState::Temp
                }
            })
            .collect();

        let mut kkt = Kkt::new(n, p.rows.len());
        if let Some(eq) = p.rows.first().filter(|r| r.id == ConstraintId::Equality) {
            // Pivot: largest coefficient, preferring variables off their bounds.
            let pivot = eq
                .nz
                .iter()
                .filter(|(j, _)| state[*j] != VarState::Fixed)
                .max_by(|a, b| {
                    let ka = (state[a.0] == VarState::Temp, a.1.abs());
                    let kb = (state[b.0] == VarState::Temp, b.1.abs());
                    ka.0.cmp(&kb.0)
                        .then(ka.1.total_cmp(&kb.1))
                        .then(b.0.cmp(&a.0))
                })
                .map(|(j, _)| *j);
            if let Some(j) = pivot {
                state[j] = VarState::Free;
                let ok = kkt.rebuild(p, vec![Elem::Var(j), Elem::Row(0)]);
                debug_assert!(ok);
            }
        }
        Solver {
            p,
            x,
            state,
            kkt,
            bland: false,
            degenerate: 0,
        }
    }

    fn rhs_newton(&self, g: &[f64]) -> Vec<f64> {
        self.kkt
            .elems()
            .iter()
            .map(|e| match *e {
                Elem::Var(i) => -g[i],
                Elem::Row(_) => 0.0,
            })
            .collect()
    }

    /// Scatters the variable part of a KKT solution into a full vector and
    /// returns it with its support.
    fn scatter(&self, y: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let mut p = vec![0.0; self.p.n];
        let mut support = Vec::new();
        for (e, v) in self.kkt.elems().iter().zip(y) {
            if let Elem::Var(i) = *e {
                p[i] = *v;
                support.push(i);
            }
        }
        (p, support)
    }

    fn row_multipliers(&self, y: &[f64]) -> Vec<(usize, f64)> {
        self.kkt
            .elems()
            .iter()
            .zip(y)
            .filter_map(|(e, v)| match *e {
                Elem::Row(r) => Some((r, *v)),
                Elem::Var(_) => None,
            })
            .collect()
    }

    /// `g_k + Σ_r λ_r a_rk` for every variable.
    fn reduced_gradient(&self, g: &[f64], rows: &[(usize, f64)]) -> Vec<f64> {
        let mut r = g.to_vec();
        for &(row, lam) in rows {
            for &(j, v) in &self.p.rows[row].nz {
                r[j] += lam * v;
            }
        }
        r
    }

    fn run(mut self, max_iter: usize) -> Result<QpSolution> {
        let mut iterations = 0;
        let mut tiny_steps = 0;
        while iterations < max_iter {
            iterations += 1;
            let g = self.p.gradient(&self.x);
            let rhs = self.rhs_newton(&g);
            let xn = self.x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut y = self.kkt.solve(self.p, &rhs, true);
            let mut pn = self.var_norm(&y);
            // An exact Newton step satisfies gᵀp = −pᵀQp ≤ 0; anything else
            // is drift in the updated inverse.
            let ascent = self.slope(&g, &y) >= 0.0;
            if pn > 0.0 && (pn <= 1e-8 * xn || ascent) {
                if ascent || self.kkt.drift(self.p, &rhs) > 1e-9 {
                    let elems = self.kkt.elems().to_vec();
                    if !self.kkt.rebuild(self.p, elems) {
                        return Err(Error::Qp("working-set KKT matrix became singular".into()));
                    }
                }
                y = self.kkt.solve(self.p, &rhs, true);
                pn = self.var_norm(&y);
                if self.slope(&g, &y) >= 0.0 {
                    pn = 0.0;
                }
            }
            // Even the full step would not change the objective beyond
            // round-off: f = ½(g + q)ᵀx.
            let f = 0.5
                * g.iter()
                    .zip(&self.p.lin)
                    .zip(&self.x)
                    .map(|((a, b), x)| (a + b) * x)
                    .sum::<f64>();
            let negligible = -0.5 * self.slope(&g, &y) <= 1e-14 * f.abs().max(1.0);
            let stationary = pn <= 1e-13 * xn
                || (pn <= 1e-10 * xn && tiny_steps >= 3)
                || (pn <= 1e-6 * xn && negligible);
            if !stationary {
                let (p, support) = self.scatter(&y);
                let block = self.blocking(&p, &support, None, |b| self.keeps_nonsingular(b));
                let alpha = block.map_or(1.0, |(a, _)| a.min(1.0));
                self.advance(&p, &support, alpha);
                tiny_steps = if pn <= 1e-10 * xn { tiny_steps + 1 } else { 0 };
                if let Some((a, b)) = block {
                    if a <= 1.0 {
                        self.add_block(b)?;
                    }
                }
                continue;
            }
            tiny_steps = 0;

            let rows = self.row_multipliers(&y);
            let red = self.reduced_gradient(&g, &rows);
            let gscale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            match self.pick_release(&red, &rows, 1e-11 * gscale) {
                None => {
                    self.polish();
                    let g = self.p.gradient(&self.x);
                    let y = self.kkt.solve(self.p, &self.rhs_newton(&g), true);
                    let rows = self.row_multipliers(&y);
                    let red = self.reduced_gradient(&g, &rows);
                    return Ok(self.finish(iterations, &red, &rows, QpStatus::Optimal));
                }
                Some(rel) => self.release(rel)?,
            }
        }
        let g = self.p.gradient(&self.x);
        let rhs = self.rhs_newton(&g);
        let y = self.kkt.solve(self.p, &rhs, true);
        let rows = self.row_multipliers(&y);
        let red = self.reduced_gradient(&g, &rows);
        Ok(self.finish(iterations, &red, &rows, QpStatus::MaxIter))
    }

    /// Removes round-off drift from the working rows: solves for the
    /// smallest correction `dx` (in the `Q`-metric) with `A·dx = b − A·x`.
    fn polish(&mut self) {
        for _ in 0..2 {
            let rhs: Vec<f64> = self
                .kkt
                .elems()
                .iter()
                .map(|e| match *e {
                    Elem::Var(_) => 0.0,
                    Elem::Row(r) => self.p.rows[r].rhs - self.p.row_dot(r, &self.x),
                })
                .collect();
            if rhs.iter().all(|v| *v == 0.0) {
                return;
            }
            let y = self.kkt.solve(self.p, &rhs, true);
            let (dx, support) = self.scatter(&y);
            for i in support {
                self.x[i] = (self.x[i] + dx[i]).clamp(self.p.lo[i], self.p.hi[i]);
            }
        }
    }

    /// `gᵀp` for the variable part of a KKT solution.
    fn slope(&self, g: &[f64], y: &[f64]) -> f64 {
        self.kkt
            .elems()
            .iter()
            .zip(y)
            .map(|(e, v)| match *e {
                Elem::Var(i) => g[i] * v,
                Elem::Row(_) => 0.0,
            })
            .sum()
    }

    fn var_norm(&self, y: &[f64]) -> f64 {
        self.kkt
            .elems()
            .iter()
            .zip(y)
            .filter(|(e, _)| matches!(e, Elem::Var(_)))
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
    }

    fn pick_release(&self, red: &[f64], rows: &[(usize, f64)], tol: f64) -> Option<Release> {
        // Temporary pins go first; they are artificial.
        let temps = (0..self.p.n)
            .filter(|&i| self.state[i] == VarState::Temp && red[i].abs() > tol)
            .map(|i| (i, red[i]));
        let temp = if self.bland {
            temps.min_by_key(|t| t.0)
        } else {
            temps.max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        };
        if let Some((i, r)) = temp {
            return Some(Release::Var {
                var: i,
                sign: -r.signum(),
            });
        }

        let mut cands: Vec<(ConstraintId, f64, Release)> = Vec::new();
        for i in 0..self.p.n {
            match self.state[i] {
                VarState::Lower if red[i] < -tol => cands.push((
                    ConstraintId::Lower(i),
                    red[i],
                    Release::Var { var: i, sign: 1.0 },
                )),
                VarState::Upper if -red[i] < -tol => cands.push((
                    ConstraintId::Upper(i),
                    -red[i],
                    Release::Var { var: i, sign: -1.0 },
                )),
                _ => {}
            }
        }
        for &(r, lam) in rows {
            let id = self.p.rows[r].id;
            if id != ConstraintId::Equality && lam < -tol {
                cands.push((id, lam, Release::Row(r)));
            }
        }
        let best = if self.bland {
            cands.into_iter().min_by_key(|c| c.0)
        } else {
            cands
                .into_iter()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        };
        best.map(|c| c.2)
    }

    /// Leaves the released constraint. When the minimizer along the exit
    /// direction is reachable the constraint is simply dropped; otherwise
    /// the iterate moves to the blocking constraint and the two are
    /// exchanged.
    fn release(&mut self, rel: Release) -> Result<()> {
        let elems = self.kkt.elems().to_vec();
        let rhs: Vec<f64> = match rel {
            Release::Var { var, sign } => elems
                .iter()
                .map(|e| match *e {
                    Elem::Var(i) => -self.p.qij(i, var) * sign,
                    Elem::Row(r) => -self.p.rows[r].dense[var] * sign,
                })
                .collect(),
            Release::Row(row) => elems
                .iter()
                .map(|e| if *e == Elem::Row(row) { -1.0 } else { 0.0 })
                .collect(),
        };
        let y = self.kkt.solve(self.p, &rhs, true);
        let (mut p, mut support) = self.scatter(&y);
        if let Release::Var { var, sign } = rel {
            p[var] = sign;
            support.push(var);
        }
        let hp = self.p.hess_times(&p, &support);
        let curvature: f64 = support.iter().map(|&i| p[i] * hp[i]).sum();
        let pn2: f64 = support.iter().map(|&i| p[i] * p[i]).sum();

        let curved = curvature > 1e-9 * self.p.q_max.max(f64::MIN_POSITIVE) * pn2;
        let g = self.p.gradient(&self.x);
        let slope: f64 = support.iter().map(|&i| g[i] * p[i]).sum();

        let released_var = match rel {
            Release::Var { var, .. } => Some(var),
            Release::Row(_) => None,
        };
        let released_row = match rel {
            Release::Row(r) => Some(r),
            Release::Var { .. } => None,
        };
        // Without curvature the working set with the constraint released is
        // singular with null vector `(p, y_rows)`; exchanging keeps it
        // nonsingular only for a blocking constraint with a nonzero rate
        // along `p`.
        let pmax = support.iter().fold(0.0f64, |m, &i| m.max(p[i].abs()));
        let block = self.blocking(&p, &support, released_row, |b| match b {
            Block::Bound { var, .. } => p[var].abs() > DEPENDENT_TOL * pmax,
            Block::Row(r) => {
                let row = &self.p.rows[r];
                let d: f64 = row.nz.iter().map(|&(j, v)| v * p[j]).sum();
                let an = row.nz.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                d.abs() > DEPENDENT_TOL * an * pmax
            }
        });
        // With curvature, drop the constraint only if the minimizer along
        // `p` comes before the first block. Otherwise exchange as well, which
        // keeps near-flat directions out of the working set.
        let (alpha, block) = match block {
            Some((a, b)) if !curved || a * curvature < -slope => (a, b),
            _ if curved => {
                let ok = match rel {
                    Release::Var { var, .. } => {
                        self.state[var] = VarState::Free;
                        self.kkt.replace(self.p, &[], &[Elem::Var(var)])
                    }
                    Release::Row(r) => self.kkt.replace(self.p, &[Elem::Row(r)], &[]),
                };
                return self.ensure(ok);
            }
            _ => return Err(Error::Qp("problem is unbounded below".into())),
        };
        self.advance(&p, &support, alpha);

        let mut remove = Vec::new();
        let mut add = Vec::new();
        match rel {
            Release::Var { var, .. } => {
                self.state[var] = VarState::Free;
                add.push(Elem::Var(var));
            }
            Release::Row(r) => remove.push(Elem::Row(r)),
        }
        match block {
            Block::Bound { var, upper } => {
                self.x[var] = if upper {
                    self.p.hi[var]
                } else {
                    self.p.lo[var]
                };
                self.state[var] = if upper {
                    VarState::Upper
                } else {
                    VarState::Lower
                };
                if released_var == Some(var) {
                    add.clear();
                } else {
                    remove.push(Elem::Var(var));
                }
            }
            Block::Row(r) => add.push(Elem::Row(r)),
        }
        let ok = self.kkt.replace(self.p, &remove, &add);
        self.ensure(ok)
    }

    fn ensure(&mut self, ok: bool) -> Result<()> {
        if ok {
            return Ok(());
        }
        Err(Error::Qp("working-set KKT matrix became singular".into()))
    }

    fn add_block(&mut self, b: Block) -> Result<()> {
        let ok = match b {
            Block::Bound { var, upper } => {
                self.x[var] = if upper {
                    self.p.hi[var]
                } else {
                    self.p.lo[var]
                };
                self.state[var] = if upper {
                    VarState::Upper
                } else {
                    VarState::Lower
                };
                self.kkt.replace(self.p, &[Elem::Var(var)], &[])
            }
            Block::Row(r) => self.kkt.replace(self.p, &[], &[Elem::Row(r)]),
        };
        self.ensure(ok)
    }

    fn advance(&mut self, p: &[f64], support: &[usize], alpha: f64) {
        let pn = support.iter().fold(0.0f64, |m, &i| m.max(p[i].abs()));
        if alpha * pn <= MIN_STEP {
            self.degenerate += 1;
            if self.degenerate > CYCLE_GUARD {
                self.bland = true;
            }
        } else {
            self.degenerate = 0;
        }
        for &i in support {
            self.x[i] = (self.x[i] + alpha * p[i]).clamp(self.p.lo[i], self.p.hi[i]);
        }
    }

    /// First blocking constraint accepted by `admissible`. Rejected
    /// candidates are excluded and the ratio test repeated.
    fn blocking(
        &self,
        p: &[f64],
        support: &[usize],
        skip_row: Option<usize>,
        admissible: impl Fn(Block) -> bool,
    ) -> Option<(f64, Block)> {
        let mut excluded = Vec::new();
        loop {
            let (alpha, b) = self.ratio_test(p, support, skip_row, &excluded)?;
            if admissible(b) {
                return Some((alpha, b));
            }
            excluded.push(b);
        }
    }

    /// Whether adding `b` to the working set leaves the KKT matrix
    /// nonsingular: for a bound, the diagonal entry of `K⁻¹` at the variable
    /// is nonzero; for a row, its Schur complement `aᵀK⁻¹a` is nonzero. Both
    /// are computed with one refinement step, since the exact value is zero
    /// in the dependent case and the updated inverse carries round-off.
    fn keeps_nonsingular(&self, b: Block) -> bool {
        match b {
            Block::Bound { var, .. } => match self.kkt.pos(Elem::Var(var)) {
                Some(k) => {
                    let mut e = vec![0.0; self.kkt.len()];
                    e[k] = 1.0;
                    let r = self.kkt.solve(self.p, &e, true);
                    let m = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    r[k].abs() > DEPENDENT_TOL * m
                }
                None => false,
            },
            Block::Row(row) => {
                let a: Vec<f64> = self
                    .kkt
                    .elems()
                    .iter()
                    .map(|e| match *e {
                        Elem::Var(i) => self.p.rows[row].dense[i],
                        Elem::Row(_) => 0.0,
                    })
                    .collect();
                let u = self.kkt.solve(self.p, &a, true);
                let s: f64 = super::dot(&a, &u);
                let an = super::dot(&a, &a).sqrt();
                let un = super::dot(&u, &u).sqrt();
                s.abs() > DEPENDENT_TOL * an * un
            }
        }
    }

    /// Longest feasible step along `p`, with the blocking constraint. Ties
    /// go to the lowest constraint id.
    fn ratio_test(
        &self,
        p: &[f64],
        support: &[usize],
        skip_row: Option<usize>,
        excluded: &[Block],
    ) -> Option<(f64, Block)> {
        let pn = support.iter().fold(0.0f64, |m, &i| m.max(p[i].abs()));
        if pn == 0.0 {
            return None;
        }
        let eps = 1e-14 * pn;
        let mut best: Option<(f64, ConstraintId, Block)> = None;
        let consider = |alpha: f64, b: Block, best: &mut Option<(f64, ConstraintId, Block)>| {
            if excluded.contains(&b) {
                return;
            }
            let alpha = alpha.max(0.0);
            let id = b.id(self.p);
            match best {
                None => *best = Some((alpha, id, b)),
                Some((a, bid, _)) => {
                    let tie = (alpha - *a).abs() <= 1e-12 * a.abs().max(1e-300);
                    if (tie && id < *bid) || (!tie && alpha < *a) {
                        *best = Some((alpha, id, b));
                    }
                }
            }
        };
        for &i in support {
            let pi = p[i];
            if pi < -eps && self.p.lo[i].is_finite() {
                consider(
                    (self.x[i] - self.p.lo[i]) / -pi,
                    Block::Bound {
                        var: i,
                        upper: false,
                    },
                    &mut best,
                );
            } else if pi > eps && self.p.hi[i].is_finite() {
                consider(
                    (self.p.hi[i] - self.x[i]) / pi,
                    Block::Bound {
                        var: i,
                        upper: true,
                    },
                    &mut best,
                );
            }
        }
        for (r, row) in self.p.rows.iter().enumerate() {
            if row.id == ConstraintId::Equality
                || Some(r) == skip_row
                || self.kkt.pos(Elem::Row(r)).is_some()
            {
                continue;
            }
            let d: f64 = row.nz.iter().map(|&(j, v)| v * p[j]).sum();
            let rn = row.nz.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()));
            if d > 1e-12 * pn * rn {
                let slack = row.rhs - self.p.row_dot(r, &self.x);
                consider(slack / d, Block::Row(r), &mut best);
            }
        }
        best.map(|(a, _, b)| (a, b))
    }

    fn finish(
        self,
        iterations: usize,
        red: &[f64],
        rows: &[(usize, f64)],
        status: QpStatus,
    ) -> QpSolution {
        let mut multipliers = BTreeMap::new();
        for &(r, lam) in rows {
            multipliers.insert(self.p.rows[r].id, lam);
        }
        for i in 0..self.p.n {
            match self.state[i] {
                VarState::Lower => {
                    multipliers.insert(ConstraintId::Lower(i), red[i]);
                }
                VarState::Upper => {
                    multipliers.insert(ConstraintId::Upper(i), -red[i]);
                }
                VarState::Fixed => {
                    multipliers.insert(ConstraintId::Fixed(i), red[i]);
                }
                VarState::Free | VarState::Temp => {}
            }
        }
        let x = self.x;
        let quad: f64 = (0..self.p.n)
            .map(|i| x[i] * self.p.q_rows[i].iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .sum();
        let objective = 0.5 * quad + super::dot(&self.p.lin, &x);
        QpSolution {
            x,
            objective,
            multipliers,
            iterations,
            status,
        }
    }
}
