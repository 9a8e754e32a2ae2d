//! Explicit inverse of the working-set KKT matrix
//!
//! ```text
//! K = [ Q_FF  A_Fᵀ ]
//!     [ A_F   0    ]
//! ```
//!
//! over the free variables `F` and the general constraint rows in the
//! working set. Bound constraints fix variables and are eliminated. Changes
//! to the working set are applied as low-rank Woodbury updates on a padded
//! matrix, so exchanging one constraint for another never passes through a
//! singular intermediate.

use crate::par;

use super::dense;
use super::{ConstraintId, QpProblem};

/// A general row (the equality or an inequality).
pub(crate) struct GenRow {
    pub dense: Vec<f64>,
    pub nz: Vec<(usize, f64)>,
    pub rhs: f64,
    pub id: ConstraintId,
}

/// Problem data laid out for the active-set iteration.
pub(crate) struct Prepared {
    pub n: usize,
    pub q: Vec<f64>,
    pub q_rows: Vec<Vec<(usize, f64)>>,
    pub lin: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<GenRow>,
    pub q_max: f64,
}

impl Prepared {
    pub fn new(p: &QpProblem) -> Self {
        let n = p.dim;
        let q_rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let v = p.hessian[i * n + j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        let mk = |c: &super::LinearConstraint, id| GenRow {
            dense: c.coeffs.clone(),
            nz: c
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect(),
            rhs: c.rhs,
            id,
        };
        let mut rows = Vec::new();
        if let Some(eq) = &p.equality {
            rows.push(mk(eq, ConstraintId::Equality));
        }
        for (k, g) in p.inequalities.iter().enumerate() {
            rows.push(mk(g, ConstraintId::Inequality(k)));
        }
        Prepared {
            n,
            q: p.hessian.clone(),
            q_rows,
            lin: p.linear.clone(),
            lo: p.lower.clone(),
            hi: p.upper.clone(),
            rows,
            q_max: p.hessian.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    #[inline]
    pub fn qij(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        par::map_range(par::kernel(self.n), self.n, |i| {
            self.q_rows[i].iter().map(|&(j, v)| v * x[j]).sum::<f64>() + self.lin[i]
        })
    }

    /// `Q·p` for a vector supported on `support`.
    pub fn hess_times(&self, p: &[f64], support: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &j in support {
            let pj = p[j];
            if pj == 0.0 {
                continue;
            }
            for &(i, v) in &self.q_rows[j] {
                out[i] += v * pj;
            }
        }
        out
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        self.rows[r].nz.iter().map(|&(j, v)| v * x[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Elem {
    Var(usize),
    Row(usize),
}

const NONE: usize = usize::MAX;

pub(crate) struct Kkt {
    elems: Vec<Elem>,
    var_pos: Vec<usize>,
    row_pos: Vec<usize>,
    inv: Vec<Vec<f64>>,
}

impl Kkt {
    pub fn new(n: usize, rows: usize) -> Self {
        Kkt {
            elems: Vec::new(),
            var_pos: vec![NONE; n],
            row_pos: vec![NONE; rows],
            inv: Vec::new(),
        }
    }

    pub fn elems(&self) -> &[Elem] {
        &self.elems
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn pos(&self, e: Elem) -> Option<usize> {
        let p = match e {
            Elem::Var(i) => self.var_pos[i],
            Elem::Row(r) => self.row_pos[r],
        };
        (p != NONE).then_some(p)
    }

    #[inline]
    pub fn entry(p: &Prepared, a: Elem, b: Elem) -> f64 {
        match (a, b) {
            (Elem::Var(i), Elem::Var(j)) => p.qij(i, j),
            (Elem::Var(i), Elem::Row(r)) | (Elem::Row(r), Elem::Var(i)) => p.rows[r].dense[i],
            (Elem::Row(_), Elem::Row(_)) => 0.0,
        }
    }

    fn reindex(&mut self) {
        self.var_pos.iter_mut().for_each(|v| *v = NONE);
        self.row_pos.iter_mut().for_each(|v| *v = NONE);
        for (k, e) in self.elems.iter().enumerate() {
            match *e {
                Elem::Var(i) => self.var_pos[i] = k,
                Elem::Row(r) => self.row_pos[r] = k,
            }
        }
    }

    pub fn apply_inv(&self, v: &[f64]) -> Vec<f64> {
        let s = self.len();
        par::map_range(par::kernel(s), s, |i| super::dot(&self.inv[i], v))
    }

    pub fn apply_k(&self, p: &Prepared, y: &[f64]) -> Vec<f64> {
        let s = self.len();
        par::map_range(par::kernel(s), s, |a| {
            let ea = self.elems[a];
            self.elems
                .iter()
                .zip(y)
                .map(|(&eb, &yb)| {
                    if yb == 0.0 {
                        0.0
                    } else {
                        Self::entry(p, ea, eb) * yb
                    }
                })
                .sum()
        })
    }

    /// Solves `K·y = rhs`, optionally with one step of iterative refinement.
    pub fn solve(&self, p: &Prepared, rhs: &[f64], refine: bool) -> Vec<f64> {
        let mut y = self.apply_inv(rhs);
        if refine && !y.is_empty() {
            let ky = self.apply_k(p, &y);
            let r: Vec<f64> = rhs.iter().zip(&ky).map(|(a, b)| a - b).collect();
            let dy = self.apply_inv(&r);
            for (a, b) in y.iter_mut().zip(dy) {
                *a += b;
            }
        }
        y
    }

    /// Relative residual `‖K·y − rhs‖∞ / max(1, ‖rhs‖∞)` of the current inverse
    /// on `rhs`.
    pub fn drift(&self, p: &Prepared, rhs: &[f64]) -> f64 {
        let y = self.apply_inv(rhs);
        let ky = self.apply_k(p, &y);
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        rhs.iter()
            .zip(&ky)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale
    }

    /// Recomputes the inverse from scratch for `elems`.
    pub fn rebuild(&mut self, p: &Prepared, elems: Vec<Elem>) -> bool {
        let k: Vec<Vec<f64>> = elems
            .iter()
            .map(|&a| elems.iter().map(|&b| Self::entry(p, a, b)).collect())
            .collect();
        match dense::invert(&k, 1e-13) {
            Some(inv) => {
                self.elems = elems;
                self.inv = inv;
                self.reindex();
                true
            }
            None => false,
        }
    }

    /// Removes `remove` from and appends `add` to the element set, updating
    /// the inverse. Returns false if the new matrix is singular.
    pub fn replace(&mut self, p: &Prepared, remove: &[Elem], add: &[Elem]) -> bool {
        if remove.is_empty() && add.is_empty() {
            return true;
        }
        let s = self.len();
        let pad = s + add.len();
        let rem_pos: Vec<usize> = remove
            .iter()
            .map(|&e| {
                self.pos(e)
                    .expect("removing an element that is not present")
            })
            .collect();

        // Positions in the padded matrix touched by the change.
        let mut touched: Vec<usize> = rem_pos.clone();
        touched.extend(s..pad);
        let mut removed = vec![false; pad];
        for &r in &rem_pos {
            removed[r] = true;
        }
        let all: Vec<Elem> = self.elems.iter().chain(add).copied().collect();

        // Columns of E = K_new − K_old (both padded), halved on the touched
        // block so that E = Σ e_j g_jᵀ + g_j e_jᵀ.
        let mut gs: Vec<Vec<f64>> = Vec::with_capacity(touched.len());
        for (t, &pj) in touched.iter().enumerate() {
            let mut g = vec![0.0; pad];
            if t < rem_pos.len() {
                let e = all[pj];
                for x in 0..s {
                    g[x] = -Self::entry(p, all[x], e);
                }
                g[pj] += 1.0;
            } else {
                let e = all[pj];
                for x in 0..pad {
                    if !removed[x] {
                        g[x] = Self::entry(p, all[x], e);
                    }
                }
                g[pj] -= 1.0;
            }
            for &q in &touched {
                g[q] *= 0.5;
            }
            gs.push(g);
        }

        // Padded inverse.
        let mut inv = std::mem::take(&mut self.inv);
        for row in inv.iter_mut() {
            row.resize(pad, 0.0);
        }
        for k in s..pad {
            let mut row = vec![0.0; pad];
            row[k] = 1.0;
            inv.push(row);
        }

        let kk = touched.len();
        let col =
            |inv: &Vec<Vec<f64>>, j: usize| -> Vec<f64> { inv.iter().map(|r| r[j]).collect() };
        let mg: Vec<Vec<f64>> = gs
            .iter()
            .map(|g| par::map_range(par::kernel(pad), pad, |i| super::dot(&inv[i], g)))
            .collect();
        let me: Vec<Vec<f64>> = touched.iter().map(|&j| col(&inv, j)).collect();
        // W = M·U, U = [e_J, g_J];  Z = M·V, V = [g_J, e_J].
        let w: Vec<&Vec<f64>> = me.iter().chain(mg.iter()).collect();
        let z: Vec<&Vec<f64>> = mg.iter().chain(me.iter()).collect();
        let two = 2 * kk;
        let mut c = vec![vec![0.0; two]; two];
        for a in 0..two {
            for b in 0..two {
                let vtw = if a < kk {
                    super::dot(&gs[a], w[b])
                } else {
                    w[b][touched[a - kk]]
                };
                c[a][b] = vtw + if a == b { 1.0 } else { 0.0 };
            }
        }
        let cinv = match dense::invert(&c, 1e-12) {
            Some(ci) => ci,
            None => {
                self.inv = inv;
                self.inv.truncate(s);
                for row in self.inv.iter_mut() {
                    row.truncate(s);
                }
                return self.rebuild_after(p, remove, add);
            }
        };
        // T = W·C⁻¹ as rows.
        let t: Vec<Vec<f64>> = (0..pad)
            .map(|i| {
                (0..two)
                    .map(|b| (0..two).map(|a| w[a][i] * cinv[a][b]).sum())
                    .collect()
            })
            .collect();
        par::for_each_mut(par::kernel(pad), &mut inv, |i, row| {
            let ti = &t[i];
            for (j, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for b in 0..two {
                    acc += ti[b] * z[b][j];
                }
                *v -= acc;
            }
        });

        // Drop removed positions.
        let keep: Vec<usize> = (0..pad).filter(|&i| !removed[i]).collect();
        let mut out = Vec::with_capacity(keep.len());
        for &i in &keep {
            let row = &inv[i];
            out.push(keep.iter().map(|&j| row[j]).collect::<Vec<f64>>());
        }
        self.inv = out;
        self.elems = keep.iter().map(|&i| all[i]).collect();
        self.reindex();
        true
    }

    fn rebuild_after(&mut self, p: &Prepared, remove: &[Elem], add: &[Elem]) -> bool {
        let elems: Vec<Elem> = self
            .elems
            .iter()
            .filter(|e| !remove.contains(e))
            .chain(add)
            .copied()
            .collect();
        self.rebuild(p, elems)
    }
}
