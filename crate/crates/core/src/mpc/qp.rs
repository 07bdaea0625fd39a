//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! ```text
//! min ½ xᵀHx + gᵀx   s.t.   a_iᵀx ≥ b_i,   lo ≤ x ≤ hi
//! ```

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub x: Vec<f64>,
    pub status: QpStatus,
    /// Multipliers of the general rows.
    pub row_multipliers: Vec<f64>,
    /// Multipliers of the bounds, `(lower, upper)` per variable.
    #[cfg_attr(not(test), allow(dead_code))]
    pub bound_multipliers: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Qp {
    pub h: DMatrix<f64>,
    pub g: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Con {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

const FEAS_TOL: f64 = 1e-10;

impl Qp {
    fn n(&self) -> usize {
        self.g.len()
    }

    fn dot(&self, c: Con, x: &[f64], ends: &[usize]) -> f64 {
        match c {
            Con::Row(i) => self.rows[i][..ends[i]]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum(),
            Con::Lower(k) => x[k],
            Con::Upper(k) => -x[k],
        }
    }

    fn bound(&self, c: Con) -> f64 {
        match c {
            Con::Row(i) => self.rhs[i],
            Con::Lower(k) => self.lo[k],
            Con::Upper(k) => -self.hi[k],
        }
    }

    fn scale(&self, c: Con, norms: &[f64]) -> f64 {
        match c {
            Con::Row(i) => norms[i],
            _ => 1.0,
        }
    }

    fn slot(&self, c: Con) -> usize {
        match c {
            Con::Row(i) => i,
            Con::Lower(k) => self.rows.len() + k,
            Con::Upper(k) => self.rows.len() + self.n() + k,
        }
    }

    /// dᵀ = nᵀJ for the normal of constraint `c`.
    fn project(&self, c: Con, j: &DMatrix<f64>, d: &mut [f64], ends: &[usize]) {
        let n = self.n();
        match c {
            Con::Row(i) => {
                let a = &self.rows[i][..ends[i]];
                for (dk, col) in d.iter_mut().zip(j.as_slice().chunks_exact(n)) {
                    *dk = col.iter().zip(a).map(|(x, y)| x * y).sum();
                }
            }
            Con::Lower(v) => {
                for (k, dk) in d.iter_mut().enumerate().take(n) {
                    *dk = j[(v, k)];
                }
            }
            Con::Upper(v) => {
                for (k, dk) in d.iter_mut().enumerate().take(n) {
                    *dk = -j[(v, k)];
                }
            }
        }
    }

    fn all_constraints(&self) -> impl Iterator<Item = Con> + '_ {
        (0..self.rows.len())
            .map(Con::Row)
            .chain(
                (0..self.n())
                    .filter(|&k| self.lo[k] > f64::NEG_INFINITY)
                    .map(Con::Lower),
            )
            .chain(
                (0..self.n())
                    .filter(|&k| self.hi[k] < f64::INFINITY)
                    .map(Con::Upper),
            )
    }

    pub fn solve(&self) -> QpSolution {
        let n = self.n();
        let fail = |status| QpSolution {
            x: vec![0.0; n],
            status,
            row_multipliers: vec![0.0; self.rows.len()],
            bound_multipliers: vec![(0.0, 0.0); n],
        };
        if (0..n).any(|k| self.lo[k] > self.hi[k]) {
            return fail(QpStatus::Infeasible);
        }
        let Some(chol) = self.h.clone().cholesky() else {
            return fail(QpStatus::Infeasible);
        };
        // J = L⁻ᵀ, so that JJᵀ = H⁻¹.
        let mut j = inverse_transpose_lower(&chol.l());
        // Rows vanish past their last nonzero entry.
        let ends: Vec<usize> = self
            .rows
            .iter()
            .map(|r| r.iter().rposition(|v| *v != 0.0).map_or(0, |k| k + 1))
            .collect();
        let mut x = chol
            .solve(&DVector::from_column_slice(&self.g))
            .as_slice()
            .iter()
            .map(|v| -v)
            .collect::<Vec<f64>>();

        let norms: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let mut is_active = vec![false; self.rows.len() + 2 * n];
        let mut r = DMatrix::<f64>::zeros(n, n);
        let mut active: Vec<Con> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut d = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut rv = vec![0.0; n];
        let max_iter = 20 * (n + self.rows.len()) + 100;
        let mut iter = 0;

        loop {
            // Step 1: most violated constraint, scaled by its normal.
            let mut pick = None;
            let mut worst = -FEAS_TOL;
            for c in self.all_constraints() {
                if is_active[self.slot(c)] {
                    continue;
                }
                let s = (self.dot(c, &x, &ends) - self.bound(c)) / self.scale(c, &norms);
                if s < worst {
                    worst = s;
                    pick = Some(c);
                }
            }
            let Some(p) = pick else {
                return self.finish(x, &active, &u, QpStatus::Optimal);
            };
            let mut sp = self.dot(p, &x, &ends) - self.bound(p);
            let mut u_new = 0.0;

            loop {
                iter += 1;
                if iter > max_iter {
                    return self.finish(x, &active, &u, QpStatus::IterationLimit);
                }
                let q = active.len();
                self.project(p, &j, &mut d, &ends);
                z.iter_mut().for_each(|v| *v = 0.0);
                for (k, col) in j.as_slice().chunks_exact(n).enumerate().skip(q) {
                    let dk = d[k];
                    if dk != 0.0 {
                        for (zi, jk) in z.iter_mut().zip(col) {
                            *zi += jk * dk;
                        }
                    }
                }
                for i in (0..q).rev() {
                    let mut acc = d[i];
                    for k in i + 1..q {
                        acc -= r[(i, k)] * rv[k];
                    }
                    rv[i] = acc / r[(i, i)];
                }

                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for k in 0..q {
                    if rv[k] > 0.0 {
                        let t = u[k] / rv[k];
                        if t < t1 {
                            t1 = t;
                            drop = Some(k);
                        }
                    }
                }
                let zn = self.dot(p, &z, &ends);
                let znorm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                let t2 = if znorm > 1e-12 * self.scale(p, &norms) && zn.abs() > 1e-300 {
                    -sp / zn
                } else {
                    f64::INFINITY
                };
                if t1.is_infinite() && t2.is_infinite() {
                    return fail(QpStatus::Infeasible);
                }
                if t2.is_infinite() {
                    for k in 0..q {
                        u[k] -= t1 * rv[k];
                    }
                    u_new += t1;
                    let l = drop.unwrap();
                    drop_constraint(&mut r, &mut j, l, q);
                    is_active[self.slot(active.remove(l))] = false;
                    u.remove(l);
                    continue;
                }
                let t = t1.min(t2);
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
                for k in 0..q {
                    u[k] -= t * rv[k];
                }
                u_new += t;
                if t2 <= t1 {
                    add_constraint(&mut r, &mut j, &mut d, q);
                    is_active[self.slot(p)] = true;
                    active.push(p);
                    u.push(u_new);
                    break;
                }
                let l = drop.unwrap();
                drop_constraint(&mut r, &mut j, l, q);
                is_active[self.slot(active.remove(l))] = false;
                u.remove(l);
                sp = self.dot(p, &x, &ends) - self.bound(p);
            }
        }
    }

    fn finish(&self, x: Vec<f64>, active: &[Con], u: &[f64], status: QpStatus) -> QpSolution {
        let mut row_multipliers = vec![0.0; self.rows.len()];
        let mut bound_multipliers = vec![(0.0, 0.0); self.n()];
        for (c, &m) in active.iter().zip(u) {
            match *c {
                Con::Row(i) => row_multipliers[i] = m,
                Con::Lower(k) => bound_multipliers[k].0 = m,
                Con::Upper(k) => bound_multipliers[k].1 = m,
            }
        }
        QpSolution {
            x,
            status,
            row_multipliers,
            bound_multipliers,
        }
    }
}

/// `L⁻ᵀ` for lower-triangular `L`, built column by column.
fn inverse_transpose_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ls = l.as_slice();
    // Column k of L⁻ᵀ is row k of L⁻¹; solve L⁻ᵀ's upper triangle row-wise.
    let mut out = DMatrix::<f64>::zeros(n, n);
    let o = out.as_mut_slice();
    for k in 0..n {
        // Entries o[i, k] for i <= k satisfy Σ_{m=i..k} L[m, i]·o[m, k] = δ_ik.
        let col = &mut o[k * n..k * n + k + 1];
        for i in (0..=k).rev() {
            let lcol = &ls[i * n + i + 1..i * n + k + 1];
            let dot: f64 = lcol.iter().zip(&col[i + 1..]).map(|(a, b)| a * b).sum();
            let delta = if i == k { 1.0 } else { 0.0 };
            col[i] = (delta - dot) / ls[i * n + i];
        }
    }
    out
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

/// Rotates adjacent columns `a` and `a + 1`.
fn rotate_columns(j: &mut DMatrix<f64>, a: usize, c: f64, s: f64) {
    let n = j.nrows();
    let (left, right) = j.as_mut_slice()[a * n..(a + 2) * n].split_at_mut(n);
    for (x, y) in left.iter_mut().zip(right.iter_mut()) {
        let (xv, yv) = (*x, *y);
        *x = c * xv + s * yv;
        *y = -s * xv + c * yv;
    }
}

/// Append the constraint with projected normal `d` as column `q` of R.
fn add_constraint(r: &mut DMatrix<f64>, j: &mut DMatrix<f64>, d: &mut [f64], q: usize) {
    let n = d.len();
    for k in (q + 1..n).rev() {
        if d[k] == 0.0 {
            continue;
        }
        let (c, s, h) = givens(d[k - 1], d[k]);
        d[k - 1] = h;
        d[k] = 0.0;
        rotate_columns(j, k - 1, c, s);
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

/// Remove active constraint `l` out of `q` and restore the triangular factor.
fn drop_constraint(r: &mut DMatrix<f64>, j: &mut DMatrix<f64>, l: usize, q: usize) {
    for col in l..q - 1 {
        for i in 0..=col + 1 {
            r[(i, col)] = r[(i, col + 1)];
        }
    }
    for i in 0..q {
        r[(i, q - 1)] = 0.0;
    }
    for k in l..q - 1 {
        let (a, b) = (r[(k, k)], r[(k + 1, k)]);
        if b == 0.0 {
            continue;
        }
        let (c, s, h) = givens(a, b);
        r[(k, k)] = h;
        r[(k + 1, k)] = 0.0;
        for col in k + 1..q - 1 {
            let (x, y) = (r[(k, col)], r[(k + 1, col)]);
            r[(k, col)] = c * x + s * y;
            r[(k + 1, col)] = -s * x + c * y;
        }
        rotate_columns(j, k, c, s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kkt_residual(qp: &Qp, sol: &QpSolution) -> f64 {
        let n = qp.n();
        let x = &sol.x;
        let mut grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| qp.h[(i, k)] * x[k]).sum::<f64>() + qp.g[i])
            .collect();
        for (row, &m) in qp.rows.iter().zip(&sol.row_multipliers) {
            for k in 0..n {
                grad[k] -= m * row[k];
            }
        }
        for (k, &(lo, hi)) in sol.bound_multipliers.iter().enumerate() {
            grad[k] -= lo - hi;
        }
        let mut worst = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (i, row) in qp.rows.iter().enumerate() {
            let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - qp.rhs[i];
            worst = worst
                .max((-s).max(0.0))
                .max((sol.row_multipliers[i] * s).abs());
            worst = worst.max((-sol.row_multipliers[i]).max(0.0));
        }
        for k in 0..n {
            worst = worst
                .max((qp.lo[k] - x[k]).max(0.0))
                .max((x[k] - qp.hi[k]).max(0.0));
        }
        worst
    }

    fn random_qp(n: usize, m: usize, seed: &[f64]) -> Qp {
        let mut it = seed.iter().cycle().copied();
        let a = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
        let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let g = (0..n).map(|_| 3.0 * it.next().unwrap()).collect();
        let rows = (0..m)
            .map(|_| (0..n).map(|_| it.next().unwrap()).collect())
            .collect();
        let rhs = (0..m).map(|_| it.next().unwrap() - 0.5).collect();
        Qp {
            h,
            g,
            rows,
            rhs,
            lo: vec![-2.0; n],
            hi: vec![2.0; n],
        }
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = Qp {
            h: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]),
            g: vec![-2.0, -4.0],
            rows: vec![],
            rhs: vec![],
            lo: vec![f64::NEG_INFINITY; 2],
            hi: vec![f64::INFINITY; 2],
        };
        let s = qp.solve();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn active_row_and_bound() {
        // min (x-2)² + (y-2)²  s.t. x + y ≤ 2, y ≤ 0.5.
        let qp = Qp {
            h: DMatrix::identity(2, 2) * 2.0,
            g: vec![-4.0, -4.0],
            rows: vec![vec![-1.0, -1.0]],
            rhs: vec![-2.0],
            lo: vec![f64::NEG_INFINITY; 2],
            hi: vec![f64::INFINITY, 0.5],
        };
        let s = qp.solve();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(
            (s.x[0] - 1.5).abs() < 1e-10 && (s.x[1] - 0.5).abs() < 1e-10,
            "{:?}",
            s.x
        );
        assert!(kkt_residual(&qp, &s) < 1e-9);
    }

    #[test]
    fn infeasible_is_reported() {
        let qp = Qp {
            h: DMatrix::identity(1, 1),
            g: vec![0.0],
            rows: vec![vec![1.0]],
            rhs: vec![3.0],
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        assert_eq!(qp.solve().status, QpStatus::Infeasible);
    }

    #[test]
    fn degenerate_duplicate_rows() {
        let qp = Qp {
            h: DMatrix::identity(2, 2),
            g: vec![0.0, 0.0],
            rows: vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0]],
            rhs: vec![1.0, 2.0, 1.0],
            lo: vec![f64::NEG_INFINITY; 2],
            hi: vec![f64::INFINITY; 2],
        };
        let s = qp.solve();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-10 && (s.x[1] - 0.5).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn random_feasible_qps_satisfy_kkt(
            n in 2usize..12,
            m in 0usize..20,
            seed in proptest::collection::vec(-1.0f64..1.0, 64..128),
        ) {
            let qp = random_qp(n, m, &seed);
            let s = qp.solve();
            // x = 0 satisfies every row when rhs ≤ 0; otherwise feasibility is not guaranteed.
            if qp.rhs.iter().all(|&b| b <= 0.0) {
                prop_assert_eq!(s.status, QpStatus::Optimal);
            }
            if s.status == QpStatus::Optimal {
                prop_assert!(kkt_residual(&qp, &s) < 1e-7, "kkt {}", kkt_residual(&qp, &s));
            }
        }
    }
}
