//! Small dense LP kernel: two-phase primal simplex with Bland's rule.
//!
//! Problems are stated as `minimize c'x subject to G x <= h` with `x` free.
//! Equalities are passed as pairs of opposite inequalities. On top of the
//! solver sit the feasibility tests the rest of the crate needs: Slater
//! points, `0 in conv{..}`, cone membership and uniqueness of QP solutions.

use serde::Serialize;

use crate::linalg::{self, Matrix};
use crate::model::{ParamPoint, QpInstance};
use crate::tolerance::Tolerances;

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Bland's rule cannot cycle in exact arithmetic; this only fires if
    /// rounding defeats it.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Option<Vec<f64>>,
    pub objective: Option<f64>,
}

impl LpResult {
    fn status(status: LpStatus) -> Self {
        LpResult { status, x: None, objective: None }
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    // (rows + 1) x (cols + 1); last row is the objective, last column the rhs
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * self.t[r * w + j];
                }
                self.t[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Loads `cost` as the objective row, expressed in terms of the current basis.
    fn set_objective(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        let obj = self.rows * w;
        for j in 0..w {
            self.t[obj + j] = if j < self.cols { cost[j] } else { 0.0 };
        }
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    self.t[obj + j] -= cb * self.t[i * w + j];
                }
            }
        }
    }

    /// Bland's rule iterations over columns `< allowed`.
    fn optimize(&mut self, allowed: usize) -> LpStatus {
        for _ in 0..MAX_PIVOTS {
            let Some(enter) = (0..allowed).find(|&j| self.at(self.rows, j) < -COST_EPS) else {
                return LpStatus::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, enter);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                            if ratio < lr && !tie || tie && self.basis[i] < self.basis[li] {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return LpStatus::Unbounded,
                Some((r, _)) => self.pivot(r, enter),
            }
        }
        LpStatus::IterationLimit
    }
}

/// Minimizes `c'x` subject to `G x <= h` over free `x`.
///
/// `tol_feas` decides phase-one feasibility: the system counts as feasible
/// when the total (row-normalized) infeasibility is within
/// `tol_feas * max(1, |h|_inf)`.
pub fn solve_lp(c: &[f64], g: &Matrix, h: &[f64], tol_feas: f64) -> LpResult {
    let k = c.len();
    let p = g.rows();
    debug_assert_eq!(g.cols(), k);
    debug_assert_eq!(h.len(), p);

    // row normalization; an all-zero row is either trivially true or infeasible
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(p);
    for i in 0..p {
        let s = linalg::max_abs(g.row(i));
        if s == 0.0 {
            if h[i] < -tol_feas * (1.0 + h[i].abs()) {
                return LpResult::status(LpStatus::Infeasible);
            }
            continue;
        }
        rows.push((g.row(i).iter().map(|v| v / s).collect(), h[i] / s));
    }
    let p = rows.len();
    let negative: Vec<usize> = (0..p).filter(|&i| rows[i].1 < 0.0).collect();
    let n_art = negative.len();
    // columns: x+ (k), x- (k), slack (p), artificial (n_art)
    let cols = 2 * k + p + n_art;
    let w = cols + 1;
    let mut tab = Tableau { rows: p, cols, t: vec![0.0; (p + 1) * w], basis: vec![0; p] };
    let mut art = 0;
    for (i, (row, rhs)) in rows.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            tab.t[i * w + j] = sign * row[j];
            tab.t[i * w + k + j] = -sign * row[j];
        }
        tab.t[i * w + 2 * k + i] = sign;
        tab.t[i * w + cols] = sign * rhs;
        if sign < 0.0 {
            tab.t[i * w + 2 * k + p + art] = 1.0;
            tab.basis[i] = 2 * k + p + art;
            art += 1;
        } else {
            tab.basis[i] = 2 * k + i;
        }
    }

    if n_art > 0 {
        let mut cost1 = vec![0.0; cols];
        for c1 in cost1.iter_mut().skip(2 * k + p) {
            *c1 = 1.0;
        }
        tab.set_objective(&cost1);
        match tab.optimize(cols) {
            LpStatus::Optimal => {}
            // phase one is bounded below by zero, so anything else is a
            // rounding breakdown
            _ => return LpResult::status(LpStatus::IterationLimit),
        }
        let hmax = rows.iter().fold(1.0f64, |m, r| m.max(r.1.abs()));
        let infeas: f64 = (0..p).filter(|&i| tab.basis[i] >= 2 * k + p).map(|i| tab.rhs(i).abs()).sum();
        if infeas > tol_feas * hmax {
            return LpResult::status(LpStatus::Infeasible);
        }
        // drive remaining artificials out of the basis; rows where that is
        // impossible are redundant and stay pinned at zero
        for i in 0..p {
            if tab.basis[i] >= 2 * k + p {
                if let Some(j) = (0..2 * k + p).find(|&j| tab.at(i, j).abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut cost2 = vec![0.0; cols];
    for j in 0..k {
        cost2[j] = c[j];
        cost2[k + j] = -c[j];
    }
    tab.set_objective(&cost2);
    match tab.optimize(2 * k + p) {
        LpStatus::Optimal => {}
        other => return LpResult::status(other),
    }
    let mut y = vec![0.0; cols];
    for i in 0..p {
        y[tab.basis[i]] = tab.rhs(i);
    }
    let x: Vec<f64> = (0..k).map(|j| y[j] - y[k + j]).collect();
    let objective = linalg::dot(c, &x);
    LpResult { status: LpStatus::Optimal, x: Some(x), objective: Some(objective) }
}

/// Builder for inequality systems `G x <= h`.
#[derive(Debug, Clone)]
pub(crate) struct Constraints {
    k: usize,
    rows: Vec<f64>,
    rhs: Vec<f64>,
}

impl Constraints {
    pub(crate) fn new(k: usize) -> Self {
        Constraints { k, rows: Vec::new(), rhs: Vec::new() }
    }

    pub(crate) fn le(&mut self, row: Vec<f64>, h: f64) {
        debug_assert_eq!(row.len(), self.k);
        self.rows.extend(row);
        self.rhs.push(h);
    }

    pub(crate) fn eq(&mut self, row: Vec<f64>, h: f64) {
        let neg = row.iter().map(|v| -v).collect();
        self.le(row, h);
        self.le(neg, -h);
    }

    pub(crate) fn solve(&self, c: &[f64], tol_feas: f64) -> LpResult {
        let g = Matrix::from_row_slice(self.rhs.len(), self.k, &self.rows).expect("consistent rows");
        solve_lp(c, &g, &self.rhs, tol_feas)
    }
}

/// Whether some `y` satisfies `A y < b` strictly, via
/// `max t s.t. A y + t <= b, t <= 1`.
pub fn slater_holds(a: &Matrix, b: &[f64], tol: &Tolerances) -> bool {
    let n = a.cols();
    if a.rows() == 0 {
        return true;
    }
    let mut cons = Constraints::new(n + 1);
    for i in 0..a.rows() {
        let mut row = a.row(i).to_vec();
        row.push(1.0);
        cons.le(row, b[i]);
    }
    let mut cap = vec![0.0; n + 1];
    cap[n] = 1.0;
    cons.le(cap, 1.0);
    let mut obj = vec![0.0; n + 1];
    obj[n] = -1.0;
    let res = cons.solve(&obj, tol.feas);
    match (res.status, res.x) {
        (LpStatus::Optimal, Some(x)) => x[n] > tol.strict,
        _ => false,
    }
}

/// A feasible point of `{x : A x <= b}`, if any.
pub fn feasible_point(a: &Matrix, b: &[f64], tol: &Tolerances) -> Option<Vec<f64>> {
    let res = solve_lp(&vec![0.0; a.cols()], a, b, tol.feas);
    match res.status {
        LpStatus::Optimal => res.x,
        _ => None,
    }
}

/// Minimum of `||sum_i lambda_i g_i - v||_inf` over `lambda >= 0` (and, when
/// `simplex` is set, `sum lambda = 1`). Returns the residual and the weights.
fn min_residual(v: &[f64], gens: &[&[f64]], simplex: bool, tol: &Tolerances) -> Option<(f64, Vec<f64>)> {
    let n = v.len();
    let k = gens.len();
    // variables: lambda (k), r (1)
    let mut cons = Constraints::new(k + 1);
    for d in 0..n {
        let mut up = vec![0.0; k + 1];
        let mut lo = vec![0.0; k + 1];
        for (j, g) in gens.iter().enumerate() {
            up[j] = g[d];
            lo[j] = -g[d];
        }
        up[k] = -1.0;
        lo[k] = -1.0;
        cons.le(up, v[d]);
        cons.le(lo, -v[d]);
    }
    for j in 0..k {
        let mut row = vec![0.0; k + 1];
        row[j] = -1.0;
        cons.le(row, 0.0);
    }
    if simplex {
        let mut row = vec![1.0; k + 1];
        row[k] = 0.0;
        cons.eq(row, 1.0);
    }
    let mut obj = vec![0.0; k + 1];
    obj[k] = 1.0;
    let res = cons.solve(&obj, tol.feas);
    let x = res.x?;
    let lambda: Vec<f64> = x[..k].iter().map(|l| l.max(0.0)).collect();
    let combo = (0..n).map(|d| gens.iter().zip(&lambda).map(|(g, l)| g[d] * l).sum::<f64>()).collect::<Vec<_>>();
    Some((linalg::max_abs(&linalg::sub(&combo, v)), lambda))
}

/// `0 in conv{vectors}`; false for an empty list.
pub fn zero_in_conv(vectors: &[&[f64]], tol: &Tolerances) -> bool {
    let Some(first) = vectors.first() else {
        return false;
    };
    let zero = vec![0.0; first.len()];
    let scale = vectors.iter().fold(1.0f64, |m, v| m.max(linalg::max_abs(v)));
    match min_residual(&zero, vectors, true, tol) {
        Some((r, _)) => r <= tol.feas * scale,
        None => false,
    }
}

/// Cone membership `v in cone{generators}` with a nonnegative witness.
/// `cone(empty) = {0}`.
pub fn in_cone(v: &[f64], generators: &[&[f64]], tol: &Tolerances) -> Option<Vec<f64>> {
    let thresh = tol.feas * (1.0 + linalg::max_abs(v));
    if generators.is_empty() {
        return (linalg::max_abs(v) <= thresh).then(Vec::new);
    }
    let (r, lambda) = min_residual(v, generators, false, tol)?;
    (r <= thresh).then_some(lambda)
}

/// Whether the optimal set of `P(c, b)` is exactly `{x_star}`.
///
/// Uses the fact that the optimal set of a convex QP is
/// `{x in F(b) : Q x = Q x_star, c'x = c'x_star}` and bounds every coordinate
/// over it from both sides.
pub fn optimal_set_is_singleton(inst: &QpInstance, p: &ParamPoint, x_star: &[f64], tol: &Tolerances) -> bool {
    let n = inst.n();
    let mut cons = Constraints::new(n);
    for i in 0..inst.m() {
        cons.le(inst.a_row(i).to_vec(), p.b[i]);
    }
    let qx = inst.q().matvec(x_star);
    for i in 0..n {
        cons.eq(inst.q().row(i).to_vec(), qx[i]);
    }
    cons.eq(p.c.clone(), linalg::dot(&p.c, x_star));
    for j in 0..n {
        for sign in [1.0, -1.0] {
            let mut obj = vec![0.0; n];
            obj[j] = -sign;
            let res = cons.solve(&obj, tol.feas);
            match (res.status, res.x) {
                (LpStatus::Optimal, Some(x)) => {
                    if (x[j] - x_star[j]).abs() > tol.feas * (1.0 + x_star[j].abs()) {
                        return false;
                    }
                }
                _ => return false,
            }
        }
    }
    true
}
