//! Exact convex QP solver by enumeration of KKT systems.
//!
//! For every index set `D` with linearly independent rows `a_i` (including
//! `D = {}`), the bordered system
//!
//! ```text
//! [ Q    A_D' ] [ x      ]   [ -c  ]
//! [ A_D  0    ] [ lambda ] = [ b_D ]
//! ```
//!
//! is solved and the first `(x, lambda)` with `lambda >= 0` and `A x <= b` is
//! returned. Sets are visited by increasing cardinality, lexicographically
//! within a cardinality. Singular systems are handled through their affine
//! solution set and a small LP over the kernel coordinates.

use serde::Serialize;

use crate::error::{Error, NotOptimalReason, Result};
use crate::linalg::{self, Lu, Matrix};
use crate::lp::{self, Constraints, LpStatus};
use crate::model::{IndexSet, ParamPoint, QpInstance};
use crate::modulus::assemble_md;
use crate::par::{self, Exec};
use crate::tolerance::Tolerances;

/// An index set and multipliers witnessing optimality of `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktCertificate {
    #[serde(rename = "D")]
    pub d: IndexSet,
    pub lambda: Vec<f64>,
    pub x: Vec<f64>,
}

impl KktCertificate {
    /// Re-checks the certificate: `A_D x = b_D`, `A x <= b`,
    /// `Q x + c + A_D' lambda = 0` and `lambda >= 0`, all within tolerance.
    pub fn is_valid(&self, inst: &QpInstance, p: &ParamPoint, tol: &Tolerances) -> bool {
        let x = &self.x;
        if self.lambda.len() != self.d.len() || x.len() != inst.n() {
            return false;
        }
        let lam_scale = 1.0 + linalg::max_abs(&self.lambda);
        if self.lambda.iter().any(|l| *l < -tol.feas * lam_scale) {
            return false;
        }
        for i in 0..inst.m() {
            let r = linalg::dot(inst.a_row(i), x) - p.b[i];
            if r > tol.feas * (1.0 + p.b[i].abs()) {
                return false;
            }
            if self.d.contains(i) && r.abs() > tol.feas * (1.0 + p.b[i].abs()) {
                return false;
            }
        }
        let mut stat = inst.gradient(&p.c, x);
        for (k, &i) in self.d.indices().iter().enumerate() {
            for (s, a) in stat.iter_mut().zip(inst.a_row(i)) {
                *s += self.lambda[k] * a;
            }
        }
        let scale = 1.0 + linalg::max_abs(&p.c) + lam_scale;
        linalg::max_abs(&stat) <= tol.feas * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    UnboundedBelow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Option<Vec<f64>>,
    /// Optimal value `1/2 x'Qx + c'x`.
    pub value: Option<f64>,
    pub unique: Option<bool>,
    pub certificate: Option<KktCertificate>,
}

impl QpSolution {
    fn status(status: QpStatus) -> Self {
        QpSolution { status, x: None, value: None, unique: None, certificate: None }
    }
}

enum Factor {
    Regular(Lu),
    Singular(Matrix),
}

struct Candidate {
    d: IndexSet,
    factor: Factor,
}

/// Enumeration solver for a fixed `(Q, A)`.
///
/// The bordered matrices depend only on `Q`, `A` and `D`, so they are
/// factored once and reused for every parameter `(c, b)`. This is what makes
/// the perturbation sampler affordable.
pub struct KktSolver<'a> {
    inst: &'a QpInstance,
    tol: Tolerances,
    candidates: Vec<Candidate>,
    exec: Exec,
}

impl<'a> KktSolver<'a> {
    pub fn new(inst: &'a QpInstance, tol: &Tolerances) -> Self {
        Self::with_exec(inst, tol, Exec::Sequential)
    }

    pub fn with_exec(inst: &'a QpInstance, tol: &Tolerances, exec: Exec) -> Self {
        let all: Vec<usize> = (0..inst.m()).collect();
        let candidates = IndexSet::subsets(&all, inst.n())
            .into_iter()
            .filter(|d| rows_independent(inst, d, tol))
            .map(|d| {
                let md = assemble_md(inst, &d).matrix;
                let lu = Lu::factor(&md).expect("bordered matrix is square");
                let factor = if lu.is_nonsingular(tol.pivot) { Factor::Regular(lu) } else { Factor::Singular(md) };
                Candidate { d, factor }
            })
            .collect();
        KktSolver { inst, tol: *tol, candidates, exec }
    }

    /// Finds a KKT point without deciding uniqueness.
    pub fn kkt_point(&self, p: &ParamPoint) -> QpSolution {
        let inst = self.inst;
        if inst.m() > 0 && lp::feasible_point(inst.a(), &p.b, &self.tol).is_none() {
            return QpSolution::status(QpStatus::Infeasible);
        }
        let found = par::find_map_first(self.exec, &self.candidates, |cand| self.try_candidate(cand, p));
        match found {
            Some(cert) => QpSolution {
                status: QpStatus::Optimal,
                value: Some(inst.objective(&p.c, &cert.x)),
                x: Some(cert.x.clone()),
                unique: None,
                certificate: Some(cert),
            },
            // with a nonempty feasible set and no KKT point the objective is
            // unbounded below (Frank-Wolfe)
            None => QpSolution::status(QpStatus::UnboundedBelow),
        }
    }

    /// Full solve: KKT point plus the uniqueness verdict.
    pub fn solve(&self, p: &ParamPoint) -> QpSolution {
        let mut sol = self.kkt_point(p);
        if let Some(x) = &sol.x {
            sol.unique = Some(lp::optimal_set_is_singleton(self.inst, p, x, &self.tol));
        }
        sol
    }

    fn rhs(&self, d: &IndexSet, p: &ParamPoint) -> Vec<f64> {
        let mut rhs: Vec<f64> = p.c.iter().map(|v| -v).collect();
        rhs.extend(p.b_restricted(d));
        rhs
    }

    fn accept(&self, d: &IndexSet, z: &[f64], p: &ParamPoint) -> Option<KktCertificate> {
        let n = self.inst.n();
        let cert = KktCertificate { d: d.clone(), x: z[..n].to_vec(), lambda: z[n..].to_vec() };
        cert.is_valid(self.inst, p, &self.tol).then_some(cert)
    }

    fn try_candidate(&self, cand: &Candidate, p: &ParamPoint) -> Option<KktCertificate> {
        let rhs = self.rhs(&cand.d, p);
        match &cand.factor {
            Factor::Regular(lu) => self.accept(&cand.d, &lu.solve(&rhs), p),
            Factor::Singular(md) => {
                let sol = linalg::solve_affine(md, &rhs, self.tol.pivot, self.tol.resid)?;
                if let Some(cert) = self.accept(&cand.d, &sol.particular, p) {
                    return Some(cert);
                }
                if sol.kernel.is_empty() {
                    return None;
                }
                let z = self.search_kernel(&cand.d, &sol, p)?;
                self.accept(&cand.d, &z, p)
            }
        }
    }

    /// Looks for `t` with `lambda(t) >= 0` and `A x(t) <= b` on the affine set
    /// `particular + K t`.
    fn search_kernel(&self, d: &IndexSet, sol: &linalg::AffineSolution, p: &ParamPoint) -> Option<Vec<f64>> {
        let n = self.inst.n();
        let k = sol.kernel.len();
        let mut cons = Constraints::new(k);
        for j in 0..d.len() {
            let row: Vec<f64> = sol.kernel.iter().map(|q| -q[n + j]).collect();
            cons.le(row, sol.particular[n + j]);
        }
        for i in 0..self.inst.m() {
            let a = self.inst.a_row(i);
            let row: Vec<f64> = sol.kernel.iter().map(|q| linalg::dot(a, &q[..n])).collect();
            cons.le(row, p.b[i] - linalg::dot(a, &sol.particular[..n]));
        }
        let res = cons.solve(&vec![0.0; k], self.tol.feas);
        if res.status != LpStatus::Optimal {
            return None;
        }
        let t = res.x?;
        let mut z = sol.particular.clone();
        for (q, tj) in sol.kernel.iter().zip(&t) {
            for (zi, qi) in z.iter_mut().zip(q) {
                *zi += tj * qi;
            }
        }
        Some(z)
    }
}

pub(crate) fn rows_independent(inst: &QpInstance, d: &IndexSet, tol: &Tolerances) -> bool {
    if d.is_empty() {
        return true;
    }
    let ad_t = inst.a().select_rows(d.indices()).transpose();
    linalg::rref(&ad_t, tol.pivot).rank() == d.len()
}

/// Solves `P(c, b)` and decides whether the optimal set is a singleton.
pub fn solve(inst: &QpInstance, p: &ParamPoint, tol: &Tolerances) -> QpSolution {
    KktSolver::new(inst, tol).solve(p)
}

/// Solves the subproblem `P_D(c, b_D)` that keeps only the constraints in `D`.
/// The returned certificate indexes constraints of the original instance.
pub fn solve_subproblem(inst: &QpInstance, d: &IndexSet, c: &[f64], b_d: &[f64], tol: &Tolerances) -> Result<QpSolution> {
    let sub = inst.restricted(d, c, b_d)?;
    let mut sol = solve(&sub, &sub.nominal(), tol);
    if let Some(cert) = sol.certificate.as_mut() {
        cert.d = IndexSet::new(cert.d.indices().iter().map(|&k| d.indices()[k]).collect());
    }
    Ok(sol)
}

/// Checks that `x` solves `P(c, b)` and returns a certificate whose index set
/// holds the active constraints with positive multipliers.
pub fn verify_kkt(inst: &QpInstance, p: &ParamPoint, x: &[f64], tol: &Tolerances) -> Result<KktCertificate> {
    if x.len() != inst.n() {
        return Err(Error::DimensionMismatch(format!("point has length {}, expected {}", x.len(), inst.n())));
    }
    let mut active = Vec::new();
    for i in 0..inst.m() {
        let r = linalg::dot(inst.a_row(i), x) - p.b[i];
        if r > tol.feas * (1.0 + p.b[i].abs()) {
            return Err(Error::NotOptimal(NotOptimalReason::InfeasiblePoint));
        }
        if r.abs() <= tol.act * (1.0 + p.b[i].abs()) {
            active.push(i);
        }
    }
    let v: Vec<f64> = inst.gradient(&p.c, x).iter().map(|g| -g).collect();
    let gens: Vec<&[f64]> = active.iter().map(|&i| inst.a_row(i)).collect();
    let lambda = lp::in_cone(&v, &gens, tol).ok_or(Error::NotOptimal(NotOptimalReason::StationarityFails))?;
    let thresh = tol.feas * (1.0 + linalg::max_abs(&lambda));
    let (idx, lam): (Vec<usize>, Vec<f64>) =
        active.iter().zip(&lambda).filter(|(_, l)| **l > thresh).map(|(i, l)| (*i, *l)).unzip();
    Ok(KktCertificate { d: IndexSet::new(idx), lambda: lam, x: x.to_vec() })
}
