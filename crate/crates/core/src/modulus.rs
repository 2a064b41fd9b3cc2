//! Bordered KKT matrices, mixed-norm operator norms and the Lipschitz modulus
//! of the argmin mapping.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::families::{self, IndexFamilies};
use crate::linalg::{self, Lu, Matrix, VectorNorm};
use crate::lp::{self, Constraints, LpStatus};
use crate::model::{self, IndexSet, QpInstance};
use crate::par::{self, Exec};
use crate::qp::{self, QpSolution, QpStatus};
use crate::tolerance::Tolerances;

/// Largest box dimension (and `l1` alpha dimension) accepted by the vertex
/// enumeration.
pub const MAX_ENUM_DIM: usize = 20;

pub const NON_UNIQUE_NOMINAL: &str = "NON_UNIQUE_NOMINAL";

/// A nonnegative real or `+inf`; serialized as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Modulus(pub f64);

impl Modulus {
    pub const INFINITE: Modulus = Modulus(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl Serialize for Modulus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl fmt::Display for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_finite() {
            write!(f, "{:.6}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BorderedKkt {
    pub d: IndexSet,
    pub matrix: Matrix,
}

/// `[[Q, A_D'], [A_D, 0]]`; `Q` itself for `D` empty.
pub fn assemble_md(inst: &QpInstance, d: &IndexSet) -> BorderedKkt {
    let n = inst.n();
    let k = d.len();
    let mut m = Matrix::zeros(n + k, n + k);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = inst.q()[(i, j)];
        }
    }
    for (r, &i) in d.indices().iter().enumerate() {
        for (j, a) in inst.a_row(i).iter().enumerate() {
            m[(n + r, j)] = *a;
            m[(j, n + r)] = *a;
        }
    }
    BorderedKkt { d: d.clone(), matrix: m }
}

/// Nonsingularity of `M_D`, decided by LU and by independence of the rows of
/// `A_D` together with `ker Q ∩ ker A_D = {0}`. The two verdicts must
/// coincide.
pub fn md_nonsingular(inst: &QpInstance, d: &IndexSet, tol: &Tolerances) -> Result<bool> {
    let md = assemble_md(inst, d).matrix;
    let by_lu = Lu::factor(&md)?.is_nonsingular(tol.pivot);
    let stacked = inst.q().vstack(&inst.a().select_rows(d.indices()));
    let by_kernel = qp::rows_independent(inst, d, tol) && linalg::kernel_basis(&stacked, tol.pivot).is_empty();
    if by_lu != by_kernel {
        return Err(Error::InconsistentNumerics(format!(
            "M_D for D = {d}: LU says {}, kernel test says {}",
            verdict(by_lu),
            verdict(by_kernel)
        )));
    }
    Ok(by_lu)
}

fn verdict(nonsingular: bool) -> &'static str {
    if nonsingular {
        "nonsingular"
    } else {
        "singular"
    }
}

/// `(value, alpha, beta)` at one box vertex.
type Candidate = (f64, Vec<f64>, Vec<f64>);

/// Maximizer of `||B1 alpha + B2 beta||` over the dual ball times the box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorNormResult {
    pub value: f64,
    pub alpha_star: Vec<f64>,
    pub beta_star: Vec<f64>,
}

impl OperatorNormResult {
    pub fn zero(n: usize, d: usize) -> Self {
        OperatorNormResult { value: 0.0, alpha_star: vec![0.0; n], beta_star: vec![0.0; d] }
    }

    /// The stacked argument `(alpha; beta)`.
    pub fn direction(&self) -> Vec<f64> {
        let mut v = self.alpha_star.clone();
        v.extend(&self.beta_star);
        v
    }
}

/// Exact `max { ||B (alpha; beta)|| : ||alpha||_* <= 1, ||beta||_inf <= 1 }`,
/// where `B` is `n x (n + d)`, `||.||` is `var_norm` and `||.||_*` its dual.
pub fn operator_norm(b: &Matrix, var_norm: VectorNorm, d: usize, tol: &Tolerances) -> Result<OperatorNormResult> {
    operator_norm_with(b, var_norm, d, tol, Exec::default())
}

pub fn operator_norm_with(
    b: &Matrix,
    var_norm: VectorNorm,
    d: usize,
    tol: &Tolerances,
    exec: Exec,
) -> Result<OperatorNormResult> {
    let n = b.rows();
    if b.cols() != n + d {
        return Err(Error::DimensionMismatch(format!("operator block is {}x{}, expected {n}x{}", b.rows(), b.cols(), n + d)));
    }
    if d > MAX_ENUM_DIM {
        return Err(Error::TooLarge(format!("box dimension {d} exceeds {MAX_ENUM_DIM}")));
    }
    if var_norm == VectorNorm::L1 && n > MAX_ENUM_DIM {
        return Err(Error::TooLarge(format!("alpha dimension {n} exceeds {MAX_ENUM_DIM}")));
    }
    let b1 = b.column_block(0, n);
    let b2 = b.column_block(n, n + d);
    // (alpha, beta) and (-alpha, -beta) give the same value, so beta_0 = +1
    let count = if d == 0 { 1 } else { 1usize << (d - 1) };
    let per_vertex: Vec<Result<Candidate>> = par::map_range(exec, count, |mask| {
        let beta: Vec<f64> = (0..d).map(|j| if j > 0 && (mask >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let v = b2.matvec(&beta);
        let alpha = best_alpha(&b1, &v, var_norm, tol)?;
        let out = linalg::add(&b1.matvec(&alpha), &v);
        Ok((var_norm.eval(&out), alpha, beta))
    });
    let mut best: Option<Candidate> = None;
    for r in per_vertex {
        let cand = r?;
        if best.as_ref().is_none_or(|b| cand.0 > b.0) {
            best = Some(cand);
        }
    }
    let (value, alpha_star, beta_star) = best.expect("at least one box vertex");
    Ok(OperatorNormResult { value, alpha_star, beta_star })
}

/// Maximizes `||B1 alpha + v||` over the dual unit ball of `var_norm`.
fn best_alpha(b1: &Matrix, v: &[f64], var_norm: VectorNorm, tol: &Tolerances) -> Result<Vec<f64>> {
    let n = b1.cols();
    if n == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<Vec<f64>> = match var_norm {
        // dual ball is the cube
        VectorNorm::L1 => {
            (0..1usize << n).map(|mask| (0..n).map(|j| if (mask >> j) & 1 == 1 { -1.0 } else { 1.0 }).collect()).collect()
        }
        // dual ball is the cross-polytope
        VectorNorm::Linf => (0..2 * n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                e
            })
            .collect(),
        VectorNorm::L2 => trust_region_candidates(b1, v, tol)?,
    };
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, a) in candidates.iter().enumerate() {
        let val = var_norm.eval(&linalg::add(&b1.matvec(a), v));
        if val > best_val {
            best_val = val;
            best = k;
        }
    }
    Ok(candidates.into_iter().nth(best).expect("nonempty candidate list"))
}

const HARD_CASE_EPS: f64 = 1e-12;
const SECULAR_RESID: f64 = 1e-12;
const SECULAR_MAX_ITER: usize = 200;

/// Candidate maximizers of `||B1 alpha + v||_2` over `||alpha||_2 <= 1`.
///
/// With `H = B1'B1 = U diag(lambda) U'` and `g = B1'v`, a global maximizer
/// satisfies `(mu I - H) alpha = g`, `mu >= lambda_1`, `||alpha|| = 1`.
fn trust_region_candidates(b1: &Matrix, v: &[f64], tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    let bt = b1.transpose();
    let h = bt.matmul(b1).symmetrized();
    let g = bt.matvec(v);
    let eig = linalg::sym_eig(&h, tol.sym)?;
    let k = eig.values.len();
    let l1 = eig.values[0];
    let u1 = eig.vector(0);
    let gamma: Vec<f64> = (0..k).map(|j| linalg::dot(&eig.vector(j), &g)).collect();
    let gap: Vec<f64> = eig.values.iter().map(|l| (l1 - l).max(0.0)).collect();
    let top_cut = 1e-10 * l1.abs().max(1.0);
    let is_top: Vec<bool> = gap.iter().map(|&d| d <= top_cut).collect();
    let gnorm = linalg::norm2(&g);
    let top_norm = (0..k).filter(|&j| is_top[j]).map(|j| gamma[j] * gamma[j]).sum::<f64>().sqrt();

    let mut out = vec![u1.clone(), u1.iter().map(|x| -x).collect()];
    if gnorm == 0.0 {
        return Ok(out);
    }
    let combine = |coef: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut a = vec![0.0; k];
        for j in 0..k {
            let cj = coef(j);
            if cj != 0.0 {
                a = linalg::axpy(cj, &eig.vector(j), &a);
            }
        }
        a
    };
    let hard = top_norm <= HARD_CASE_EPS * gnorm.max(1.0);
    let active: Vec<usize> = (0..k).filter(|&j| !(hard && is_top[j])).collect();
    if hard {
        let p = combine(&|j| if is_top[j] { 0.0 } else { gamma[j] / gap[j] });
        let pn = linalg::norm2(&p);
        if pn < 1.0 {
            let tau = (1.0 - pn * pn).sqrt();
            out.push(linalg::axpy(tau, &u1, &p));
            out.push(linalg::axpy(-tau, &u1, &p));
            return Ok(out);
        }
    }
    let s = secular_root(&active, &gamma, &gap, gnorm);
    let mut a = combine(&|j| if active.contains(&j) { gamma[j] / (s + gap[j]) } else { 0.0 });
    let an = linalg::norm2(&a);
    if an > 0.0 {
        a.iter_mut().for_each(|x| *x /= an);
        out.push(a);
    }
    Ok(out)
}

/// Root `s > 0` of `sum gamma_j^2 / (s + gap_j)^2 = 1` over `active`.
/// Safeguarded Newton on `1/||alpha(s)|| - 1`, bracketed in `(0, ||g||]`.
fn secular_root(active: &[usize], gamma: &[f64], gap: &[f64], gnorm: f64) -> f64 {
    let norm_at = |s: f64| -> (f64, f64) {
        let mut n2 = 0.0;
        let mut d3 = 0.0;
        for &j in active {
            let den = s + gap[j];
            n2 += gamma[j] * gamma[j] / (den * den);
            d3 += gamma[j] * gamma[j] / (den * den * den);
        }
        (n2.sqrt(), d3)
    };
    let (mut lo, mut hi) = (0.0, gnorm);
    let mut s = hi;
    for _ in 0..SECULAR_MAX_ITER {
        let (nrm, d3) = norm_at(s);
        if (nrm - 1.0).abs() <= SECULAR_RESID {
            return s;
        }
        if nrm > 1.0 {
            lo = s;
        } else {
            hi = s;
        }
        let psi = 1.0 / nrm - 1.0;
        let dpsi = d3 / (nrm * nrm * nrm);
        let next = s - psi / dpsi;
        s = if next > lo && next < hi && next.is_finite() { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    s
}

/// Per-index-set entry of a modulus report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerD {
    #[serde(rename = "D")]
    pub d: IndexSet,
    pub nonsingular: bool,
    #[serde(rename = "lip_SD")]
    pub lip_sd: Modulus,
    pub attaining_direction: Option<OperatorNormResult>,
}

/// `(I_n 0) M_D^{-1}`, the solution block of the inverse bordered matrix.
pub fn solution_block(inst: &QpInstance, d: &IndexSet, tol: &Tolerances) -> Result<Matrix> {
    let inv = linalg::inverse(&assemble_md(inst, d).matrix, tol.pivot)?;
    let rows: Vec<usize> = (0..inst.n()).collect();
    Ok(inv.select_rows(&rows))
}

/// Lipschitz modulus of the subproblem mapping `S_D`: `+inf` when `M_D` is
/// singular, otherwise the operator norm of the solution block.
pub fn lip_sd(inst: &QpInstance, d: &IndexSet, tol: &Tolerances) -> Result<PerD> {
    lip_sd_with(inst, d, tol, Exec::default())
}

pub fn lip_sd_with(inst: &QpInstance, d: &IndexSet, tol: &Tolerances, exec: Exec) -> Result<PerD> {
    if !md_nonsingular(inst, d, tol)? {
        return Ok(PerD { d: d.clone(), nonsingular: false, lip_sd: Modulus::INFINITE, attaining_direction: None });
    }
    let block = solution_block(inst, d, tol)?;
    let on = operator_norm_with(&block, inst.norm(), d.len(), tol, exec)?;
    Ok(PerD { d: d.clone(), nonsingular: true, lip_sd: Modulus(on.value), attaining_direction: Some(on) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusReport {
    pub status: QpStatus,
    pub x_bar: Vec<f64>,
    pub unique: bool,
    pub aubin: bool,
    pub modulus: Modulus,
    pub nc: bool,
    pub families: IndexFamilies,
    #[serde(rename = "per_D")]
    pub per_d: Vec<PerD>,
    #[serde(rename = "attaining_D")]
    pub attaining_d: Option<IndexSet>,
    pub attaining_direction: Option<OperatorNormResult>,
    pub warnings: Vec<String>,
}

impl ModulusReport {
    pub fn entry(&self, d: &IndexSet) -> Option<&PerD> {
        self.per_d.iter().find(|e| &e.d == d)
    }
}

/// Nominal solution and families, after the Slater check.
pub fn nominal_analysis(inst: &QpInstance, tol: &Tolerances) -> Result<(QpSolution, IndexFamilies)> {
    if !lp::slater_holds(inst.a(), inst.b_bar(), tol) {
        return Err(Error::ScqFails);
    }
    let p = inst.nominal();
    let sol = qp::solve(inst, &p, tol);
    match sol.status {
        QpStatus::Infeasible => return Err(Error::NominalInfeasible),
        QpStatus::UnboundedBelow => return Err(Error::NominalUnbounded),
        QpStatus::Optimal => {}
    }
    let x = sol.x.as_ref().expect("optimal solution carries x");
    let fam = families::kkt_families(inst, &p, x, tol)?;
    Ok((sol, fam))
}

/// First entry whose value is within `tol_norm` of the largest one.
fn attaining(entries: &[&PerD], tol: &Tolerances) -> Option<usize> {
    let max = entries.iter().map(|e| e.lip_sd.0).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let cut = if max.is_finite() { max - tol.norm * max.max(1.0) } else { max };
    entries.iter().position(|e| e.lip_sd.0 >= cut)
}

pub fn lip_modulus(inst: &QpInstance, tol: &Tolerances) -> Result<ModulusReport> {
    lip_modulus_with(inst, tol, Exec::default())
}

pub fn lip_modulus_with(inst: &QpInstance, tol: &Tolerances, exec: Exec) -> Result<ModulusReport> {
    let (sol, fam) = nominal_analysis(inst, tol)?;
    let unique = sol.unique == Some(true);
    let per_d =
        par::map(exec, &fam.extended, |d| lip_sd_with(inst, d, tol, Exec::Sequential)).into_iter().collect::<Result<Vec<_>>>()?;

    let mut warnings = fam.warnings.clone();
    let minimal_ok = fam.minimal.iter().all(|d| per_d.iter().find(|e| &e.d == d).is_some_and(|e| e.nonsingular));
    if !unique {
        warnings.push(format!(
            "{NON_UNIQUE_NOMINAL}: the nominal optimal set is not a singleton; Aubin fails because it is equivalent to strong Lipschitz stability, which needs local single-valuedness (derived verdict)"
        ));
    }
    let aubin = unique && minimal_ok;
    let (modulus, attaining_d, attaining_direction) = if aubin {
        let refs: Vec<&PerD> = per_d.iter().collect();
        let k = attaining(&refs, tol).expect("extended family contains the minimal family");
        let max = per_d.iter().map(|e| e.lip_sd.0).fold(0.0, f64::max);
        if !max.is_finite() {
            return Err(Error::InconsistentNumerics(
                "singular M_D in the extended family although every minimal M_D is nonsingular".into(),
            ));
        }
        (Modulus(max), Some(per_d[k].d.clone()), per_d[k].attaining_direction.clone())
    } else {
        (Modulus::INFINITE, None, None)
    };
    Ok(ModulusReport {
        status: sol.status,
        nc: fam.nc_holds(inst.n()),
        x_bar: sol.x.expect("optimal solution carries x"),
        unique,
        aubin,
        modulus,
        families: fam,
        per_d,
        attaining_d,
        attaining_direction,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictedModulus {
    pub value: Modulus,
    #[serde(rename = "attaining_D")]
    pub attaining_d: Option<IndexSet>,
}

/// Maximum of `lip_SD` over extended-family members contained in `d0`.
pub fn lip_modulus_restricted(inst: &QpInstance, d0: &IndexSet, tol: &Tolerances) -> Result<RestrictedModulus> {
    let (_, fam) = nominal_analysis(inst, tol)?;
    if !fam.extended.contains(d0) {
        return Err(Error::D0NotInFamily(d0.to_string()));
    }
    let entries = fam.extended.iter().filter(|d| d.is_subset_of(d0)).map(|d| lip_sd(inst, d, tol)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PerD> = entries.iter().collect();
    let k = attaining(&refs, tol).expect("d0 itself is a member");
    let max = entries.iter().map(|e| e.lip_sd.0).fold(0.0, f64::max);
    Ok(RestrictedModulus { value: Modulus(max), attaining_d: Some(entries[k].d.clone()) })
}

/// Three expressions for `||A_D^{-1}||` (box to variable norm) when `Q = 0`.
/// All are stored as moduli, so they coincide in exact arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearCaseNorms {
    pub direct: f64,
    /// `(min { ||A_D' lambda||_* : ||lambda||_1 = 1 })^{-1}`.
    pub dual_min: f64,
    /// Inverse dual-norm distance from the origin to the boundary of
    /// `conv{+-a_i : i in D}`.
    pub distance_form: f64,
}

pub fn linear_case_norms(inst: &QpInstance, d: &IndexSet, tol: &Tolerances) -> Result<LinearCaseNorms> {
    if !inst.q().is_zero() {
        return Err(Error::NotLinear);
    }
    let n = inst.n();
    let ad = inst.a().select_rows(d.indices());
    if ad.rows() != n {
        return Err(Error::NotSquare { rows: ad.rows(), cols: n });
    }
    let lu = Lu::factor(&ad)?;
    if !lu.is_nonsingular(tol.pivot) {
        return Err(Error::NotSquare { rows: n, cols: n });
    }
    let norm = inst.norm();

    let inv = linalg::inverse(&ad, tol.pivot)?;
    let direct = operator_norm(&Matrix::zeros(n, n).hstack(&inv), norm, n, tol)?.value;

    // every sign pattern s gives the simplex facet {diag(s) mu : mu >= 0, sum mu = 1}
    let facets = 1usize << (n - 1);
    let mut min_dual = f64::INFINITY;
    let mut max_facet = 0.0f64;
    for mask in 0..facets {
        let s: Vec<f64> = (0..n).map(|j| if j > 0 && (mask >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let w: Vec<Vec<f64>> = (0..n).map(|i| ad.row(i).iter().map(|a| a * s[i]).collect()).collect();
        min_dual = min_dual.min(min_dual_on_simplex(&w, norm.dual(), tol)?);
        // facet {y : (A_D^{-1} s)'y = 1} of conv{+-a_i}
        let h = lu.solve(&s);
        max_facet = max_facet.max(norm.eval(&h));
    }
    Ok(LinearCaseNorms { direct, dual_min: 1.0 / min_dual, distance_form: max_facet })
}

/// `min { ||sum_i mu_i w_i||_k : mu >= 0, sum mu = 1 }`.
fn min_dual_on_simplex(w: &[Vec<f64>], k: VectorNorm, tol: &Tolerances) -> Result<f64> {
    let d = w.len();
    let n = w[0].len();
    let combo = |mu: &[f64]| -> Vec<f64> { (0..n).map(|r| (0..d).map(|i| mu[i] * w[i][r]).sum()).collect() };
    match k {
        VectorNorm::L2 => {
            // minimize 1/2 mu'(W W')mu over the simplex
            let mut g = Matrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] = linalg::dot(&w[i], &w[j]);
                }
            }
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for i in 0..d {
                let mut r = vec![0.0; d];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(0.0);
            }
            rows.push(vec![1.0; d]);
            rhs.push(1.0);
            rows.push(vec![-1.0; d]);
            rhs.push(-1.0);
            let a = Matrix::from_rows(&rows, d)?;
            let sub = QpInstance::new(g, a, vec![0.0; d], rhs, VectorNorm::L2, tol)?;
            let sol = qp::KktSolver::new(&sub, tol).kkt_point(&sub.nominal());
            let mu = sol.x.ok_or_else(|| Error::InconsistentNumerics("simplex QP has no solution".into()))?;
            Ok(linalg::norm2(&combo(&mu)))
        }
        VectorNorm::L1 | VectorNorm::Linf => {
            // variables (mu, t); t is a vector for l1 and a scalar for linf
            let nt = if k == VectorNorm::L1 { n } else { 1 };
            let nv = d + nt;
            let mut cons = Constraints::new(nv);
            for i in 0..d {
                let mut r = vec![0.0; nv];
                r[i] = -1.0;
                cons.le(r, 0.0);
            }
            let mut sum = vec![0.0; nv];
            sum[..d].iter_mut().for_each(|x| *x = 1.0);
            cons.eq(sum, 1.0);
            for row in 0..n {
                let t_idx = d + if k == VectorNorm::L1 { row } else { 0 };
                for sign in [1.0, -1.0] {
                    let mut r = vec![0.0; nv];
                    for i in 0..d {
                        r[i] = sign * w[i][row];
                    }
                    r[t_idx] = -1.0;
                    cons.le(r, 0.0);
                }
            }
            let mut obj = vec![0.0; nv];
            obj[d..].iter_mut().for_each(|x| *x = 1.0);
            let res = cons.solve(&obj, tol.feas);
            match (res.status, res.x) {
                (LpStatus::Optimal, Some(x)) => Ok(k.eval(&combo(&x[..d]))),
                (status, _) => Err(Error::InconsistentNumerics(format!("simplex LP ended with {status:?}"))),
            }
        }
    }
}

/// Closed-form modulus of the metric projection onto `{x : A x <= b}` at `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub projection: Vec<f64>,
    pub active: IndexSet,
    pub family: Vec<IndexSet>,
    #[serde(rename = "per_D")]
    pub per_d: Vec<PerD>,
    pub modulus: Modulus,
    #[serde(rename = "attaining_D")]
    pub attaining_d: Option<IndexSet>,
    /// The same modulus through the general bordered-matrix path.
    pub generic_modulus: Modulus,
    pub warnings: Vec<String>,
}

/// `[I - A_D'(A_D A_D')^{-1} A_D | A_D'(A_D A_D')^{-1}]`.
pub fn projection_block(a: &Matrix, d: &IndexSet, tol: &Tolerances) -> Result<Matrix> {
    let n = a.cols();
    if d.is_empty() {
        return Ok(Matrix::identity(n));
    }
    let ad = a.select_rows(d.indices());
    let adt = ad.transpose();
    let right = adt.matmul(&linalg::inverse(&ad.matmul(&adt), tol.pivot)?);
    let left = Matrix::identity(n).sub(&right.matmul(&ad));
    Ok(left.hstack(&right))
}

pub fn lip_projection(a: &Matrix, b: &[f64], z: &[f64], tol: &Tolerances) -> Result<ProjectionReport> {
    if !lp::slater_holds(a, b, tol) {
        return Err(Error::ScqFails);
    }
    let inst = model::projection_instance(z, a, b, tol)?;
    let p = inst.nominal();
    let sol = qp::solve(&inst, &p, tol);
    let x = sol.x.ok_or(Error::NominalInfeasible)?;
    let active = families::active_indices(&inst, &p, &x, tol)?;
    let w = linalg::sub(z, &x);

    let mut family = Vec::new();
    for d in IndexSet::subsets(active.indices(), inst.n()) {
        let gens: Vec<&[f64]> = d.indices().iter().map(|&i| a.row(i)).collect();
        if lp::in_cone(&w, &gens, tol).is_some() && crate::qp::rows_independent(&inst, &d, tol) {
            family.push(d);
        }
    }
    let per_d = family
        .iter()
        .map(|d| {
            let on = operator_norm(&projection_block(a, d, tol)?, VectorNorm::L2, d.len(), tol)?;
            Ok(PerD { d: d.clone(), nonsingular: true, lip_sd: Modulus(on.value), attaining_direction: Some(on) })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PerD> = per_d.iter().collect();
    let k = attaining(&refs, tol);
    let value = per_d.iter().map(|e| e.lip_sd.0).fold(0.0, f64::max);

    let generic = lip_modulus(&inst, tol)?;
    let agree = (generic.modulus.0 - value).abs() <= tol.norm * value.max(1.0);
    if !agree {
        return Err(Error::InconsistentNumerics(format!(
            "closed-form projection modulus {value} differs from the general formula {}",
            generic.modulus.0
        )));
    }
    Ok(ProjectionReport {
        projection: x,
        active,
        family,
        attaining_d: k.map(|k| per_d[k].d.clone()),
        per_d,
        modulus: Modulus(value),
        generic_modulus: generic.modulus,
        warnings: generic.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InstanceFile;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-8;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn m(rows: &[&[f64]]) -> Matrix {
        let cols = rows.first().map_or(0, |r| r.len());
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), cols).unwrap()
    }

    fn instance(q: &[&[f64]], a: &[&[f64]], b: &[f64], c: &[f64], norm: VectorNorm) -> QpInstance {
        InstanceFile {
            n: c.len(),
            m: b.len(),
            q: q.iter().map(|r| r.to_vec()).collect(),
            a: a.iter().map(|r| r.to_vec()).collect(),
            b: b.to_vec(),
            c: c.to_vec(),
            norm: Some(norm),
        }
        .validate(&tol())
        .unwrap()
    }

    fn exa1() -> QpInstance {
        instance(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[-1.0, 0.0], &[0.0, -0.1]], &[-1.0, 0.0], &[0.0, 0.0], VectorNorm::L2)
    }

    fn exa2(alpha: f64) -> QpInstance {
        instance(
            &[&[0.0, 0.0], &[0.0, alpha]],
            &[&[-1.0, 1.0], &[-1.0, -1.0], &[-1.0, 0.0]],
            &[0.0; 3],
            &[1.0, 0.0],
            VectorNorm::L2,
        )
    }

    fn exa32() -> QpInstance {
        instance(&[&[1.0, 0.0], &[0.0, 0.0]], &[&[-1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], &[1.0, 0.0], VectorNorm::L2)
    }

    fn set(l: &[usize]) -> IndexSet {
        IndexSet::from_labels(l)
    }

    #[test]
    fn assembly() {
        let md = assemble_md(&exa32(), &set(&[1, 2])).matrix;
        assert_eq!(md, m(&[&[1.0, 0.0, -1.0, 0.0], &[0.0, 0.0, 0.0, 1.0], &[-1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]));
        assert_eq!(assemble_md(&exa32(), &IndexSet::empty()).matrix, *exa32().q());
        assert_eq!(assemble_md(&exa1(), &set(&[1])).matrix, m(&[&[1.0, 0.0, -1.0], &[0.0, 1.0, 0.0], &[-1.0, 0.0, 0.0]]));
    }

    #[test]
    fn nonsingularity() {
        assert!(!md_nonsingular(&exa32(), &set(&[1]), &tol()).unwrap());
        assert!(md_nonsingular(&exa32(), &set(&[1, 2]), &tol()).unwrap());
        for d in [&[][..], &[1], &[2], &[1, 2]] {
            assert!(md_nonsingular(&exa1(), &set(d), &tol()).unwrap());
        }
    }

    #[test]
    fn operator_norm_examples() {
        let r = operator_norm(&m(&[&[0.0, 0.0, -1.0], &[0.0, 1.0, 0.0]]), VectorNorm::L2, 1, &tol()).unwrap();
        assert_abs_diff_eq!(r.value, 2f64.sqrt(), epsilon = EPS);
        let r = operator_norm(&Matrix::identity(2), VectorNorm::L2, 0, &tol()).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = EPS);
        let b = solution_block(&exa1(), &set(&[1, 2]), &tol()).unwrap();
        assert_abs_diff_eq!(b.column_block(0, 2).max_abs(), 0.0, epsilon = 1e-14);
        let r = operator_norm(&b, VectorNorm::L2, 2, &tol()).unwrap();
        assert_abs_diff_eq!(r.value, 101f64.sqrt(), epsilon = EPS);
    }

    #[test]
    fn operator_norm_rejects_bad_shapes() {
        assert!(matches!(operator_norm(&Matrix::identity(2), VectorNorm::L2, 1, &tol()), Err(Error::DimensionMismatch(_))));
        assert!(matches!(operator_norm(&Matrix::zeros(1, 22), VectorNorm::L2, 21, &tol()), Err(Error::TooLarge(_))));
    }

    #[test]
    fn trust_region_hard_case() {
        // H = diag(4, 1), g orthogonal to the top eigenvector
        let b1 = m(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let v = [0.0, 0.5];
        let a = best_alpha(&b1, &v, VectorNorm::L2, &tol()).unwrap();
        let val = linalg::norm2(&linalg::add(&b1.matvec(&a), &v));
        // brute force over the unit circle
        let brute = (0..200_000)
            .map(|k| {
                let t = k as f64 / 200_000.0 * std::f64::consts::TAU;
                linalg::norm2(&linalg::add(&b1.matvec(&[t.cos(), t.sin()]), &v))
            })
            .fold(0.0, f64::max);
        assert!(val >= brute - 1e-9);
        // 4(1 - a2^2) + (a2 + 1/2)^2 peaks at a2 = 1/6
        assert_abs_diff_eq!(val, (13.0f64 / 3.0).sqrt(), epsilon = EPS);
    }

    #[test]
    fn lip_sd_exa2_table() {
        for alpha in [1.0, 1.0 / 3.0, 2.0] {
            let inst = exa2(alpha);
            let expect = [
                (set(&[1, 2]), 1.0),
                (set(&[3]), (1.0 + 1.0 / (alpha * alpha)).sqrt()),
                (set(&[1, 3]), 5f64.sqrt()),
                (set(&[2, 3]), 5f64.sqrt()),
            ];
            for (d, v) in expect {
                assert_abs_diff_eq!(lip_sd(&inst, &d, &tol()).unwrap().lip_sd.0, v, epsilon = EPS);
            }
        }
    }

    #[test]
    fn modulus_fixtures() {
        let r = lip_modulus(&exa1(), &tol()).unwrap();
        assert!(r.aubin);
        assert_abs_diff_eq!(r.modulus.0, 101f64.sqrt(), epsilon = EPS);
        assert_eq!(r.attaining_d, Some(set(&[1, 2])));
        assert_abs_diff_eq!(r.entry(&set(&[1])).unwrap().lip_sd.0, 2f64.sqrt(), epsilon = EPS);

        let r = lip_modulus(&exa2(1.0 / 3.0), &tol()).unwrap();
        assert_abs_diff_eq!(r.modulus.0, 10f64.sqrt(), epsilon = EPS);
        assert_eq!(r.attaining_d, Some(set(&[3])));

        let r = lip_modulus(&exa32(), &tol()).unwrap();
        assert!(!r.aubin);
        assert!(!r.modulus.is_finite());
        assert!(!r.entry(&set(&[1])).unwrap().nonsingular);
        assert!(r.entry(&set(&[1, 2])).unwrap().nonsingular);
    }

    #[test]
    fn restricted_modulus() {
        let r = lip_modulus_restricted(&exa2(1.0 / 3.0), &set(&[1, 3]), &tol()).unwrap();
        assert_abs_diff_eq!(r.value.0, 10f64.sqrt(), epsilon = EPS);
        assert_eq!(r.attaining_d, Some(set(&[3])));
        let r = lip_modulus_restricted(&exa2(1.0), &set(&[1, 2]), &tol()).unwrap();
        assert_abs_diff_eq!(r.value.0, 1.0, epsilon = EPS);
        assert!(matches!(lip_modulus_restricted(&exa2(1.0), &set(&[1, 2, 3]), &tol()), Err(Error::D0NotInFamily(_))));
        // interior unconstrained minimum of a strictly convex objective
        let inst = instance(&[&[2.0, 0.0], &[0.0, 4.0]], &[&[1.0, 0.0]], &[10.0], &[0.0, 0.0], VectorNorm::L2);
        let r = lip_modulus_restricted(&inst, &IndexSet::empty(), &tol()).unwrap();
        assert_abs_diff_eq!(r.value.0, 0.5, epsilon = EPS);
    }

    #[test]
    fn scq_and_nominal_errors() {
        let inst = instance(&[&[1.0]], &[&[1.0], &[-1.0]], &[0.0, 0.0], &[0.0], VectorNorm::L2);
        assert!(matches!(lip_modulus(&inst, &tol()), Err(Error::ScqFails)));
        let inst = instance(&[&[0.0]], &[&[1.0]], &[0.0], &[1.0], VectorNorm::L2);
        assert!(matches!(lip_modulus(&inst, &tol()), Err(Error::NominalUnbounded)));
    }

    #[test]
    fn linear_case_examples() {
        // box to Euclidean: the largest image of a cube vertex
        let cases: [(&[&[f64]], f64); 2] =
            [(&[&[1.0, 0.0], &[0.0, 1.0]], 2f64.sqrt()), (&[&[2.0, 0.0], &[0.0, 0.5]], 17f64.sqrt() / 2.0)];
        for (a, expect) in cases {
            let inst = instance(&[&[0.0, 0.0], &[0.0, 0.0]], a, &[0.0, 0.0], &[0.0, 0.0], VectorNorm::L2);
            let r = linear_case_norms(&inst, &set(&[1, 2]), &tol()).unwrap();
            assert_abs_diff_eq!(r.direct, expect, epsilon = EPS);
            assert_abs_diff_eq!(r.dual_min, expect, epsilon = EPS);
            assert_abs_diff_eq!(r.distance_form, expect, epsilon = EPS);
        }
        let inst = instance(&[&[0.0, 0.0], &[0.0, 0.0]], &[&[1.0, 1.0], &[1.0, -1.0]], &[0.0, 0.0], &[0.0, 0.0], VectorNorm::L2);
        let r = linear_case_norms(&inst, &set(&[1, 2]), &tol()).unwrap();
        // sampling oracle over the box
        let inv = linalg::inverse(&inst.a().clone(), 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sampled = (0..1_000_000)
            .map(|_| {
                let beta = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                linalg::norm2(&inv.matvec(&beta))
            })
            .fold(0.0, f64::max);
        assert!((r.direct - sampled).abs() < 1e-3);
        assert_abs_diff_eq!(r.dual_min, r.direct, epsilon = EPS);
        assert_abs_diff_eq!(r.distance_form, r.direct, epsilon = EPS);
    }

    #[test]
    fn linear_case_errors() {
        assert!(matches!(linear_case_norms(&exa1(), &set(&[1, 2]), &tol()), Err(Error::NotLinear)));
        let inst = instance(&[&[0.0, 0.0], &[0.0, 0.0]], &[&[1.0, 0.0]], &[0.0], &[0.0, 0.0], VectorNorm::L2);
        assert!(matches!(linear_case_norms(&inst, &set(&[1]), &tol()), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn projection_examples() {
        let a = m(&[&[-1.0, 0.0], &[0.0, -0.1]]);
        let r = lip_projection(&a, &[-1.0, 0.0], &[0.0, 0.0], &tol()).unwrap();
        assert_abs_diff_eq!(r.modulus.0, 101f64.sqrt(), epsilon = EPS);
        assert_abs_diff_eq!(r.projection[0], 1.0, epsilon = 1e-12);

        let r = lip_projection(&a, &[-1.0, 0.0], &[3.0, 1.0], &tol()).unwrap();
        assert_eq!(r.family, vec![IndexSet::empty()]);
        assert_abs_diff_eq!(r.modulus.0, 1.0, epsilon = EPS);

        let h = m(&[&[0.0, 1.0]]);
        let r = lip_projection(&h, &[0.0], &[0.0, 5.0], &tol()).unwrap();
        assert_abs_diff_eq!(r.projection[1], 0.0, epsilon = 1e-12);
        assert_eq!(r.family, vec![set(&[1])]);
        assert_abs_diff_eq!(r.modulus.0, 2f64.sqrt(), epsilon = EPS);

        let bad = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!(matches!(lip_projection(&bad, &[0.0, 0.0], &[0.0, 0.0], &tol()), Err(Error::ScqFails)));
    }

    #[test]
    fn modulus_serializes_infinity_as_string() {
        assert_eq!(serde_json::to_string(&Modulus::INFINITE).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Modulus(2.0)).unwrap(), "2.0");
    }

    fn matrix_strategy() -> impl Strategy<Value = (Matrix, usize)> {
        (1usize..=3, 0usize..=3).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-3.0f64..3.0, n * (n + d))
                .prop_map(move |data| (Matrix::from_row_slice(n, n + d, &data).unwrap(), d))
        })
    }

    fn norm_strategy() -> impl Strategy<Value = VectorNorm> {
        prop_oneof![Just(VectorNorm::L1), Just(VectorNorm::L2), Just(VectorNorm::Linf)]
    }

    fn sample_ball(rng: &mut ChaCha8Rng, n: usize, k: VectorNorm) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let s = k.eval(&v);
        if s > 1.0 {
            v.iter().map(|x| x / s).collect()
        } else {
            v
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn attained_and_dominant((b, d) in matrix_strategy(), k in norm_strategy(), seed in any::<u64>()) {
            let t = tol();
            let r = operator_norm(&b, k, d, &t).unwrap();
            let n = b.rows();
            let at = k.eval(&b.matvec(&r.direction()));
            prop_assert!((at - r.value).abs() <= t.norm * r.value.max(1.0));
            prop_assert!(k.dual().eval(&r.alpha_star) <= 1.0 + t.norm);
            prop_assert!(linalg::max_abs(&r.beta_star) <= 1.0 + t.norm);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..2000 {
                let mut x = sample_ball(&mut rng, n, k.dual());
                x.extend((0..d).map(|_| rng.random_range(-1.0..=1.0)));
                prop_assert!(k.eval(&b.matvec(&x)) <= r.value + t.norm);
            }
        }

        #[test]
        fn homogeneous((b, d) in matrix_strategy(), k in norm_strategy()) {
            let t = tol();
            let base = operator_norm(&b, k, d, &t).unwrap().value;
            for s in [0.5, 2.0, 10.0] {
                let scaled = operator_norm(&b.scale(s), k, d, &t).unwrap().value;
                prop_assert!((scaled - s * base).abs() <= t.norm * (s * base).max(1.0));
            }
        }

        #[test]
        fn sequential_matches_parallel((b, d) in matrix_strategy(), k in norm_strategy()) {
            let t = tol();
            let s = operator_norm_with(&b, k, d, &t, Exec::Sequential).unwrap();
            let p = operator_norm_with(&b, k, d, &t, Exec::Parallel).unwrap();
            prop_assert_eq!(s, p);
        }
    }
}
