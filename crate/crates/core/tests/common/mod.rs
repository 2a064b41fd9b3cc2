//! Fixtures, random instance generators and independent oracles shared by the
//! integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use qlip::linalg::{self, Matrix, VectorNorm};
use qlip::lp;
use qlip::model::{IndexSet, InstanceFile, ParamPoint, QpInstance};
use qlip::Tolerances;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tol() -> Tolerances {
    Tolerances::default()
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(name: &str) -> QpInstance {
    InstanceFile::read(&fixture_path(name)).unwrap().validate(&tol()).unwrap()
}

pub fn set(labels: &[usize]) -> IndexSet {
    IndexSet::from_labels(labels)
}

pub fn instance(q: Vec<Vec<f64>>, a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>, norm: VectorNorm) -> QpInstance {
    InstanceFile { n: c.len(), m: b.len(), q, a, b, c, norm: Some(norm) }.validate(&tol()).unwrap()
}

pub fn exa2(alpha: f64) -> QpInstance {
    instance(
        vec![vec![0.0, 0.0], vec![0.0, alpha]],
        vec![vec![-1.0, 1.0], vec![-1.0, -1.0], vec![-1.0, 0.0]],
        vec![0.0; 3],
        vec![1.0, 0.0],
        VectorNorm::L2,
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_row_slice(rows, cols, &uniform_vec(rng, rows * cols, lo, hi)).unwrap()
}

pub fn random_norm(rng: &mut ChaCha8Rng) -> VectorNorm {
    [VectorNorm::L1, VectorNorm::L2, VectorNorm::Linf][rng.random_range(0..3)]
}

/// `G'G + shift I` with `G` of the given rank.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize, shift: f64) -> Matrix {
    let g = random_matrix(rng, rank, n, -1.5, 1.5);
    let mut q = g.transpose().matmul(&g).symmetrized();
    for i in 0..n {
        q[(i, i)] += shift;
    }
    q
}

/// An instance with a known KKT point.
///
/// Rows `0..active` pass through `x_bar`; the rest have slack in
/// `[0.5, 2]`. Multipliers on the active rows are either exactly zero or in
/// `[0.5, 2]`, so cone membership decisions have a wide margin.
pub struct Constructed {
    pub inst: QpInstance,
    pub x_bar: Vec<f64>,
    pub lambda: Vec<f64>,
}

pub fn constructed(rng: &mut ChaCha8Rng, n: usize, m: usize, active: usize, q: Matrix, norm: VectorNorm) -> Constructed {
    let a = random_matrix(rng, m, n, -1.0, 1.0);
    let x_bar = uniform_vec(rng, n, -1.0, 1.0);
    let lambda: Vec<f64> =
        (0..m).map(|i| if i < active && rng.random_bool(0.7) { rng.random_range(0.5..2.0) } else { 0.0 }).collect();
    let ax = a.matvec(&x_bar);
    let b: Vec<f64> = (0..m).map(|i| if i < active { ax[i] } else { ax[i] + rng.random_range(0.5..2.0) }).collect();
    let qx = q.matvec(&x_bar);
    let atl = a.transpose().matvec(&lambda);
    let c: Vec<f64> = (0..n).map(|j| -qx[j] - atl[j]).collect();
    let inst = qlip::QpInstance::new(q, a, c, b, norm, &tol()).unwrap();
    Constructed { inst, x_bar, lambda }
}

/// Slater holds and every set of at most `n` of the first `active` rows has
/// a Gram matrix with smallest eigenvalue at least 0.05. Together with the
/// multiplier and slack margins of [`constructed`] this keeps the piecewise
/// structure of the solution map unchanged within parameter radius 1e-3.
pub fn well_conditioned(inst: &QpInstance, active: usize) -> bool {
    let rows: Vec<usize> = (0..active).collect();
    lp::slater_holds(inst.a(), inst.b_bar(), &tol())
        && IndexSet::subsets(&rows, inst.n()).iter().skip(1).all(|d| {
            let aa = inst.a().select_rows(d.indices());
            let gram = aa.matmul(&aa.transpose()).symmetrized();
            linalg::sym_eig(&gram, 1e-9).unwrap().values.iter().all(|v| *v >= 0.05)
        })
}

/// Families by exhaustive subset enumeration: cone membership for every
/// subset of the active set, minimality by explicit comparison, independence
/// from the Gram matrix spectrum.
pub struct BruteFamilies {
    pub minimal: Vec<IndexSet>,
    pub extended: Vec<IndexSet>,
}

pub fn brute_families(inst: &QpInstance, p: &ParamPoint, x: &[f64], t: &Tolerances) -> BruteFamilies {
    let act: Vec<usize> =
        (0..inst.m()).filter(|&i| (linalg::dot(inst.a_row(i), x) - p.b[i]).abs() <= t.act * (1.0 + p.b[i].abs())).collect();
    let v: Vec<f64> = inst.gradient(&p.c, x).iter().map(|g| -g).collect();
    let mut members = Vec::new();
    for mask in 0u32..(1 << act.len()) {
        let d = IndexSet::new((0..act.len()).filter(|k| mask >> k & 1 == 1).map(|k| act[k]).collect());
        let gens: Vec<&[f64]> = d.indices().iter().map(|&i| inst.a_row(i)).collect();
        if lp::in_cone(&v, &gens, t).is_some() {
            members.push(d);
        }
    }
    let mut minimal: Vec<IndexSet> =
        members.iter().filter(|d| !members.iter().any(|e| e.is_proper_subset_of(d))).cloned().collect();
    let mut extended: Vec<IndexSet> = members.iter().filter(|d| gram_independent(inst, d)).cloned().collect();
    minimal.sort();
    extended.sort();
    BruteFamilies { minimal, extended }
}

pub fn gram_independent(inst: &QpInstance, d: &IndexSet) -> bool {
    if d.is_empty() {
        return true;
    }
    let ad = inst.a().select_rows(d.indices());
    let gram = ad.matmul(&ad.transpose()).symmetrized();
    let eig = linalg::sym_eig(&gram, 1e-9).unwrap();
    let top = eig.values[0].max(1e-300);
    *eig.values.last().unwrap() > 1e-10 * top
}

/// Optimal value of `P(c, b)` for positive definite `Q` by projected
/// (accelerated) gradient ascent on the dual `max_{lambda >= 0} g(lambda)`,
/// from several random starts, each run until the dual value stagnates.
pub fn dual_gradient_value(inst: &QpInstance, p: &ParamPoint, starts: usize, rng: &mut ChaCha8Rng) -> f64 {
    let m = inst.m();
    let qinv = linalg::inverse(inst.q(), 1e-14).unwrap();
    let at = inst.a().transpose();
    let x_of = |lam: &[f64]| -> Vec<f64> {
        let w = linalg::add(&p.c, &at.matvec(lam));
        qinv.matvec(&w).iter().map(|v| -v).collect()
    };
    let dual = |lam: &[f64]| -> f64 {
        let x = x_of(lam);
        // g = 1/2 x'Qx + c'x + lambda'(A x - b) at the minimizing x
        inst.objective(&p.c, &x) + linalg::dot(lam, &linalg::sub(&inst.a().matvec(&x), &p.b))
    };
    // Lipschitz constant of the dual gradient: ||A Q^{-1} A'||_2
    let h = inst.a().matmul(&qinv).matmul(&at).symmetrized();
    let lmax = if m == 0 { 0.0 } else { linalg::sym_eig(&h, 1e-9).unwrap().values[0].max(1e-12) };
    if m == 0 {
        let x = x_of(&[]);
        return inst.objective(&p.c, &x);
    }
    let step = 1.0 / lmax;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..starts {
        let mut lam = uniform_vec(rng, m, 0.0, 5.0);
        let mut y = lam.clone();
        let mut t = 1.0f64;
        let mut val = dual(&lam);
        let mut flat = 0;
        for _ in 0..200_000 {
            let x = x_of(&y);
            let grad = linalg::sub(&inst.a().matvec(&x), &p.b);
            let next: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| (yi + step * gi).max(0.0)).collect();
            let nval = dual(&next);
            if nval < val {
                if t == 1.0 {
                    // a plain step from lam lost only rounding noise
                    flat += 1;
                    if flat >= 50 {
                        break;
                    }
                    continue;
                }
                // adaptive restart
                y = lam.clone();
                t = 1.0;
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = next.iter().zip(&lam).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
            t = t_next;
            if nval - val <= 1e-15 * (1.0 + val.abs()) {
                flat += 1;
                if flat >= 50 {
                    val = nval;
                    lam = next;
                    break;
                }
            } else {
                flat = 0;
            }
            val = nval;
            lam = next;
        }
        best = best.max(val);
    }
    best
}

/// Uniform point of the unit ball of `k`.
pub fn sample_ball(rng: &mut ChaCha8Rng, n: usize, k: VectorNorm) -> Vec<f64> {
    loop {
        let v = uniform_vec(rng, n, -1.0, 1.0);
        if k.eval(&v) <= 1.0 {
            return v;
        }
    }
}

/// Point on the unit sphere of `k`.
pub fn sample_sphere(rng: &mut ChaCha8Rng, n: usize, k: VectorNorm) -> Vec<f64> {
    loop {
        let v = uniform_vec(rng, n, -1.0, 1.0);
        let s = k.eval(&v);
        if s > 1e-3 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}
