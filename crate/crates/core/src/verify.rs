//! Perturbation oracle: empirical Lipschitz ratios from re-solved QPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, VectorNorm};
use crate::model::{param_distance, IndexSet, ParamPoint, QpInstance};
use crate::modulus::{self, ModulusReport, OperatorNormResult};
use crate::par::{self, Exec};
use crate::qp::{KktSolver, QpStatus};
use crate::tolerance::Tolerances;

pub const DEFAULT_RADII: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub radii: Vec<f64>,
    pub samples_per_radius: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { radii: DEFAULT_RADII.to_vec(), samples_per_radius: DEFAULT_SAMPLES, seed: 0, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub radius: f64,
    pub p1: ParamPoint,
    pub p2: ParamPoint,
    pub x2: Vec<f64>,
    #[serde(rename = "dist_to_S1")]
    pub dist_to_s1: f64,
    pub param_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationTrace {
    pub samples: Vec<Sample>,
    pub best_ratio: f64,
    pub radii: Vec<f64>,
    pub best_per_radius: Vec<f64>,
}

impl PerturbationTrace {
    fn from_samples(radii: &[f64], samples: Vec<Sample>) -> Self {
        let best_per_radius =
            radii.iter().map(|r| samples.iter().filter(|s| s.radius == *r).map(|s| s.ratio).fold(0.0, f64::max)).collect();
        let best_ratio = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
        PerturbationTrace { samples, best_ratio, radii: radii.to_vec(), best_per_radius }
    }

    /// Largest ratio at the smallest radius.
    pub fn final_ratio(&self) -> f64 {
        self.best_per_radius.last().copied().unwrap_or(0.0)
    }
}

/// `dist / d` with `0/0 := 0`.
fn ratio(dist: f64, d: f64) -> f64 {
    if dist == 0.0 {
        0.0
    } else {
        dist / d
    }
}

/// Uniform point of the unit ball of `k`.
fn unit_ball(rng: &mut ChaCha8Rng, n: usize, k: VectorNorm) -> Vec<f64> {
    match k {
        VectorNorm::Linf => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        VectorNorm::L2 => {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let gn = linalg::norm2(&g);
            let rad = rng.random::<f64>().powf(1.0 / n as f64);
            if gn == 0.0 {
                return vec![0.0; n];
            }
            g.iter().map(|x| x / gn * rad).collect()
        }
        VectorNorm::L1 => {
            // the first n coordinates of a flat Dirichlet(1, ..., 1) on n + 1
            // cells are uniform on the corner simplex
            let e: Vec<f64> = (0..=n).map(|_| rng.sample(Exp1)).collect();
            let total: f64 = e.iter().sum();
            (0..n)
                .map(|i| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * e[i] / total
                })
                .collect()
        }
    }
}

fn perturbed(inst: &QpInstance, rng: &mut ChaCha8Rng, r: f64) -> ParamPoint {
    let dc: Vec<f64> = unit_ball(rng, inst.n(), inst.norm().dual()).iter().map(|x| r * x).collect();
    let db: Vec<f64> = (0..inst.m()).map(|_| r * rng.random_range(-1.0..=1.0)).collect();
    inst.nominal().offset(&dc, &db)
}

/// Random pairs in each `r`-ball around the nominal parameter, solved and
/// compared. Deterministic in `seed` regardless of `exec`.
pub fn estimate_modulus(inst: &QpInstance, opts: &VerifyOptions, tol: &Tolerances) -> Result<PerturbationTrace> {
    let solver = KktSolver::new(inst, tol);
    let k = opts.samples_per_radius;
    let total = opts.radii.len() * k;
    let samples = par::map_range(opts.exec, total, |idx| {
        let r = opts.radii[idx / k];
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(idx as u64);
        let p1 = perturbed(inst, &mut rng, r);
        let p2 = perturbed(inst, &mut rng, r);
        let solve = |p: &ParamPoint| -> Result<Vec<f64>> {
            let sol = solver.kkt_point(p);
            match (sol.status, sol.x) {
                (QpStatus::Optimal, Some(x)) => Ok(x),
                (status, _) => Err(Error::SolverFailure { radius: r, sample: idx % k, status: format!("{status:?}") }),
            }
        };
        let x1 = solve(&p1)?;
        let x2 = solve(&p2)?;
        let dist = inst.norm().eval(&linalg::sub(&x2, &x1));
        let pd = param_distance(&p1, &p2, inst);
        Ok(Sample { radius: r, ratio: ratio(dist, pd), p1, p2, x2, dist_to_s1: dist, param_distance: pd })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationTrace::from_samples(&opts.radii, samples))
}

/// Ratios along `+-(alpha_star, beta_star)` for the index set `d`.
///
/// Each step of size `r` starts from a base parameter `p1` within `O(r)` of
/// the nominal one, where `x_bar` is still optimal, the multipliers on `d`
/// are at least `eps` and the constraints outside `d` have slack `eps`.
/// `eps` is a fixed multiple of the predicted change of `(x, lambda)`, so the
/// step stays on the affine piece of `d`. Constraints outside `d` are
/// relaxed to `b_j + [a_j'x - b_j]_+` at the predicted point.
pub fn directional_probe(
    inst: &QpInstance,
    x_bar: &[f64],
    d: &IndexSet,
    direction: &OperatorNormResult,
    radii: &[f64],
    tol: &Tolerances,
) -> Result<PerturbationTrace> {
    let n = inst.n();
    let md = modulus::assemble_md(inst, d).matrix;
    let inv = linalg::inverse(&md, tol.pivot)?;
    let p0 = inst.nominal();
    // (x, lambda) change per unit step; B acts on (-c; b_D)
    let dz = inv.matvec(&direction.direction());
    let outside: Vec<usize> = (0..inst.m()).filter(|j| !d.contains(*j)).collect();
    let spread = dz[n..]
        .iter()
        .map(|v| v.abs())
        .chain(outside.iter().map(|&j| linalg::dot(inst.a_row(j), &dz[..n]).abs()))
        .fold(1.0f64, f64::max);

    let solver = KktSolver::new(inst, tol);
    let mut samples = Vec::new();
    for (ri, &r) in radii.iter().enumerate() {
        let eps = 10.0 * spread * r;
        let mut c1 = p0.c.clone();
        for &i in d.indices() {
            c1 = linalg::axpy(-eps, inst.a_row(i), &c1);
        }
        let mut b1 = p0.b.clone();
        for &j in &outside {
            b1[j] += eps;
        }
        let p1 = ParamPoint::new(c1, b1);
        for (si, sign) in [1.0, -1.0].into_iter().enumerate() {
            let t = sign * r;
            let x_pred = linalg::axpy(t, &dz[..n], x_bar);
            let c: Vec<f64> = p1.c.iter().zip(&direction.alpha_star).map(|(c, a)| c - t * a).collect();
            let mut b = p1.b.clone();
            for (k, &i) in d.indices().iter().enumerate() {
                b[i] += t * direction.beta_star[k];
            }
            for &j in &outside {
                b[j] += (linalg::dot(inst.a_row(j), &x_pred) - b[j]).max(0.0);
            }
            let p2 = ParamPoint::new(c, b);
            let solve = |p: &ParamPoint| match solver.kkt_point(p) {
                sol if sol.status == QpStatus::Optimal => Ok(sol.x.expect("optimal solution carries x")),
                sol => Err(Error::SolverFailure { radius: r, sample: 2 * ri + si, status: format!("{:?}", sol.status) }),
            };
            let x1 = solve(&p1)?;
            let x2 = solve(&p2)?;
            let dist = inst.norm().eval(&linalg::sub(&x2, &x1));
            let pd = param_distance(&p1, &p2, inst);
            samples.push(Sample {
                radius: r,
                p1: p1.clone(),
                p2,
                x2,
                dist_to_s1: dist,
                param_distance: pd,
                ratio: ratio(dist, pd),
            });
        }
    }
    Ok(PerturbationTrace::from_samples(radii, samples))
}

/// Probe along the attaining index set and direction of a report.
pub fn probe_report(
    inst: &QpInstance,
    report: &ModulusReport,
    radii: &[f64],
    tol: &Tolerances,
) -> Result<Option<PerturbationTrace>> {
    match (&report.attaining_d, &report.attaining_direction) {
        (Some(d), Some(dir)) => directional_probe(inst, &report.x_bar, d, dir, radii, tol).map(Some),
        _ => Ok(None),
    }
}
