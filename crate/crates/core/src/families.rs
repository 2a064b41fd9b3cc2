//! Active constraints and the KKT index-set families at a graph point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lp;
use crate::model::{IndexSet, ParamPoint, QpInstance};
use crate::par::{self, Exec};
use crate::qp;
use crate::tolerance::Tolerances;

pub const DEGENERATE_INSTANCE: &str = "DEGENERATE_INSTANCE";

/// Active set with the minimal family `M` and the extended family `L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexFamilies {
    pub active: IndexSet,
    pub minimal: Vec<IndexSet>,
    pub extended: Vec<IndexSet>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl IndexFamilies {
    /// Every minimal set has exactly `n` elements.
    pub fn nc_holds(&self, n: usize) -> bool {
        self.minimal.iter().all(|d| d.len() == n)
    }
}

pub fn active_indices(inst: &QpInstance, p: &ParamPoint, x: &[f64], tol: &Tolerances) -> Result<IndexSet> {
    if x.len() != inst.n() {
        return Err(Error::DimensionMismatch(format!("point has length {}, expected {}", x.len(), inst.n())));
    }
    let mut active = Vec::new();
    for i in 0..inst.m() {
        let r = linalg::dot(inst.a_row(i), x) - p.b[i];
        if r > tol.feas * (1.0 + p.b[i].abs()) {
            return Err(Error::InfeasiblePoint { index: i + 1, residual: r });
        }
        if r.abs() <= tol.act * (1.0 + p.b[i].abs()) {
            active.push(i);
        }
    }
    Ok(IndexSet::new(active))
}

struct Probe {
    d: IndexSet,
    in_cone: bool,
    independent: bool,
    near_degenerate: bool,
}

/// Both families in one pass over the subsets of the active set.
pub fn kkt_families(inst: &QpInstance, p: &ParamPoint, x: &[f64], tol: &Tolerances) -> Result<IndexFamilies> {
    kkt_families_with(inst, p, x, tol, Exec::default())
}

pub fn kkt_families_with(inst: &QpInstance, p: &ParamPoint, x: &[f64], tol: &Tolerances, exec: Exec) -> Result<IndexFamilies> {
    qp::verify_kkt(inst, p, x, tol).map_err(|e| Error::NotAGraphPoint(Box::new(e)))?;
    let active = active_indices(inst, p, x, tol)?;
    let v: Vec<f64> = inst.gradient(&p.c, x).iter().map(|g| -g).collect();
    let subsets = IndexSet::subsets(active.indices(), inst.n());

    let probes = par::map(exec, &subsets, |d| {
        let gens: Vec<&[f64]> = d.indices().iter().map(|&i| inst.a_row(i)).collect();
        let in_cone = lp::in_cone(&v, &gens, tol).is_some();
        let (independent, near_degenerate) = if d.is_empty() {
            (true, false)
        } else {
            let rr = linalg::rref(&inst.a().select_rows(d.indices()).transpose(), tol.pivot);
            (rr.rank() == d.len(), rr.near_threshold(tol.pivot, 10.0))
        };
        Probe { d: d.clone(), in_cone, independent, near_degenerate }
    });

    let mut minimal: Vec<IndexSet> = Vec::new();
    let mut extended = Vec::new();
    let mut degenerate = Vec::new();
    for pr in probes {
        if pr.near_degenerate {
            degenerate.push(pr.d.to_string());
        }
        if !pr.in_cone {
            continue;
        }
        // subsets arrive by cardinality, so a cone member is minimal iff it
        // contains no earlier minimal set
        if !minimal.iter().any(|m| m.is_subset_of(&pr.d)) {
            minimal.push(pr.d.clone());
        }
        if pr.independent {
            extended.push(pr.d);
        }
    }
    let mut warnings = Vec::new();
    if !degenerate.is_empty() {
        warnings.push(format!("{DEGENERATE_INSTANCE}: rank decision near the pivot threshold for {}", degenerate.join(", ")));
    }
    Ok(IndexFamilies { active, minimal, extended, warnings })
}

pub fn minimal_kkt_family(inst: &QpInstance, p: &ParamPoint, x: &[f64], tol: &Tolerances) -> Result<Vec<IndexSet>> {
    Ok(kkt_families(inst, p, x, tol)?.minimal)
}

pub fn extended_kkt_family(inst: &QpInstance, p: &ParamPoint, x: &[f64], tol: &Tolerances) -> Result<Vec<IndexSet>> {
    Ok(kkt_families(inst, p, x, tol)?.extended)
}
