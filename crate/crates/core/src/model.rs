//! Problem data: validated QP instances, parameter points, index sets and the
//! JSON instance file format.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result, ValidationReason};
use crate::linalg::{self, Matrix, VectorNorm};
use crate::tolerance::Tolerances;

/// A set of constraint indices, stored zero-based and sorted.
///
/// Ordering is by cardinality first, then lexicographic, which is the
/// enumeration order used everywhere in the crate. Serialized (and displayed)
/// one-based to match the usual `{1, ..., m}` labelling.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn new(mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        IndexSet(idx)
    }

    /// From one-based labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        IndexSet::new(labels.iter().map(|l| l - 1).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    pub fn is_proper_subset_of(&self, other: &IndexSet) -> bool {
        self.len() < other.len() && self.is_subset_of(other)
    }

    /// All subsets of `universe` with at most `max_card` elements, in
    /// cardinality-then-lexicographic order.
    pub fn subsets(universe: &[usize], max_card: usize) -> Vec<IndexSet> {
        let mut u = universe.to_vec();
        u.sort_unstable();
        u.dedup();
        let mut out = Vec::new();
        for k in 0..=max_card.min(u.len()) {
            let mut pick: Vec<usize> = (0..k).collect();
            loop {
                out.push(IndexSet(pick.iter().map(|&p| u[p]).collect()));
                // advance to the next k-combination
                let mut i = k;
                let mut advanced = false;
                while i > 0 {
                    i -= 1;
                    if pick[i] < u.len() - k + i {
                        pick[i] += 1;
                        for j in (i + 1)..k {
                            pick[j] = pick[j - 1] + 1;
                        }
                        advanced = true;
                        break;
                    }
                }
                if !advanced {
                    break;
                }
            }
        }
        out
    }
}

impl Ord for IndexSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for IndexSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, l) in self.labels().iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels().serialize(s)
    }
}

/// Fixed data `(Q, A)`, nominal parameters `(c, b)` and the variable-space norm.
///
/// Constructed only through validation; immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    q: Matrix,
    a: Matrix,
    c: Vec<f64>,
    b: Vec<f64>,
    norm: VectorNorm,
}

impl QpInstance {
    pub fn new(q: Matrix, a: Matrix, c: Vec<f64>, b: Vec<f64>, norm: VectorNorm, tol: &Tolerances) -> Result<Self> {
        let n = q.rows();
        let mismatch = |detail: String| Error::Validation { reason: ValidationReason::DimensionMismatch, detail };
        if n == 0 {
            return Err(mismatch("n must be at least 1".into()));
        }
        if q.cols() != n {
            return Err(mismatch(format!("Q is {}x{}", q.rows(), q.cols())));
        }
        if a.cols() != n {
            return Err(mismatch(format!("A has {} columns, expected {n}", a.cols())));
        }
        if c.len() != n {
            return Err(mismatch(format!("c has length {}, expected {n}", c.len())));
        }
        if b.len() != a.rows() {
            return Err(mismatch(format!("b has length {}, expected {}", b.len(), a.rows())));
        }
        if !q.is_finite() || !a.is_finite() || !c.iter().chain(&b).all(|x| x.is_finite()) {
            return Err(Error::Validation { reason: ValidationReason::Nonfinite, detail: "all entries must be finite".into() });
        }
        let asym = q.asymmetry();
        if asym > tol.sym * q.max_abs().max(1.0) {
            return Err(Error::Validation {
                reason: ValidationReason::NotSymmetric,
                detail: format!("max |Q_ij - Q_ji| = {asym:e}"),
            });
        }
        let q = q.symmetrized();
        let eig = linalg::sym_eig(&q, tol.sym)?;
        let lmax = eig.values[0];
        let lmin = eig.values[n - 1];
        if lmin < -tol.psd * lmax.max(1.0) {
            return Err(Error::Validation {
                reason: ValidationReason::NotPsd,
                detail: format!("smallest eigenvalue of Q is {lmin:e}"),
            });
        }
        Ok(QpInstance { q, a, c, b, norm })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn c_bar(&self) -> &[f64] {
        &self.c
    }

    pub fn b_bar(&self) -> &[f64] {
        &self.b
    }

    pub fn norm(&self) -> VectorNorm {
        self.norm
    }

    pub fn nominal(&self) -> ParamPoint {
        ParamPoint { c: self.c.clone(), b: self.b.clone() }
    }

    /// Row `i` of `A`, i.e. the gradient `a_i` of constraint `i`.
    pub fn a_row(&self, i: usize) -> &[f64] {
        self.a.row(i)
    }

    /// Same fixed data with a different nominal parameter.
    pub fn with_nominal(&self, p: &ParamPoint) -> Result<QpInstance> {
        if p.c.len() != self.n() || p.b.len() != self.m() {
            return Err(Error::DimensionMismatch("parameter point does not match the instance".into()));
        }
        Ok(QpInstance { q: self.q.clone(), a: self.a.clone(), c: p.c.clone(), b: p.b.clone(), norm: self.norm })
    }

    /// The instance restricted to the constraints in `d`, with its own
    /// nominal right-hand side `b_d` (rows are relabelled `0..|d|`).
    pub fn restricted(&self, d: &IndexSet, c: &[f64], b_d: &[f64]) -> Result<QpInstance> {
        if b_d.len() != d.len() || c.len() != self.n() {
            return Err(Error::DimensionMismatch("subproblem parameters do not match D".into()));
        }
        Ok(QpInstance { q: self.q.clone(), a: self.a.select_rows(d.indices()), c: c.to_vec(), b: b_d.to_vec(), norm: self.norm })
    }

    pub fn objective(&self, c: &[f64], x: &[f64]) -> f64 {
        0.5 * linalg::dot(x, &self.q.matvec(x)) + linalg::dot(c, x)
    }

    /// `Q x + c`.
    pub fn gradient(&self, c: &[f64], x: &[f64]) -> Vec<f64> {
        linalg::add(&self.q.matvec(x), c)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            n: self.n(),
            m: self.m(),
            q: self.q.to_rows(),
            a: self.a.to_rows(),
            b: self.b.clone(),
            c: self.c.clone(),
            norm: Some(self.norm),
        }
    }
}

/// A point `(c, b)` of the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamPoint {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

impl ParamPoint {
    pub fn new(c: Vec<f64>, b: Vec<f64>) -> Self {
        ParamPoint { c, b }
    }

    pub fn offset(&self, dc: &[f64], db: &[f64]) -> ParamPoint {
        ParamPoint { c: linalg::add(&self.c, dc), b: linalg::add(&self.b, db) }
    }

    pub fn b_restricted(&self, d: &IndexSet) -> Vec<f64> {
        d.indices().iter().map(|&i| self.b[i]).collect()
    }
}

/// `max{ ||c2 - c1||_*, ||b2 - b1||_inf }`, the dual norm taken with respect to
/// the instance's variable norm.
pub fn param_distance(p1: &ParamPoint, p2: &ParamPoint, inst: &QpInstance) -> f64 {
    let dc = linalg::dual_norm(&linalg::sub(&p2.c, &p1.c), inst.norm());
    let db = linalg::max_abs(&linalg::sub(&p2.b, &p1.b));
    dc.max(db)
}

/// The metric projection of `z` onto `{x : A x <= b}` as a QP: `Q = I`,
/// `c = -z`, Euclidean norm.
pub fn projection_instance(z: &[f64], a: &Matrix, b: &[f64], tol: &Tolerances) -> Result<QpInstance> {
    if z.len() != a.cols() {
        return Err(Error::DimensionMismatch(format!("point has length {}, polyhedron lives in R^{}", z.len(), a.cols())));
    }
    QpInstance::new(Matrix::identity(z.len()), a.clone(), z.iter().map(|v| -v).collect(), b.to_vec(), VectorNorm::L2, tol)
}

/// On-disk JSON form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<VectorNorm>,
}

impl InstanceFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation {
            reason: ValidationReason::DimensionMismatch,
            detail: format!("malformed instance file: {e}"),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Validation {
            reason: ValidationReason::DimensionMismatch,
            detail: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance file serializes")
    }

    /// Checks the declared sizes and builds the validated instance.
    pub fn validate(&self, tol: &Tolerances) -> Result<QpInstance> {
        let mismatch = |detail: String| Error::Validation { reason: ValidationReason::DimensionMismatch, detail };
        if self.q.len() != self.n {
            return Err(mismatch(format!("Q has {} rows, n = {}", self.q.len(), self.n)));
        }
        if self.a.len() != self.m {
            return Err(mismatch(format!("A has {} rows, m = {}", self.a.len(), self.m)));
        }
        let q = Matrix::from_rows(&self.q, self.n).map_err(|e| mismatch(format!("Q: {e}")))?;
        let a = Matrix::from_rows(&self.a, self.n).map_err(|e| mismatch(format!("A: {e}")))?;
        QpInstance::new(q, a, self.c.clone(), self.b.clone(), self.norm.unwrap_or_default(), tol)
    }
}

/// Alias for [`InstanceFile::validate`].
pub fn validate(raw: &InstanceFile, tol: &Tolerances) -> Result<QpInstance> {
    raw.validate(tol)
}

/// A polyhedron `{x : A x <= b}` read from JSON. Accepts full instance files
/// too; their `Q`, `c` and `norm` entries are ignored.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyhedronFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default, rename = "Q")]
    _q: Option<serde_json::Value>,
    #[serde(default, rename = "c")]
    _c: Option<serde_json::Value>,
    #[serde(default, rename = "norm")]
    _norm: Option<serde_json::Value>,
}

impl PolyhedronFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation {
            reason: ValidationReason::DimensionMismatch,
            detail: format!("malformed polyhedron file: {e}"),
        })
    }

    pub fn matrix(&self) -> Result<(Matrix, Vec<f64>)> {
        let mismatch = |detail: String| Error::Validation { reason: ValidationReason::DimensionMismatch, detail };
        if self.a.len() != self.m || self.b.len() != self.m {
            return Err(mismatch(format!("A/b do not have m = {} rows", self.m)));
        }
        let a = Matrix::from_rows(&self.a, self.n).map_err(|e| mismatch(format!("A: {e}")))?;
        if !a.is_finite() || !self.b.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation { reason: ValidationReason::Nonfinite, detail: "all entries must be finite".into() });
        }
        Ok((a, self.b.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn file(q: Vec<Vec<f64>>) -> InstanceFile {
        InstanceFile { n: 2, m: 1, q, a: vec![vec![1.0, 1.0]], b: vec![1.0], c: vec![0.0, 0.0], norm: None }
    }

    #[test]
    fn accepts_identity_and_zero_q() {
        assert!(file(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).validate(&tol()).is_ok());
        let lin = file(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).validate(&tol()).unwrap();
        assert!(lin.q().is_zero());
        assert_eq!(lin.norm(), VectorNorm::L2);
    }

    #[test]
    fn rejects_indefinite_q() {
        let err = file(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).validate(&tol()).unwrap_err();
        assert!(matches!(err, Error::Validation { reason: ValidationReason::NotPsd, .. }));
    }

    #[test]
    fn rejects_asymmetric_and_bad_shapes() {
        let err = file(vec![vec![1.0, 1.0], vec![0.0, 1.0]]).validate(&tol()).unwrap_err();
        assert!(matches!(err, Error::Validation { reason: ValidationReason::NotSymmetric, .. }));
        let mut f = file(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        f.b = vec![1.0, 2.0];
        let err = f.validate(&tol()).unwrap_err();
        assert!(matches!(err, Error::Validation { reason: ValidationReason::DimensionMismatch, .. }));
        let mut f = file(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        f.c = vec![f64::NAN, 0.0];
        let err = f.validate(&tol()).unwrap_err();
        assert!(matches!(err, Error::Validation { reason: ValidationReason::Nonfinite, .. }));
    }

    #[test]
    fn symmetrizes_within_tolerance() {
        let inst = file(vec![vec![1.0, 0.5 + 1e-12], vec![0.5, 1.0]]).validate(&tol()).unwrap();
        assert_eq!(inst.q()[(0, 1)], inst.q()[(1, 0)]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"n":1,"m":0,"Q":[[1]],"A":[],"b":[],"c":[0],"extra":1}"#;
        assert!(InstanceFile::from_json(text).is_err());
        let text = r#"{"n":1,"m":0,"Q":[[1]],"A":[],"b":[],"c":[0],"norm":"linf"}"#;
        let inst = InstanceFile::from_json(text).unwrap().validate(&tol()).unwrap();
        assert_eq!(inst.norm(), VectorNorm::Linf);
    }

    #[test]
    fn distance_examples() {
        let inst = file(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).validate(&tol()).unwrap();
        let p = ParamPoint::new(vec![1.0, 2.0], vec![3.0]);
        assert_eq!(param_distance(&p, &p, &inst), 0.0);
        let q = p.offset(&[3.0, 4.0], &[1.0]);
        assert_eq!(param_distance(&p, &q, &inst), 5.0);
        let r = 10.0;
        let q = p.offset(&[0.0, 0.0], &[-1.0 / r]);
        assert!((param_distance(&p, &q, &inst) - 1.0 / r).abs() < 1e-15);
    }

    #[test]
    fn projection_instance_shape() {
        let a = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -0.1]], 2).unwrap();
        let inst = projection_instance(&[0.0, 0.0], &a, &[-1.0, 0.0], &tol()).unwrap();
        assert_eq!(inst.q(), &Matrix::identity(2));
        assert_eq!(inst.c_bar(), &[0.0, 0.0]);
        assert_eq!(inst.norm(), VectorNorm::L2);
        let inst = projection_instance(&[0.0, 5.0], &a, &[-1.0, 0.0], &tol()).unwrap();
        assert_eq!(inst.c_bar(), &[0.0, -5.0]);
    }

    #[test]
    fn subsets_order() {
        let s: Vec<String> = IndexSet::subsets(&[0, 1, 2], 2).iter().map(|d| d.to_string()).collect();
        assert_eq!(s, ["{}", "{1}", "{2}", "{3}", "{1,2}", "{1,3}", "{2,3}"]);
        let all = IndexSet::subsets(&[0, 2, 4, 5], 4);
        assert_eq!(all.len(), 16);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn index_set_serializes_one_based() {
        let d = IndexSet::new(vec![2, 0]);
        assert_eq!(serde_json::to_string(&d).unwrap(), "[1,3]");
    }

    fn psd_instance() -> impl Strategy<Value = InstanceFile> {
        (1usize..4, 0usize..4).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(-3.0f64..3.0, n * n),
                prop::collection::vec(-3.0f64..3.0, m * n),
                prop::collection::vec(-3.0f64..3.0, m),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::sample::select(vec![VectorNorm::L1, VectorNorm::L2, VectorNorm::Linf]),
            )
                .prop_map(move |(g, a, b, c, norm)| {
                    let g = Matrix::from_row_slice(n, n, &g).unwrap();
                    let q = g.transpose().matmul(&g);
                    InstanceFile {
                        n,
                        m,
                        q: q.to_rows(),
                        a: Matrix::from_row_slice(m, n, &a).unwrap().to_rows(),
                        b,
                        c,
                        norm: Some(norm),
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn json_round_trip(f in psd_instance()) {
            let inst = f.validate(&tol()).unwrap();
            let back = InstanceFile::from_json(&inst.to_file().to_json()).unwrap().validate(&tol()).unwrap();
            prop_assert_eq!(inst, back);
        }

        #[test]
        fn distance_is_a_metric(
            v in prop::collection::vec(-5.0f64..5.0, 18),
            norm in prop::sample::select(vec![VectorNorm::L1, VectorNorm::L2, VectorNorm::Linf]),
        ) {
            let f = InstanceFile { n: 3, m: 3, q: Matrix::identity(3).to_rows(), a: Matrix::identity(3).to_rows(), b: vec![0.0; 3], c: vec![0.0; 3], norm: Some(norm) };
            let inst = f.validate(&tol()).unwrap();
            let p = |k: usize| ParamPoint::new(v[k * 6..k * 6 + 3].to_vec(), v[k * 6 + 3..k * 6 + 6].to_vec());
            let (x, y, z) = (p(0), p(1), p(2));
            prop_assert_eq!(param_distance(&x, &y, &inst), param_distance(&y, &x, &inst));
            prop_assert!(param_distance(&x, &z, &inst) <= param_distance(&x, &y, &inst) + param_distance(&y, &z, &inst) + 1e-12);
        }
    }
}
