//! Problem instances `(A, b, c, r, λ)`, prior clipping, the scale-shape split
//! `x = τ p`, and the data constants the certificates are built from.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::scalar::LogWeights;

/// Relative tolerance of the power iteration behind `DataConstants::a_opnorm`.
pub const OPNORM_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataConstants {
    pub c_min: f64,
    pub c_max: f64,
    /// Largest column 2-norm of `A`.
    pub a_max: f64,
    pub q_min: f64,
    /// `log q_min`, kept because `q_min` itself may be subnormal.
    pub log_q_min: f64,
    pub q_onenorm: f64,
    /// Operator 2-norm `‖A‖`.
    pub a_opnorm: f64,
}

/// A validated instance of the entropy-regularized least-squares problem.
/// Immutable once built; modified copies come from the `with_*` methods.
#[derive(Debug, Clone)]
pub struct ProblemData {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    r: LogWeights,
    lambda: f64,
    constants: DataConstants,
}

fn check_finite(field: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(j) => Err(Error::validation(field, format!("entry {j} is not finite"))),
        None => Ok(()),
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::validation("lambda", format!("must be positive and finite, got {lambda}")))
    }
}

impl ProblemData {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, r: LogWeights, lambda: f64) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || n == 0 {
            return Err(Error::validation("A", format!("shape {m}x{n} has an empty dimension")));
        }
        if b.len() != m {
            return Err(Error::validation("b", format!("length {} but A has {m} rows", b.len())));
        }
        if c.len() != n {
            return Err(Error::validation("c", format!("length {} but A has {n} columns", c.len())));
        }
        if r.len() != n {
            return Err(Error::validation("q", format!("length {} but A has {n} columns", r.len())));
        }
        check_finite("A", a.as_slice())?;
        check_finite("b", b.as_slice())?;
        check_finite("c", c.as_slice())?;
        check_lambda(lambda)?;
        let constants = compute_constants(&a, &c, &r, None);
        Ok(ProblemData { a, b, c, r, lambda, constants })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(ProblemData { lambda, ..self.clone() })
    }

    pub fn with_b(&self, b: DVector<f64>) -> Result<Self> {
        if b.len() != self.m() {
            return Err(Error::validation("b", format!("length {} but A has {} rows", b.len(), self.m())));
        }
        check_finite("b", b.as_slice())?;
        Ok(ProblemData { b, ..self.clone() })
    }

    pub fn with_prior(&self, r: LogWeights) -> Result<Self> {
        if r.len() != self.n() {
            return Err(Error::validation("q", format!("length {} but A has {} columns", r.len(), self.n())));
        }
        let constants = compute_constants(&self.a, &self.c, &r, Some(self.constants.a_opnorm));
        Ok(ProblemData { r, constants, ..self.clone() })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn r(&self) -> &LogWeights {
        &self.r
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn constants(&self) -> &DataConstants {
        &self.constants
    }

    /// Primal objective `‖Ax − b‖²/(2λ) + ⟨c, x⟩ + Σ x log(x/q)`.
    pub fn primal_objective(&self, x: &DVector<f64>) -> f64 {
        let res = &self.a * x - &self.b;
        res.norm_squared() / (2.0 * self.lambda) + self.c.dot(x) + relative_entropy(x, &self.r)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(s)?;
        file.into_problem()
    }

    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            m: self.m(),
            n: self.n(),
            a: self.a.transpose().as_slice().to_vec(),
            b: self.b.as_slice().to_vec(),
            c: self.c.as_slice().to_vec(),
            q: self.r.weights(),
            lambda: self.lambda,
        }
    }
}

/// `Σ x_j (log x_j − r_j)` with the convention `0 log 0 = 0`.
pub fn relative_entropy(x: &DVector<f64>, r: &LogWeights) -> f64 {
    x.iter().zip(r.as_slice()).map(|(&xj, &rj)| if xj > 0.0 { xj * (xj.ln() - rj) } else { 0.0 }).sum()
}

fn compute_constants(a: &DMatrix<f64>, c: &DVector<f64>, r: &LogWeights, known_opnorm: Option<f64>) -> DataConstants {
    let log_q_min = r.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    DataConstants {
        c_min: c.min(),
        c_max: c.max(),
        a_max: a.column_iter().map(|col| col.norm()).fold(0.0, f64::max),
        q_min: log_q_min.exp(),
        log_q_min,
        q_onenorm: r.as_slice().iter().map(|v| v.exp()).sum(),
        a_opnorm: known_opnorm.unwrap_or_else(|| spectral_norm(a, OPNORM_RTOL)),
    }
}

/// On-disk problem format: `A` is a row-major flat array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: f64,
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<ProblemData> {
        if self.a.len() != self.m * self.n {
            return Err(Error::validation(
                "A",
                format!("has {} entries, expected m*n = {}", self.a.len(), self.m * self.n),
            ));
        }
        let a = DMatrix::from_row_slice(self.m, self.n, &self.a);
        let r = LogWeights::from_weights(&self.q)?;
        ProblemData::new(a, DVector::from_vec(self.b), DVector::from_vec(self.c), r, self.lambda)
    }
}

/// Clips `q` from below at `floor`, renormalizes to unit mass, and returns
/// the log-weights.
pub fn clip_prior(q: &[f64], floor: f64) -> Result<LogWeights> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::domain(format!("clip floor must be positive, got {floor}")));
    }
    if let Some(j) = q.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!("prior entry {j} is negative or not finite")));
    }
    if !q.iter().any(|&v| v > 0.0) {
        return Err(Error::domain("prior is identically zero"));
    }
    let clipped: Vec<f64> = q.iter().map(|&v| v.max(floor)).collect();
    let log_z = clipped.iter().sum::<f64>().ln();
    LogWeights::new(clipped.iter().map(|v| v.ln() - log_z).collect())
}

/// `x = τ p` with `τ = ⟨1, x⟩` and `p` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleShape {
    pub tau: f64,
    pub p: DVector<f64>,
}

impl ScaleShape {
    pub fn compose(&self) -> DVector<f64> {
        &self.p * self.tau
    }
}

/// Splits `x ≥ 0` into mass and shape; the zero vector maps to the uniform
/// shape so the map is total.
pub fn decompose(x: &DVector<f64>) -> Result<ScaleShape> {
    if let Some(j) = x.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!("entry {j} of x is negative or not finite")));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::domain("cannot decompose an empty vector"));
    }
    let tau: f64 = x.sum();
    let p = if tau > 0.0 { x / tau } else { DVector::from_element(n, 1.0 / n as f64) };
    Ok(ScaleShape { tau, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> ProblemData {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        ProblemData::new(
            a,
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.0, 1.0, -1.0]),
            LogWeights::zeros(3).unwrap(),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn accepts_well_formed_instance() {
        let p = small();
        assert_eq!((p.m(), p.n()), (2, 3));
    }

    #[test]
    fn rejects_bad_fields() {
        let p = small();
        assert!(matches!(p.with_lambda(0.0), Err(Error::Validation { field: "lambda", .. })));
        assert!(matches!(p.with_b(DVector::from_vec(vec![1.0])), Err(Error::Validation { field: "b", .. })));
        let bad = ProblemData::new(
            DMatrix::from_element(2, 2, f64::NAN),
            DVector::zeros(2),
            DVector::zeros(2),
            LogWeights::zeros(2).unwrap(),
            1.0,
        );
        assert!(matches!(bad, Err(Error::Validation { field: "A", .. })));
    }

    #[test]
    fn constants_of_identity_and_cost() {
        let p = ProblemData::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![-1.0, 3.0]),
            LogWeights::zeros(2).unwrap(),
            1.0,
        )
        .unwrap();
        let k = p.constants();
        assert_eq!(k.a_max, 1.0);
        assert!((k.a_opnorm - 1.0).abs() < 1e-12);
        assert_eq!((k.c_min, k.c_max), (-1.0, 3.0));
        assert_eq!(k.q_onenorm, 2.0);
    }

    #[test]
    fn clip_prior_examples() {
        let r = clip_prior(&[1.0, 0.0], 1e-16).unwrap();
        let z: f64 = 1.0 + 1e-16;
        assert!((r.as_slice()[0] - (1.0 / z).ln()).abs() < 1e-15);
        assert!((r.as_slice()[1] - (1e-16 / z).ln()).abs() < 1e-12);

        let q = [0.25, 0.75];
        let r = clip_prior(&q, 1e-16).unwrap();
        assert_eq!(r.as_slice(), &[0.25f64.ln(), 0.75f64.ln()]);

        let r = clip_prior(&[0.5, 2.8e-40, 0.5], 1e-16).unwrap();
        let z: f64 = 1.0 + 1e-16;
        assert!((r.as_slice()[1] - (1e-16f64.ln() - z.ln())).abs() < 1e-12);

        assert!(clip_prior(&[0.0, 0.0], 1e-16).is_err());
        assert!(clip_prior(&[1.0, -1.0], 1e-16).is_err());
    }

    #[test]
    fn decompose_examples() {
        let s = decompose(&DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert_eq!(s.tau, 4.0);
        assert_eq!(s.p.as_slice(), &[0.5, 0.5]);
        let s = decompose(&DVector::zeros(4)).unwrap();
        assert_eq!(s.tau, 0.0);
        assert!(s.p.iter().all(|&v| v == 0.25));
        assert!(decompose(&DVector::from_vec(vec![1.0, -1e-9])).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = small();
        let text = serde_json::to_string(&p.to_file()).unwrap();
        let back = ProblemData::from_json_str(&text).unwrap();
        assert_eq!(back.a(), p.a());
        assert_eq!(back.b(), p.b());
        assert_eq!(back.lambda(), p.lambda());
        let bad = text.replace("\"m\":2", "\"m\":3");
        assert!(ProblemData::from_json_str(&bad).is_err());
    }

    proptest! {
        #[test]
        fn decompose_compose_round_trip(x in proptest::collection::vec(0.0f64..1e3, 1..20)) {
            let x = DVector::from_vec(x);
            let back = decompose(&x).unwrap().compose();
            let scale = x.amax().max(1.0);
            prop_assert!((back - &x).amax() <= 1e-14 * scale);
        }

        #[test]
        fn compose_decompose_round_trip(
            w in proptest::collection::vec(0.01f64..1.0, 1..20),
            tau in 0.01f64..1e3,
        ) {
            let total: f64 = w.iter().sum();
            let p = DVector::from_vec(w) / total;
            let s = decompose(&ScaleShape { tau, p: p.clone() }.compose()).unwrap();
            prop_assert!((s.tau - tau).abs() <= 1e-14 * tau);
            prop_assert!((s.p - p).amax() <= 1e-14);
        }

        #[test]
        fn clipped_prior_has_unit_mass(q in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            prop_assume!(q.iter().any(|&v| v > 0.0));
            let r = clip_prior(&q, 1e-16).unwrap();
            let mass: f64 = r.as_slice().iter().map(|v| v.exp()).sum();
            prop_assert!((mass - 1.0).abs() <= 1e-12);
        }
    }
}
