//! Problem data, standing-assumption checks, mean-field ("hat") coefficients
//! and the Riccati operator maps.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MflqError, Result};
use crate::linalg::{self, Mat, Vector};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PD_TOL: f64 = 1e-10;
pub const STABILITY_MARGIN: f64 = 1e-10;
const PBH_NULL_TOL: f64 = 1e-8;
const PBH_GAIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 {
            return Err(MflqError::shape("$.n", "state dimension must be at least 1"));
        }
        if m == 0 {
            return Err(MflqError::shape("$.m", "control dimension must be at least 1"));
        }
        Ok(Self { n, m })
    }
}

/// Constant coefficients of the controlled mean-field SDE and of the quadratic cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub dims: Dimensions,
    pub A: Mat,
    pub A_bar: Mat,
    pub B: Mat,
    pub B_bar: Mat,
    pub C: Mat,
    pub C_bar: Mat,
    pub D: Mat,
    pub D_bar: Mat,
    pub Q: Mat,
    pub Q_bar: Mat,
    pub S: Mat,
    pub S_bar: Mat,
    pub R: Mat,
    pub R_bar: Mat,
    pub b: Vector,
    pub sigma: Vector,
    pub q: Vector,
    pub r: Vector,
}

/// Row-major JSON representation; omitted blocks default to zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub A: Option<Vec<f64>>,
    #[serde(rename = "Abar", default, skip_serializing_if = "Option::is_none")]
    pub A_bar: Option<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub B: Option<Vec<f64>>,
    #[serde(rename = "Bbar", default, skip_serializing_if = "Option::is_none")]
    pub B_bar: Option<Vec<f64>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub C: Option<Vec<f64>>,
    #[serde(rename = "Cbar", default, skip_serializing_if = "Option::is_none")]
    pub C_bar: Option<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub D: Option<Vec<f64>>,
    #[serde(rename = "Dbar", default, skip_serializing_if = "Option::is_none")]
    pub D_bar: Option<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub Q: Option<Vec<f64>>,
    #[serde(rename = "Qbar", default, skip_serializing_if = "Option::is_none")]
    pub Q_bar: Option<Vec<f64>>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub S: Option<Vec<f64>>,
    #[serde(rename = "Sbar", default, skip_serializing_if = "Option::is_none")]
    pub S_bar: Option<Vec<f64>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub R: Option<Vec<f64>>,
    #[serde(rename = "Rbar", default, skip_serializing_if = "Option::is_none")]
    pub R_bar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
}

fn block(prefix: &str, name: &str, data: &Option<Vec<f64>>, rows: usize, cols: usize) -> Result<Mat> {
    match data {
        None => Ok(Mat::zeros(rows, cols)),
        Some(v) => {
            if v.len() != rows * cols {
                return Err(MflqError::shape(
                    format!("{prefix}.{name}"),
                    format!("expected {} entries ({rows}x{cols}), got {}", rows * cols, v.len()),
                ));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(MflqError::shape(format!("{prefix}.{name}[{i}]"), "non-finite entry"));
            }
            Ok(Mat::from_row_slice(rows, cols, v))
        }
    }
}

fn vector(prefix: &str, name: &str, data: &Option<Vec<f64>>, len: usize) -> Result<Vector> {
    let m = block(prefix, name, data, len, 1)?;
    Ok(m.column(0).into_owned())
}

impl ProblemSpec {
    /// Builds validated problem data; `prefix` is the JSON path of this object.
    pub fn to_problem(&self, prefix: &str) -> Result<ProblemData> {
        let n = self.n;
        let m = self.m;
        if n == 0 {
            return Err(MflqError::shape(
                format!("{prefix}.n"),
                "state dimension must be at least 1",
            ));
        }
        if m == 0 {
            return Err(MflqError::shape(
                format!("{prefix}.m"),
                "control dimension must be at least 1",
            ));
        }
        let p = ProblemData {
            dims: Dimensions { n, m },
            A: block(prefix, "A", &self.A, n, n)?,
            A_bar: block(prefix, "Abar", &self.A_bar, n, n)?,
            B: block(prefix, "B", &self.B, n, m)?,
            B_bar: block(prefix, "Bbar", &self.B_bar, n, m)?,
            C: block(prefix, "C", &self.C, n, n)?,
            C_bar: block(prefix, "Cbar", &self.C_bar, n, n)?,
            D: block(prefix, "D", &self.D, n, m)?,
            D_bar: block(prefix, "Dbar", &self.D_bar, n, m)?,
            Q: block(prefix, "Q", &self.Q, n, n)?,
            Q_bar: block(prefix, "Qbar", &self.Q_bar, n, n)?,
            S: block(prefix, "S", &self.S, m, n)?,
            S_bar: block(prefix, "Sbar", &self.S_bar, m, n)?,
            R: block(prefix, "R", &self.R, m, m)?,
            R_bar: block(prefix, "Rbar", &self.R_bar, m, m)?,
            b: vector(prefix, "b", &self.b, n)?,
            sigma: vector(prefix, "sigma", &self.sigma, n)?,
            q: vector(prefix, "q", &self.q, n)?,
            r: vector(prefix, "r", &self.r, m)?,
        };
        for (name, mat) in [("Q", &p.Q), ("Qbar", &p.Q_bar), ("R", &p.R), ("Rbar", &p.R_bar)] {
            let asym = linalg::asymmetry(mat);
            if asym > SYMMETRY_TOL {
                return Err(MflqError::Asymmetric(format!(
                    "{prefix}.{name} (max |M - M^T| = {asym:e})"
                )));
            }
        }
        Ok(p)
    }
}

impl From<&ProblemData> for ProblemSpec {
    fn from(p: &ProblemData) -> Self {
        let rm = |m: &Mat| Some(linalg::row_major(m));
        let v = |x: &Vector| Some(x.iter().copied().collect::<Vec<_>>());
        ProblemSpec {
            n: p.dims.n,
            m: p.dims.m,
            A: rm(&p.A),
            A_bar: rm(&p.A_bar),
            B: rm(&p.B),
            B_bar: rm(&p.B_bar),
            C: rm(&p.C),
            C_bar: rm(&p.C_bar),
            D: rm(&p.D),
            D_bar: rm(&p.D_bar),
            Q: rm(&p.Q),
            Q_bar: rm(&p.Q_bar),
            S: rm(&p.S),
            S_bar: rm(&p.S_bar),
            R: rm(&p.R),
            R_bar: rm(&p.R_bar),
            b: v(&p.b),
            sigma: v(&p.sigma),
            q: v(&p.q),
            r: v(&p.r),
        }
    }
}

impl ProblemData {
    /// All-zero data of the given dimensions.
    pub fn zeros(dims: Dimensions) -> Self {
        let (n, m) = (dims.n, dims.m);
        ProblemData {
            dims,
            A: Mat::zeros(n, n),
            A_bar: Mat::zeros(n, n),
            B: Mat::zeros(n, m),
            B_bar: Mat::zeros(n, m),
            C: Mat::zeros(n, n),
            C_bar: Mat::zeros(n, n),
            D: Mat::zeros(n, m),
            D_bar: Mat::zeros(n, m),
            Q: Mat::zeros(n, n),
            Q_bar: Mat::zeros(n, n),
            S: Mat::zeros(m, n),
            S_bar: Mat::zeros(m, n),
            R: Mat::zeros(m, m),
            R_bar: Mat::zeros(m, m),
            b: Vector::zeros(n),
            sigma: Vector::zeros(n),
            q: Vector::zeros(n),
            r: Vector::zeros(m),
        }
    }

    /// Scalar problem (n = m = 1) with the given unbarred coefficients; bars and vectors zero.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, q: f64, r: f64) -> Self {
        let mut p = Self::zeros(Dimensions { n: 1, m: 1 });
        p.A[(0, 0)] = a;
        p.B[(0, 0)] = b;
        p.C[(0, 0)] = c;
        p.D[(0, 0)] = d;
        p.Q[(0, 0)] = q;
        p.R[(0, 0)] = r;
        p
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_str(s).map_err(|e| MflqError::Parse(e.to_string()))?;
        spec.to_problem("$")
    }

    pub fn to_spec(&self) -> ProblemSpec {
        ProblemSpec::from(self)
    }

    /// Re-checks shapes and symmetry of hand-built data.
    pub fn validate(&self) -> Result<()> {
        self.to_spec().to_problem("$").map(|_| ())
    }

    /// True when every coefficient and vector is exactly zero.
    pub fn is_trivial(&self) -> bool {
        let mats = [
            &self.A,
            &self.A_bar,
            &self.B,
            &self.B_bar,
            &self.C,
            &self.C_bar,
            &self.D,
            &self.D_bar,
            &self.Q,
            &self.Q_bar,
            &self.S,
            &self.S_bar,
            &self.R,
            &self.R_bar,
        ];
        mats.iter().all(|m| m.iter().all(|v| *v == 0.0))
            && [&self.b, &self.sigma, &self.q, &self.r]
                .iter()
                .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HatCoefficients {
    pub A: Mat,
    pub B: Mat,
    pub C: Mat,
    pub D: Mat,
    pub Q: Mat,
    pub S: Mat,
    pub R: Mat,
}

pub fn assemble_hats(problem: &ProblemData) -> HatCoefficients {
    HatCoefficients {
        A: &problem.A + &problem.A_bar,
        B: &problem.B + &problem.B_bar,
        C: &problem.C + &problem.C_bar,
        D: &problem.D + &problem.D_bar,
        Q: &problem.Q + &problem.Q_bar,
        S: &problem.S + &problem.S_bar,
        R: &problem.R + &problem.R_bar,
    }
}

/// Values of the six Riccati operator maps at a given pair (P, Π).
#[derive(Debug, Clone, PartialEq)]
pub struct MapEvaluation {
    pub Q_of_P: Mat,
    pub S_of_P: Mat,
    pub R_of_P: Mat,
    pub Q_hat: Mat,
    pub S_hat: Mat,
    pub R_hat: Mat,
}

pub(crate) fn q_map(p: &ProblemData, P: &Mat) -> Mat {
    P * &p.A + p.A.transpose() * P + p.C.transpose() * P * &p.C + &p.Q
}

pub(crate) fn s_map(p: &ProblemData, P: &Mat) -> Mat {
    p.B.transpose() * P + p.D.transpose() * P * &p.C + &p.S
}

pub(crate) fn r_map(p: &ProblemData, P: &Mat) -> Mat {
    &p.R + p.D.transpose() * P * &p.D
}

pub(crate) fn q_hat_map(h: &HatCoefficients, P: &Mat, Pi: &Mat) -> Mat {
    Pi * &h.A + h.A.transpose() * Pi + h.C.transpose() * P * &h.C + &h.Q
}

pub(crate) fn s_hat_map(h: &HatCoefficients, P: &Mat, Pi: &Mat) -> Mat {
    h.B.transpose() * Pi + h.D.transpose() * P * &h.C + &h.S
}

pub(crate) fn r_hat_map(h: &HatCoefficients, P: &Mat) -> Mat {
    &h.R + h.D.transpose() * P * &h.D
}

pub fn evaluate_maps(problem: &ProblemData, P: &Mat, Pi: &Mat) -> Result<MapEvaluation> {
    let n = problem.dims.n;
    if P.shape() != (n, n) || Pi.shape() != (n, n) {
        return Err(MflqError::shape("P/Pi", format!("expected {n}x{n}")));
    }
    for (name, m) in [("P", P), ("Pi", Pi)] {
        if linalg::asymmetry(m) > SYMMETRY_TOL {
            return Err(MflqError::Asymmetric(name.to_string()));
        }
    }
    let h = assemble_hats(problem);
    Ok(MapEvaluation {
        Q_of_P: q_map(problem, P),
        S_of_P: s_map(problem, P),
        R_of_P: r_map(problem, P),
        Q_hat: q_hat_map(&h, P, Pi),
        S_hat: s_hat_map(&h, P, Pi),
        R_hat: r_hat_map(&h, P),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub condition: &'static str,
    pub min_eigenvalue: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub passed: bool,
    pub checks: Vec<ConditionCheck>,
}

impl AssumptionReport {
    /// First violated condition, if any.
    pub fn failed_condition(&self) -> Option<&'static str> {
        self.checks.iter().find(|c| !c.holds).map(|c| c.condition)
    }
}

pub const COND_R: &str = "R ≻ 0";
pub const COND_R_HAT: &str = "R̂ ≻ 0";
pub const COND_Q: &str = "Q − SᵀR⁻¹S ≻ 0";
pub const COND_Q_HAT: &str = "Q̂ − ŜᵀR̂⁻¹Ŝ ≻ 0";

/// Positivity conditions on the weighting matrices. Failures are reported, not raised.
pub fn validate_assumption_a1(problem: &ProblemData) -> AssumptionReport {
    let h = assemble_hats(problem);
    let mut checks = Vec::with_capacity(4);
    let mut push = |condition, min_eigenvalue: f64| {
        checks.push(ConditionCheck {
            condition,
            min_eigenvalue,
            holds: min_eigenvalue > PD_TOL,
        })
    };
    let r_min = linalg::min_eigenvalue(&problem.R);
    push(COND_R, r_min);
    let rh_min = linalg::min_eigenvalue(&h.R);
    push(COND_R_HAT, rh_min);

    let schur = |q: &Mat, s: &Mat, r: &Mat, r_ok: bool| -> f64 {
        if !r_ok {
            return f64::NAN;
        }
        match linalg::solve(r, s) {
            Some(rs) => linalg::min_eigenvalue(&(q - s.transpose() * rs)),
            None => f64::NAN,
        }
    };
    let q_min = schur(&problem.Q, &problem.S, &problem.R, r_min > PD_TOL);
    push(COND_Q, q_min);
    let qh_min = schur(&h.Q, &h.S, &h.R, rh_min > PD_TOL);
    push(COND_Q_HAT, qh_min);

    let passed = checks.iter().all(|c| c.holds);
    AssumptionReport { passed, checks }
}

/// Convenience wrapper turning a failed report into an error.
pub fn require_a1(problem: &ProblemData) -> Result<AssumptionReport> {
    let report = validate_assumption_a1(problem);
    match report.failed_condition() {
        Some(cond) => Err(MflqError::AssumptionA1(cond.to_string())),
        None => Ok(report),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizabilityReport {
    pub stabilizable: bool,
    /// Eigenvalues with nonnegative real part whose left eigenvectors are invisible to B̂.
    pub violating: Vec<Complex64>,
}

/// Eigenvector test for (Â, B̂): every closed-right-half-plane left eigenvector must be seen by B̂ᵀ.
pub fn check_mean_system_stabilizability(hats: &HatCoefficients) -> StabilizabilityReport {
    let n = hats.A.nrows();
    let at = hats.A.transpose();
    let bt: DMatrix<Complex64> = hats.B.transpose().map(|x| Complex64::new(x, 0.0));
    let mut violating = Vec::new();
    for lambda in linalg::eigenvalues(&hats.A) {
        if lambda.re < -1e-12 {
            continue;
        }
        let mut shifted: DMatrix<Complex64> = at.map(|x| Complex64::new(x, 0.0));
        for i in 0..n {
            shifted[(i, i)] -= lambda;
        }
        let scale = 1.0 + linalg::max_abs(&hats.A);
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut null_cols: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] <= PBH_NULL_TOL * scale)
            .collect();
        if null_cols.is_empty() {
            let (imin, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            null_cols.push(imin);
        }
        let basis = DMatrix::<Complex64>::from_fn(n, null_cols.len(), |i, j| v_t[(null_cols[j], i)].conj());
        let seen = &bt * basis;
        let sv = seen.singular_values();
        let smallest = if sv.len() < null_cols.len() {
            0.0
        } else {
            sv.iter().fold(f64::INFINITY, |a, b| a.min(*b))
        };
        if !(smallest > PBH_GAIN_TOL) {
            violating.push(lambda);
        }
    }
    StabilizabilityReport {
        stabilizable: violating.is_empty(),
        violating,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsStability {
    pub stable: bool,
    pub abscissa: f64,
}

/// Mean-square generator of the closed loop dX = (A+BΘ)X dt + (C+DΘ)X dW.
pub fn ms_generator(a_cl: &Mat, c_cl: &Mat) -> Mat {
    let n = a_cl.nrows();
    let eye = Mat::identity(n, n);
    linalg::kron(&eye, a_cl) + linalg::kron(a_cl, &eye) + linalg::kron(c_cl, c_cl)
}

pub fn check_ms_stability(problem: &ProblemData, theta: &Mat) -> MsStability {
    let a_cl = &problem.A + &problem.B * theta;
    let c_cl = &problem.C + &problem.D * theta;
    let abscissa = linalg::spectral_abscissa(&ms_generator(&a_cl, &c_cl));
    MsStability {
        stable: abscissa < -STABILITY_MARGIN,
        abscissa,
    }
}

/// Removes the cross weights S, S̄ by the feedback shift u ↦ u − R⁻¹S(X − EX) − R̂⁻¹Ŝ EX.
///
/// The state-linear weight is shifted to q − ŜᵀR̂⁻¹r so the transformed problem is
/// equivalent as a whole, not only at the level of its Riccati equations.
pub fn normalize_cross_terms(problem: &ProblemData) -> Result<ProblemData> {
    let report = validate_assumption_a1(problem);
    if !report.checks[0].holds || !report.checks[1].holds {
        return Err(MflqError::AssumptionA1("R or R̂ not invertible".into()));
    }
    let h = assemble_hats(problem);
    let r_inv_s = linalg::solve(&problem.R, &problem.S).ok_or_else(|| MflqError::AssumptionA1("R singular".into()))?;
    let rh_inv_sh = linalg::solve(&h.R, &h.S).ok_or_else(|| MflqError::AssumptionA1("R̂ singular".into()))?;

    let a = &problem.A - &problem.B * &r_inv_s;
    let c = &problem.C - &problem.D * &r_inv_s;
    let q = &problem.Q - problem.S.transpose() * &r_inv_s;
    let a_hat = &h.A - &h.B * &rh_inv_sh;
    let c_hat = &h.C - &h.D * &rh_inv_sh;
    let q_hat = &h.Q - h.S.transpose() * &rh_inv_sh;

    let mut out = problem.clone();
    out.A_bar = &a_hat - &a;
    out.C_bar = &c_hat - &c;
    out.Q_bar = linalg::symmetrize(&(&q_hat - &q));
    out.A = a;
    out.C = c;
    out.Q = linalg::symmetrize(&q);
    out.S = Mat::zeros(problem.dims.m, problem.dims.n);
    out.S_bar = Mat::zeros(problem.dims.m, problem.dims.n);
    let rh_inv_r = linalg::solve_vec(&h.R, &problem.r).ok_or_else(|| MflqError::AssumptionA1("R̂ singular".into()))?;
    out.q = &problem.q - h.S.transpose() * rh_inv_r;
    Ok(out)
}
