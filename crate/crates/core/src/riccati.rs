//! Differential and algebraic Riccati equations, plus the backward offset ODEs.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MflqError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{self, HatCoefficients, ProblemData};

pub const STATIONARITY_TOL: f64 = 1e-12;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const BREAKDOWN_TOL: f64 = 1e-12;
pub const MAX_ARE_HORIZON: f64 = 1e4;
pub const DEFAULT_STEPS_PER_UNIT: usize = 1000;
const ARE_STEP: f64 = 0.01;
const DIVERGENCE_NORM: f64 = 1e12;
const NEWTON_STEPS: usize = 20;
const MONOTONE_TOL: f64 = 1e-9;

/// Stationary solutions of the two algebraic Riccati equations with their gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ArePair {
    pub P: Mat,
    pub Pi: Mat,
    pub Theta: Mat,
    pub ThetaHat: Mat,
    pub residual_P: f64,
    pub residual_Pi: f64,
}

/// Finite-horizon Riccati solutions, gains and offsets sampled on a uniform mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiPath {
    pub T: f64,
    pub mesh: Vec<f64>,
    pub P: Vec<Mat>,
    pub Pi: Vec<Mat>,
    /// Time derivatives at the nodes, used for cubic Hermite midpoints.
    pub P_dot: Vec<Mat>,
    pub Pi_dot: Vec<Mat>,
    pub Theta: Vec<Mat>,
    pub ThetaHat: Vec<Mat>,
    /// Mean gain at interval midpoints (one per interval).
    pub ThetaHat_mid: Vec<Mat>,
    pub phi: Vec<Vector>,
    pub phi_hat: Vec<Vector>,
    pub theta: Vec<Vector>,
    pub theta_hat: Vec<Vector>,
    /// Mean offset at interval midpoints (one per interval).
    pub theta_hat_mid: Vec<Vector>,
}

impl RiccatiPath {
    pub fn steps(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.T / self.steps() as f64
    }

    pub fn dim(&self) -> usize {
        self.P[0].nrows()
    }

    pub fn controls(&self) -> usize {
        self.Theta[0].nrows()
    }

    fn check_consistent(&self) -> Result<()> {
        let k = self.mesh.len();
        if k < 2 {
            return Err(MflqError::MeshMismatch("path needs at least one interval".into()));
        }
        let lens = [
            self.P.len(),
            self.Pi.len(),
            self.P_dot.len(),
            self.Pi_dot.len(),
            self.Theta.len(),
            self.ThetaHat.len(),
            self.phi.len(),
            self.phi_hat.len(),
            self.theta.len(),
            self.theta_hat.len(),
        ];
        if lens.iter().any(|&l| l != k) || self.ThetaHat_mid.len() != k - 1 || self.theta_hat_mid.len() != k - 1 {
            return Err(MflqError::MeshMismatch("node arrays do not match the mesh".into()));
        }
        Ok(())
    }
}

pub(crate) fn uniform_mesh(T: f64, steps: usize) -> Vec<f64> {
    let h = T / steps as f64;
    (0..=steps).map(|k| if k == steps { T } else { k as f64 * h }).collect()
}

/// Cubic Hermite value at the midpoint of an interval of length h.
pub(crate) fn hermite_mid<V>(y0: &V, y1: &V, d0: &V, d1: &V, h: f64) -> V
where
    for<'a> &'a V: std::ops::Add<&'a V, Output = V> + std::ops::Sub<&'a V, Output = V>,
    V: std::ops::Mul<f64, Output = V> + std::ops::Add<V, Output = V>,
{
    (y0 + y1) * 0.5 + (d0 - d1) * (h / 8.0)
}

fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Right-hand sides of the two Riccati flows, written in reversed time s = T − t.
pub(crate) struct Flow<'a> {
    pub problem: &'a ProblemData,
    pub hats: HatCoefficients,
}

impl<'a> Flow<'a> {
    pub fn new(problem: &'a ProblemData) -> Self {
        Flow {
            problem,
            hats: model::assemble_hats(problem),
        }
    }

    pub fn gain(&self, P: &Mat) -> Option<Mat> {
        let r = model::r_map(self.problem, P);
        let s = model::s_map(self.problem, P);
        linalg::solve(&r, &s).map(|x| -x)
    }

    pub fn hat_gain(&self, P: &Mat, Pi: &Mat) -> Option<Mat> {
        let r = model::r_hat_map(&self.hats, P);
        let s = model::s_hat_map(&self.hats, P, Pi);
        linalg::solve(&r, &s).map(|x| -x)
    }

    /// 𝒬(P) − 𝒮ᵀℛ⁻¹𝒮, i.e. dP/ds.
    pub fn p_rhs(&self, P: &Mat) -> Option<Mat> {
        let theta = self.gain(P)?;
        let s = model::s_map(self.problem, P);
        Some(linalg::symmetrize(
            &(model::q_map(self.problem, P) + s.transpose() * theta),
        ))
    }

    pub fn pi_rhs(&self, P: &Mat, Pi: &Mat) -> Option<Mat> {
        let theta = self.hat_gain(P, Pi)?;
        let s = model::s_hat_map(&self.hats, P, Pi);
        Some(linalg::symmetrize(
            &(model::q_hat_map(&self.hats, P, Pi) + s.transpose() * theta),
        ))
    }

    fn check_node(&self, P: &Mat, t: f64) -> Result<()> {
        let r = model::r_map(self.problem, P);
        let rh = model::r_hat_map(&self.hats, P);
        if !(linalg::min_eigenvalue(&r) >= BREAKDOWN_TOL) || !(linalg::min_eigenvalue(&rh) >= BREAKDOWN_TOL) {
            return Err(MflqError::RiccatiBreakdown { t });
        }
        Ok(())
    }
}

fn rk4_step<F>(y: &Mat, h: f64, f: F, t: f64) -> Result<Mat>
where
    F: Fn(usize, &Mat) -> Option<Mat>,
{
    let bd = || MflqError::RiccatiBreakdown { t };
    let k1 = f(0, y).ok_or_else(bd)?;
    let k2 = f(1, &(y + &k1 * (h / 2.0))).ok_or_else(bd)?;
    let k3 = f(1, &(y + &k2 * (h / 2.0))).ok_or_else(bd)?;
    let k4 = f(2, &(y + &k3 * h)).ok_or_else(bd)?;
    Ok(linalg::symmetrize(&(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))))
}

/// Classical RK4 backward from P_T(T) = Π_T(T) = 0 on a uniform mesh of `steps` intervals.
pub fn integrate_finite_horizon(problem: &ProblemData, T: f64, steps: usize) -> Result<RiccatiPath> {
    if !(T > 0.0 && T.is_finite()) {
        return Err(MflqError::Config(format!("horizon must be positive, got {T}")));
    }
    if steps == 0 {
        return Err(MflqError::Config("steps must be positive".into()));
    }
    model::require_a1(problem)?;
    let flow = Flow::new(problem);
    let (n, m) = (problem.dims.n, problem.dims.m);
    let mesh = uniform_mesh(T, steps);
    let h = T / steps as f64;

    let mut P = vec![Mat::zeros(n, n); steps + 1];
    let mut P_dot = vec![Mat::zeros(n, n); steps + 1];
    flow.check_node(&P[steps], T)?;
    P_dot[steps] = -flow.p_rhs(&P[steps]).ok_or(MflqError::RiccatiBreakdown { t: T })?;
    for k in (0..steps).rev() {
        let next = rk4_step(&P[k + 1], h, |_, y| flow.p_rhs(y), mesh[k])?;
        if !is_finite(&next) {
            return Err(MflqError::RiccatiBreakdown { t: mesh[k] });
        }
        flow.check_node(&next, mesh[k])?;
        P_dot[k] = -flow.p_rhs(&next).ok_or(MflqError::RiccatiBreakdown { t: mesh[k] })?;
        P[k] = next;
    }

    let mut Pi = vec![Mat::zeros(n, n); steps + 1];
    let mut Pi_dot = vec![Mat::zeros(n, n); steps + 1];
    Pi_dot[steps] = -flow
        .pi_rhs(&P[steps], &Pi[steps])
        .ok_or(MflqError::RiccatiBreakdown { t: T })?;
    for k in (0..steps).rev() {
        let p_mid = hermite_mid(&P[k], &P[k + 1], &P_dot[k], &P_dot[k + 1], h);
        let stage_p = [&P[k + 1], &p_mid, &P[k]];
        let next = rk4_step(&Pi[k + 1], h, |i, y| flow.pi_rhs(stage_p[i], y), mesh[k])?;
        if !is_finite(&next) {
            return Err(MflqError::RiccatiBreakdown { t: mesh[k] });
        }
        Pi_dot[k] = -flow
            .pi_rhs(&P[k], &next)
            .ok_or(MflqError::RiccatiBreakdown { t: mesh[k] })?;
        Pi[k] = next;
    }

    let mut Theta = Vec::with_capacity(steps + 1);
    let mut ThetaHat = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let bd = MflqError::RiccatiBreakdown { t: mesh[k] };
        Theta.push(flow.gain(&P[k]).ok_or(bd.clone())?);
        ThetaHat.push(flow.hat_gain(&P[k], &Pi[k]).ok_or(bd)?);
    }
    let mut ThetaHat_mid = Vec::with_capacity(steps);
    for k in 0..steps {
        let p_mid = hermite_mid(&P[k], &P[k + 1], &P_dot[k], &P_dot[k + 1], h);
        let pi_mid = hermite_mid(&Pi[k], &Pi[k + 1], &Pi_dot[k], &Pi_dot[k + 1], h);
        ThetaHat_mid.push(
            flow.hat_gain(&p_mid, &pi_mid)
                .ok_or(MflqError::RiccatiBreakdown { t: mesh[k] + h / 2.0 })?,
        );
    }

    Ok(RiccatiPath {
        T,
        mesh,
        P,
        Pi,
        P_dot,
        Pi_dot,
        Theta,
        ThetaHat,
        ThetaHat_mid,
        phi: vec![Vector::zeros(n); steps + 1],
        phi_hat: vec![Vector::zeros(n); steps + 1],
        theta: vec![Vector::zeros(m); steps + 1],
        theta_hat: vec![Vector::zeros(m); steps + 1],
        theta_hat_mid: vec![Vector::zeros(m); steps],
    })
}

enum FlowOutcome {
    Converged(Mat),
    /// Horizon exhausted with a finite iterate; Newton may still finish the job.
    Stalled(Mat),
    Diverged,
}

fn flow_to_stationarity<F>(rhs: F, n: usize, h: f64) -> FlowOutcome
where
    F: Fn(&Mat) -> Option<Mat>,
{
    let mut y = Mat::zeros(n, n);
    let max_steps = (MAX_ARE_HORIZON / h).ceil() as usize;
    let mut k1 = match rhs(&y) {
        Some(k) => k,
        None => return FlowOutcome::Diverged,
    };
    for _ in 0..max_steps {
        let scale = 1.0 + linalg::max_abs(&y);
        if linalg::max_abs(&k1) < STATIONARITY_TOL * scale {
            return FlowOutcome::Converged(y);
        }
        let stage = |x: Mat| rhs(&x);
        let k2 = match stage(&y + &k1 * (h / 2.0)) {
            Some(k) => k,
            None => return FlowOutcome::Diverged,
        };
        let k3 = match stage(&y + &k2 * (h / 2.0)) {
            Some(k) => k,
            None => return FlowOutcome::Diverged,
        };
        let k4 = match stage(&y + &k3 * h) {
            Some(k) => k,
            None => return FlowOutcome::Diverged,
        };
        y = linalg::symmetrize(&(&y + (&k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)));
        if !is_finite(&y) || linalg::max_abs(&y) > DIVERGENCE_NORM {
            return FlowOutcome::Diverged;
        }
        k1 = match rhs(&y) {
            Some(k) => k,
            None => return FlowOutcome::Diverged,
        };
    }
    let scale = 1.0 + linalg::max_abs(&y);
    if linalg::max_abs(&k1) < 1e-6 * scale {
        FlowOutcome::Stalled(y)
    } else {
        FlowOutcome::Diverged
    }
}

/// Integrates with a shrinking step until the flow settles or provably leaves every bounded set.
fn settle<F>(rhs: F, n: usize) -> Result<Mat>
where
    F: Fn(&Mat) -> Option<Mat>,
{
    let mut h = ARE_STEP;
    for _ in 0..3 {
        match flow_to_stationarity(&rhs, n, h) {
            FlowOutcome::Converged(y) | FlowOutcome::Stalled(y) => return Ok(y),
            FlowOutcome::Diverged => h /= 4.0,
        }
    }
    Err(MflqError::AreDivergence)
}

/// Newton iteration on a Riccati residual with a supplied linearization.
fn newton_polish<R, L>(mut y: Mat, residual: R, linearization: L) -> Mat
where
    R: Fn(&Mat) -> Option<Mat>,
    L: Fn(&Mat) -> Option<Mat>,
{
    let n = y.nrows();
    let mut best = match residual(&y) {
        Some(r) => linalg::max_abs(&r),
        None => return y,
    };
    for _ in 0..NEWTON_STEPS {
        if best <= 1e-15 * (1.0 + linalg::max_abs(&y)) {
            break;
        }
        let (Some(res), Some(lin)) = (residual(&y), linearization(&y)) else {
            break;
        };
        let Some(delta) = linalg::solve_vec(&lin, &(-linalg::vec_of(&res))) else {
            break;
        };
        let cand = linalg::symmetrize(&(&y + linalg::unvec(&delta, n, n)));
        let Some(r) = residual(&cand).map(|r| linalg::max_abs(&r)) else {
            break;
        };
        if !(r < best) {
            break;
        }
        best = r;
        y = cand;
    }
    y
}

/// Stationary pair by integration to stationarity followed by Newton polish.
pub fn solve_are(problem: &ProblemData) -> Result<ArePair> {
    model::require_a1(problem)?;
    let flow = Flow::new(problem);
    if !model::check_mean_system_stabilizability(&flow.hats).stabilizable {
        return Err(MflqError::AreDivergence);
    }
    let n = problem.dims.n;
    let eye = Mat::identity(n, n);

    let P0 = settle(|y| flow.p_rhs(y), n)?;
    let P = newton_polish(
        P0,
        |y| flow.p_rhs(y),
        |y| {
            let theta = flow.gain(y)?;
            let a = (&problem.A + &problem.B * &theta).transpose();
            let c = (&problem.C + &problem.D * &theta).transpose();
            Some(linalg::kron(&eye, &a) + linalg::kron(&a, &eye) + linalg::kron(&c, &c))
        },
    );
    let residual_P = linalg::max_abs(&flow.p_rhs(&P).ok_or(MflqError::AreDivergence)?);
    if !(residual_P <= RESIDUAL_TOL) {
        return Err(MflqError::AreDivergence);
    }

    let Pi0 = settle(|y| flow.pi_rhs(&P, y), n)?;
    let Pi = newton_polish(
        Pi0,
        |y| flow.pi_rhs(&P, y),
        |y| {
            let theta = flow.hat_gain(&P, y)?;
            let a = (&flow.hats.A + &flow.hats.B * &theta).transpose();
            Some(linalg::kron(&eye, &a) + linalg::kron(&a, &eye))
        },
    );
    let residual_Pi = linalg::max_abs(&flow.pi_rhs(&P, &Pi).ok_or(MflqError::AreDivergence)?);
    if !(residual_Pi <= RESIDUAL_TOL) {
        return Err(MflqError::AreDivergence);
    }

    if !(linalg::min_eigenvalue(&P) > model::PD_TOL) || !(linalg::min_eigenvalue(&Pi) > model::PD_TOL) {
        return Err(MflqError::AreNotPositive);
    }
    let Theta = flow.gain(&P).ok_or(MflqError::AreDivergence)?;
    let ThetaHat = flow.hat_gain(&P, &Pi).ok_or(MflqError::AreDivergence)?;

    let mean_abscissa = linalg::spectral_abscissa(&(&flow.hats.A + &flow.hats.B * &ThetaHat));
    if !(mean_abscissa < 0.0) {
        return Err(MflqError::NotStabilizing(format!(
            "mean closed loop has spectral abscissa {mean_abscissa:e}"
        )));
    }
    let ms = model::check_ms_stability(problem, &Theta);
    if !ms.stable {
        return Err(MflqError::NotStabilizing(format!(
            "mean-square generator has spectral abscissa {:e}",
            ms.abscissa
        )));
    }

    Ok(ArePair {
        P,
        Pi,
        Theta,
        ThetaHat,
        residual_P,
        residual_Pi,
    })
}

/// Residuals of both AREs at a candidate pair, as max-abs values.
pub fn are_residuals(problem: &ProblemData, P: &Mat, Pi: &Mat) -> Option<(f64, f64)> {
    let flow = Flow::new(problem);
    Some((linalg::max_abs(&flow.p_rhs(P)?), linalg::max_abs(&flow.pi_rhs(P, Pi)?)))
}

/// Fills φ_T, φ̂_T (backward RK4 from −λ*) and the nodewise offsets θ_T, θ̂_T.
pub fn integrate_offsets(
    problem: &ProblemData,
    are: &ArePair,
    path: &RiccatiPath,
    lambda_star: &Vector,
    sigma_star: &Vector,
) -> Result<RiccatiPath> {
    path.check_consistent()?;
    let n = problem.dims.n;
    if path.dim() != n || path.controls() != problem.dims.m {
        return Err(MflqError::MeshMismatch(
            "path dimensions differ from the problem".into(),
        ));
    }
    if are.P.nrows() != n {
        return Err(MflqError::MeshMismatch(
            "ARE pair dimensions differ from the problem".into(),
        ));
    }
    if lambda_star.len() != n || sigma_star.len() != n {
        return Err(MflqError::shape(
            "lambda_star/sigma_star",
            format!("expected length {n}"),
        ));
    }
    let flow = Flow::new(problem);
    let hats = &flow.hats;
    let steps = path.steps();
    let h = path.step();

    // Interval-midpoint P, Π and gains are shared by the two RK4 middle stages.
    let mut p_mid = Vec::with_capacity(steps);
    let mut theta_mid = Vec::with_capacity(steps);
    for k in 0..steps {
        let pm = hermite_mid(&path.P[k], &path.P[k + 1], &path.P_dot[k], &path.P_dot[k + 1], h);
        theta_mid.push(flow.gain(&pm).ok_or(MflqError::RiccatiBreakdown {
            t: path.mesh[k] + h / 2.0,
        })?);
        p_mid.push(pm);
    }

    let rhs = |P_t: &Mat, Theta_t: &Mat, y: &Vector| -> Vector {
        let forcing = (&problem.C + &problem.D * Theta_t).transpose() * ((P_t - &are.P) * sigma_star);
        (&problem.A + &problem.B * Theta_t).transpose() * y + forcing
    };
    let rhs_hat = |P_t: &Mat, ThetaHat_t: &Mat, y: &Vector| -> Vector {
        let forcing = (&hats.C + &hats.D * ThetaHat_t).transpose() * ((P_t - &are.P) * sigma_star);
        (&hats.A + &hats.B * ThetaHat_t).transpose() * y + forcing
    };

    let mut out = path.clone();
    let mut phi = vec![Vector::zeros(n); steps + 1];
    let mut phi_hat = vec![Vector::zeros(n); steps + 1];
    phi[steps] = -lambda_star.clone();
    phi_hat[steps] = -lambda_star.clone();
    for k in (0..steps).rev() {
        let y = &phi[k + 1];
        let k1 = rhs(&path.P[k + 1], &path.Theta[k + 1], y);
        let k2 = rhs(&p_mid[k], &theta_mid[k], &(y + &k1 * (h / 2.0)));
        let k3 = rhs(&p_mid[k], &theta_mid[k], &(y + &k2 * (h / 2.0)));
        let k4 = rhs(&path.P[k], &path.Theta[k], &(y + &k3 * h));
        phi[k] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

        let y = &phi_hat[k + 1];
        let k1 = rhs_hat(&path.P[k + 1], &path.ThetaHat[k + 1], y);
        let k2 = rhs_hat(&p_mid[k], &path.ThetaHat_mid[k], &(y + &k1 * (h / 2.0)));
        let k3 = rhs_hat(&p_mid[k], &path.ThetaHat_mid[k], &(y + &k2 * (h / 2.0)));
        let k4 = rhs_hat(&path.P[k], &path.ThetaHat[k], &(y + &k3 * h));
        phi_hat[k] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }

    let theta_of = |P_t: &Mat, phi_t: &Vector, t: f64| -> Result<Vector> {
        let r = model::r_map(problem, P_t);
        let rhs = problem.B.transpose() * phi_t + problem.D.transpose() * ((P_t - &are.P) * sigma_star);
        linalg::solve_vec(&r, &rhs)
            .map(|x| -x)
            .ok_or(MflqError::RiccatiBreakdown { t })
    };
    let theta_hat_of = |P_t: &Mat, phi_t: &Vector, t: f64| -> Result<Vector> {
        let r = model::r_hat_map(hats, P_t);
        let rhs = hats.B.transpose() * phi_t + hats.D.transpose() * ((P_t - &are.P) * sigma_star);
        linalg::solve_vec(&r, &rhs)
            .map(|x| -x)
            .ok_or(MflqError::RiccatiBreakdown { t })
    };

    for k in 0..=steps {
        out.theta[k] = theta_of(&path.P[k], &phi[k], path.mesh[k])?;
        out.theta_hat[k] = theta_hat_of(&path.P[k], &phi_hat[k], path.mesh[k])?;
    }
    for k in 0..steps {
        let d0 = -rhs_hat(&path.P[k], &path.ThetaHat[k], &phi_hat[k]);
        let d1 = -rhs_hat(&path.P[k + 1], &path.ThetaHat[k + 1], &phi_hat[k + 1]);
        let ph_mid = hermite_mid(&phi_hat[k], &phi_hat[k + 1], &d0, &d1, h);
        out.theta_hat_mid[k] = theta_hat_of(&p_mid[k], &ph_mid, path.mesh[k] + h / 2.0)?;
    }
    out.phi = phi;
    out.phi_hat = phi_hat;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub t: f64,
    pub err_P: f64,
    pub err_Pi: f64,
}

/// Nodewise max-abs distance of the finite-horizon solutions from the stationary pair.
pub fn convergence_profile(path: &RiccatiPath, are: &ArePair) -> Vec<ProfileRow> {
    path.mesh
        .iter()
        .enumerate()
        .map(|(k, &t)| ProfileRow {
            t,
            err_P: linalg::max_abs(&(&path.P[k] - &are.P)),
            err_Pi: linalg::max_abs(&(&path.Pi[k] - &are.Pi)),
        })
        .collect()
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut s = String::from("t,err_P,err_Pi\n");
    for r in rows {
        s.push_str(&format!("{:e},{:e},{:e}\n", r.t, r.err_P, r.err_Pi));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub horizons: Vec<f64>,
    pub pi_at_zero: Vec<Vec<Vec<f64>>>,
    /// Smallest eigenvalue of each successive difference Π_{T_{i+1}}(0) − Π_{T_i}(0).
    pub min_increment_eigenvalues: Vec<f64>,
    pub monotone: bool,
}

pub fn steps_for(T: f64, steps_per_unit: usize) -> usize {
    ((T * steps_per_unit as f64).round() as usize).max(1)
}

/// Π_T(0) across increasing horizons with a PSD-order monotonicity verdict.
pub fn horizon_monotonicity_check(
    problem: &ProblemData,
    horizons: &[f64],
    steps_per_unit: usize,
) -> Result<MonotonicityReport> {
    if horizons.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MflqError::Config("horizons must be strictly increasing".into()));
    }
    let pis: Vec<Mat> = horizons
        .par_iter()
        .map(|&T| integrate_finite_horizon(problem, T, steps_for(T, steps_per_unit)).map(|p| p.Pi[0].clone()))
        .collect::<Result<Vec<_>>>()?;
    let min_increment_eigenvalues: Vec<f64> = pis
        .windows(2)
        .map(|w| linalg::min_eigenvalue(&(&w[1] - &w[0])))
        .collect();
    let monotone = min_increment_eigenvalues.iter().all(|&e| e >= -MONOTONE_TOL);
    Ok(MonotonicityReport {
        horizons: horizons.to_vec(),
        pi_at_zero: pis.iter().map(linalg::rows_of).collect(),
        min_increment_eigenvalues,
        monotone,
    })
}

pub fn monotonicity_csv(report: &MonotonicityReport) -> String {
    let n = report.pi_at_zero.first().map(|m| m.len()).unwrap_or(0);
    let mut s = String::from("T");
    for i in 0..n {
        for j in 0..n {
            s.push_str(&format!(",Pi{i}{j}"));
        }
    }
    s.push('\n');
    for (T, pi) in report.horizons.iter().zip(&report.pi_at_zero) {
        s.push_str(&format!("{T:e}"));
        for row in pi {
            for v in row {
                s.push_str(&format!(",{v:e}"));
            }
        }
        s.push('\n');
    }
    s
}
