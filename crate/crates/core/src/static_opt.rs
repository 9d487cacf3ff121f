//! The static optimization problem that locates the turnpike, solved through its KKT system.

use serde::Serialize;

use crate::error::{MflqError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{self, ProblemData};

pub const RCOND_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct StaticSolution {
    pub x_star: Vector,
    pub u_star: Vector,
    pub lambda_star: Vector,
    pub V: f64,
    pub sigma_star: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub feasibility: f64,
    pub stationarity_x: f64,
    pub stationarity_u: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.feasibility.max(self.stationarity_x).max(self.stationarity_u)
    }
}

/// JSON view with plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticReport {
    pub x_star: Vec<f64>,
    pub u_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub sigma_star: Vec<f64>,
    pub V: f64,
}

impl From<&StaticSolution> for StaticReport {
    fn from(s: &StaticSolution) -> Self {
        let v = |x: &Vector| x.iter().copied().collect();
        StaticReport {
            x_star: v(&s.x_star),
            u_star: v(&s.u_star),
            lambda_star: v(&s.lambda_star),
            sigma_star: v(&s.sigma_star),
            V: s.V,
        }
    }
}

fn check_inputs(problem: &ProblemData, P: &Mat) -> Result<()> {
    let n = problem.dims.n;
    if P.shape() != (n, n) {
        return Err(MflqError::shape("P", format!("expected {n}x{n}")));
    }
    if linalg::asymmetry(P) > model::SYMMETRY_TOL {
        return Err(MflqError::Asymmetric("P".into()));
    }
    Ok(())
}

/// ⟨Q̂x,x⟩ + ⟨R̂u,u⟩ + 2⟨Ŝx,u⟩ + 2⟨q,x⟩ + 2⟨r,u⟩ + ⟨Pw,w⟩ with w = Ĉx + D̂u + σ.
pub fn evaluate_F(problem: &ProblemData, P: &Mat, x: &Vector, u: &Vector) -> f64 {
    let h = model::assemble_hats(problem);
    let w = &h.C * x + &h.D * u + &problem.sigma;
    (&h.Q * x).dot(x)
        + (&h.R * u).dot(u)
        + 2.0 * (&h.S * x).dot(u)
        + 2.0 * problem.q.dot(x)
        + 2.0 * problem.r.dot(u)
        + (P * &w).dot(&w)
}

/// Solves the (2n+m)-dimensional KKT system for (x*, u*, λ*).
pub fn solve_static(problem: &ProblemData, P: &Mat) -> Result<StaticSolution> {
    check_inputs(problem, P)?;
    let (n, m) = (problem.dims.n, problem.dims.m);
    let h = model::assemble_hats(problem);
    let dim = 2 * n + m;
    let mut k = Mat::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);

    // unknown ordering: x (0..n), u (n..n+m), λ (n+m..)
    let (ix, iu, il) = (0, n, n + m);
    k.view_mut((0, ix), (n, n)).copy_from(&h.A);
    k.view_mut((0, iu), (n, m)).copy_from(&h.B);
    rhs.rows_mut(0, n).copy_from(&(-&problem.b));

    let ct_p = h.C.transpose() * P;
    let dt_p = h.D.transpose() * P;
    k.view_mut((n, ix), (n, n)).copy_from(&(&h.Q + &ct_p * &h.C));
    k.view_mut((n, iu), (n, m)).copy_from(&(h.S.transpose() + &ct_p * &h.D));
    k.view_mut((n, il), (n, n)).copy_from(&h.A.transpose());
    rhs.rows_mut(n, n).copy_from(&(-&problem.q - &ct_p * &problem.sigma));

    let r0 = 2 * n;
    k.view_mut((r0, ix), (m, n)).copy_from(&(&h.S + &dt_p * &h.C));
    k.view_mut((r0, iu), (m, m)).copy_from(&(&h.R + &dt_p * &h.D));
    k.view_mut((r0, il), (m, n)).copy_from(&h.B.transpose());
    rhs.rows_mut(r0, m).copy_from(&(-&problem.r - &dt_p * &problem.sigma));

    if !(linalg::rcond(&k) >= RCOND_TOL) {
        return Err(MflqError::StaticDegenerate);
    }
    let sol = linalg::solve_vec(&k, &rhs).ok_or(MflqError::StaticDegenerate)?;
    let x_star = sol.rows(ix, n).into_owned();
    let u_star = sol.rows(iu, m).into_owned();
    let lambda_star = sol.rows(il, n).into_owned();
    let sigma_star = &h.C * &x_star + &h.D * &u_star + &problem.sigma;
    let V = evaluate_F(problem, P, &x_star, &u_star);
    Ok(StaticSolution {
        x_star,
        u_star,
        lambda_star,
        V,
        sigma_star,
    })
}

/// Max-abs residuals of the three KKT blocks at a candidate (x, u, λ).
pub fn kkt_residual(problem: &ProblemData, P: &Mat, solution: &StaticSolution) -> KktResidual {
    let h = model::assemble_hats(problem);
    let (x, u, l) = (&solution.x_star, &solution.u_star, &solution.lambda_star);
    let w = &h.C * x + &h.D * u + &problem.sigma;
    let pw = P * &w;
    let feas = &h.A * x + &h.B * u + &problem.b;
    let sx = h.A.transpose() * l + &h.Q * x + h.C.transpose() * &pw + h.S.transpose() * u + &problem.q;
    let su = h.B.transpose() * l + &h.R * u + h.D.transpose() * &pw + &h.S * x + &problem.r;
    KktResidual {
        feasibility: linalg::max_abs_vec(&feas),
        stationarity_x: linalg::max_abs_vec(&sx),
        stationarity_u: linalg::max_abs_vec(&su),
    }
}
