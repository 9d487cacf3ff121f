#![allow(non_snake_case)]

mod common;

use common::*;
use mflq::analysis::{self, block_psd_check, fit_exponential, matrix_contraction_check};
use mflq::linalg::{self, Mat, Vector};
use mflq::model::{self, assemble_hats, evaluate_maps, normalize_cross_terms};
use mflq::riccati::{integrate_finite_horizon, solve_are};
use mflq::static_opt::{evaluate_F, kkt_residual, solve_static};
use mflq::ProblemData;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
    linalg::max_abs(&(a - b)) <= tol * (1.0 + linalg::max_abs(a))
}

fn sym(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let g = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_valid_problems_pass_assumptions(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
        let p = random_valid(seed, n, m);
        prop_assert!(model::validate_assumption_a1(&p).passed);
        prop_assert!(model::check_mean_system_stabilizability(&assemble_hats(&p)).stabilizable);
    }

    #[test]
    fn are_solution_is_a_stabilizing_root(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
        let p = random_valid(seed, n, m);
        let are = solve_are(&p).unwrap();
        prop_assert!(are.residual_P <= 1e-10 && are.residual_Pi <= 1e-10);
        prop_assert!(linalg::min_eigenvalue(&are.P) > 0.0);
        prop_assert!(linalg::min_eigenvalue(&are.Pi) > 0.0);
        prop_assert!(model::check_ms_stability(&p, &are.Theta).stable);
        let h = assemble_hats(&p);
        prop_assert!(linalg::spectral_abscissa(&(&h.A + &h.B * &are.ThetaHat)) < 0.0);
    }

    #[test]
    fn maps_are_affine_in_p(seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let p = random_valid(seed, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (p1, p2, pi1, pi2) = (sym(&mut rng, 2), sym(&mut rng, 2), sym(&mut rng, 2), sym(&mut rng, 2));
        let mix = |a: &Mat, b: &Mat| a * alpha + b * (1.0 - alpha);
        let e1 = evaluate_maps(&p, &p1, &pi1).unwrap();
        let e2 = evaluate_maps(&p, &p2, &pi2).unwrap();
        let em = evaluate_maps(&p, &mix(&p1, &p2), &mix(&pi1, &pi2)).unwrap();
        for (a, b, c) in [
            (&em.Q_of_P, &e1.Q_of_P, &e2.Q_of_P),
            (&em.S_of_P, &e1.S_of_P, &e2.S_of_P),
            (&em.R_of_P, &e1.R_of_P, &e2.R_of_P),
            (&em.Q_hat, &e1.Q_hat, &e2.Q_hat),
            (&em.S_hat, &e1.S_hat, &e2.S_hat),
            (&em.R_hat, &e1.R_hat, &e2.R_hat),
        ] {
            prop_assert!(close(a, &mix(b, c), 1e-12));
        }
    }

    #[test]
    fn normalization_preserves_riccati_solution(seed in any::<u64>(), n in 1usize..3, m in 1usize..3) {
        let p = random_valid(seed, n, m);
        let np = normalize_cross_terms(&p).unwrap();
        let a = integrate_finite_horizon(&p, 2.0, 400).unwrap();
        let b = integrate_finite_horizon(&np, 2.0, 400).unwrap();
        for k in 0..a.P.len() {
            prop_assert!(close(&a.P[k], &b.P[k], 1e-9));
            prop_assert!(close(&a.Pi[k], &b.Pi[k], 1e-9));
        }
        let (ea, eb) = (solve_are(&p).unwrap(), solve_are(&np).unwrap());
        let (sa, sb) = (solve_static(&p, &ea.P).unwrap(), solve_static(&np, &eb.P).unwrap());
        prop_assert!((&sa.x_star - &sb.x_star).amax() < 1e-8);
        prop_assert!((sa.V - sb.V).abs() < 1e-8 * (1.0 + sa.V.abs()));
    }

    #[test]
    fn riccati_nodes_are_symmetric_psd(seed in any::<u64>(), n in 1usize..4) {
        let p = random_valid(seed, n, 1);
        let path = integrate_finite_horizon(&p, 3.0, 600).unwrap();
        for (P, Pi) in path.P.iter().zip(&path.Pi) {
            prop_assert!(linalg::asymmetry(P) <= 1e-12 && linalg::asymmetry(Pi) <= 1e-12);
            prop_assert!(linalg::min_eigenvalue(P) >= -1e-10 && linalg::min_eigenvalue(Pi) >= -1e-10);
        }
    }

    #[test]
    fn static_solution_scales_with_inhomogeneous_data(seed in any::<u64>(), s in -3.0f64..3.0) {
        let p = random_valid(seed, 2, 2);
        let are = solve_are(&p).unwrap();
        let base = solve_static(&p, &are.P).unwrap();
        let mut ps = p.clone();
        ps.b *= s;
        ps.q *= s;
        ps.r *= s;
        ps.sigma *= s;
        let scaled = solve_static(&ps, &are.P).unwrap();
        prop_assert!((&scaled.x_star - &base.x_star * s).amax() < 1e-9);
        prop_assert!((&scaled.u_star - &base.u_star * s).amax() < 1e-9);
        prop_assert!((&scaled.lambda_star - &base.lambda_star * s).amax() < 1e-9);
        prop_assert!((scaled.V - base.V * s * s).abs() < 1e-9 * (1.0 + base.V.abs() * s * s));
    }

    #[test]
    fn static_kkt_residual_is_small(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let p = random_valid(seed, n, m);
        let are = solve_are(&p).unwrap();
        let s = solve_static(&p, &are.P).unwrap();
        prop_assert!(kkt_residual(&p, &are.P, &s).max() <= 1e-10);
    }

    #[test]
    fn contraction_never_exceeds_one(seed in any::<u64>(), n in 1usize..7, m in 1usize..7, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let M = Mat::from_fn(n, m, |_, _| scale * rng.random_range(-1.0..1.0));
        let K = sym(&mut rng, m) + Mat::identity(m, m) * 0.05;
        let r = matrix_contraction_check(&M, &K).unwrap();
        prop_assert!(r.holds);
        prop_assert!(r.max_eigenvalue >= -1e-12);
    }

    #[test]
    fn block_is_psd_for_valid_problems(seed in any::<u64>(), n in 1usize..4, m in 1usize..4, rank in 0usize..4) {
        let p = random_valid(seed, n, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let g = Mat::from_fn(n, rank.min(n), |_, _| rng.random_range(-2.0..2.0));
        let delta = &g * g.transpose();
        prop_assert!(block_psd_check(&assemble_hats(&p), &delta).unwrap().holds);
    }

    #[test]
    fn log_fit_recovers_planted_rate(k in 0.01f64..100.0, lambda in 0.1f64..5.0) {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let ys: Vec<f64> = xs.iter().map(|x| k * (-lambda * x).exp()).collect();
        let f = fit_exponential(&xs, &ys, (0.0, 2.0)).unwrap();
        prop_assert!((f.lambda - lambda).abs() < 1e-9 * (1.0 + lambda));
        prop_assert!((f.K - k).abs() < 1e-8 * k);
        prop_assert!(f.r_squared > 1.0 - 1e-12);
    }
}

/// Perturbations d with Âd_x + B̂d_u = 0, |d| = 1e-3.
fn feasible_perturbations(p: &ProblemData, count: usize, seed: u64) -> Vec<(Vector, Vector)> {
    let h = assemble_hats(p);
    let m = p.dims.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_inv = h.A.clone().try_inverse().expect("Â invertible for these problems");
    (0..count)
        .map(|_| {
            let du = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let dx = -(&a_inv * &h.B * &du);
            let norm = (dx.norm_squared() + du.norm_squared()).sqrt();
            (dx * (1e-3 / norm), du * (1e-3 / norm))
        })
        .collect()
}

#[test]
fn static_minimizer_beats_feasible_perturbations() {
    for p in [sp2(), sp_mf_b(), random_valid(3, 3, 2), random_valid(11, 2, 1)] {
        let are = solve_are(&p).unwrap();
        let s = solve_static(&p, &are.P).unwrap();
        let h = assemble_hats(&p);
        for (dx, du) in feasible_perturbations(&p, 1000, 42) {
            assert!((&h.A * &dx + &h.B * &du).amax() < 1e-15);
            let f = evaluate_F(&p, &are.P, &(&s.x_star + &dx), &(&s.u_star + &du));
            assert!(f > s.V, "perturbation lowered F: {f} vs {}", s.V);
        }
    }
}

/// Scalar F on the constraint line u = −(Âx + b)/B̂ is a 1-D quadratic; its vertex is the oracle.
fn scalar_qp_oracle(p: &ProblemData, P: f64) -> (f64, f64, f64) {
    let h = assemble_hats(p);
    let (a, bb, c, d) = (h.A[(0, 0)], h.B[(0, 0)], h.C[(0, 0)], h.D[(0, 0)]);
    let (q, s, r) = (h.Q[(0, 0)], h.S[(0, 0)], h.R[(0, 0)]);
    let (b, sig, ql, rl) = (p.b[0], p.sigma[0], p.q[0], p.r[0]);
    // u = α x + β
    let (al, be) = (-a / bb, -b / bb);
    // w = Cx + Du + σ = γ x + δ
    let (ga, de) = (c + d * al, d * be + sig);
    let quad = q + 2.0 * s * al + r * al * al + P * ga * ga;
    let lin = s * be + r * al * be + ql + rl * al + P * ga * de;
    let x = -lin / quad;
    let u = al * x + be;
    let w = ga * x + de;
    let v = q * x * x + 2.0 * s * x * u + r * u * u + 2.0 * ql * x + 2.0 * rl * u + P * w * w;
    (x, u, v)
}

#[test]
fn scalar_static_matches_direct_qp() {
    let mut det = ProblemData::scalar(-0.7, 1.3, 0.0, 0.0, 2.0, 0.5);
    det.S[(0, 0)] = 0.3;
    det.b[0] = 0.4;
    det.q[0] = -0.2;
    det.r[0] = 0.1;
    let mut sde = det.clone();
    sde.C[(0, 0)] = 0.4;
    sde.D[(0, 0)] = -0.3;
    sde.sigma[0] = 0.6;
    let mut mf = sde.clone();
    mf.A_bar[(0, 0)] = 0.2;
    mf.B_bar[(0, 0)] = -0.4;
    mf.Q_bar[(0, 0)] = 0.5;
    mf.C_bar[(0, 0)] = 0.1;
    for p in [det, sde, mf] {
        let are = solve_are(&p).unwrap();
        let s = solve_static(&p, &are.P).unwrap();
        let (x, u, v) = scalar_qp_oracle(&p, are.P[(0, 0)]);
        assert!((s.x_star[0] - x).abs() < 1e-10, "{} vs {x}", s.x_star[0]);
        assert!((s.u_star[0] - u).abs() < 1e-10);
        assert!((s.V - v).abs() < 1e-10);
    }
}

#[test]
fn lemma_suite_is_reproducible() {
    let a = analysis::lemma_suite(200, 9, 6).unwrap();
    let b = analysis::lemma_suite(200, 9, 6).unwrap();
    assert_eq!(a, b);
    assert!(a.passed());
}
