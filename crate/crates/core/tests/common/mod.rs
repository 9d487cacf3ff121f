#![allow(dead_code)]

use mflq::linalg::{Mat, Vector};
use mflq::ProblemData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sp1() -> ProblemData {
    ProblemData::scalar(-1.0, 1.0, 0.0, 0.0, 1.0, 1.0)
}

pub fn sp2() -> ProblemData {
    let mut p = sp1();
    p.b[0] = 1.0;
    p.sigma[0] = 0.5;
    p
}

pub fn sp_mf() -> ProblemData {
    let mut p = sp1();
    p.A_bar[(0, 0)] = 0.5;
    p
}

pub fn sp_mf_b() -> ProblemData {
    let mut p = sp_mf();
    p.b[0] = 1.0;
    p
}

pub fn x(v: f64) -> Vector {
    Vector::from_element(1, v)
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, k: usize, eps: f64) -> Mat {
    let l = mat(rng, k, k, 1.0);
    let s = l.transpose() * l + Mat::identity(k, k) * eps;
    (&s + s.transpose()) * 0.5
}

/// Random problem with positive weights and a drift shifted to be stable, so both
/// positivity and stabilizability hold by construction.
pub fn random_valid(seed: u64, n: usize, m: usize) -> ProblemData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ProblemData::zeros(mflq::Dimensions { n, m });
    p.A = mat(&mut rng, n, n, 0.5) - Mat::identity(n, n) * 1.5;
    p.A_bar = mat(&mut rng, n, n, 0.3);
    p.B = mat(&mut rng, n, m, 1.0);
    p.B_bar = mat(&mut rng, n, m, 0.3);
    p.C = mat(&mut rng, n, n, 0.3);
    p.C_bar = mat(&mut rng, n, n, 0.2);
    p.D = mat(&mut rng, n, m, 0.3);
    p.D_bar = mat(&mut rng, n, m, 0.2);
    p.R = spd(&mut rng, m, 0.5);
    p.R_bar = spd(&mut rng, m, 0.1) * 0.3;
    p.S = mat(&mut rng, m, n, 0.5);
    let base = spd(&mut rng, n, 0.5);
    let srs = p.S.transpose() * p.R.clone().try_inverse().unwrap() * &p.S;
    let q = base + srs;
    p.Q = (&q + q.transpose()) * 0.5;
    p.Q_bar = spd(&mut rng, n, 0.1) * 0.3;
    p.b = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    p.sigma = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    p.q = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    p.r = Vector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
    p
}
