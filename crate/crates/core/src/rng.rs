//! Counter-based Brownian increments keyed by (seed, path, step).
//!
//! Each path owns one ChaCha8 stream; steps 2j and 2j+1 share the two 64-bit
//! words at stream position 4j and use the cosine and sine halves of one
//! Box–Muller pair. Random access and sequential iteration give identical bits.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_open(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn unit_closed_open(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let r = (-2.0 * unit_open(a).ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * unit_closed_open(b)).sin_cos();
    (r * c, r * s)
}

fn stream(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Standard normal draw for (seed, path, step).
pub fn standard_normal(seed: u64, path: u64, step: u64) -> f64 {
    let mut rng = stream(seed, path);
    rng.set_word_pos(4 * u128::from(step / 2));
    let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
    if step.is_multiple_of(2) {
        z0
    } else {
        z1
    }
}

/// ΔW = √dt · z for (seed, path, step).
pub fn brownian_increment(seed: u64, path: u64, step: u64, dt: f64) -> f64 {
    dt.sqrt() * standard_normal(seed, path, step)
}

/// Sequential increments of one path, starting at step 0.
pub struct BrownianStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    pending: Option<f64>,
}

impl BrownianStream {
    pub fn new(seed: u64, path: u64, dt: f64) -> Self {
        BrownianStream {
            rng: stream(seed, path),
            sqrt_dt: dt.sqrt(),
            pending: None,
        }
    }

    pub fn next_increment(&mut self) -> f64 {
        let z = match self.pending.take() {
            Some(z) => z,
            None => {
                let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
                self.pending = Some(z1);
                z0
            }
        };
        self.sqrt_dt * z
    }
}

impl Iterator for BrownianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_increment())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_matches_random_access() {
        let dt = 1e-3;
        let seq: Vec<f64> = BrownianStream::new(42, 7, dt).take(11).collect();
        for (k, v) in seq.iter().enumerate() {
            assert_eq!(v.to_bits(), brownian_increment(42, 7, k as u64, dt).to_bits());
        }
    }

    #[test]
    fn streams_differ_by_path_and_seed() {
        assert_ne!(standard_normal(1, 0, 0), standard_normal(1, 1, 0));
        assert_ne!(standard_normal(1, 0, 0), standard_normal(2, 0, 0));
    }

    #[test]
    fn moments_are_standard() {
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for z in BrownianStream::new(3, 0, 1.0).take(n) {
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }
}
