use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    UniformFanIn,
    Zeros,
}

/// Input fan of a weight tensor: rows of a `[in, out]` matrix, `C*kh*kw`
/// for a `[F, C, kh, kw]` kernel, 1 otherwise.
pub fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        2 => shape[0],
        4 => shape[1] * shape[2] * shape[3],
        _ => 1,
    }
    .max(1)
}

/// Values are rounded to `f32` so they survive a checkpoint round trip.
pub fn seeded_init(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if scheme == InitScheme::UniformFanIn {
        let bound = 1.0 / (fan_in(shape) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut r = rng::seeded(seed);
        for v in t.data_mut() {
            *v = (dist.sample(&mut r) as f32 as f64).clamp(-bound, bound);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_scheme() {
        let t = seeded_init(&[3, 4], InitScheme::Zeros, 9);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = seeded_init(&[8, 16], InitScheme::UniformFanIn, 5);
        let b = seeded_init(&[8, 16], InitScheme::UniformFanIn, 5);
        let c = seeded_init(&[8, 16], InitScheme::UniformFanIn, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fan_in_statistics() {
        let t = seeded_init(&[100, 1000], InitScheme::UniformFanIn, 1);
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!(max <= 0.1, "{max}");
        assert!(mean.abs() < 0.002, "{mean}");
        assert_eq!(fan_in(&[8, 3, 3, 3]), 27);
    }
}
