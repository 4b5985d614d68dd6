//! Seeded randomness for trials.
//!
//! Every trial owns an [`RngStream`] built from `(seed, stream_id)`. The
//! generator is ChaCha8 with the stream id mapped onto ChaCha's 64-bit stream
//! selector, so distinct trials draw from disjoint keystreams without any
//! coordination and replays are identical on every platform.
//!
//! Permutations are 0-indexed internally. [`Permutation::one_based`] gives the
//! 1-indexed form used in logs.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplerError {
    #[error("cannot sample a permutation of zero elements")]
    EmptyPermutation,
    #[error("cannot sample indices from an empty range")]
    EmptyRange,
    #[error("ball sampling needs dimension >= 1")]
    ZeroDimension,
}

/// Independent, replayable random stream for one trial.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an unrelated stream for an auxiliary purpose (e.g. initial
    /// weights) that must not consume draws from this one.
    pub fn fork(&self, salt: u64) -> RngStream {
        RngStream::new(self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15), self.stream_id)
    }

    /// Uniform integer in `0..=upper`.
    pub fn index_inclusive(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..=upper as u64) as usize
    }

    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// A bijection on `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    /// Build from a 0-indexed order, checking it is a bijection.
    pub fn from_order(order: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return None;
            }
            seen[i] = true;
        }
        Some(Permutation(order))
    }

    /// Build from 1-indexed notation, as in `(2, 1)`.
    pub fn from_one_based(order: &[usize]) -> Option<Self> {
        if order.contains(&0) {
            return None;
        }
        Self::from_order(order.iter().map(|i| i - 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn digest(&self) -> u64 {
        permutation_digest(&self.0)
    }
}

/// FNV-1a over the little-endian bytes of each index.
pub fn permutation_digest(order: &[usize]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &i in order {
        for byte in (i as u64).to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Fisher–Yates shuffle of `order` in place.
pub fn shuffle_in_place(rng: &mut RngStream, order: &mut [usize]) {
    for i in (1..order.len()).rev() {
        let j = rng.index_inclusive(i);
        order.swap(i, j);
    }
}

/// Uniformly random permutation of `n` elements.
pub fn sample_permutation(rng: &mut RngStream, n: usize) -> Result<Permutation, SamplerError> {
    if n == 0 {
        return Err(SamplerError::EmptyPermutation);
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_in_place(rng, &mut order);
    Ok(Permutation(order))
}

/// `count` i.i.d. uniform indices in `0..n`.
pub fn sample_with_replacement(
    rng: &mut RngStream,
    n: usize,
    count: usize,
) -> Result<Vec<usize>, SamplerError> {
    if n == 0 {
        return Err(SamplerError::EmptyRange);
    }
    Ok((0..count).map(|_| rng.index_inclusive(n - 1)).collect())
}

/// Uniform draw from the closed ball of radius `radius` in `dim` dimensions:
/// a normalized Gaussian direction scaled by `radius * U^(1/dim)`.
pub fn sample_uniform_ball(
    rng: &mut RngStream,
    dim: usize,
    radius: f64,
) -> Result<Vec<f64>, SamplerError> {
    if dim == 0 {
        return Err(SamplerError::ZeroDimension);
    }
    let mut direction: Vec<f64> = loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm2: f64 = v.iter().map(|a| a * a).sum();
        if norm2 > 0.0 {
            break v;
        }
    };
    let norm = direction.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = radius * rng.uniform().powf(1.0 / dim as f64) / norm;
    direction.iter_mut().for_each(|a| *a *= scale);
    Ok(direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_uniform;
    use std::collections::HashMap;

    #[test]
    fn single_element_permutation() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..10 {
            assert_eq!(sample_permutation(&mut rng, 1).unwrap().one_based(), vec![1]);
        }
    }

    #[test]
    fn zero_elements_is_an_error() {
        let mut rng = RngStream::new(3, 0);
        assert_eq!(
            sample_permutation(&mut rng, 0),
            Err(SamplerError::EmptyPermutation)
        );
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut rng = RngStream::new(11, 4);
        for _ in 0..200 {
            let mut p = sample_permutation(&mut rng, 4).unwrap().one_based();
            p.sort_unstable();
            assert_eq!(p, vec![1, 2, 3, 4]);
        }
    }

    #[test]
    fn three_element_permutations_are_uniform() {
        let mut rng = RngStream::new(2024, 0);
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        for _ in 0..60_000 {
            *counts
                .entry(sample_permutation(&mut rng, 3).unwrap().one_based())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let observed: Vec<u64> = counts.values().copied().collect();
        let (_, p) = chi_square_uniform(&observed);
        assert!(p >= 0.001, "chi-square p-value {p}");
    }

    #[test]
    fn with_replacement_cases() {
        let mut rng = RngStream::new(5, 1);
        assert_eq!(sample_with_replacement(&mut rng, 1, 5).unwrap(), vec![0; 5]);
        assert!(sample_with_replacement(&mut rng, 3, 0).unwrap().is_empty());
        let draws = sample_with_replacement(&mut rng, 2, 100_000).unwrap();
        let freq = draws.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((freq - 0.5).abs() <= 0.01, "frequency {freq}");
    }

    #[test]
    fn replay_is_identical() {
        let mut a = RngStream::new(99, 7);
        let mut b = RngStream::new(99, 7);
        for _ in 0..50 {
            assert_eq!(
                sample_permutation(&mut a, 9).unwrap(),
                sample_permutation(&mut b, 9).unwrap()
            );
        }
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let xs: Vec<f64> = (0..10_000).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..10_000).map(|_| b.uniform()).collect();
        let corr = crate::stats::pearson(&xs, &ys);
        assert!(corr.abs() < 0.05, "correlation {corr}");
        assert_ne!(xs[..8], ys[..8]);
    }

    #[test]
    fn ball_radius_follows_the_square_law() {
        // In 2-D the radius of a uniform disc point has CDF (r / r_p)^2.
        let mut rng = RngStream::new(8, 3);
        let radius = 0.7;
        let mut radii: Vec<f64> = (0..100_000)
            .map(|_| {
                let p = sample_uniform_ball(&mut rng, 2, radius).unwrap();
                (p[0] * p[0] + p[1] * p[1]).sqrt()
            })
            .collect();
        assert!(radii.iter().all(|&r| r <= radius));
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = crate::stats::ks_statistic_sorted(&radii, |r| (r / radius).powi(2));
        let p = crate::stats::kolmogorov_p_value(d, radii.len());
        assert!(p >= 0.001, "KS p-value {p} (D = {d})");
    }

    #[test]
    fn one_based_round_trip() {
        let p = Permutation::from_one_based(&[2, 1, 3]).unwrap();
        assert_eq!(p.as_slice(), &[1, 0, 2]);
        assert_eq!(p.one_based(), vec![2, 1, 3]);
        assert!(Permutation::from_one_based(&[1, 1]).is_none());
        assert!(Permutation::from_order(vec![0, 2]).is_none());
    }
}
