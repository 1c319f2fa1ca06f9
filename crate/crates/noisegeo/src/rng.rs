//! Deterministic, splittable random streams.
//!
//! A counter-based construction: every draw mixes `(key, counter)` through a
//! 64-bit finalizer, so a stream is a pure function of its key and position.
//! Child streams fold a label into the key, which makes them independent of
//! both the parent's position and of each other — parallel workers can each
//! take `child(i)` and produce the same numbers regardless of scheduling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; full avalanche on 64 bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold(key: u64, label: u64) -> u64 {
    mix(key ^ mix(label))
}

/// Seeded stream of uniforms and Gaussians.
///
/// Same `(seed, label path)` always yields an identical sequence. The second
/// Box–Muller variate is cached, so Gaussian draws come in deterministic
/// pairs.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    key: u64,
    counter: u64,
    cached_normal: Option<f64>,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            key: fold(GOLDEN, seed),
            counter: 0,
            cached_normal: None,
        }
    }

    /// The root seed this stream (or its ancestors) was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream; children with distinct labels
    /// never overlap and do not depend on how far the parent has advanced.
    pub fn child(&self, label: u64) -> RandomSource {
        RandomSource {
            seed: self.seed,
            key: fold(self.key, label),
            counter: 0,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = fold(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in the half-open interval (0, 1]; never zero, so it is safe
    /// under a logarithm.
    pub fn uniform(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [0, 1).
    pub fn uniform_co(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box–Muller; unclipped tails.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform_co();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Tensor of i.i.d. standard normals.
    pub fn gaussian(&mut self, shape: &[usize]) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().product::<usize>() == 0 {
            return Err(Error::invalid(format!("zero-sized shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.normal()).collect();
        Tensor::new(shape.to_vec(), data)
    }

    /// Tensor with entries scaled to `sd` standard deviation.
    pub fn gaussian_scaled(&mut self, shape: &[usize], sd: f64) -> Result<Tensor> {
        Ok(self.gaussian(shape)?.scale(sd))
    }
}

/// Convenience free function matching the operation vocabulary used across
/// the crate: draw a standard-normal tensor from `rs`.
pub fn gaussian(rs: &mut RandomSource, shape: &[usize]) -> Result<Tensor> {
    rs.gaussian(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_and_label_replays_bitwise() {
        let mut a = RandomSource::new(123).child(7);
        let mut b = RandomSource::new(123).child(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn children_are_order_independent() {
        let root = RandomSource::new(9);
        let mut advanced = root.clone();
        for _ in 0..50 {
            advanced.normal();
        }
        let mut c1 = root.child(3);
        let mut c2 = advanced.child(3);
        for _ in 0..20 {
            assert_eq!(c1.next_u64(), c2.next_u64());
        }
    }

    #[test]
    fn distinct_labels_decorrelate() {
        let root = RandomSource::new(1);
        let mut c1 = root.child(0);
        let mut c2 = root.child(1);
        let n = 4096;
        let mut dot = 0.0;
        for _ in 0..n {
            dot += c1.normal() * c2.normal();
        }
        // correlation of two independent N(0,1) streams: |mean| ~ 1/sqrt(n)
        assert!((dot / n as f64).abs() < 0.08, "dot/n = {}", dot / n as f64);
    }

    #[test]
    fn gaussian_shape_and_errors() {
        let mut rs = RandomSource::new(0);
        let t = rs.gaussian(&[2, 3]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert!(rs.gaussian(&[]).is_err());
        assert!(rs.gaussian(&[3, 0]).is_err());
    }

    #[test]
    fn gaussian_mean_obeys_law_of_large_numbers() {
        let mut rs = RandomSource::new(2024);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = rs.normal();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    // Golden regression: pins the exact first draw of the (42, 0) stream so
    // that any change to the generator is caught loudly.
    #[test]
    fn first_sample_of_seed42_label0_is_pinned() {
        let mut rs = RandomSource::new(42).child(0);
        let first = rs.normal();
        assert_eq!(first.to_bits(), PINNED_SEED42_LABEL0_FIRST.to_bits());
    }

    // Recorded at first implementation; bits 0xbfcd52566e6682b4.
    const PINNED_SEED42_LABEL0_FIRST: f64 = -0.2290752448143586;
}
