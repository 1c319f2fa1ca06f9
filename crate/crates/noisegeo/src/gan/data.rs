//! Toy data manifolds with known intrinsic dimension.

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Sampling spec for a synthetic dataset. Each family has a known intrinsic
/// dimension strictly below (or equal to) its ambient dimension, which is
/// what the dimension-trap experiments lean on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DatasetSpec {
    /// Uniform-by-area ring between two radii in the plane; intrinsic dim 2.
    #[serde(rename = "annulus2d")]
    Annulus2d { r_inner: f64, r_outer: f64 },
    /// Mixture of `modes` isotropic Gaussians centered on the unit circle.
    #[serde(rename = "gaussian-ring")]
    GaussianRing { modes: usize, mode_std: f64 },
    /// Uniform unit d-sphere in the first d+1 coordinates of m-space, plus
    /// isotropic ambient noise.
    #[serde(rename = "embedded-sphere")]
    EmbeddedSphere {
        intrinsic_dim: usize,
        ambient_dim: usize,
        noise_std: f64,
    },
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DatasetSpec::Annulus2d { r_inner, r_outer } => {
                if !(0.0 <= r_inner && r_inner < r_outer) {
                    return Err(Error::invalid(format!(
                        "annulus needs 0 <= r_inner < r_outer, got ({r_inner}, {r_outer})"
                    )));
                }
            }
            DatasetSpec::GaussianRing { modes, mode_std } => {
                if modes < 2 {
                    return Err(Error::invalid("gaussian ring needs at least 2 modes"));
                }
                if mode_std <= 0.0 {
                    return Err(Error::invalid("mode std must be positive"));
                }
            }
            DatasetSpec::EmbeddedSphere {
                intrinsic_dim,
                ambient_dim,
                noise_std,
            } => {
                if intrinsic_dim == 0 || intrinsic_dim >= ambient_dim {
                    return Err(Error::invalid(format!(
                        "embedded sphere needs 0 < d < m, got d={intrinsic_dim}, m={ambient_dim}"
                    )));
                }
                if noise_std < 0.0 {
                    return Err(Error::invalid("noise std must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        match *self {
            DatasetSpec::Annulus2d { .. } | DatasetSpec::GaussianRing { .. } => 2,
            DatasetSpec::EmbeddedSphere { ambient_dim, .. } => ambient_dim,
        }
    }

    /// Mode centers of the Gaussian ring (unit circle).
    pub fn mode_centers(&self) -> Vec<[f64; 2]> {
        match *self {
            DatasetSpec::GaussianRing { modes, .. } => (0..modes)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / modes as f64;
                    [a.cos(), a.sin()]
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Draws `n` i.i.d. samples as an (n × ambient) matrix.
pub fn sample_dataset(spec: &DatasetSpec, n: usize, rs: &mut RandomSource) -> Result<Tensor> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let dim = spec.ambient_dim();
    let mut data = Vec::with_capacity(n * dim);
    match *spec {
        DatasetSpec::Annulus2d { r_inner, r_outer } => {
            for _ in 0..n {
                let u = rs.uniform_co();
                let r = (r_inner * r_inner + u * (r_outer * r_outer - r_inner * r_inner)).sqrt();
                let a = 2.0 * PI * rs.uniform_co();
                data.push(r * a.cos());
                data.push(r * a.sin());
            }
        }
        DatasetSpec::GaussianRing { modes, mode_std } => {
            let centers = spec.mode_centers();
            for _ in 0..n {
                let j = (rs.next_u64() % modes as u64) as usize;
                data.push(centers[j][0] + mode_std * rs.normal());
                data.push(centers[j][1] + mode_std * rs.normal());
            }
        }
        DatasetSpec::EmbeddedSphere {
            intrinsic_dim,
            ambient_dim,
            noise_std,
        } => {
            for _ in 0..n {
                // uniform on S^d: normalized Gaussian in d+1 coordinates
                let mut g = vec![0.0; intrinsic_dim + 1];
                loop {
                    for v in &mut g {
                        *v = rs.normal();
                    }
                    let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        for v in &mut g {
                            *v /= norm;
                        }
                        break;
                    }
                }
                for d in 0..ambient_dim {
                    let base = if d < g.len() { g[d] } else { 0.0 };
                    let noise = if noise_std > 0.0 {
                        noise_std * rs.normal()
                    } else {
                        0.0
                    };
                    data.push(base + noise);
                }
            }
        }
    }
    Tensor::new([n, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annulus_radii_stay_in_band() {
        let spec = DatasetSpec::Annulus2d { r_inner: 1.0, r_outer: 2.0 };
        let mut rs = RandomSource::new(1);
        let pts = sample_dataset(&spec, 5000, &mut rs).unwrap();
        for i in 0..5000 {
            let r = (pts.at2(i, 0).powi(2) + pts.at2(i, 1).powi(2)).sqrt();
            assert!((1.0..=2.0).contains(&r), "radius {r}");
        }
    }

    #[test]
    fn annulus_is_uniform_by_area() {
        // split the band at the equal-area radius; halves should balance
        let spec = DatasetSpec::Annulus2d { r_inner: 1.0, r_outer: 2.0 };
        let mut rs = RandomSource::new(2);
        let n = 100_000;
        let pts = sample_dataset(&spec, n, &mut rs).unwrap();
        let r_split = (2.5f64).sqrt(); // (1 + 4)/2
        let inner = (0..n)
            .filter(|&i| (pts.at2(i, 0).powi(2) + pts.at2(i, 1).powi(2)).sqrt() < r_split)
            .count();
        let frac = inner as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "inner fraction {frac}");
    }

    #[test]
    fn noiseless_sphere_lies_on_unit_sphere_in_fixed_subspace() {
        let spec = DatasetSpec::EmbeddedSphere {
            intrinsic_dim: 2,
            ambient_dim: 5,
            noise_std: 0.0,
        };
        let mut rs = RandomSource::new(3);
        let pts = sample_dataset(&spec, 2000, &mut rs).unwrap();
        for i in 0..2000 {
            let norm: f64 = (0..5).map(|d| pts.at2(i, d).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert_eq!(pts.at2(i, 3), 0.0);
            assert_eq!(pts.at2(i, 4), 0.0);
        }
        // ambient PCA sees exactly the 3 spanning coordinates
        let strengths = crate::linalg::pca_strengths(&pts).unwrap();
        let max = strengths[0];
        let count = strengths.iter().filter(|&&v| v > 0.01 * max).count();
        assert_eq!(count, 3);
    }

    #[test]
    fn ring_samples_cluster_within_four_sigma() {
        let spec = DatasetSpec::GaussianRing { modes: 8, mode_std: 0.05 };
        let mut rs = RandomSource::new(4);
        let n = 20_000;
        let pts = sample_dataset(&spec, n, &mut rs).unwrap();
        let centers = spec.mode_centers();
        let close = (0..n)
            .filter(|&i| {
                centers.iter().any(|c| {
                    let dx = pts.at2(i, 0) - c[0];
                    let dy = pts.at2(i, 1) - c[1];
                    (dx * dx + dy * dy).sqrt() <= 4.0 * 0.05
                })
            })
            .count();
        assert!(close as f64 / n as f64 >= 0.99);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(sample_dataset(
            &DatasetSpec::Annulus2d { r_inner: 2.0, r_outer: 1.0 },
            10,
            &mut RandomSource::new(0)
        )
        .is_err());
        assert!(DatasetSpec::GaussianRing { modes: 1, mode_std: 0.1 }.validate().is_err());
        assert!(DatasetSpec::EmbeddedSphere {
            intrinsic_dim: 5,
            ambient_dim: 5,
            noise_std: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = DatasetSpec::Annulus2d { r_inner: 1.0, r_outer: 2.0 };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"annulus2d\""));
        let back: DatasetSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
