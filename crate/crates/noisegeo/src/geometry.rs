//! Analytic Riemannian manifolds with closed-form exponential maps.
//!
//! Three constant-curvature/flat families — a circle in the plane, a round
//! 2-sphere in 3-space, and a flat torus (product of two circles) in
//! 4-space — are enough to check the local geometry claims numerically: the
//! exponential map is a diffeomorphism on small balls, its first-order
//! model `μ + Tv` errs only at second order, and greedy covering produces a
//! finite skeleton of representative pairs.

use crate::error::{Error, Result};
use crate::inject::RepresentativePair;
use crate::rng::RandomSource;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Membership tolerance: points are accepted as on-manifold when their
/// defining equations hold to this accuracy.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// Circle of radius R in the plane, round sphere of radius R in 3-space, or
/// flat torus with factor radii (R₁, R₂) in 4-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AnalyticManifold {
    #[serde(rename = "circle")]
    Circle { radius: f64 },
    #[serde(rename = "sphere2")]
    Sphere2 { radius: f64 },
    #[serde(rename = "flat-torus")]
    FlatTorus { r1: f64, r2: f64 },
}

use AnalyticManifold::{Circle, FlatTorus, Sphere2};

/// Wrap an angle difference into [-π, π].
fn wrap_angle(mut d: f64) -> f64 {
    use std::f64::consts::PI;
    d = d.rem_euclid(2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    }
    d
}

impl AnalyticManifold {
    pub fn circle(radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::invalid("circle radius must be positive"));
        }
        Ok(Circle { radius })
    }

    pub fn sphere2(radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::invalid("sphere radius must be positive"));
        }
        Ok(Sphere2 { radius })
    }

    pub fn flat_torus(r1: f64, r2: f64) -> Result<Self> {
        if r1 <= 0.0 || r2 <= 0.0 {
            return Err(Error::invalid("torus radii must be positive"));
        }
        Ok(FlatTorus { r1, r2 })
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Circle { .. } => 2,
            Sphere2 { .. } => 3,
            FlatTorus { .. } => 4,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Circle { .. } => 1,
            Sphere2 { .. } => 2,
            FlatTorus { .. } => 2,
        }
    }

    /// Largest geodesic distance between any two points.
    pub fn diameter(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Circle { radius } => PI * radius,
            Sphere2 { radius } => PI * radius,
            FlatTorus { r1, r2 } => ((PI * r1).powi(2) + (PI * r2).powi(2)).sqrt(),
        }
    }

    /// Residual of the defining equations at a point.
    pub fn membership_residual(&self, p: &Tensor) -> f64 {
        match self {
            Circle { radius } => {
                if p.len() != 2 {
                    return f64::INFINITY;
                }
                (p.norm() - radius).abs()
            }
            Sphere2 { radius } => {
                if p.len() != 3 {
                    return f64::INFINITY;
                }
                (p.norm() - radius).abs()
            }
            FlatTorus { r1, r2 } => {
                if p.len() != 4 {
                    return f64::INFINITY;
                }
                let d = p.data();
                let a = ((d[0] * d[0] + d[1] * d[1]).sqrt() - r1).abs();
                let b = ((d[2] * d[2] + d[3] * d[3]).sqrt() - r2).abs();
                a.max(b)
            }
        }
    }

    pub fn contains(&self, p: &Tensor) -> bool {
        self.membership_residual(p) <= MEMBERSHIP_TOL
    }

    fn require_member(&self, p: &Tensor) -> Result<()> {
        let residual = self.membership_residual(p);
        if residual > MEMBERSHIP_TOL {
            return Err(Error::OffManifold {
                residual,
                tolerance: MEMBERSHIP_TOL,
            });
        }
        Ok(())
    }

    /// Point from intrinsic angle coordinates.
    pub fn point(&self, angles: &[f64]) -> Tensor {
        match self {
            Circle { radius } => Tensor::vector(vec![
                radius * angles[0].cos(),
                radius * angles[0].sin(),
            ]),
            Sphere2 { radius } => {
                // angles = (polar θ from the +z axis, azimuth φ)
                let (theta, phi) = (angles[0], angles[1]);
                Tensor::vector(vec![
                    radius * theta.sin() * phi.cos(),
                    radius * theta.sin() * phi.sin(),
                    radius * theta.cos(),
                ])
            }
            FlatTorus { r1, r2 } => Tensor::vector(vec![
                r1 * angles[0].cos(),
                r1 * angles[0].sin(),
                r2 * angles[1].cos(),
                r2 * angles[1].sin(),
            ]),
        }
    }

    /// Orthonormal basis of the tangent space at `mu`, as an ambient×d
    /// matrix.
    pub fn tangent_frame(&self, mu: &Tensor) -> Result<Tensor> {
        self.require_member(mu)?;
        let d = mu.data();
        match self {
            Circle { radius } => {
                let (c, s) = (d[0] / radius, d[1] / radius);
                Tensor::new([2, 1], vec![-s, c])
            }
            Sphere2 { radius } => {
                let u = [d[0] / radius, d[1] / radius, d[2] / radius];
                // first tangent: normalized cross of u with the axis it is
                // least aligned with, second completes the frame
                let axis = if u[2].abs() < 0.9 {
                    [0.0, 0.0, 1.0]
                } else {
                    [1.0, 0.0, 0.0]
                };
                let mut t1 = [
                    u[1] * axis[2] - u[2] * axis[1],
                    u[2] * axis[0] - u[0] * axis[2],
                    u[0] * axis[1] - u[1] * axis[0],
                ];
                let n1 = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
                for v in &mut t1 {
                    *v /= n1;
                }
                let t2 = [
                    u[1] * t1[2] - u[2] * t1[1],
                    u[2] * t1[0] - u[0] * t1[2],
                    u[0] * t1[1] - u[1] * t1[0],
                ];
                Tensor::new(
                    [3, 2],
                    vec![t1[0], t2[0], t1[1], t2[1], t1[2], t2[2]],
                )
            }
            FlatTorus { r1, r2 } => {
                let (c1, s1) = (d[0] / r1, d[1] / r1);
                let (c2, s2) = (d[2] / r2, d[3] / r2);
                Tensor::new(
                    [4, 2],
                    vec![-s1, 0.0, c1, 0.0, 0.0, -s2, 0.0, c2],
                )
            }
        }
    }

    /// Exact geodesic endpoint for a tangent vector `v` (given in ambient
    /// coordinates) at `mu`. Components of `v` outside the tangent space are
    /// projected away.
    pub fn exp_map(&self, mu: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.require_member(mu)?;
        if v.len() != self.ambient_dim() {
            return Err(Error::shape("exp_map", v.shape(), mu.shape()));
        }
        let d = mu.data();
        match self {
            Circle { radius } => {
                let theta = d[1].atan2(d[0]);
                let t = [-theta.sin(), theta.cos()];
                let s = t[0] * v.data()[0] + t[1] * v.data()[1];
                Ok(self.point(&[theta + s / radius]))
            }
            Sphere2 { radius } => {
                let u = Tensor::vector(vec![d[0] / radius, d[1] / radius, d[2] / radius]);
                // tangential part of v
                let radial: f64 = u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
                let vt = v.sub(&u.scale(radial))?;
                let s = vt.norm();
                if s == 0.0 {
                    return Ok(mu.clone());
                }
                let w = vt.scale(1.0 / s);
                let ang = s / radius;
                Ok(u.scale(ang.cos())
                    .add(&w.scale(ang.sin()))?
                    .scale(*radius))
            }
            FlatTorus { r1, r2 } => {
                let th1 = d[1].atan2(d[0]);
                let th2 = d[3].atan2(d[2]);
                let t1 = [-th1.sin(), th1.cos()];
                let t2 = [-th2.sin(), th2.cos()];
                let a = t1[0] * v.data()[0] + t1[1] * v.data()[1];
                let b = t2[0] * v.data()[2] + t2[1] * v.data()[3];
                Ok(self.point(&[th1 + a / r1, th2 + b / r2]))
            }
        }
    }

    /// Exact geodesic distance between two on-manifold points.
    pub fn geodesic_distance(&self, a: &Tensor, b: &Tensor) -> f64 {
        match self {
            Circle { radius } => {
                let ta = a.data()[1].atan2(a.data()[0]);
                let tb = b.data()[1].atan2(b.data()[0]);
                radius * wrap_angle(tb - ta).abs()
            }
            Sphere2 { radius } => {
                let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
                let c = (dot / (radius * radius)).clamp(-1.0, 1.0);
                radius * c.acos()
            }
            FlatTorus { r1, r2 } => {
                let ta1 = a.data()[1].atan2(a.data()[0]);
                let tb1 = b.data()[1].atan2(b.data()[0]);
                let ta2 = a.data()[3].atan2(a.data()[2]);
                let tb2 = b.data()[3].atan2(b.data()[2]);
                let d1 = r1 * wrap_angle(tb1 - ta1);
                let d2 = r2 * wrap_angle(tb2 - ta2);
                (d1 * d1 + d2 * d2).sqrt()
            }
        }
    }

    /// Uniform random point.
    pub fn sample(&self, rs: &mut RandomSource) -> Tensor {
        use std::f64::consts::PI;
        match self {
            Circle { .. } => self.point(&[2.0 * PI * rs.uniform_co()]),
            Sphere2 { radius } => {
                // normalized Gaussian is uniform on the sphere
                loop {
                    let g = [rs.normal(), rs.normal(), rs.normal()];
                    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    if n > 1e-12 {
                        return Tensor::vector(vec![
                            radius * g[0] / n,
                            radius * g[1] / n,
                            radius * g[2] / n,
                        ]);
                    }
                }
            }
            FlatTorus { .. } => {
                self.point(&[2.0 * PI * rs.uniform_co(), 2.0 * PI * rs.uniform_co()])
            }
        }
    }

    /// Deterministic low-discrepancy sample of `n` points: golden-angle for
    /// the circle factors, Fibonacci lattice for the sphere.
    pub fn low_discrepancy_sample(&self, n: usize) -> Vec<Tensor> {
        use std::f64::consts::PI;
        const PHI: f64 = 1.618_033_988_749_894_8;
        match self {
            Circle { .. } => (0..n)
                .map(|i| self.point(&[2.0 * PI * ((i as f64 * PHI) % 1.0)]))
                .collect(),
            Sphere2 { .. } => (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let theta = z.acos();
                    let phi = 2.0 * PI * ((i as f64 * PHI) % 1.0);
                    self.point(&[theta, phi])
                })
                .collect(),
            FlatTorus { .. } => {
                // 2-D Kronecker sequence from the plastic constant
                const P: f64 = 1.324_717_957_244_746;
                let (a1, a2) = (1.0 / P, 1.0 / (P * P));
                (0..n)
                    .map(|i| {
                        self.point(&[
                            2.0 * PI * ((i as f64 * a1) % 1.0),
                            2.0 * PI * ((i as f64 * a2) % 1.0),
                        ])
                    })
                    .collect()
            }
        }
    }
}

/// First-order model of the exponential map: `μ + T·v`.
pub fn first_order_approx(mu: &Tensor, frame: &Tensor, v: &Tensor) -> Result<Tensor> {
    if frame.rank() != 2 || frame.shape()[1] != v.len() || frame.shape()[0] != mu.len() {
        return Err(Error::shape("first_order_approx", frame.shape(), v.shape()));
    }
    mu.add(&frame.matvec(v)?)
}

/// Unit directions for the sup grid: ±1 in one dimension, equally spaced
/// angles in two.
fn direction_grid(dim: usize, n: usize) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => unreachable!("analytic manifolds here have intrinsic dim 1 or 2"),
    }
}

pub const PROFILE_DIRECTIONS: usize = 64;
pub const PROFILE_MAGNITUDES: usize = 16;

/// Sup over a deterministic 64-direction × 16-magnitude grid of the ambient
/// gap between the exact exponential map and its first-order model, for each
/// requested radius.
pub fn approx_error_profile(
    manifold: &AnalyticManifold,
    mu: &Tensor,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if radii.is_empty() || radii.iter().any(|r| *r <= 0.0) {
        return Err(Error::invalid("radii must be positive"));
    }
    if radii.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::invalid("radii must be strictly descending"));
    }
    let frame = manifold.tangent_frame(mu)?;
    let d = manifold.intrinsic_dim();
    let dirs = direction_grid(d, PROFILE_DIRECTIONS);
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut sup = 0.0f64;
        for dir in &dirs {
            for k in 1..=PROFILE_MAGNITUDES {
                let mag = r * k as f64 / PROFILE_MAGNITUDES as f64;
                let v_int = Tensor::vector(dir.iter().map(|c| c * mag).collect());
                let v_amb = frame.matvec(&v_int)?;
                let exact = manifold.exp_map(mu, &v_amb)?;
                let linear = first_order_approx(mu, &frame, &v_int)?;
                sup = sup.max(exact.sub(&linear)?.norm());
            }
        }
        out.push((r, sup));
    }
    Ok(out)
}

/// Finite covering of a manifold at radius `r`: greedy farthest-point
/// centers with their tangent frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonSet {
    pub manifold: AnalyticManifold,
    pub radius: f64,
    pub pairs: Vec<RepresentativePair>,
}

pub const SKELETON_BUILD_SAMPLE: usize = 10_000;

/// Greedy farthest-point covering over a dense deterministic sample: keep
/// adding the sample point farthest from the chosen centers until no point
/// is farther than `r`. Every selected center was farther than `r` from its
/// predecessors, so centers are pairwise `> r` apart (a packing), and the
/// build sample ends fully covered.
pub fn build_skeleton(
    manifold: &AnalyticManifold,
    r: f64,
    rs: &mut RandomSource,
) -> Result<SkeletonSet> {
    if r <= 0.0 {
        return Err(Error::invalid("skeleton radius must be positive"));
    }
    let sample = manifold.low_discrepancy_sample(SKELETON_BUILD_SAMPLE);
    let start = (rs.next_u64() % sample.len() as u64) as usize;

    let mut centers: Vec<usize> = vec![start];
    let mut dist: Vec<f64> = sample
        .iter()
        .map(|p| manifold.geodesic_distance(p, &sample[start]))
        .collect();

    loop {
        let (far_idx, far_dist) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| {
                if d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            });
        if far_dist <= r {
            break;
        }
        centers.push(far_idx);
        for (i, p) in sample.iter().enumerate() {
            let d = manifold.geodesic_distance(p, &sample[far_idx]);
            if d < dist[i] {
                dist[i] = d;
            }
        }
    }

    let pairs = centers
        .iter()
        .map(|&i| {
            let mu = sample[i].clone();
            let frame = manifold.tangent_frame(&mu)?;
            RepresentativePair::new(mu, frame, r)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SkeletonSet {
        manifold: *manifold,
        radius: r,
        pairs,
    })
}

/// Fresh-sample audit of a skeleton.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub samples: usize,
    /// Fraction of fresh samples within geodesic `radius` of some center.
    pub covered_fraction: f64,
    /// Worst ambient distance between a fresh sample and its first-order
    /// reconstruction through the nearest pair.
    pub worst_reconstruction_error: f64,
}

/// Draws `n` fresh manifold points and checks them against the covering;
/// reconstruction projects each point onto the nearest pair's tangent plane.
pub fn coverage_check(
    skeleton: &SkeletonSet,
    n: usize,
    rs: &mut RandomSource,
) -> Result<CoverageReport> {
    let manifold = &skeleton.manifold;
    let mut covered = 0usize;
    let mut worst = 0.0f64;
    if skeleton.pairs.is_empty() {
        return Ok(CoverageReport {
            samples: n,
            covered_fraction: 0.0,
            worst_reconstruction_error: f64::INFINITY,
        });
    }
    for _ in 0..n {
        let p = manifold.sample(rs);
        let mut best = f64::INFINITY;
        let mut nearest = &skeleton.pairs[0];
        for pair in &skeleton.pairs {
            let d = manifold.geodesic_distance(&p, &pair.center);
            if d < best {
                best = d;
                nearest = pair;
            }
        }
        if best <= skeleton.radius {
            covered += 1;
        }
        // project the offset onto the tangent plane and reconstruct
        let offset = p.sub(&nearest.center)?;
        let coords = nearest.frame.transpose()?.matvec(&offset)?;
        let rebuilt = first_order_approx(&nearest.center, &nearest.frame, &coords)?;
        worst = worst.max(rebuilt.sub(&p)?.norm());
    }
    Ok(CoverageReport {
        samples: n,
        covered_fraction: if n == 0 { 1.0 } else { covered as f64 / n as f64 },
        worst_reconstruction_error: worst,
    })
}
