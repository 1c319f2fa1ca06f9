//! Noise-injection operators.
//!
//! Two families are implemented over `(c,h,w)` feature maps with a single
//! `(h,w)` noise map broadcast across channels:
//!
//! * Euclidean injection: `o = μ + a·ε`, a learnable scalar strength.
//! * Riemannian injection: the four-stage pipeline
//!   channel-sum → semantic normalize → elementwise affine → stabilize,
//!   producing a unit-norm coefficient map σ and `o = rσ⊙μ + rσ⊙ε`.
//!
//! The geometric picture behind the Riemannian form is a representative
//! pair `(μ, rT(μ))`: a center on a feature manifold plus a scaled tangent
//! frame whose ball approximates a geodesic neighbourhood. With an identity
//! frame the construction collapses to the Euclidean case, and the
//! `sample_from_pair`/`eni_forward` pair reproduce each other bit for bit.

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Pipeline ablation switches. The strings are the exact names used in
/// configs and report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-normalization")]
    NoNormalization,
    #[serde(rename = "no-stabilization")]
    NoStabilization,
    #[serde(rename = "no-decomposition")]
    NoDecomposition,
    #[serde(rename = "cnn-sigma")]
    CnnSigma,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoNormalization,
        Variant::NoStabilization,
        Variant::NoDecomposition,
        Variant::CnnSigma,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNormalization => "no-normalization",
            Variant::NoStabilization => "no-stabilization",
            Variant::NoDecomposition => "no-decomposition",
            Variant::CnnSigma => "cnn-sigma",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown injection variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Euclidean injection parameters: one learnable scalar strength.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EniParams {
    pub strength: f64,
}

impl EniParams {
    pub fn new(strength: f64) -> Self {
        EniParams { strength }
    }
}

/// Riemannian injection parameters attached to a `(c,h,w)` feature map.
///
/// `gain` and `bias` are the elementwise affine decomposition, `radius` the
/// learnable scale, `alpha` the stabilization blend in [0,1]. The conceptual
/// content/variance split of the decomposed map is never materialized; the
/// unit-norm σ acts on both μ and ε directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RniParams {
    pub gain: Tensor,
    pub bias: Tensor,
    pub radius: f64,
    pub alpha: f64,
    pub variant: Variant,
    /// 3×3 kernel `(1,c,3,3)`, present only for the cnn-sigma variant.
    pub cnn_kernel: Option<Tensor>,
}

impl RniParams {
    /// Identity-start initialization: gain 1, bias 0, α = 0 and r = √(h·w),
    /// which makes σ uniform and the layer behave as `o = μ + ε`.
    pub fn init(h: usize, w: usize, variant: Variant) -> Self {
        RniParams {
            gain: Tensor::ones([h, w]),
            bias: Tensor::zeros([h, w]),
            radius: ((h * w) as f64).sqrt(),
            alpha: 0.0,
            variant,
            cnn_kernel: None,
        }
    }

    /// Initialization for the cnn-sigma variant; the kernel gets the same
    /// 1/√fan-in scale as any other convolution here.
    pub fn init_cnn(c: usize, h: usize, w: usize, rs: &mut RandomSource) -> Result<Self> {
        let sd = 1.0 / ((9 * c) as f64).sqrt();
        Ok(RniParams {
            cnn_kernel: Some(rs.gaussian_scaled(&[1, c, 3, 3], sd)?),
            ..RniParams::init(h, w, Variant::CnnSigma)
        })
    }

    fn validate(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if self.gain.shape() != [h, w] || self.bias.shape() != [h, w] {
            return Err(Error::shape("rni-params", self.gain.shape(), &[h, w]));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        if self.variant == Variant::CnnSigma {
            match &self.cnn_kernel {
                Some(k) if k.shape() == [1, c, 3, 3] => {}
                Some(k) => return Err(Error::shape("cnn-sigma kernel", k.shape(), &[1, c, 3, 3])),
                None => return Err(Error::invalid("cnn-sigma variant without a kernel")),
            }
        }
        Ok(())
    }
}

fn expect_feature_map(mu: &Tensor) -> Result<(usize, usize, usize)> {
    if mu.rank() != 3 {
        return Err(Error::invalid(format!(
            "expected a (c,h,w) feature map, got {:?}",
            mu.shape()
        )));
    }
    Ok((mu.shape()[0], mu.shape()[1], mu.shape()[2]))
}

fn expect_noise_map(eps: &Tensor, h: usize, w: usize) -> Result<()> {
    if eps.shape() != [h, w] {
        return Err(Error::shape("noise map", eps.shape(), &[h, w]));
    }
    Ok(())
}

/// Euclidean injection `o = μ + a·ε`, with ε broadcast across channels.
pub fn eni_forward(mu: &Tensor, p: &EniParams, eps: &Tensor) -> Result<Tensor> {
    let (_, h, w) = expect_feature_map(mu)?;
    expect_noise_map(eps, h, w)?;
    let mut tape = Tape::new();
    let mu_n = tape.leaf(mu.clone());
    let a_n = tape.scalar(p.strength);
    let eps_n = tape.leaf(eps.clone());
    let out = eni_graph(&mut tape, mu_n, a_n, eps_n)?;
    Ok(tape.value(out).clone())
}

/// Tape form of the Euclidean injection; shared by layers and tests.
pub(crate) fn eni_graph(
    tape: &mut Tape,
    mu: NodeId,
    strength: NodeId,
    eps: NodeId,
) -> Result<NodeId> {
    let shape = tape.value(mu).shape().to_vec();
    let eps_c = tape.broadcast(eps, &shape)?;
    let scaled = tape.scalar_mul(strength, eps_c)?;
    tape.add(mu, scaled)
}

/// Sums a `(c,h,w)` map along its channels into `(h,w)`.
pub fn channel_sum(mu: &Tensor) -> Result<Tensor> {
    expect_feature_map(mu)?;
    mu.sum_axis(0)
}

/// Centers a spatial map and scales it by its largest magnitude so entries
/// land in [−1, 1]. A constant map has no direction to keep and becomes
/// all-zero — a documented degenerate path, not an error, so the downstream
/// stabilization still produces a usable σ.
pub fn semantic_normalize(mu_tilde: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let n = tape.leaf(mu_tilde.clone());
    let s = semantic_normalize_graph(&mut tape, n)?;
    Ok(tape.value(s).clone())
}

const DEGENERATE_SPREAD: f64 = 1e-12;

pub(crate) fn semantic_normalize_graph(tape: &mut Tape, mu_tilde: NodeId) -> Result<NodeId> {
    let m = tape.mean(mu_tilde);
    let neg_m = tape.neg(m);
    let dev = tape.add_scalar(mu_tilde, neg_m)?;
    let spread = tape.max_abs(dev);
    let spread_val = tape.value(spread).data()[0];
    let mean_val = tape.value(m).data()[0];
    if spread_val <= DEGENERATE_SPREAD * (1.0 + mean_val.abs()) {
        let shape = tape.value(mu_tilde).shape().to_vec();
        return Ok(tape.leaf(Tensor::zeros(shape)));
    }
    tape.div_scalar(dev, spread)
}

/// Elementwise affine decomposition of the semantic map.
pub fn affine_decompose(s: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if gain.shape() != s.shape() {
        return Err(Error::shape("affine_decompose", gain.shape(), s.shape()));
    }
    if bias.shape() != s.shape() {
        return Err(Error::shape("affine_decompose", bias.shape(), s.shape()));
    }
    gain.mul(s)?.add(bias)
}

/// Blends the decomposed map toward the all-ones matrix and rescales to
/// unit Frobenius norm, which keeps the injected coefficients from blowing
/// up the layer's condition number.
pub fn stabilize_normalize(s_d: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0,1]")));
    }
    let mut tape = Tape::new();
    let sd_n = tape.leaf(s_d.clone());
    let alpha_n = tape.scalar(alpha);
    let sigma = stabilize_normalize_graph(&mut tape, sd_n, alpha_n)?;
    Ok(tape.value(sigma).clone())
}

pub(crate) fn stabilize_normalize_graph(
    tape: &mut Tape,
    s_d: NodeId,
    alpha: NodeId,
) -> Result<NodeId> {
    let shape = tape.value(s_d).shape().to_vec();
    let ones = tape.leaf(Tensor::ones(shape));
    let one = tape.scalar(1.0);
    let complement = tape.sub(one, alpha)?;
    let scaled_sd = tape.scalar_mul(alpha, s_d)?;
    let scaled_ones = tape.scalar_mul(complement, ones)?;
    let blended = tape.add(scaled_sd, scaled_ones)?;
    let norm = tape.norm2(blended);
    if tape.value(norm).data()[0] == 0.0 {
        return Err(Error::DegenerateStabilizedMap);
    }
    tape.div_scalar(blended, norm)
}

pub(crate) struct RniGraph {
    pub output: NodeId,
    pub sigma: NodeId,
}

pub(crate) struct RniLeaves {
    pub mu: NodeId,
    pub gain: NodeId,
    pub bias: NodeId,
    pub radius: NodeId,
    pub alpha: NodeId,
    pub eps: NodeId,
    pub cnn_kernel: Option<NodeId>,
}

/// Full Riemannian injection graph. Skipped stages pass their input through
/// unchanged; the cnn-sigma variant swaps stages 2–4 for a single 3×3
/// convolution followed by the same unit-norm rescale.
pub(crate) fn rni_graph(tape: &mut Tape, ids: &RniLeaves, variant: Variant) -> Result<RniGraph> {
    let mu_shape = tape.value(ids.mu).shape().to_vec();
    let sigma = match variant {
        Variant::CnnSigma => {
            let kernel = ids
                .cnn_kernel
                .ok_or_else(|| Error::invalid("cnn-sigma variant without a kernel"))?;
            let zero_bias = tape.leaf(Tensor::zeros([1]));
            let conv = tape.conv2d(ids.mu, kernel, zero_bias)?;
            let flat = tape.reshape(conv, &mu_shape[1..])?;
            let norm = tape.norm2(flat);
            if tape.value(norm).data()[0] == 0.0 {
                return Err(Error::DegenerateStabilizedMap);
            }
            tape.div_scalar(flat, norm)?
        }
        _ => {
            let summed = tape.sum_axis(ids.mu, 0)?;
            let s = if variant == Variant::NoNormalization {
                summed
            } else {
                semantic_normalize_graph(tape, summed)?
            };
            let s_d = if variant == Variant::NoDecomposition {
                s
            } else {
                let gained = tape.mul(ids.gain, s)?;
                tape.add(gained, ids.bias)?
            };
            if variant == Variant::NoStabilization {
                s_d
            } else {
                stabilize_normalize_graph(tape, s_d, ids.alpha)?
            }
        }
    };
    let sigma_c = tape.broadcast(sigma, &mu_shape)?;
    let r_sigma = tape.scalar_mul(ids.radius, sigma_c)?;
    let eps_c = tape.broadcast(ids.eps, &mu_shape)?;
    let content = tape.mul(r_sigma, ids.mu)?;
    let noise = tape.mul(r_sigma, eps_c)?;
    let output = tape.add(content, noise)?;
    Ok(RniGraph { output, sigma })
}

/// Riemannian injection `o = rσ⊙μ + rσ⊙ε` over a `(c,h,w)` map.
pub fn rni_forward(mu: &Tensor, p: &RniParams, eps: &Tensor) -> Result<Tensor> {
    let (c, h, w) = expect_feature_map(mu)?;
    expect_noise_map(eps, h, w)?;
    p.validate(c, h, w)?;
    let mut tape = Tape::new();
    let ids = rni_leaves(&mut tape, mu, p, eps);
    let graph = rni_graph(&mut tape, &ids, p.variant)?;
    Ok(tape.value(graph.output).clone())
}

/// The σ coefficient map an injection would apply, exposed for diagnostics
/// and for asserting the unit-norm invariant.
pub fn rni_sigma(mu: &Tensor, p: &RniParams) -> Result<Tensor> {
    let (c, h, w) = expect_feature_map(mu)?;
    p.validate(c, h, w)?;
    let mut tape = Tape::new();
    let eps = Tensor::zeros([h, w]);
    let ids = rni_leaves(&mut tape, mu, p, &eps);
    let graph = rni_graph(&mut tape, &ids, p.variant)?;
    Ok(tape.value(graph.sigma).clone())
}

fn rni_leaves(tape: &mut Tape, mu: &Tensor, p: &RniParams, eps: &Tensor) -> RniLeaves {
    RniLeaves {
        mu: tape.leaf(mu.clone()),
        gain: tape.leaf(p.gain.clone()),
        bias: tape.leaf(p.bias.clone()),
        radius: tape.scalar(p.radius),
        alpha: tape.scalar(p.alpha),
        eps: tape.leaf(eps.clone()),
        cnn_kernel: p.cnn_kernel.as_ref().map(|k| tape.leaf(k.clone())),
    }
}

/// A manifold point with a scaled orthonormal tangent frame: the local
/// first-order model `μ + rT·ε` of a geodesic ball.
///
/// Serializes as `{"mu":[...], "T":[[...],...], "r":...}` with one `T` row
/// per ambient dimension.
#[derive(Debug, Clone)]
pub struct RepresentativePair {
    pub center: Tensor,
    pub frame: Tensor,
    pub radius: f64,
}

#[derive(Serialize, Deserialize)]
struct PairDoc {
    mu: Vec<f64>,
    #[serde(rename = "T")]
    frame_rows: Vec<Vec<f64>>,
    r: f64,
}

impl Serialize for RepresentativePair {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (ambient, d) = (self.frame.shape()[0], self.frame.shape()[1]);
        let frame_rows = (0..ambient)
            .map(|i| (0..d).map(|j| self.frame.at2(i, j)).collect())
            .collect();
        PairDoc {
            mu: self.center.data().to_vec(),
            frame_rows,
            r: self.radius,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RepresentativePair {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let doc = PairDoc::deserialize(deserializer)?;
        let frame = Tensor::matrix(&doc.frame_rows).map_err(D::Error::custom)?;
        RepresentativePair::new(Tensor::vector(doc.mu), frame, doc.r).map_err(D::Error::custom)
    }
}

const FRAME_TOL: f64 = 1e-8;

impl RepresentativePair {
    /// Validates the orthonormal-frame and positive-radius invariants.
    pub fn new(center: Tensor, frame: Tensor, radius: f64) -> Result<Self> {
        if frame.rank() != 2 || frame.shape()[0] != center.len() {
            return Err(Error::shape("representative pair", frame.shape(), center.shape()));
        }
        if radius <= 0.0 {
            return Err(Error::invalid(format!("radius {radius} must be positive")));
        }
        let d = frame.shape()[1];
        let gram = frame.transpose()?.matmul(&frame)?;
        let defect = gram.max_abs_diff(&Tensor::eye(d))?;
        if defect > FRAME_TOL {
            return Err(Error::invalid(format!(
                "tangent frame is not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(RepresentativePair {
            center,
            frame,
            radius,
        })
    }

    pub fn tangent_dim(&self) -> usize {
        self.frame.shape()[1]
    }

    /// `μ + r·T·ε` with ε drawn from the given stream.
    pub fn sample(&self, rs: &mut RandomSource) -> Tensor {
        let eps = rs
            .gaussian(&[self.tangent_dim()])
            .expect("tangent dim > 0 by construction");
        self.sample_with(&eps)
    }

    /// Deterministic variant used by tests that share ε across operators.
    pub fn sample_with(&self, eps: &Tensor) -> Tensor {
        let tv = self.frame.matvec(eps).expect("frame/eps dims agree");
        let data = self
            .center
            .data()
            .iter()
            .zip(tv.data())
            .map(|(m, t)| m + self.radius * t)
            .collect();
        Tensor::new(self.center.shape().to_vec(), data).expect("center shape")
    }
}

/// Gaussian sampling from a representative pair.
pub fn sample_from_pair(p: &RepresentativePair, rs: &mut RandomSource) -> Tensor {
    p.sample(rs)
}

/// Similarity induced by a metric: `e^{-d(x,y)}`, a product-t-norm
/// equivalence whenever `d` satisfies the triangle inequality.
pub fn fuzzy_similarity<D>(d: D, x: &Tensor, y: &Tensor) -> Result<f64>
where
    D: Fn(&Tensor, &Tensor) -> f64,
{
    let dist = d(x, y);
    if dist < 0.0 {
        return Err(Error::invalid(format!(
            "distance {dist} is negative; not a metric"
        )));
    }
    Ok((-dist).exp())
}

/// Outcome of checking reflexivity, symmetry and product-t-norm
/// transitivity of a similarity over sampled points. Violations are
/// report content, not errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TEquivalenceReport {
    pub points: usize,
    pub reflexivity_violations: usize,
    pub symmetry_violations: usize,
    pub transitivity_violations: usize,
    pub triples_checked: usize,
    /// Largest observed `E(x,y)·E(y,z) − E(x,z)`, positive means violation.
    pub worst_transitivity_gap: f64,
}

impl TEquivalenceReport {
    pub fn is_equivalence(&self) -> bool {
        self.reflexivity_violations == 0
            && self.symmetry_violations == 0
            && self.transitivity_violations == 0
    }
}

const EQ_TOL: f64 = 1e-12;

/// Exhaustively checks the three t-equivalence axioms over all ordered
/// triples of the sample.
pub fn verify_t_equivalence<E>(similarity: E, points: &[Tensor]) -> Result<TEquivalenceReport>
where
    E: Fn(&Tensor, &Tensor) -> f64,
{
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid("t-equivalence check needs at least 3 points"));
    }
    let mut table = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            table[i * n + j] = similarity(&points[i], &points[j]);
        }
    }
    let mut report = TEquivalenceReport {
        points: n,
        reflexivity_violations: 0,
        symmetry_violations: 0,
        transitivity_violations: 0,
        triples_checked: 0,
        worst_transitivity_gap: f64::NEG_INFINITY,
    };
    for i in 0..n {
        if (table[i * n + i] - 1.0).abs() > EQ_TOL {
            report.reflexivity_violations += 1;
        }
        for j in 0..n {
            if (table[i * n + j] - table[j * n + i]).abs() > EQ_TOL {
                report.symmetry_violations += 1;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                let lhs = table[i * n + j] * table[j * n + k];
                let rhs = table[i * n + k];
                let gap = lhs - rhs;
                report.worst_transitivity_gap = report.worst_transitivity_gap.max(gap);
                if lhs > rhs * (1.0 + EQ_TOL) + EQ_TOL {
                    report.transitivity_violations += 1;
                }
                report.triples_checked += 1;
            }
        }
    }
    Ok(report)
}
