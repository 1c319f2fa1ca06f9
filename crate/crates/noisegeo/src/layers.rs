//! Differentiable layer stacks.
//!
//! A `Network` is an ordered list of layers with a parameter registry keyed
//! by `(layer index, parameter name)`. Forward passes run on the tape, so
//! the same code path serves plain evaluation, per-depth activation capture,
//! training, and Jacobian assembly.

use crate::error::{Error, Result};
use crate::inject::{self, RniParams, Variant};
use crate::rng::RandomSource;
use crate::tape::{self, NodeId, Tape};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Elementwise activation with slope 0.2 on the negative branch; the
/// gradient at exactly zero takes the left slope.
pub fn leaky_relu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { tape::LEAKY_SLOPE * v })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Injection attachment for an `Inject` layer.
#[derive(Debug, Clone)]
pub enum Injection {
    /// Euclidean: scalar strength, `o = μ + a·ε`.
    Eni { strength: f64 },
    /// Riemannian pipeline. `alpha_raw` is the unconstrained trainable
    /// value; the effective blend is `sigmoid(alpha_raw)` so optimization
    /// can never leave [0,1].
    Rni {
        gain: Tensor,
        bias: Tensor,
        radius: f64,
        alpha_raw: f64,
        variant: Variant,
        cnn_kernel: Option<Tensor>,
    },
}

/// Raw value that squashes to an effective alpha of ~2.5e-3, close enough
/// to the identity-start behaviour that σ begins essentially uniform.
pub const ALPHA_RAW_INIT: f64 = -6.0;

fn squash_alpha(raw: f64) -> f64 {
    if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    }
}

impl Injection {
    /// Riemannian injection with the warm-start initialization.
    pub fn rni(h: usize, w: usize, variant: Variant) -> Self {
        let base = RniParams::init(h, w, variant);
        Injection::Rni {
            gain: base.gain,
            bias: base.bias,
            radius: base.radius,
            alpha_raw: ALPHA_RAW_INIT,
            variant,
            cnn_kernel: None,
        }
    }

    pub fn rni_cnn(c: usize, h: usize, w: usize, rs: &mut RandomSource) -> Result<Self> {
        let base = RniParams::init_cnn(c, h, w, rs)?;
        Ok(Injection::Rni {
            gain: base.gain,
            bias: base.bias,
            radius: base.radius,
            alpha_raw: ALPHA_RAW_INIT,
            variant: Variant::CnnSigma,
            cnn_kernel: base.cnn_kernel,
        })
    }

    /// Materializes the operator-level parameter view (α squashed to [0,1]).
    pub fn rni_params(&self) -> Option<RniParams> {
        match self {
            Injection::Rni {
                gain,
                bias,
                radius,
                alpha_raw,
                variant,
                cnn_kernel,
            } => Some(RniParams {
                gain: gain.clone(),
                bias: bias.clone(),
                radius: *radius,
                alpha: squash_alpha(*alpha_raw),
                variant: *variant,
                cnn_kernel: cnn_kernel.clone(),
            }),
            Injection::Eni { .. } => None,
        }
    }
}

/// One layer of a stack.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense { weight: Tensor, bias: Tensor },
    LeakyRelu,
    Reshape { target: Vec<usize> },
    Conv2d { weight: Tensor, bias: Tensor },
    Upsample2x,
    Inject(Injection),
}

impl Layer {
    /// Dense layer with 1/√fan-in weights and zero bias.
    pub fn dense_init(out_dim: usize, in_dim: usize, rs: &mut RandomSource) -> Result<Layer> {
        let sd = 1.0 / (in_dim as f64).sqrt();
        Ok(Layer::Dense {
            weight: rs.gaussian_scaled(&[out_dim, in_dim], sd)?,
            bias: Tensor::zeros([out_dim]),
        })
    }

    /// 3×3 convolution with 1/√fan-in weights and zero bias.
    pub fn conv2d_init(out_c: usize, in_c: usize, rs: &mut RandomSource) -> Result<Layer> {
        let sd = 1.0 / ((9 * in_c) as f64).sqrt();
        Ok(Layer::Conv2d {
            weight: rs.gaussian_scaled(&[out_c, in_c, 3, 3], sd)?,
            bias: Tensor::zeros([out_c]),
        })
    }
}

/// Evaluation mode: deterministic pins every injected ε to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Deterministic,
    Stochastic,
}

/// Key into the parameter registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamKey {
    pub layer: usize,
    pub name: &'static str,
}

/// Tape leaves for every registered parameter, in registry order.
pub struct BoundParams {
    pub entries: Vec<(ParamKey, NodeId)>,
}

impl BoundParams {
    pub fn node(&self, layer: usize, name: &str) -> Option<NodeId> {
        self.entries
            .iter()
            .find(|(k, _)| k.layer == layer && k.name == name)
            .map(|(_, id)| *id)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.entries.iter().map(|(_, id)| *id).collect()
    }
}

/// Ordered layer stack plus its parameter registry.
#[derive(Debug, Clone, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn empty() -> Self {
        Network { layers: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Registry of learnable tensors, in a fixed traversal order.
    pub fn param_keys(&self) -> Vec<ParamKey> {
        let mut keys = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { .. } | Layer::Conv2d { .. } => {
                    keys.push(ParamKey { layer: idx, name: "weight" });
                    keys.push(ParamKey { layer: idx, name: "bias" });
                }
                Layer::Inject(Injection::Eni { .. }) => {
                    keys.push(ParamKey { layer: idx, name: "strength" });
                }
                Layer::Inject(Injection::Rni { cnn_kernel, .. }) => {
                    keys.push(ParamKey { layer: idx, name: "gain" });
                    keys.push(ParamKey { layer: idx, name: "bias" });
                    keys.push(ParamKey { layer: idx, name: "radius" });
                    keys.push(ParamKey { layer: idx, name: "alpha_raw" });
                    if cnn_kernel.is_some() {
                        keys.push(ParamKey { layer: idx, name: "cnn_kernel" });
                    }
                }
                _ => {}
            }
        }
        keys
    }

    /// Copy of the tensor behind a registry key; scalars surface as
    /// 1-element tensors.
    pub fn param(&self, key: ParamKey) -> Result<Tensor> {
        let layer = self
            .layers
            .get(key.layer)
            .ok_or_else(|| Error::invalid(format!("no layer {}", key.layer)))?;
        let missing = || Error::invalid(format!("layer {} has no parameter `{}`", key.layer, key.name));
        match (layer, key.name) {
            (Layer::Dense { weight, .. }, "weight") => Ok(weight.clone()),
            (Layer::Dense { bias, .. }, "bias") => Ok(bias.clone()),
            (Layer::Conv2d { weight, .. }, "weight") => Ok(weight.clone()),
            (Layer::Conv2d { bias, .. }, "bias") => Ok(bias.clone()),
            (Layer::Inject(Injection::Eni { strength }), "strength") => {
                Ok(Tensor::scalar(*strength))
            }
            (Layer::Inject(Injection::Rni { gain, .. }), "gain") => Ok(gain.clone()),
            (Layer::Inject(Injection::Rni { bias, .. }), "bias") => Ok(bias.clone()),
            (Layer::Inject(Injection::Rni { radius, .. }), "radius") => {
                Ok(Tensor::scalar(*radius))
            }
            (Layer::Inject(Injection::Rni { alpha_raw, .. }), "alpha_raw") => {
                Ok(Tensor::scalar(*alpha_raw))
            }
            (Layer::Inject(Injection::Rni { cnn_kernel, .. }), "cnn_kernel") => {
                cnn_kernel.clone().ok_or_else(missing)
            }
            _ => Err(missing()),
        }
    }

    pub fn set_param(&mut self, key: ParamKey, value: Tensor) -> Result<()> {
        let layer = self
            .layers
            .get_mut(key.layer)
            .ok_or_else(|| Error::invalid(format!("no layer {}", key.layer)))?;
        let missing = || Error::invalid(format!("layer {} has no parameter `{}`", key.layer, key.name));
        match (layer, key.name) {
            (Layer::Dense { weight, .. }, "weight") => *weight = value,
            (Layer::Dense { bias, .. }, "bias") => *bias = value,
            (Layer::Conv2d { weight, .. }, "weight") => *weight = value,
            (Layer::Conv2d { bias, .. }, "bias") => *bias = value,
            (Layer::Inject(Injection::Eni { strength }), "strength") => {
                *strength = value.item()?
            }
            (Layer::Inject(Injection::Rni { gain, .. }), "gain") => *gain = value,
            (Layer::Inject(Injection::Rni { bias, .. }), "bias") => *bias = value,
            (Layer::Inject(Injection::Rni { radius, .. }), "radius") => {
                *radius = value.item()?
            }
            (Layer::Inject(Injection::Rni { alpha_raw, .. }), "alpha_raw") => {
                *alpha_raw = value.item()?
            }
            (Layer::Inject(Injection::Rni { cnn_kernel, .. }), "cnn_kernel") => {
                *cnn_kernel = Some(value)
            }
            _ => return Err(missing()),
        }
        Ok(())
    }

    /// Creates one tape leaf per registered parameter. Binding once and
    /// reusing the leaves across many forward passes is what lets a whole
    /// batch share (and accumulate gradients into) the same parameters.
    pub fn bind_params(&self, tape: &mut Tape) -> BoundParams {
        let entries = self
            .param_keys()
            .into_iter()
            .map(|key| {
                let value = self.param(key).expect("registry keys are valid");
                (key, tape.leaf(value))
            })
            .collect();
        BoundParams { entries }
    }

    /// Forward pass against bound parameter leaves. Returns the output node
    /// and one node per layer (the per-depth activations).
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        input: NodeId,
        mode: Mode,
        mut rs: Option<&mut RandomSource>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let mut current = input;
        let mut activations = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let wrap = |e: Error| Error::Layer { index: idx, message: e.to_string() };
            current = match layer {
                Layer::Dense { .. } => {
                    let w = params.node(idx, "weight").expect("bound");
                    let b = params.node(idx, "bias").expect("bound");
                    dense_graph(tape, w, b, current).map_err(wrap)?
                }
                Layer::LeakyRelu => tape.leaky_relu(current),
                Layer::Reshape { target } => tape.reshape(current, target).map_err(wrap)?,
                Layer::Conv2d { .. } => {
                    let w = params.node(idx, "weight").expect("bound");
                    let b = params.node(idx, "bias").expect("bound");
                    tape.conv2d(current, w, b).map_err(wrap)?
                }
                Layer::Upsample2x => tape.upsample2x(current).map_err(wrap)?,
                Layer::Inject(inj) => {
                    inject_graph(tape, params, idx, inj, current, mode, rs.as_deref_mut())
                        .map_err(wrap)?
                }
            };
            activations.push(current);
        }
        Ok((current, activations))
    }

    /// Spec-level forward: output plus per-layer activations. Deterministic
    /// mode pins every injected ε to zero; stochastic mode draws ε from `rs`
    /// in layer order.
    pub fn forward(
        &self,
        input: &Tensor,
        rs: Option<&mut RandomSource>,
        mode: Mode,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        if mode == Mode::Stochastic && rs.is_none() {
            return Err(Error::invalid("stochastic mode requires a random source"));
        }
        let mut tape = Tape::new();
        let params = self.bind_params(&mut tape);
        let input_node = tape.leaf(input.clone());
        let (out, acts) = self.forward_bound(&mut tape, &params, input_node, mode, rs)?;
        let values = acts.iter().map(|id| tape.value(*id).clone()).collect();
        Ok((tape.value(out).clone(), values))
    }

    /// Deterministic output only.
    pub fn output(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, None, Mode::Deterministic)?.0)
    }

    /// Activation at depth `k` of the deterministic forward pass.
    pub fn forward_at(&self, input: &Tensor, k: usize) -> Result<Tensor> {
        if k >= self.layers.len() {
            return Err(Error::invalid(format!(
                "depth {k} out of range for a {}-layer network",
                self.layers.len()
            )));
        }
        let (_, acts) = self.forward(input, None, Mode::Deterministic)?;
        Ok(acts[k].clone())
    }
}

/// Dense layers accept flat vectors; the matrix product runs on a column
/// view so the tape only ever sees rank-2 matmuls.
fn dense_graph(tape: &mut Tape, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
    let in_dim = tape.value(x).len();
    if tape.value(x).rank() != 1 {
        return Err(Error::shape("dense", tape.value(x).shape(), &[in_dim]));
    }
    let col = tape.reshape(x, &[in_dim, 1])?;
    let prod = tape.matmul(w, col)?;
    let out_dim = tape.value(prod).shape()[0];
    let flat = tape.reshape(prod, &[out_dim])?;
    tape.add(flat, b)
}

fn inject_graph(
    tape: &mut Tape,
    params: &BoundParams,
    idx: usize,
    inj: &Injection,
    input: NodeId,
    mode: Mode,
    rs: Option<&mut RandomSource>,
) -> Result<NodeId> {
    // flat vectors pass through injection as (c,1,1) maps
    let original_shape = tape.value(input).shape().to_vec();
    let (mu, was_flat) = if original_shape.len() == 1 {
        (tape.reshape(input, &[original_shape[0], 1, 1])?, true)
    } else if original_shape.len() == 3 {
        (input, false)
    } else {
        return Err(Error::invalid(format!(
            "inject layer expects a vector or (c,h,w) map, got {original_shape:?}"
        )));
    };
    let mu_shape = tape.value(mu).shape().to_vec();
    let (h, w) = (mu_shape[1], mu_shape[2]);
    let eps_value = match (mode, rs) {
        (Mode::Deterministic, _) => Tensor::zeros([h, w]),
        (Mode::Stochastic, Some(rs)) => rs.gaussian(&[h, w])?,
        (Mode::Stochastic, None) => {
            return Err(Error::invalid("stochastic mode requires a random source"))
        }
    };
    let eps = tape.leaf(eps_value);

    let out = match inj {
        Injection::Eni { .. } => {
            let strength = params.node(idx, "strength").expect("bound");
            inject::eni_graph(tape, mu, strength, eps)?
        }
        Injection::Rni { variant, .. } => {
            let alpha_raw = params.node(idx, "alpha_raw").expect("bound");
            let alpha = tape.sigmoid(alpha_raw);
            let leaves = inject::RniLeaves {
                mu,
                gain: params.node(idx, "gain").expect("bound"),
                bias: params.node(idx, "bias").expect("bound"),
                radius: params.node(idx, "radius").expect("bound"),
                alpha,
                eps,
                cnn_kernel: params.node(idx, "cnn_kernel"),
            };
            inject::rni_graph(tape, &leaves, *variant)?.output
        }
    };
    if was_flat {
        tape.reshape(out, &original_shape)
    } else {
        Ok(out)
    }
}

// ── JSON document ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    kind: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    layers: Vec<LayerDoc>,
}

impl Network {
    pub fn to_json(&self) -> String {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Dense { weight, bias } => {
                    let mut data = weight.data().to_vec();
                    data.extend_from_slice(bias.data());
                    LayerDoc {
                        kind: "dense".into(),
                        shape: weight.shape().to_vec(),
                        data,
                        variant: None,
                    }
                }
                Layer::LeakyRelu => LayerDoc {
                    kind: "leaky-relu".into(),
                    shape: vec![],
                    data: vec![],
                    variant: None,
                },
                Layer::Reshape { target } => LayerDoc {
                    kind: "reshape".into(),
                    shape: target.clone(),
                    data: vec![],
                    variant: None,
                },
                Layer::Conv2d { weight, bias } => {
                    let mut data = weight.data().to_vec();
                    data.extend_from_slice(bias.data());
                    LayerDoc {
                        kind: "conv2d".into(),
                        shape: weight.shape().to_vec(),
                        data,
                        variant: None,
                    }
                }
                Layer::Upsample2x => LayerDoc {
                    kind: "upsample2x".into(),
                    shape: vec![],
                    data: vec![],
                    variant: None,
                },
                Layer::Inject(Injection::Eni { strength }) => LayerDoc {
                    kind: "inject-eni".into(),
                    shape: vec![1],
                    data: vec![*strength],
                    variant: None,
                },
                Layer::Inject(Injection::Rni {
                    gain,
                    bias,
                    radius,
                    alpha_raw,
                    variant,
                    cnn_kernel,
                }) => {
                    let mut data = gain.data().to_vec();
                    data.extend_from_slice(bias.data());
                    data.push(*radius);
                    data.push(*alpha_raw);
                    if let Some(k) = cnn_kernel {
                        data.extend_from_slice(k.data());
                    }
                    LayerDoc {
                        kind: "inject-rni".into(),
                        shape: gain.shape().to_vec(),
                        data,
                        variant: Some(variant.name().to_string()),
                    }
                }
            })
            .collect();
        serde_json::to_string_pretty(&NetworkDoc { layers }).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let doc: NetworkDoc = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("network JSON: {e}")))?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (idx, entry) in doc.layers.into_iter().enumerate() {
            let bad = |msg: &str| Error::Layer { index: idx, message: msg.into() };
            let layer = match entry.kind.as_str() {
                "dense" => {
                    if entry.shape.len() != 2 {
                        return Err(bad("dense needs shape [out,in]"));
                    }
                    let (o, i) = (entry.shape[0], entry.shape[1]);
                    if entry.data.len() != o * i + o {
                        return Err(bad("dense data must hold weight then bias"));
                    }
                    Layer::Dense {
                        weight: Tensor::new([o, i], entry.data[..o * i].to_vec())?,
                        bias: Tensor::new([o], entry.data[o * i..].to_vec())?,
                    }
                }
                "leaky-relu" => Layer::LeakyRelu,
                "reshape" => Layer::Reshape { target: entry.shape },
                "conv2d" => {
                    if entry.shape.len() != 4 {
                        return Err(bad("conv2d needs shape [o,i,3,3]"));
                    }
                    let (o, i) = (entry.shape[0], entry.shape[1]);
                    let w_len = o * i * 9;
                    if entry.data.len() != w_len + o {
                        return Err(bad("conv2d data must hold weight then bias"));
                    }
                    Layer::Conv2d {
                        weight: Tensor::new(entry.shape.clone(), entry.data[..w_len].to_vec())?,
                        bias: Tensor::new([o], entry.data[w_len..].to_vec())?,
                    }
                }
                "upsample2x" => Layer::Upsample2x,
                "inject-eni" => {
                    if entry.data.len() != 1 {
                        return Err(bad("inject-eni carries exactly one value"));
                    }
                    Layer::Inject(Injection::Eni { strength: entry.data[0] })
                }
                "inject-rni" => {
                    if entry.shape.len() != 2 {
                        return Err(bad("inject-rni needs shape [h,w]"));
                    }
                    let hw = entry.shape[0] * entry.shape[1];
                    if entry.data.len() < 2 * hw + 2 {
                        return Err(bad("inject-rni data too short"));
                    }
                    let variant: Variant = entry
                        .variant
                        .as_deref()
                        .unwrap_or("full")
                        .parse()?;
                    let rest = &entry.data[2 * hw + 2..];
                    let cnn_kernel = if rest.is_empty() {
                        None
                    } else {
                        if rest.len() % 9 != 0 {
                            return Err(bad("cnn kernel length must be 9·c"));
                        }
                        let c = rest.len() / 9;
                        Some(Tensor::new([1, c, 3, 3], rest.to_vec())?)
                    };
                    if variant == Variant::CnnSigma && cnn_kernel.is_none() {
                        return Err(bad("cnn-sigma inject layer without kernel data"));
                    }
                    Layer::Inject(Injection::Rni {
                        gain: Tensor::new(entry.shape.clone(), entry.data[..hw].to_vec())?,
                        bias: Tensor::new(entry.shape.clone(), entry.data[hw..2 * hw].to_vec())?,
                        radius: entry.data[2 * hw],
                        alpha_raw: entry.data[2 * hw + 1],
                        variant,
                        cnn_kernel,
                    })
                }
                other => return Err(bad(&format!("unknown layer kind `{other}`"))),
            };
            layers.push(layer);
        }
        Ok(Network::new(layers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff;

    #[test]
    fn empty_network_is_identity_with_no_activations() {
        let net = Network::empty();
        let x = Tensor::vector(vec![1.0, -2.0]);
        let (out, acts) = net.forward(&x, None, Mode::Deterministic).unwrap();
        assert_eq!(out, x);
        assert!(acts.is_empty());
    }

    #[test]
    fn identity_dense_then_leaky_relu() {
        let net = Network::new(vec![
            Layer::Dense { weight: Tensor::eye(2), bias: Tensor::zeros([2]) },
            Layer::LeakyRelu,
        ]);
        let (out, acts) = net
            .forward(&Tensor::vector(vec![-1.0, 2.0]), None, Mode::Deterministic)
            .unwrap();
        assert_eq!(out.data(), &[-0.2, 2.0]);
        assert_eq!(acts.len(), 2);
        assert_eq!(acts[0].data(), &[-1.0, 2.0]);
    }

    #[test]
    fn leaky_relu_pointwise_values() {
        let y = leaky_relu(&Tensor::vector(vec![1.0, -1.0, 0.0]));
        assert_eq!(y.data(), &[1.0, -0.2, 0.0]);
    }

    #[test]
    fn deterministic_forward_is_bitwise_reproducible() {
        let mut rs = RandomSource::new(5);
        let net = Network::new(vec![
            Layer::dense_init(4, 3, &mut rs).unwrap(),
            Layer::LeakyRelu,
            Layer::dense_init(2, 4, &mut rs).unwrap(),
        ]);
        let x = rs.gaussian(&[3]).unwrap();
        let (a, _) = net.forward(&x, None, Mode::Deterministic).unwrap();
        let (b, _) = net.forward(&x, None, Mode::Deterministic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_at_matches_activations_and_prefix_stacks() {
        let mut rs = RandomSource::new(6);
        let layers: Vec<Layer> = (0..8)
            .map(|_| Layer::dense_init(5, 5, &mut rs).unwrap())
            .collect();
        let net = Network::new(layers.clone());
        let x = rs.gaussian(&[5]).unwrap();

        let (out, acts) = net.forward(&x, None, Mode::Deterministic).unwrap();
        assert_eq!(net.forward_at(&x, 7).unwrap(), out);

        let prefix = Network::new(layers[..4].to_vec());
        assert_eq!(net.forward_at(&x, 3).unwrap(), prefix.output(&x).unwrap());
        assert_eq!(acts[3], net.forward_at(&x, 3).unwrap());

        assert!(net.forward_at(&x, 8).is_err());
    }

    #[test]
    fn dense_first_depth_zero_is_affine_map() {
        let mut rs = RandomSource::new(7);
        let w = rs.gaussian(&[3, 2]).unwrap();
        let b = rs.gaussian(&[3]).unwrap();
        let net = Network::new(vec![
            Layer::Dense { weight: w.clone(), bias: b.clone() },
            Layer::LeakyRelu,
        ]);
        let x = rs.gaussian(&[2]).unwrap();
        let expect = w.matvec(&x).unwrap().add(&b).unwrap();
        assert_eq!(net.forward_at(&x, 0).unwrap(), expect);
    }

    #[test]
    fn linear_stack_equals_collapsed_affine_map() {
        let mut rs = RandomSource::new(8);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let dims = [4usize, 6, 3, 5];
        for k in 0..3 {
            weights.push(rs.gaussian(&[dims[k + 1], dims[k]]).unwrap());
            biases.push(rs.gaussian(&[dims[k + 1]]).unwrap());
        }
        let net = Network::new(
            weights
                .iter()
                .zip(&biases)
                .map(|(w, b)| Layer::Dense { weight: w.clone(), bias: b.clone() })
                .collect(),
        );
        let x = rs.gaussian(&[4]).unwrap();
        let out = net.output(&x).unwrap();

        let mut acc = x.clone();
        for (w, b) in weights.iter().zip(&biases) {
            acc = w.matvec(&acc).unwrap().add(b).unwrap();
        }
        assert!(out.max_abs_diff(&acc).unwrap() <= 1e-12);
    }

    #[test]
    fn stochastic_mode_requires_random_source() {
        let net = Network::new(vec![Layer::Inject(Injection::Eni { strength: 1.0 })]);
        let x = Tensor::vector(vec![0.0, 0.0]);
        assert!(net.forward(&x, None, Mode::Stochastic).is_err());
    }

    #[test]
    fn shape_error_names_offending_layer() {
        let net = Network::new(vec![
            Layer::Dense { weight: Tensor::eye(2), bias: Tensor::zeros([2]) },
            Layer::Dense { weight: Tensor::eye(3), bias: Tensor::zeros([3]) },
        ]);
        let err = net.output(&Tensor::vector(vec![1.0, 2.0])).unwrap_err();
        match err {
            Error::Layer { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn mixed_stack_gradients_pass_finite_difference_check() {
        let mut rs = RandomSource::new(42);
        let net = Network::new(vec![
            Layer::dense_init(16, 3, &mut rs).unwrap(),
            Layer::LeakyRelu,
            Layer::Reshape { target: vec![4, 2, 2] },
            Layer::Inject(Injection::rni(2, 2, Variant::Full)),
            Layer::Upsample2x,
            Layer::conv2d_init(2, 4, &mut rs).unwrap(),
            Layer::LeakyRelu,
            Layer::Reshape { target: vec![32] },
            Layer::dense_init(2, 32, &mut rs).unwrap(),
        ]);
        let x = rs.gaussian(&[3]).unwrap();

        let mut tape = Tape::new();
        let bound = net.bind_params(&mut tape);
        let input = tape.leaf(x.clone());
        let (out, _) = net
            .forward_bound(&mut tape, &bound, input, Mode::Deterministic, None)
            .unwrap();
        let loss = tape.sum_all(out);
        let grads = tape.grad(loss, &bound.nodes()).unwrap();

        for ((key, _), analytic) in bound.entries.iter().zip(&grads) {
            let base = net.param(*key).unwrap();
            let numeric = fdiff::gradient(
                |t| {
                    let mut probe = net.clone();
                    probe.set_param(*key, t.clone()).unwrap();
                    probe.output(&x).unwrap().sum()
                },
                &base,
                1e-5,
            );
            let err = fdiff::max_rel_err(analytic, &numeric);
            assert!(err <= 1e-5, "param {key:?}: rel err {err}");
        }
    }

    #[test]
    fn json_round_trip_preserves_behaviour_bitwise() {
        let mut rs = RandomSource::new(13);
        let net = Network::new(vec![
            Layer::dense_init(8, 2, &mut rs).unwrap(),
            Layer::LeakyRelu,
            Layer::Reshape { target: vec![2, 2, 2] },
            Layer::Inject(Injection::rni_cnn(2, 2, 2, &mut rs).unwrap()),
            Layer::Reshape { target: vec![8] },
            Layer::dense_init(2, 8, &mut rs).unwrap(),
            Layer::Inject(Injection::Eni { strength: 0.25 }),
        ]);
        let text = net.to_json();
        let back = Network::from_json(&text).unwrap();
        let x = rs.gaussian(&[2]).unwrap();
        assert_eq!(net.output(&x).unwrap(), back.output(&x).unwrap());
        // stochastic path with shared seeds must agree too
        let mut r1 = RandomSource::new(3).child(1);
        let mut r2 = RandomSource::new(3).child(1);
        let (a, _) = net.forward(&x, Some(&mut r1), Mode::Stochastic).unwrap();
        let (b, _) = back.forward(&x, Some(&mut r2), Mode::Stochastic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_json_field_names() {
        let net = Network::new(vec![Layer::Dense {
            weight: Tensor::eye(2),
            bias: Tensor::zeros([2]),
        }]);
        let text = net.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let layer = &value["layers"][0];
        assert_eq!(layer["kind"], "dense");
        assert!(layer["shape"].is_array());
        assert!(layer["data"].is_array());
    }
}
