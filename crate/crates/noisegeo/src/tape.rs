//! Reverse-mode differentiation on an append-only tape.
//!
//! Every operation pushes a node holding `(kind, parent ids, cached value)`.
//! The graph is acyclic by construction — parents always have smaller
//! indices — so one reverse sweep over the node list propagates adjoints.
//! Values are whole tensors, not scalars; each op carries its own
//! vector-Jacobian product.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    MatMul(NodeId, NodeId),
    /// Expand missing leading axes up to this node's shape.
    Broadcast(NodeId),
    Reshape(NodeId),
    SumAxis(NodeId, usize),
    SumAll(NodeId),
    Mean(NodeId),
    /// Frobenius norm, scalar result.
    Norm2(NodeId),
    /// Maximum absolute entry, scalar result.
    MaxAbs(NodeId),
    /// Tensor plus broadcast scalar.
    AddScalar(NodeId, NodeId),
    /// Scalar times tensor.
    ScalarMul(NodeId, NodeId),
    /// Tensor divided by scalar.
    DivScalar(NodeId, NodeId),
    LeakyRelu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Upsample2x(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const LEAKY_SLOPE: f64 = 0.2;

fn leaky_relu_val(t: &Tensor) -> Tensor {
    let data = t
        .data()
        .iter()
        .map(|&x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
        .collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn softplus_val(t: &Tensor) -> Tensor {
    let data = t
        .data()
        .iter()
        .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
        .collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_val(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&x| sigmoid(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// 3×3, stride-1, zero-pad-1 convolution: `(i,h,w)` with kernel `(o,i,3,3)`
/// and bias `(o)` gives `(o,h,w)`.
fn conv2d_val(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (ic, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oc = w.shape()[0];
    let mut out = vec![0.0; oc * h * wd];
    let xd = x.data();
    let wdat = w.data();
    for o in 0..oc {
        for y in 0..h {
            for xcol in 0..wd {
                let mut acc = b.data()[o];
                for i in 0..ic {
                    for dy in 0..3usize {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3usize {
                            let sx = xcol as isize + dx as isize - 1;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            acc += wdat[((o * ic + i) * 3 + dy) * 3 + dx]
                                * xd[(i * h + sy as usize) * wd + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * wd + xcol] = acc;
            }
        }
    }
    Tensor::new(vec![oc, h, wd], out).expect("conv shape")
}

fn upsample2x_val(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; c * 4 * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for xc in 0..2 * w {
                out[(ch * 2 * h + y) * 2 * w + xc] = x.data()[(ch * h + y / 2) * w + xc / 2];
            }
        }
    }
    Tensor::new(vec![c, 2 * h, 2 * w], out).expect("upsample shape")
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input tensor. Leaves are the only nodes gradients stop
    /// at; constants are simply leaves whose gradient nobody asks for.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).scale(-1.0);
        self.push(Op::Neg(a), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn broadcast(&mut self, a: NodeId, target: &[usize]) -> Result<NodeId> {
        let v = self.value(a).broadcast_to(target)?;
        Ok(self.push(Op::Broadcast(a), v))
    }

    pub fn reshape(&mut self, a: NodeId, target: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(target.to_vec())?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.value(a).sum_axis(axis)?;
        Ok(self.push(Op::SumAxis(a, axis), v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(Op::Mean(a), v)
    }

    pub fn norm2(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(Op::Norm2(a), v)
    }

    pub fn max_abs(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).max_abs());
        self.push(Op::MaxAbs(a), v)
    }

    fn expect_scalar(&self, s: NodeId, op: &'static str) -> Result<f64> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::invalid(format!(
                "{op} expects a scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    /// `x + s` with the scalar broadcast over every entry.
    pub fn add_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.expect_scalar(s, "add_scalar")?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|a| a + sv).collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(Op::AddScalar(x, s), v))
    }

    /// `s · x` with a scalar node as the factor.
    pub fn scalar_mul(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        let sv = self.expect_scalar(s, "scalar_mul")?;
        let v = self.value(x).scale(sv);
        Ok(self.push(Op::ScalarMul(s, x), v))
    }

    /// `x / s` with a scalar node as the divisor.
    pub fn div_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.expect_scalar(s, "div_scalar")?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|a| a / sv).collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(Op::DivScalar(x, s), v))
    }

    pub fn leaky_relu(&mut self, a: NodeId) -> NodeId {
        let v = leaky_relu_val(self.value(a));
        self.push(Op::LeakyRelu(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = softplus_val(self.value(a));
        self.push(Op::Softplus(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = sigmoid_val(self.value(a));
        self.push(Op::Sigmoid(a), v)
    }

    /// 3×3 stride-1 pad-1 convolution; `x: (i,h,w)`, `w: (o,i,3,3)`, `b: (o)`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 3 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::shape("conv2d", xs, ws));
        }
        if ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::shape("conv2d", xs, ws));
        }
        let v = conv2d_val(self.value(x), self.value(w), self.value(b));
        Ok(self.push(Op::Conv2d { x, w, b }, v))
    }

    /// Nearest-neighbour 2× upsampling of a `(c,h,w)` map.
    pub fn upsample2x(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).rank() != 3 {
            return Err(Error::invalid(format!(
                "upsample2x expects (c,h,w), got {:?}",
                self.value(a).shape()
            )));
        }
        let v = upsample2x_val(self.value(a));
        Ok(self.push(Op::Upsample2x(a), v))
    }

    /// Gradient of a scalar output with respect to the given leaves.
    /// Inputs not connected to the output get a zero gradient.
    pub fn grad(&self, output: NodeId, inputs: &[NodeId]) -> Result<Vec<Tensor>> {
        if self.value(output).len() != 1 {
            return Err(Error::invalid(format!(
                "grad needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        self.grad_seeded(output, &Tensor::scalar(1.0), inputs)
    }

    /// Backward pass with an explicit cotangent seed on `output`; this is the
    /// vector–Jacobian product, and is what Jacobian assembly calls row by
    /// row.
    pub fn grad_seeded(
        &self,
        output: NodeId,
        seed: &Tensor,
        inputs: &[NodeId],
    ) -> Result<Vec<Tensor>> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "grad_seeded",
                seed.shape(),
                self.value(output).shape(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(inputs
            .iter()
            .map(|id| match &grads[id.0] {
                Some(g) => g.clone(),
                None => Tensor::zeros(self.value(*id).shape().to_vec()),
            })
            .collect())
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        match &mut grads[id.0] {
            Some(g) => {
                let sum = g.add(&delta).expect("gradient shapes agree");
                *g = sum;
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        use Op::*;
        match &self.nodes[idx].op {
            Leaf => {}
            Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.scale(-1.0));
            }
            Mul(a, b) => {
                Self::accumulate(grads, *a, g.mul(self.value(*b)).expect("shape"));
                Self::accumulate(grads, *b, g.mul(self.value(*a)).expect("shape"));
            }
            Neg(a) => Self::accumulate(grads, *a, g.scale(-1.0)),
            MatMul(a, b) => {
                let bt = self.value(*b).transpose().expect("matrix");
                let at = self.value(*a).transpose().expect("matrix");
                Self::accumulate(grads, *a, g.matmul(&bt).expect("shape"));
                Self::accumulate(grads, *b, at.matmul(g).expect("shape"));
            }
            Broadcast(a) => {
                let pshape = self.value(*a).shape().to_vec();
                let plen: usize = pshape.iter().product();
                let copies = g.len() / plen;
                let mut acc = vec![0.0; plen];
                for c in 0..copies {
                    for (dst, src) in acc.iter_mut().zip(&g.data()[c * plen..(c + 1) * plen]) {
                        *dst += src;
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(pshape, acc).expect("shape"));
            }
            Reshape(a) => {
                let back = g
                    .reshape(self.value(*a).shape().to_vec())
                    .expect("same element count");
                Self::accumulate(grads, *a, back);
            }
            SumAxis(a, axis) => {
                let pshape = self.value(*a).shape();
                let outer: usize = pshape[..*axis].iter().product();
                let mid = pshape[*axis];
                let inner: usize = pshape[*axis + 1..].iter().product();
                let mut acc = vec![0.0; outer * mid * inner];
                for o in 0..outer {
                    for m in 0..mid {
                        let dst = &mut acc[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        dst.copy_from_slice(src);
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(pshape.to_vec(), acc).expect("shape"));
            }
            SumAll(a) => {
                let s = g.data()[0];
                Self::accumulate(grads, *a, Tensor::full(self.value(*a).shape().to_vec(), s));
            }
            Mean(a) => {
                let n = self.value(*a).len() as f64;
                let s = g.data()[0] / n;
                Self::accumulate(grads, *a, Tensor::full(self.value(*a).shape().to_vec(), s));
            }
            Norm2(a) => {
                let y = self.nodes[idx].value.data()[0];
                if y > 0.0 {
                    Self::accumulate(grads, *a, self.value(*a).scale(g.data()[0] / y));
                }
                // at exactly zero the norm is not differentiable; contribute 0
            }
            MaxAbs(a) => {
                let av = self.value(*a);
                let j = av.argmax_abs();
                let mut acc = Tensor::zeros(av.shape().to_vec());
                acc.data_mut()[j] = g.data()[0] * av.data()[j].signum() * ((av.data()[j] != 0.0) as i32 as f64);
                Self::accumulate(grads, *a, acc);
            }
            AddScalar(x, s) => {
                Self::accumulate(grads, *x, g.clone());
                Self::accumulate(grads, *s, Tensor::scalar(g.sum()));
            }
            ScalarMul(s, x) => {
                let sv = self.value(*s).data()[0];
                Self::accumulate(grads, *x, g.scale(sv));
                let ds = g.mul(self.value(*x)).expect("shape").sum();
                Self::accumulate(grads, *s, Tensor::scalar(ds));
            }
            DivScalar(x, s) => {
                let sv = self.value(*s).data()[0];
                Self::accumulate(grads, *x, g.scale(1.0 / sv));
                let ds = -g.mul(self.value(*x)).expect("shape").sum() / (sv * sv);
                Self::accumulate(grads, *s, Tensor::scalar(ds));
            }
            LeakyRelu(a) => {
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gi, &xi)| gi * if xi > 0.0 { 1.0 } else { LEAKY_SLOPE })
                    .collect();
                Self::accumulate(grads, *a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
            }
            Softplus(a) => {
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gi, &xi)| gi * sigmoid(xi))
                    .collect();
                Self::accumulate(grads, *a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
            }
            Sigmoid(a) => {
                let yv = &self.nodes[idx].value;
                let data = g
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(gi, &yi)| gi * yi * (1.0 - yi))
                    .collect();
                Self::accumulate(
                    grads,
                    *a,
                    Tensor::new(yv.shape().to_vec(), data).expect("shape"),
                );
            }
            Conv2d { x, w, b } => {
                let (dx, dw, db) = conv2d_backward(self.value(*x), self.value(*w), g);
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                Self::accumulate(grads, *b, db);
            }
            Upsample2x(a) => {
                let xs = self.value(*a).shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let mut acc = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xc in 0..2 * w {
                            acc[(ch * h + y / 2) * w + xc / 2] +=
                                g.data()[(ch * 2 * h + y) * 2 * w + xc];
                        }
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![c, h, w], acc).expect("shape"));
            }
        }
    }

    /// Recomputes every non-leaf value from its parents and compares with the
    /// cache; used to assert the replay invariant in tests.
    pub fn replay_matches(&self) -> bool {
        for (idx, node) in self.nodes.iter().enumerate() {
            let recomputed = match &node.op {
                Op::Leaf => continue,
                Op::Add(a, b) => self.value(*a).add(self.value(*b)).unwrap(),
                Op::Sub(a, b) => self.value(*a).sub(self.value(*b)).unwrap(),
                Op::Mul(a, b) => self.value(*a).mul(self.value(*b)).unwrap(),
                Op::Neg(a) => self.value(*a).scale(-1.0),
                Op::MatMul(a, b) => self.value(*a).matmul(self.value(*b)).unwrap(),
                Op::Broadcast(a) => self.value(*a).broadcast_to(node.value.shape()).unwrap(),
                Op::Reshape(a) => self.value(*a).reshape(node.value.shape().to_vec()).unwrap(),
                Op::SumAxis(a, axis) => self.value(*a).sum_axis(*axis).unwrap(),
                Op::SumAll(a) => Tensor::scalar(self.value(*a).sum()),
                Op::Mean(a) => Tensor::scalar(self.value(*a).mean()),
                Op::Norm2(a) => Tensor::scalar(self.value(*a).norm()),
                Op::MaxAbs(a) => Tensor::scalar(self.value(*a).max_abs()),
                Op::AddScalar(x, s) => {
                    let sv = self.value(*s).data()[0];
                    let xv = self.value(*x);
                    Tensor::new(
                        xv.shape().to_vec(),
                        xv.data().iter().map(|a| a + sv).collect(),
                    )
                    .unwrap()
                }
                Op::ScalarMul(s, x) => self.value(*x).scale(self.value(*s).data()[0]),
                Op::DivScalar(x, s) => {
                    let sv = self.value(*s).data()[0];
                    let xv = self.value(*x);
                    Tensor::new(
                        xv.shape().to_vec(),
                        xv.data().iter().map(|a| a / sv).collect(),
                    )
                    .unwrap()
                }
                Op::LeakyRelu(a) => leaky_relu_val(self.value(*a)),
                Op::Softplus(a) => softplus_val(self.value(*a)),
                Op::Sigmoid(a) => sigmoid_val(self.value(*a)),
                Op::Conv2d { x, w, b } => conv2d_val(self.value(*x), self.value(*w), self.value(*b)),
                Op::Upsample2x(a) => upsample2x_val(self.value(*a)),
            };
            if recomputed != self.nodes[idx].value {
                return false;
            }
        }
        true
    }
}

fn conv2d_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (ic, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oc = w.shape()[0];
    let mut dx = vec![0.0; ic * h * wd];
    let mut dw = vec![0.0; oc * ic * 9];
    let mut db = vec![0.0; oc];
    let gd = g.data();
    let xd = x.data();
    let wdat = w.data();
    for o in 0..oc {
        for y in 0..h {
            for xcol in 0..wd {
                let gv = gd[(o * h + y) * wd + xcol];
                if gv == 0.0 {
                    continue;
                }
                db[o] += gv;
                for i in 0..ic {
                    for dy in 0..3usize {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dxk in 0..3usize {
                            let sx = xcol as isize + dxk as isize - 1;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            let xi = (i * h + sy as usize) * wd + sx as usize;
                            let wi = ((o * ic + i) * 3 + dy) * 3 + dxk;
                            dw[wi] += gv * xd[xi];
                            dx[xi] += gv * wdat[wi];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![ic, h, wd], dx).expect("shape"),
        Tensor::new(vec![oc, ic, 3, 3], dw).expect("shape"),
        Tensor::new(vec![oc], db).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff;
    use crate::rng::RandomSource;

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.grad(y, &[x]).unwrap();
        assert_eq!(g[0].data(), &[6.0]);
    }

    #[test]
    fn matvec_sum_gradient_is_column_sums() {
        let a = Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let mut tape = Tape::new();
        let an = tape.leaf(a);
        let x = tape.leaf(Tensor::new([2, 1], vec![0.3, -0.7]).unwrap());
        let y = tape.matmul(an, x).unwrap();
        let s = tape.sum_all(y);
        let g = tape.grad(s, &[x]).unwrap();
        assert_eq!(g[0].data(), &[9.0, 12.0]); // column sums of A
    }

    #[test]
    fn disconnected_input_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let unused = tape.leaf(Tensor::vector(vec![5.0, 5.0]));
        let y = tape.mul(x, x).unwrap();
        let g = tape.grad(y, &[unused]).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.grad(x, &[x]).is_err());
    }

    #[test]
    fn replay_reproduces_cached_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]));
        let y = tape.leaky_relu(x);
        let n = tape.norm2(y);
        let _ = tape.div_scalar(y, n).unwrap();
        assert!(tape.replay_matches());
    }

    // Finite-difference sweep over every differentiable op the tape exposes.
    #[test]
    fn all_ops_match_central_differences() {
        let mut rs = RandomSource::new(77);
        // Scalar objective built from a wide mix of ops; x is a 2x3 leaf.
        let build = |x: &Tensor, extra: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let xn = tape.leaf(x.clone());
            let en = tape.leaf(extra.clone());
            let s = tape.leaf(Tensor::scalar(0.7));
            let prod = tape.matmul(xn, en).unwrap(); // (2,3)x(3,2) -> (2,2)
            let act = tape.leaky_relu(prod);
            let soft = tape.softplus(act);
            let sig = tape.sigmoid(soft);
            let resh = tape.reshape(sig, &[4]).unwrap();
            let scaled = tape.scalar_mul(s, resh).unwrap();
            let m = tape.mean(scaled);
            let shifted = tape.add_scalar(resh, m).unwrap();
            let nrm = tape.norm2(shifted);
            let normed = tape.div_scalar(shifted, nrm).unwrap();
            let ma = tape.max_abs(xn);
            let lift = tape.add_scalar(normed, ma).unwrap();
            let out = tape.sum_all(lift);
            tape.value(out).data()[0]
        };
        let x = rs.gaussian(&[2, 3]).unwrap();
        let extra = rs.gaussian(&[3, 2]).unwrap();

        // analytic gradient
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let en = tape.leaf(extra.clone());
        let s = tape.leaf(Tensor::scalar(0.7));
        let prod = tape.matmul(xn, en).unwrap();
        let act = tape.leaky_relu(prod);
        let soft = tape.softplus(act);
        let sig = tape.sigmoid(soft);
        let resh = tape.reshape(sig, &[4]).unwrap();
        let scaled = tape.scalar_mul(s, resh).unwrap();
        let m = tape.mean(scaled);
        let shifted = tape.add_scalar(resh, m).unwrap();
        let nrm = tape.norm2(shifted);
        let normed = tape.div_scalar(shifted, nrm).unwrap();
        let ma = tape.max_abs(xn);
        let lift = tape.add_scalar(normed, ma).unwrap();
        let out = tape.sum_all(lift);
        let analytic = tape.grad(out, &[xn]).unwrap().remove(0);

        let numeric = fdiff::gradient(|t| build(t, &extra), &x, 1e-5);
        let err = fdiff::max_rel_err(&analytic, &numeric);
        assert!(err <= 1e-5, "rel err {err}");
    }

    #[test]
    fn conv_and_upsample_match_central_differences() {
        let mut rs = RandomSource::new(5);
        let x = rs.gaussian(&[2, 4, 4]).unwrap();
        let w = rs.gaussian(&[3, 2, 3, 3]).unwrap();
        let b = rs.gaussian(&[3]).unwrap();

        let run = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let xn = tape.leaf(x.clone());
            let wn = tape.leaf(w.clone());
            let bn = tape.leaf(b.clone());
            let up = tape.upsample2x(xn).unwrap();
            let conv = tape.conv2d(up, wn, bn).unwrap();
            let act = tape.leaky_relu(conv);
            let out = tape.sum_all(act);
            tape.value(out).data()[0]
        };

        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let wn = tape.leaf(w.clone());
        let bn = tape.leaf(b.clone());
        let up = tape.upsample2x(xn).unwrap();
        let conv = tape.conv2d(up, wn, bn).unwrap();
        let act = tape.leaky_relu(conv);
        let out = tape.sum_all(act);
        let grads = tape.grad(out, &[xn, wn, bn]).unwrap();

        let gx = fdiff::gradient(|t| run(t, &w, &b), &x, 1e-5);
        let gw = fdiff::gradient(|t| run(&x, t, &b), &w, 1e-5);
        let gb = fdiff::gradient(|t| run(&x, &w, t), &b, 1e-5);
        assert!(fdiff::max_rel_err(&grads[0], &gx) <= 1e-5);
        assert!(fdiff::max_rel_err(&grads[1], &gw) <= 1e-5);
        assert!(fdiff::max_rel_err(&grads[2], &gb) <= 1e-5);
    }
}
