use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a tape node.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Conv2d { stride: usize, padding: usize },
    ConvTranspose2d { stride: usize, padding: usize },
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Exp,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Sum,
    Reshape,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    AddBias,
    SoftmaxCrossEntropy { labels: Vec<usize> },
}

/// Pointwise operation vocabulary accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Exp,
    Add,
    Sub,
    Mul,
    Scale(f64),
}

/// One recorded operation. Parents always precede the node on the tape.
#[derive(Debug, Clone)]
pub struct TapeNode<T: Real> {
    pub op: OpKind,
    pub parents: Vec<Var>,
    pub value: Tensor<T>,
    pub requires_grad: bool,
    saved: Option<Tensor<T>>,
}

/// Define-by-run tape. Build a fresh graph for every forward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<TapeNode<T>>,
}

/// Gradients of a scalar with respect to every trainable leaf of a graph.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    by_leaf: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, leaf: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor<T>> {
        self.by_leaf.remove(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.by_leaf.iter().map(|(&v, t)| (v, t))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn conv_out(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (stride > 0 && padded >= k).then(|| (padded - k) / stride + 1)
}

fn shape_4d(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(t).map_err(|_| Error::dim(op, format!("expected 4-D tensor, got {t:?}")))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode<T> {
        &self.nodes[v.0]
    }

    /// All nodes in creation order.
    pub fn nodes(&self) -> impl Iterator<Item = (Var, &TapeNode<T>)> {
        self.nodes.iter().enumerate().map(|(i, n)| (Var(i), n))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(TapeNode {
            op: OpKind::Leaf,
            parents: Vec::new(),
            value,
            requires_grad,
            saved: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        op: OpKind,
        parents: Vec<Var>,
        value: Tensor<T>,
        saved: Option<Tensor<T>>,
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(TapeNode {
            op,
            parents,
            value,
            requires_grad,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(Error::dim("matmul", format!("expected matrices, got {sa:?} and {sb:?}")));
        };
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner dimensions differ: {sa:?} · {sb:?}")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push(OpKind::MatMul, vec![a, b], Tensor::from_parts(vec![m, n], out), None, "matmul")
    }

    /// Cross-correlation of `input[N×C×H×W]` with `kernel[F×C×kh×kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, w] = shape_4d("conv2d", self.shape(input))?;
        let [f, kc, kh, kw] = shape_4d("conv2d", self.shape(kernel))?;
        if c != kc {
            return Err(Error::dim(
                "conv2d",
                format!("input channels {c} but kernel expects {kc}"),
            ));
        }
        let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, padding), conv_out(w, kw, stride, padding)) else {
            return Err(Error::Config(format!(
                "conv2d: kernel {kh}×{kw} with stride {stride}, padding {padding} does not fit {h}×{w}"
            )));
        };
        let geom = ConvGeom { channels: c, height: h, width: w, kh, kw, stride, padding, out_h: oh, out_w: ow };
        let out = kernels::conv2d_forward(&geom, n, f, self.value(input).data(), self.value(kernel).data());
        self.push(
            OpKind::Conv2d { stride, padding },
            vec![input, kernel],
            Tensor::from_parts(vec![n, f, oh, ow], out),
            None,
            "conv2d",
        )
    }

    /// Transposed convolution of `input[N×F×H×W]` with `kernel[F×C×kh×kw]`,
    /// the exact adjoint of [`Graph::conv2d`] with the same kernel.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, f, h, w] = shape_4d("conv_transpose2d", self.shape(input))?;
        let [kf, c, kh, kw] = shape_4d("conv_transpose2d", self.shape(kernel))?;
        if f != kf {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("input channels {f} but kernel expects {kf}"),
            ));
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if stride == 0 || full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(Error::Config(format!(
                "conv_transpose2d: stride {stride}, padding {padding}, kernel {kh}×{kw} give no output for {h}×{w}"
            )));
        }
        let (oh, ow) = (full_h - 2 * padding, full_w - 2 * padding);
        let geom = ConvGeom { channels: c, height: oh, width: ow, kh, kw, stride, padding, out_h: h, out_w: w };
        let out = kernels::conv2d_adjoint(&geom, n, f, self.value(input).data(), self.value(kernel).data());
        self.push(
            OpKind::ConvTranspose2d { stride, padding },
            vec![input, kernel],
            Tensor::from_parts(vec![n, c, oh, ow], out),
            None,
            "conv_transpose2d",
        )
    }

    /// Dispatches one of the pointwise operations.
    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        let unary = |inputs: &[Var]| -> Result<Var> {
            match inputs {
                [x] => Ok(*x),
                _ => Err(Error::Contract(format!("{kind:?} takes one input, got {}", inputs.len()))),
            }
        };
        let binary = |inputs: &[Var]| -> Result<(Var, Var)> {
            match inputs {
                [a, b] => Ok((*a, *b)),
                _ => Err(Error::Contract(format!("{kind:?} takes two inputs, got {}", inputs.len()))),
            }
        };
        match kind {
            Elementwise::Relu => self.relu(unary(inputs)?),
            Elementwise::LeakyRelu(alpha) => self.leaky_relu(unary(inputs)?, alpha),
            Elementwise::Sigmoid => self.sigmoid(unary(inputs)?),
            Elementwise::Exp => self.exp(unary(inputs)?),
            Elementwise::Scale(c) => self.scale(unary(inputs)?, c),
            Elementwise::Add => {
                let (a, b) = binary(inputs)?;
                self.add(a, b)
            }
            Elementwise::Sub => {
                let (a, b) = binary(inputs)?;
                self.sub(a, b)
            }
            Elementwise::Mul => {
                let (a, b) = binary(inputs)?;
                self.mul(a, b)
            }
        }
    }

    fn unary(&mut self, x: Var, op: OpKind, name: &'static str, f: impl Fn(T) -> T) -> Result<Var> {
        let out = self.value(x).map(f);
        self.push(op, vec![x], out, None, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, OpKind::Relu, "relu", |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let a = T::from_f64(alpha);
        self.unary(x, OpKind::LeakyRelu(alpha), "leaky_relu", move |v| {
            if v > T::zero() {
                v
            } else {
                a * v
            }
        })
    }

    /// Logistic function. Outputs are clamped one machine epsilon inside
    /// `(0, 1)` so saturated units never report exactly 0 or 1.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let lo = T::epsilon();
        let hi = T::one() - T::epsilon();
        self.unary(x, OpKind::Sigmoid, "sigmoid", move |v| {
            let s = if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            };
            s.max(lo).min(hi)
        })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, OpKind::Exp, "exp", |v| v.exp())
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = T::from_f64(c);
        self.unary(x, OpKind::Scale(c), "scale", move |v| v * k)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = T::from_f64(c);
        self.unary(x, OpKind::AddScalar(c), "add_scalar", move |v| v + k)
    }

    fn binary(&mut self, a: Var, b: Var, op: OpKind, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(op, vec![a, b], out, None, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, OpKind::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, OpKind::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, OpKind::Mul, "mul", |x, y| x * y)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(OpKind::Sum, vec![x], Tensor::scalar(s), None, "sum")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        self.push(OpKind::Reshape, vec![x], out, None, "reshape")
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no parts"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim("concat", format!("part {s:?} disagrees with {base:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(OpKind::Concat { axis }, parts.to_vec(), Tensor::from_parts(shape, data), None, "concat")
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(OpKind::Narrow { axis, start }, vec![x], Tensor::from_parts(out_shape, data), None, "narrow")
    }

    /// Adds `bias[C]` to every position of channel `c` in `x[N×C×…]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb != [sx[1]] {
            return Err(Error::dim("add_bias", format!("bias {sb:?} does not match channels of {sx:?}")));
        }
        let (n, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for i in 0..n {
            for (ch, &bv) in b.iter().enumerate() {
                let start = (i * c + ch) * inner;
                data[start..start + inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(OpKind::AddBias, vec![x, bias], out, None, "add_bias")
    }

    /// Mean softmax cross-entropy of `logits[N×K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let &[n, k] = s else {
            return Err(Error::dim("softmax_cross_entropy", format!("expected N×K logits, got {s:?}")));
        };
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::Contract(format!(
                "softmax_cross_entropy: {} labels for {n} rows of {k} classes",
                labels.len()
            )));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = 0.0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - max).exp() / denom;
            }
            total += (denom.ln() - (row[label] - max)).as_f64();
        }
        let loss = Tensor::scalar(T::from_f64(total / n as f64));
        let saved = Tensor::from_parts(vec![n, k], probs);
        self.push(
            OpKind::SoftmaxCrossEntropy { labels: labels.to_vec() },
            vec![logits],
            loss,
            Some(saved),
            "softmax_cross_entropy",
        )
    }

    /// Reverse pass from a scalar `loss`, returning gradients for every
    /// trainable leaf (zero for leaves the loss does not depend on).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss does not belong to this graph".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.op == OpKind::Leaf {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, contribution) in self.node_backward(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[parent.0], contribution);
            }
        }

        let mut by_leaf = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.op == OpKind::Leaf && node.requires_grad {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                by_leaf.insert(Var(id), g);
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn node_backward(&self, node: &TapeNode<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let p = &node.parents;
        let pointwise = |x: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
            let data = x.data().iter().zip(g.data()).map(|(&xv, &gv)| f(xv, gv)).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        let out = match &node.op {
            OpKind::Leaf => Vec::new(),
            OpKind::MatMul => {
                let (a, b) = (self.value(p[0]), self.value(p[1]));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut ga = vec![T::zero(); m * k];
                kernels::gemm_nt(m, n, k, g.data(), b.data(), &mut ga);
                let mut gb = vec![T::zero(); k * n];
                kernels::gemm_tn(k, m, n, a.data(), g.data(), &mut gb);
                vec![
                    (p[0], Tensor::from_parts(vec![m, k], ga)),
                    (p[1], Tensor::from_parts(vec![k, n], gb)),
                ]
            }
            OpKind::Conv2d { stride, padding } => {
                let (x, k) = (self.value(p[0]), self.value(p[1]));
                let [n, c, h, w] = shape_4d("conv2d", x.shape())?;
                let [f, _, kh, kw] = shape_4d("conv2d", k.shape())?;
                let [_, _, oh, ow] = shape_4d("conv2d", g.shape())?;
                let geom = ConvGeom { channels: c, height: h, width: w, kh, kw, stride: *stride, padding: *padding, out_h: oh, out_w: ow };
                let mut res = Vec::with_capacity(2);
                if self.nodes[p[0].0].requires_grad {
                    let gx = kernels::conv2d_adjoint(&geom, n, f, g.data(), k.data());
                    res.push((p[0], Tensor::from_parts(x.shape().to_vec(), gx)));
                }
                if self.nodes[p[1].0].requires_grad {
                    let gk = kernels::conv2d_kernel_grad(&geom, n, f, x.data(), g.data());
                    res.push((p[1], Tensor::from_parts(k.shape().to_vec(), gk)));
                }
                res
            }
            OpKind::ConvTranspose2d { stride, padding } => {
                let (x, k) = (self.value(p[0]), self.value(p[1]));
                let [n, f, h, w] = shape_4d("conv_transpose2d", x.shape())?;
                let [_, c, kh, kw] = shape_4d("conv_transpose2d", k.shape())?;
                let [_, _, oh, ow] = shape_4d("conv_transpose2d", g.shape())?;
                let geom = ConvGeom { channels: c, height: oh, width: ow, kh, kw, stride: *stride, padding: *padding, out_h: h, out_w: w };
                let mut res = Vec::with_capacity(2);
                if self.nodes[p[0].0].requires_grad {
                    let gx = kernels::conv2d_forward(&geom, n, f, g.data(), k.data());
                    res.push((p[0], Tensor::from_parts(x.shape().to_vec(), gx)));
                }
                if self.nodes[p[1].0].requires_grad {
                    let gk = kernels::conv2d_kernel_grad(&geom, n, f, g.data(), x.data());
                    res.push((p[1], Tensor::from_parts(k.shape().to_vec(), gk)));
                }
                res
            }
            OpKind::Relu => {
                let x = self.value(p[0]);
                vec![(p[0], pointwise(x, &|xv, gv| if xv > T::zero() { gv } else { T::zero() }))]
            }
            OpKind::LeakyRelu(alpha) => {
                let a = T::from_f64(*alpha);
                let x = self.value(p[0]);
                vec![(p[0], pointwise(x, &|xv, gv| if xv > T::zero() { gv } else { a * gv }))]
            }
            OpKind::Sigmoid => {
                vec![(p[0], pointwise(&node.value, &|s, gv| gv * s * (T::one() - s)))]
            }
            OpKind::Exp => vec![(p[0], pointwise(&node.value, &|e, gv| gv * e))],
            OpKind::Add => vec![(p[0], g.clone()), (p[1], g.clone())],
            OpKind::Sub => vec![(p[0], g.clone()), (p[1], g.map(|v| -v))],
            OpKind::Mul => {
                let (a, b) = (self.value(p[0]), self.value(p[1]));
                vec![
                    (p[0], pointwise(b, &|bv, gv| gv * bv)),
                    (p[1], pointwise(a, &|av, gv| gv * av)),
                ]
            }
            OpKind::Scale(c) => {
                let k = T::from_f64(*c);
                vec![(p[0], g.map(|v| v * k))]
            }
            OpKind::AddScalar(_) => vec![(p[0], g.clone())],
            OpKind::Sum => {
                let shape = self.shape(p[0]).to_vec();
                vec![(p[0], Tensor::full(shape, g.item()))]
            }
            OpKind::Reshape => vec![(p[0], g.reshape(self.shape(p[0]).to_vec())?)],
            OpKind::Concat { axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                let mut res = Vec::with_capacity(p.len());
                for &part in p {
                    let ps = self.shape(part).to_vec();
                    let chunk = ps[*axis] * inner;
                    let mut data = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let base = o * total + offset;
                        data.extend_from_slice(&g.data()[base..base + chunk]);
                    }
                    offset += chunk;
                    res.push((part, Tensor::from_parts(ps, data)));
                }
                res
            }
            OpKind::Narrow { axis, start } => {
                let shape = self.shape(p[0]).to_vec();
                let len = node.value.shape()[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut data = vec![T::zero(); shape.iter().product()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(p[0], Tensor::from_parts(shape, data))]
            }
            OpKind::AddBias => {
                let sx = self.shape(p[0]);
                let (n, c) = (sx[0], sx[1]);
                let inner: usize = sx[2..].iter().product();
                let mut gb = vec![T::zero(); c];
                for i in 0..n {
                    for (ch, acc) in gb.iter_mut().enumerate() {
                        let start = (i * c + ch) * inner;
                        *acc += g.data()[start..start + inner].iter().copied().sum::<T>();
                    }
                }
                vec![(p[0], g.clone()), (p[1], Tensor::from_parts(vec![c], gb))]
            }
            OpKind::SoftmaxCrossEntropy { labels } => {
                let probs = node.saved.as_ref().expect("softmax probabilities saved on forward");
                let (n, k) = (probs.shape()[0], probs.shape()[1]);
                let scale = g.item() / T::from_f64(n as f64);
                let mut data: Vec<T> = probs.data().iter().map(|&v| v * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    data[i * k + l] -= scale;
                }
                vec![(p[0], Tensor::from_parts(vec![n, k], data))]
            }
        };
        Ok(out)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            let mut data = acc.take_data();
            for (a, &b) in data.iter_mut().zip(g.data()) {
                *a += b;
            }
            *acc = Tensor::from_parts(g.shape().to_vec(), data);
        }
    }
}
