use std::fmt;

use super::params::{BoundParams, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    fn is_relu_family(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Affine map; inputs with more than one feature axis are flattened.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// Parameter-free reshape from a flat feature vector to `C×H×W`.
    Unflatten {
        channels: usize,
        height: usize,
        width: usize,
    },
}

/// One layer of an encoder or decoder stack. Parameters are stored as
/// `{name}.weight` and `{name}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } => write!(
                f,
                "{}: conv {in_channels}→{out_channels} k{kernel} s{stride} p{padding}",
                self.name
            )?,
            LayerKind::ConvTranspose { in_channels, out_channels, kernel, stride, padding } => write!(
                f,
                "{}: deconv {in_channels}→{out_channels} k{kernel} s{stride} p{padding}",
                self.name
            )?,
            LayerKind::Dense { in_features, out_features } => {
                write!(f, "{}: dense {in_features}→{out_features}", self.name)?
            }
            LayerKind::Unflatten { channels, height, width } => {
                write!(f, "{}: unflatten {channels}×{height}×{width}", self.name)?
            }
        }
        match self.activation {
            Activation::Linear => Ok(()),
            Activation::Relu => write!(f, " relu"),
            Activation::LeakyRelu(a) => write!(f, " leaky_relu({a})"),
            Activation::Sigmoid => write!(f, " sigmoid"),
        }
    }
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, activation: Activation) -> Self {
        Self {
            name: name.into(),
            kind,
            activation,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    fn has_params(&self) -> bool {
        !matches!(self.kind, LayerKind::Unflatten { .. })
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |want: String| {
            Err(Error::Config(format!(
                "layer `{}` expects {want}, got input shape {input:?}",
                self.name
            )))
        };
        match self.kind {
            LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } => {
                let &[c, h, w] = input else {
                    return mismatch(format!("{in_channels}×H×W"));
                };
                if c != in_channels {
                    return mismatch(format!("{in_channels}×H×W"));
                }
                let out = |s: usize| {
                    let padded = s + 2 * padding;
                    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
                };
                match (out(h), out(w)) {
                    (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                    _ => Err(Error::Config(format!(
                        "layer `{}`: kernel {kernel} stride {stride} padding {padding} gives no output for {h}×{w}",
                        self.name
                    ))),
                }
            }
            LayerKind::ConvTranspose { in_channels, out_channels, kernel, stride, padding } => {
                let &[c, h, w] = input else {
                    return mismatch(format!("{in_channels}×H×W"));
                };
                if c != in_channels {
                    return mismatch(format!("{in_channels}×H×W"));
                }
                let out = |s: usize| {
                    let full = (s - 1) * stride + kernel;
                    (stride > 0 && full > 2 * padding).then(|| full - 2 * padding)
                };
                match (out(h), out(w)) {
                    (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                    _ => Err(Error::Config(format!(
                        "layer `{}`: transposed conv gives no output for {h}×{w}",
                        self.name
                    ))),
                }
            }
            LayerKind::Dense { in_features, out_features } => {
                if input.iter().product::<usize>() != in_features {
                    return mismatch(format!("{in_features} features"));
                }
                Ok(vec![out_features])
            }
            LayerKind::Unflatten { channels, height, width } => {
                if input.iter().product::<usize>() != channels * height * width {
                    return mismatch(format!("{} features", channels * height * width));
                }
                Ok(vec![channels, height, width])
            }
        }
    }

    fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv { in_channels, out_channels, kernel, .. } => {
                Some(vec![out_channels, in_channels, kernel, kernel])
            }
            LayerKind::ConvTranspose { in_channels, out_channels, kernel, .. } => {
                Some(vec![in_channels, out_channels, kernel, kernel])
            }
            LayerKind::Dense { in_features, out_features } => Some(vec![in_features, out_features]),
            LayerKind::Unflatten { .. } => None,
        }
    }

    fn bias_len(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv { out_channels, .. } | LayerKind::ConvTranspose { out_channels, .. } => {
                Some(out_channels)
            }
            LayerKind::Dense { out_features, .. } => Some(out_features),
            LayerKind::Unflatten { .. } => None,
        }
    }

    // Effective fan-in/out: a strided transposed conv feeds each output
    // from kernel²/stride² input positions per channel.
    fn fans(&self) -> (f64, f64) {
        match self.kind {
            LayerKind::Conv { in_channels, out_channels, kernel, stride, .. } => {
                let k2 = (kernel * kernel) as f64;
                let s2 = (stride * stride) as f64;
                (in_channels as f64 * k2, out_channels as f64 * k2 / s2)
            }
            LayerKind::ConvTranspose { in_channels, out_channels, kernel, stride, .. } => {
                let k2 = (kernel * kernel) as f64;
                let s2 = (stride * stride) as f64;
                (in_channels as f64 * k2 / s2, out_channels as f64 * k2)
            }
            LayerKind::Dense { in_features, out_features } => (in_features as f64, out_features as f64),
            LayerKind::Unflatten { .. } => (1.0, 1.0),
        }
    }

    /// Weight standard deviation: He for the relu family, Xavier otherwise.
    pub fn init_std(&self) -> f64 {
        let (fan_in, fan_out) = self.fans();
        if self.activation.is_relu_family() {
            (2.0 / fan_in).sqrt()
        } else {
            (2.0 / (fan_in + fan_out)).sqrt()
        }
    }
}

/// Static shape check: returns the per-sample shape after every layer.
pub fn propagate_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(specs.len());
    let mut current = input.to_vec();
    for spec in specs {
        current = spec.output_shape(&current)?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}

/// Draws initial parameters for a layer stack fed with `input` samples.
pub fn init_params<T: Real>(specs: &[LayerSpec], input: &[usize], seed: u64) -> Result<ParamStore<T>> {
    propagate_shapes(specs, input)?;
    let mut store = ParamStore::new();
    init_params_into(&mut store, specs, seed)?;
    Ok(store)
}

pub fn init_params_into<T: Real>(store: &mut ParamStore<T>, specs: &[LayerSpec], seed: u64) -> Result<()> {
    let mut rng = Pcg32::new(seed);
    for spec in specs.iter().filter(|s| s.has_params()) {
        let shape = spec.weight_shape().expect("parameterized layer");
        let std = spec.init_std();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(std * rng.normal())).collect();
        store.insert(spec.weight_name(), Tensor::new(shape, data)?)?;
        let bias = spec.bias_len().expect("parameterized layer");
        store.insert(spec.bias_name(), Tensor::zeros(vec![bias]))?;
    }
    Ok(())
}

/// Applies one layer to a batch `x[N×…]`.
pub fn forward_layer<T: Real>(g: &mut Graph<T>, spec: &LayerSpec, params: &BoundParams, x: Var) -> Result<Var> {
    let batch = *g
        .shape(x)
        .first()
        .ok_or_else(|| Error::dim("forward_layer", "input has no batch axis"))?;
    let per_sample = g.shape(x)[1..].to_vec();
    let expected = spec.output_shape(&per_sample).map_err(|e| match e {
        Error::Config(detail) => Error::dim("forward_layer", detail),
        other => other,
    })?;
    let pre = match spec.kind {
        LayerKind::Conv { stride, padding, .. } => {
            let y = g.conv2d(x, params.var(&spec.weight_name())?, stride, padding)?;
            g.add_bias(y, params.var(&spec.bias_name())?)?
        }
        LayerKind::ConvTranspose { stride, padding, .. } => {
            let y = g.conv_transpose2d(x, params.var(&spec.weight_name())?, stride, padding)?;
            g.add_bias(y, params.var(&spec.bias_name())?)?
        }
        LayerKind::Dense { in_features, .. } => {
            let flat = if per_sample.len() == 1 {
                x
            } else {
                g.reshape(x, &[batch, in_features])?
            };
            let y = g.matmul(flat, params.var(&spec.weight_name())?)?;
            g.add_bias(y, params.var(&spec.bias_name())?)?
        }
        LayerKind::Unflatten { channels, height, width } => g.reshape(x, &[batch, channels, height, width])?,
    };
    debug_assert_eq!(&g.shape(pre)[1..], expected.as_slice());
    match spec.activation {
        Activation::Linear => Ok(pre),
        Activation::Relu => g.relu(pre),
        Activation::LeakyRelu(a) => g.leaky_relu(pre, a),
        Activation::Sigmoid => g.sigmoid(pre),
    }
}

pub fn forward_stack<T: Real>(g: &mut Graph<T>, specs: &[LayerSpec], params: &BoundParams, x: Var) -> Result<Var> {
    specs.iter().try_fold(x, |h, spec| forward_layer(g, spec, params, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn dense(name: &str, i: usize, o: usize, act: Activation) -> LayerSpec {
        LayerSpec::new(name, LayerKind::Dense { in_features: i, out_features: o }, act)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let specs = vec![
            LayerSpec::new(
                "c",
                LayerKind::Conv { in_channels: 3, out_channels: 4, kernel: 4, stride: 2, padding: 1 },
                Activation::LeakyRelu(0.01),
            ),
            dense("d", 4 * 14 * 14, 5, Activation::Sigmoid),
        ];
        let a: ParamStore<f32> = init_params(&specs, &[3, 28, 28], 9).unwrap();
        let b: ParamStore<f32> = init_params(&specs, &[3, 28, 28], 9).unwrap();
        assert_eq!(a, b);
        let c: ParamStore<f32> = init_params(&specs, &[3, 28, 28], 10).unwrap();
        assert_ne!(a, c);
        for name in ["c.bias", "d.bias"] {
            assert!(a.value(name).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn he_std_for_dense_relu_layer() {
        let spec = [dense("d", 10, 10, Activation::Relu)];
        let target = (2.0f64 / 10.0).sqrt();
        for seed in 0..10 {
            let s: ParamStore<f64> = init_params(&spec, &[10], seed).unwrap();
            let w = s.value("d.weight").unwrap().data();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
            assert!((std - target).abs() / target < 0.2, "seed {seed}: std {std}");
        }
    }

    #[test]
    fn inconsistent_specs_are_configuration_errors() {
        let specs = vec![dense("a", 10, 4, Activation::Relu), dense("b", 5, 2, Activation::Linear)];
        assert!(matches!(init_params::<f32>(&specs, &[10], 0), Err(Error::Config(_))));
    }

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let spec = dense("id", 7, 7, Activation::Linear);
        let mut store = ParamStore::<f64>::new();
        store.insert("id.weight", Tensor::eye(7)).unwrap();
        store.insert("id.bias", Tensor::zeros(vec![7])).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = Tensor::from_f64(vec![1, 7], &[0.1, -2.0, 3.0, 0.0, 5.5, -0.25, 1.0]).unwrap();
        let xv = g.constant(x.clone());
        let y = forward_layer(&mut g, &spec, &p, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn conv_layer_declared_shape() {
        let spec = LayerSpec::new(
            "c",
            LayerKind::Conv { in_channels: 3, out_channels: 32, kernel: 4, stride: 2, padding: 1 },
            Activation::LeakyRelu(0.01),
        );
        assert_eq!(spec.output_shape(&[3, 56, 56]).unwrap(), vec![32, 28, 28]);
        let store: ParamStore<f32> = init_params(std::slice::from_ref(&spec), &[3, 56, 56], 0).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::zeros(vec![1, 3, 56, 56]));
        let y = forward_layer(&mut g, &spec, &p, x).unwrap();
        assert_eq!(g.shape(y), &[1, 32, 28, 28]);
        let bad = g.constant(Tensor::zeros(vec![1, 4, 56, 56]));
        assert!(matches!(forward_layer(&mut g, &spec, &p, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn two_layer_stack_gradients() {
        let specs = vec![
            dense("a", 6, 5, Activation::LeakyRelu(0.01)),
            dense("b", 5, 3, Activation::Sigmoid),
        ];
        let store: ParamStore<f64> = init_params(&specs, &[6], 4).unwrap();
        let names: Vec<String> = store.names().map(String::from).collect();
        let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| store.value(n).unwrap().clone()).collect();
        // Non-zero biases so every path is exercised.
        for t in inputs.iter_mut().filter(|t| t.ndim() == 1) {
            *t = t.map(|_| 0.1);
        }
        let x = Tensor::from_f64(vec![2, 6], &[0.3, -0.2, 0.9, 0.1, -0.7, 0.5, 0.2, 0.4, -0.3, 0.8, 0.05, -0.6]).unwrap();
        let err = grad_check(
            |g, vars| {
                let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
                let xv = g.constant(x.clone());
                let y = forward_stack(g, &specs, &bound, xv)?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }
}
