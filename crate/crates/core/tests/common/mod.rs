#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::OnceLock;

use blindvae::data::{synth_generate, DatasetSplit};
use blindvae::model::{loss, train, CvaeConfig, CvaeModel, Variant};
use blindvae::nn::BoundParams;
use blindvae::rng::Pcg32;
use blindvae::tensor::{Graph, Tensor, Var};
use blindvae::{NumericMode, Result};

pub type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub fn random_tensor(shape: &[usize], rng: &mut Pcg32) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// `sum(x ⊙ w)` for fixed pseudo-random `w`, so every output coordinate
/// contributes a distinct weight to the gradient.
pub fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = Pcg32::with_stream(seed, 99);
    let w = random_tensor(g.shape(x), &mut rng);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum(p)
}

/// One scalar test function per differentiable op, with input shapes.
pub fn op_cases() -> Vec<(&'static str, OpFn, Vec<Vec<usize>>)> {
    vec![
        ("matmul", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 1)
        }), vec![vec![4, 5], vec![5, 2]]),
        ("conv2d", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], 2, 1)?;
            weighted_sum(g, y, 2)
        }), vec![vec![2, 3, 6, 6], vec![4, 3, 4, 4]]),
        ("conv_transpose2d", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.conv_transpose2d(v[0], v[1], 2, 1)?;
            weighted_sum(g, y, 3)
        }), vec![vec![2, 4, 3, 3], vec![4, 3, 4, 4]]),
        ("relu", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.relu(v[0])?;
            weighted_sum(g, y, 4)
        }), vec![vec![3, 7]]),
        ("leaky_relu", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.leaky_relu(v[0], 0.01)?;
            weighted_sum(g, y, 5)
        }), vec![vec![3, 7]]),
        ("sigmoid", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.sigmoid(v[0])?;
            weighted_sum(g, y, 6)
        }), vec![vec![3, 7]]),
        ("exp", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.exp(v[0])?;
            weighted_sum(g, y, 7)
        }), vec![vec![3, 7]]),
        ("add", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 8)
        }), vec![vec![2, 5], vec![2, 5]]),
        ("sub", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y, 9)
        }), vec![vec![2, 5], vec![2, 5]]),
        ("mul", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 10)
        }), vec![vec![2, 5], vec![2, 5]]),
        ("scale", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.scale(v[0], -2.5)?;
            weighted_sum(g, y, 11)
        }), vec![vec![2, 5]]),
        ("add_scalar", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.add_scalar(v[0], 0.75)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, 12)
        }), vec![vec![2, 5]]),
        ("sum", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.mul(v[0], v[0])?;
            g.sum(y)
        }), vec![vec![2, 5]]),
        ("reshape", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.reshape(v[0], &[5, 2])?;
            weighted_sum(g, y, 13)
        }), vec![vec![2, 5]]),
        ("concat", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            weighted_sum(g, y, 14)
        }), vec![vec![2, 6], vec![2, 3]]),
        ("narrow", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.narrow(v[0], 1, 2, 3)?;
            weighted_sum(g, y, 15)
        }), vec![vec![2, 6]]),
        ("add_bias", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.add_bias(v[0], v[1])?;
            weighted_sum(g, y, 16)
        }), vec![vec![2, 3, 2, 2], vec![3]]),
        ("softmax_cross_entropy", Box::new(|g: &mut Graph<f64>, v: &[Var]| {
            g.softmax_cross_entropy(v[0], &[0, 2, 1, 2])
        }), vec![vec![4, 3]]),
    ]
}

/// Max relative finite-difference error of one op at inputs drawn from `seed`.
pub fn op_grad_error(f: &OpFn, shapes: &[Vec<usize>], seed: u64) -> f64 {
    let mut rng = Pcg32::new(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
    blindvae::tensor::grad_check(f, &inputs, 1e-5).unwrap()
}

/// Small 64-bit model for end-to-end gradient checks.
pub fn small_config(seed: u64) -> CvaeConfig {
    CvaeConfig {
        latent_dim: 4,
        image_side: 28,
        batch_size: 1,
        epochs: 1,
        seed,
        numeric_mode: NumericMode::F64,
        ..CvaeConfig::default()
    }
}

/// Max relative error of the full loss gradient over a sample of
/// coordinates from every parameter tensor, on a one-image batch.
pub fn cvae_grad_error(seed: u64, per_tensor: usize) -> f64 {
    let model = CvaeModel::<f64>::new(small_config(seed), Variant::Conditional).unwrap();
    let data = synth_generate(20, 28, seed).unwrap();
    let sample = &data.train[0];
    let image = sample.pixels.cast::<f64>().reshape(vec![1, 3, 28, 28]).unwrap();
    let attrs = Tensor::from_f64(vec![1, 7], &sample.attrs.to_array()).unwrap();
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let values: Vec<Tensor<f64>> = names.iter().map(|n| model.params.value(n).unwrap().clone()).collect();
    let f = |g: &mut Graph<f64>, vars: &[Var]| {
        let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
        let x = g.constant(image.clone());
        let a = g.constant(attrs.clone());
        let mut noise = Pcg32::new(seed);
        let fw = model.forward_graph(g, &bound, x, Some(a), &mut noise)?;
        Ok(loss(g, fw.recon, x, fw.mu, fw.logvar, model.config.beta)?.total)
    };
    // The loss is O(100) while some gradients are O(1e-4), so small steps
    // lose digits to cancellation and wide ones can straddle a leaky-relu
    // kink. Each coordinate keeps its best agreement over a step ladder.
    let checks = blindvae::tensor::grad_check_steps(f, &values, &[1e-4, 1e-5, 1e-6], Some(per_tensor), seed).unwrap();
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

/// A small 32-bit model trained briefly on synthetic data, shared by the
/// tests of one binary, together with its data.
pub fn tiny_trained() -> &'static (CvaeModel<f32>, DatasetSplit) {
    static MODEL: OnceLock<(CvaeModel<f32>, DatasetSplit)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = synth_generate(240, 28, 21).unwrap();
        let config = CvaeConfig {
            latent_dim: 8,
            image_side: 28,
            epochs: 4,
            seed: 21,
            ..CvaeConfig::default()
        };
        let mut model = CvaeModel::new(config, Variant::Conditional).unwrap();
        train(&mut model, &data.train, &mut |_| {}).unwrap();
        (model, data)
    })
}

/// `E_q[log q(z) − log p(z)]` estimated from `n` draws of `z ~ q`.
pub fn monte_carlo_kl(mu: &[f64], logvar: &[f64], n: usize, rng: &mut Pcg32) -> f64 {
    let mut total = 0.0;
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for (&m, &lv) in mu.iter().zip(logvar) {
            let var = lv.exp();
            let z = m + var.sqrt() * rng.normal();
            let log_q = -0.5 * ((2.0 * PI * var).ln() + (z - m) * (z - m) / var);
            let log_p = -0.5 * ((2.0 * PI).ln() + z * z);
            log_ratio += log_q - log_p;
        }
        total += log_ratio;
    }
    total / n as f64
}
