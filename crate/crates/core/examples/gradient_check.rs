//! Compares tape gradients with central finite differences, first for a
//! small convolutional expression and then for the full CVAE loss.

use blindvae::data::synth_generate;
use blindvae::model::{loss, CvaeConfig, CvaeModel, Variant};
use blindvae::nn::BoundParams;
use blindvae::rng::Pcg32;
use blindvae::tensor::{grad_check, grad_check_steps, Graph, Tensor, Var};
use blindvae::NumericMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Pcg32::new(1);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())
    };
    let inputs = [random(&[1, 2, 6, 6])?, random(&[3, 2, 3, 3])?];
    let conv = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], 1, 1)?;
        let y = g.sigmoid(y)?;
        let y = g.mul(y, y)?;
        g.sum(y)
    };
    println!("conv2d + sigmoid: max relative error {:.2e}", grad_check(conv, &inputs, 1e-5)?);

    let config = CvaeConfig {
        latent_dim: 4,
        image_side: 28,
        numeric_mode: NumericMode::F64,
        ..CvaeConfig::default()
    };
    let model = CvaeModel::<f64>::new(config, Variant::Conditional)?;
    let sample = &synth_generate(20, 28, 0)?.train[0];
    let image = sample.pixels.cast::<f64>().reshape(vec![1, 3, 28, 28])?;
    let attrs = Tensor::from_f64(vec![1, 7], &sample.attrs.to_array())?;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let values: Vec<Tensor<f64>> = names.iter().filter_map(|n| model.params.value(n).cloned()).collect();
    let full = |g: &mut Graph<f64>, vars: &[Var]| {
        let bound = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
        let x = g.constant(image.clone());
        let a = g.constant(attrs.clone());
        let fw = model.forward_graph(g, &bound, x, Some(a), &mut Pcg32::new(0))?;
        Ok(loss(g, fw.recon, x, fw.mu, fw.logvar, 1.0)?.total)
    };
    let checks = grad_check_steps(full, &values, &[1e-4, 1e-5, 1e-6], Some(6), 0)?;
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("coordinates checked");
    println!(
        "full loss: {} coordinates, worst {:.2e} at {}[{}] (analytic {:.4e}, numeric {:.4e}, step {:e})",
        checks.len(),
        worst.rel_error,
        names[worst.input],
        worst.index,
        worst.analytic,
        worst.numeric,
        worst.step
    );
    Ok(())
}
