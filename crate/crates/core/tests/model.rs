mod common;

use blindvae::data::synth_generate;
use blindvae::model::{
    checkpoint_bytes, kl_divergence, load_checkpoint, load_checkpoint_expecting, loss, model_from_bytes,
    reparameterize, save_checkpoint, train, AttributeVector, CvaeConfig, CvaeModel, Gender, Variant, ATTR_LEN,
};
use blindvae::nn::propagate_shapes;
use blindvae::rng::{Pcg32, ZeroNoise};
use blindvae::tensor::{Graph, Tensor};
use blindvae::{Error, NumericMode};
use common::{cvae_grad_error, monte_carlo_kl, random_tensor};
use proptest::prelude::*;

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = Pcg32::new(77);
    for case in 0..10 {
        let d = 2 + rng.below(5) as usize;
        let mu: Vec<f64> = (0..d).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.uniform(-1.5, 1.0)).collect();
        let exact = kl_divergence(&mu, &logvar);
        let estimate = monte_carlo_kl(&mu, &logvar, 200_000, &mut rng);
        let rel = (exact - estimate).abs() / exact;
        assert!(rel < 0.02, "case {case}: closed form {exact}, estimate {estimate}");
    }
}

fn graph_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    let d = mu.len();
    let mut g = Graph::<f64>::new();
    let recon = g.constant(Tensor::zeros(vec![1, 3]));
    let target = g.constant(Tensor::zeros(vec![1, 3]));
    let m = g.constant(Tensor::new(vec![1, d], mu.to_vec()).unwrap());
    let lv = g.constant(Tensor::new(vec![1, d], logvar.to_vec()).unwrap());
    let l = loss(&mut g, recon, target, m, lv, 1.0).unwrap();
    g.value(l.kl).item()
}

#[test]
fn kl_reference_values() {
    assert_eq!(graph_kl(&[0.0; 16], &[0.0; 16]), 0.0);
    assert_eq!(kl_divergence(&[0.0; 16], &[0.0; 16]), 0.0);
    assert!((graph_kl(&[1.0; 48], &[0.0; 48]) - 24.0).abs() < 1e-12);
}

#[test]
fn loss_terms_combine_with_beta() {
    let mut g = Graph::<f64>::new();
    let recon = g.constant(Tensor::from_f64(vec![2, 2], &[0.5, 0.5, 0.0, 1.0]).unwrap());
    let target = g.constant(Tensor::from_f64(vec![2, 2], &[0.0, 0.5, 0.0, 0.0]).unwrap());
    let mu = g.constant(Tensor::from_f64(vec![2, 1], &[1.0, 0.0]).unwrap());
    let lv = g.constant(Tensor::zeros(vec![2, 1]));
    let l = loss(&mut g, recon, target, mu, lv, 3.0).unwrap();
    // Squared errors 0.25 and 1.0 over two samples; KL 0.5 and 0.
    assert!((g.value(l.recon).item() - 0.625).abs() < 1e-15);
    assert!((g.value(l.kl).item() - 0.25).abs() < 1e-15);
    assert!((g.value(l.total).item() - (0.625 + 0.75)).abs() < 1e-15);
    let bad = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(loss(&mut g, recon, bad, mu, lv, 1.0).is_err());
}

#[test]
fn reparameterization_limits_and_moments() {
    let mut g = Graph::<f64>::new();
    let mu = g.constant(Tensor::from_f64(vec![3], &[0.3, -1.0, 2.0]).unwrap());
    let lv = g.constant(Tensor::from_f64(vec![3], &[0.5, 0.1, -0.4]).unwrap());
    let z = reparameterize(&mut g, mu, lv, &mut ZeroNoise).unwrap();
    assert_eq!(g.value(z), g.value(mu));

    let tiny = g.constant(Tensor::full(vec![3], -50.0));
    let z = reparameterize(&mut g, mu, tiny, &mut Pcg32::new(1)).unwrap();
    assert!(g.value(z).max_abs_diff(g.value(mu)).unwrap() < 1e-10);

    let d = 4;
    let n = 10_000;
    let mut g = Graph::<f64>::new();
    let mu = g.constant(Tensor::zeros(vec![n, d]));
    let lv = g.constant(Tensor::zeros(vec![n, d]));
    let z = reparameterize(&mut g, mu, lv, &mut Pcg32::new(5)).unwrap();
    let data = g.value(z).data();
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| data[i * d + j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "coordinate {j} mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "coordinate {j} variance {var}");
    }
}

#[test]
fn reparameterization_moments_for_shifted_gaussian() {
    let n = 10_000;
    let (m, lv) = (1.5, (0.25f64).ln());
    let mut g = Graph::<f64>::new();
    let mu = g.constant(Tensor::full(vec![n], m));
    let logvar = g.constant(Tensor::full(vec![n], lv));
    let z = reparameterize(&mut g, mu, logvar, &mut Pcg32::new(8)).unwrap();
    let data = g.value(z).data();
    let mean = data.iter().sum::<f64>() / n as f64;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    assert!((mean - m).abs() < 0.05 && (var - 0.25).abs() < 0.05, "{mean} {var}");
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = cvae_grad_error(seed, 12);
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn architecture_invariants() {
    for side in [28, 56] {
        for d in [2, 16, 48, 100] {
            let config = CvaeConfig { latent_dim: d, image_side: side, ..CvaeConfig::default() };
            let model = CvaeModel::<f32>::new(config, Variant::Conditional).unwrap();
            let enc = propagate_shapes(&model.encoder_specs, &[3, side, side]).unwrap();
            assert_eq!(enc.last().unwrap(), &vec![2 * d]);
            let dec = propagate_shapes(&model.decoder_specs, &[d + ATTR_LEN]).unwrap();
            assert_eq!(dec.last().unwrap(), &vec![3, side, side]);
            assert!(propagate_shapes(&model.decoder_specs, &[d]).is_err());
        }
    }
}

#[test]
fn encode_is_deterministic_finite_and_label_blind() {
    let model = CvaeModel::<f32>::new(CvaeConfig { latent_dim: 16, image_side: 28, ..Default::default() }, Variant::Conditional)
        .unwrap();
    let data = synth_generate(20, 28, 3).unwrap();
    let mut sample = data.train[0].clone();
    let first = model.encode(&sample.pixels).unwrap();
    assert_eq!(first, model.encode(&sample.pixels).unwrap());
    assert!(first.0.is_finite() && first.1.is_finite());
    assert!(first.0.data().iter().all(|v| v.abs() < 100.0));
    sample.attrs = AttributeVector::from_labels(99.0, Gender::Female, 4).unwrap();
    assert_eq!(first, model.encode(&sample.pixels).unwrap());
}

#[test]
fn encode_rejects_wrong_shape() {
    let model = CvaeModel::<f32>::new(CvaeConfig { image_side: 28, ..Default::default() }, Variant::Conditional).unwrap();
    let err = model.encode(&Tensor::zeros(vec![3, 56, 56])).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }), "{err}");
}

#[test]
fn config_validation() {
    let bad = [
        CvaeConfig { image_side: 32, ..Default::default() },
        CvaeConfig { latent_dim: 1, ..Default::default() },
        CvaeConfig { beta: 0.0, ..Default::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
}

fn tiny_config(seed: u64, mode: NumericMode) -> CvaeConfig {
    CvaeConfig { latent_dim: 4, image_side: 28, batch_size: 16, epochs: 3, seed, numeric_mode: mode, ..Default::default() }
}

#[test]
fn training_is_bit_reproducible_in_64_bit_mode() {
    let data = synth_generate(60, 28, 2).unwrap();
    let run = || {
        let mut model = CvaeModel::<f64>::new(tiny_config(9, NumericMode::F64), Variant::Conditional).unwrap();
        let history = train(&mut model, &data.train, &mut |_| {}).unwrap();
        (history, checkpoint_bytes(&model))
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.recon.to_bits(), y.recon.to_bits());
        assert_eq!(x.kl.to_bits(), y.kl.to_bits());
    }
    assert_eq!(ca, cb);
}

#[test]
fn empty_dataset_is_a_configuration_error() {
    let mut model = CvaeModel::<f32>::new(tiny_config(0, NumericMode::F32), Variant::Conditional).unwrap();
    assert!(matches!(train(&mut model, &[], &mut |_| {}), Err(Error::Config(_))));
}

#[test]
fn diverging_training_reports_epoch_and_step() {
    let data = synth_generate(40, 28, 2).unwrap();
    let mut config = tiny_config(1, NumericMode::F32);
    config.lr = 1e12;
    let mut model = CvaeModel::<f32>::new(config, Variant::Conditional).unwrap();
    match train(&mut model, &data.train, &mut |_| {}) {
        Err(Error::Diverged { epoch, step, .. }) => assert!(epoch >= 1 && step >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn stronger_kl_weight_ends_with_smaller_kl() {
    let data = synth_generate(200, 28, 4).unwrap();
    let final_kl = |beta: f64| {
        let config = CvaeConfig { beta, epochs: 4, ..tiny_config(3, NumericMode::F32) };
        let mut model = CvaeModel::<f32>::new(config, Variant::Conditional).unwrap();
        train(&mut model, &data.train, &mut |_| {}).unwrap().last().unwrap().kl
    };
    let (weak, strong) = (final_kl(1e-3), final_kl(5.0));
    assert!(strong < weak, "beta 5 kl {strong} vs beta 0.001 kl {weak}");
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let model = CvaeModel::<f32>::new(tiny_config(5, NumericMode::F32), Variant::Conditional).unwrap();
    let a = dir.path().join("a.bafo");
    let b = dir.path().join("b.bafo");
    save_checkpoint(&model, &a).unwrap();
    let loaded: CvaeModel<f32> = load_checkpoint(&a).unwrap();
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.encoder_specs, model.encoder_specs);
    assert_eq!(loaded.decoder_specs, model.decoder_specs);
    assert_eq!(loaded.format_version, model.format_version);
    for ((na, ea), (nb, eb)) in model.params.iter().zip(loaded.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ea.value, eb.value);
    }
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = std::fs::read(&a).unwrap();
    for cut in [0, 3, 7, 40, bytes.len() / 2, bytes.len() - 1] {
        match model_from_bytes::<f32>(&bytes[..cut]) {
            Err(Error::CheckpointFormat { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(model_from_bytes::<f32>(&bad_magic), Err(Error::CheckpointFormat { offset: 0, .. })));
    let mut bad_version = bytes;
    bad_version[4] = 99;
    assert!(matches!(model_from_bytes::<f32>(&bad_version), Err(Error::CheckpointFormat { offset: 4, .. })));

    assert!(matches!(load_checkpoint_expecting::<f32>(&a, Some(48)), Err(Error::Config(_))));
    assert!(load_checkpoint_expecting::<f32>(&a, Some(4)).is_ok());
}

#[test]
fn decode_outputs_are_open_unit_interval_images() {
    let model = CvaeModel::<f64>::new(tiny_config(2, NumericMode::F64), Variant::Conditional).unwrap();
    let mut rng = Pcg32::new(4);
    let z = random_tensor(&[4], &mut rng);
    let img = model.decode(&z, &AttributeVector::neutral(30.0).unwrap()).unwrap();
    assert_eq!(img.shape(), &[3, 28, 28]);
    assert!(img.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-3.0f64..3.0, 1..12),
        lv_seed in 0u64..10_000,
    ) {
        let mut rng = Pcg32::new(lv_seed);
        let logvar: Vec<f64> = mu.iter().map(|_| rng.uniform(-4.0, 3.0)).collect();
        let kl = kl_divergence(&mu, &logvar);
        prop_assert!(kl >= 0.0);
        let at_prior = mu.iter().chain(&logvar).all(|v| v.abs() < 1e-12);
        if !at_prior {
            prop_assert!(kl > 1e-9 || mu.iter().chain(&logvar).all(|v| v.abs() < 1e-4));
        }
        prop_assert!((graph_kl(&mu, &logvar) - kl).abs() <= 1e-9 * (1.0 + kl));
    }

    #[test]
    fn attribute_vectors_have_valid_origin_mass(age in 0.0f64..=116.0, gender in 0.0f64..=1.0, origin in 0usize..6) {
        let o = if origin == 5 { blindvae::model::Origin::Neutral } else { blindvae::model::Origin::Class(origin) };
        let a = AttributeVector::target(age, gender, o).unwrap();
        let arr = a.to_array();
        prop_assert_eq!(arr.len(), ATTR_LEN);
        let mass: f64 = arr[2..].iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
        prop_assert!(arr[2..].iter().all(|&v| v >= 0.0));
        prop_assert!((a.age_years() - age).abs() < 1e-9);
    }
}
