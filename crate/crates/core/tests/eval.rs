mod common;

use blindvae::conceal::{conceal, ConcealMode, RecordMeta};
use blindvae::data::{synth_generate, DatasetSplit, LabeledImage};
use blindvae::eval::{
    audit_disjoint, baseline_score, image_features, latent_codes, leakage_report_against, obedience_report,
    obedience_report_with, rmse, sampled_latent_codes, train_probe, ImageProbes, ProbeOptions, ProbeTask,
    DEFAULT_TARGET_AGES,
};
use blindvae::model::{CvaeConfig, CvaeModel, Variant};
use blindvae::rng::Pcg32;
use blindvae::Error;
use common::tiny_trained;

fn labels(task: ProbeTask, samples: &[LabeledImage]) -> Vec<f64> {
    samples.iter().map(|s| task.label(&s.attrs).unwrap()).collect()
}

/// Two Gaussian clusters in 8 dimensions, far apart along every axis.
fn clustered(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = Pcg32::new(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as f64;
            let x = (0..8).map(|_| rng.normal() + 3.0 * label).collect();
            (x, label)
        })
        .unzip()
}

#[test]
fn shuffled_labels_score_near_the_majority_baseline() {
    let (x, mut y) = clustered(1500, 1);
    Pcg32::new(2).shuffle(&mut y);
    let (train_x, test_x) = x.split_at(1000);
    let (train_y, test_y) = y.split_at(1000);
    let baseline = baseline_score(ProbeTask::Gender, train_y, test_y);
    for options in [ProbeOptions::linear(), ProbeOptions::mlp(32)] {
        let probe = train_probe(train_x, train_y, ProbeTask::Gender, &options, 3).unwrap();
        let acc = probe.score(test_x, test_y).unwrap();
        assert!((acc - baseline).abs() <= 0.05, "{:?}: {acc} vs baseline {baseline}", options.kind);
    }
}

#[test]
fn unshuffled_clusters_are_recovered() {
    let (x, y) = clustered(600, 4);
    let (train_x, test_x) = x.split_at(400);
    let (train_y, test_y) = y.split_at(400);
    let probe = train_probe(train_x, train_y, ProbeTask::Gender, &ProbeOptions::linear(), 5).unwrap();
    assert!(probe.score(test_x, test_y).unwrap() >= 0.99);
}

#[test]
fn pixel_age_probe_beats_the_mean_predictor() {
    let data = synth_generate(600, 28, 8).unwrap();
    let train_x: Vec<_> = data.train.iter().map(|s| image_features(&s.pixels)).collect();
    let test_x: Vec<_> = data.test.iter().map(|s| image_features(&s.pixels)).collect();
    let (train_y, test_y) = (labels(ProbeTask::Age, &data.train), labels(ProbeTask::Age, &data.test));
    let probe = train_probe(&train_x, &train_y, ProbeTask::Age, &ProbeOptions::mlp(64), 9).unwrap();
    let probe_rmse = rmse(&probe.predict(&test_x).unwrap(), &test_y);
    let mean_rmse = baseline_score(ProbeTask::Age, &train_y, &test_y);
    assert!(probe_rmse < 0.5 * mean_rmse, "probe {probe_rmse} vs mean predictor {mean_rmse}");
}

#[test]
fn untrained_model_leaks_little_gender() {
    let data = synth_generate(1000, 28, 13).unwrap();
    let config = CvaeConfig {
        latent_dim: 16,
        image_side: 28,
        seed: 13,
        ..CvaeConfig::default()
    };
    let model = CvaeModel::<f32>::new(config, Variant::Conditional).unwrap();
    let report = leakage_report_against(&model, None, &data, 13).unwrap();
    let gender = report.get(ProbeTask::Gender);
    assert!((gender.probe() - 0.5).abs() <= 0.10, "{report}");
    assert!(gender.plain_ae.is_none());
}

#[test]
fn sampled_codes_match_sample_mode_records() {
    let (model, data) = tiny_trained();
    let codes = sampled_latent_codes(model, &data.test[..5], 40).unwrap();
    for (i, (sample, code)) in data.test.iter().zip(&codes).enumerate() {
        let record = conceal(model, &sample.pixels, ConcealMode::Sample(40 + i as u64), RecordMeta::new("x", 0)).unwrap();
        let expected: Vec<f64> = record.z.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(code, &expected);
    }
    let means = latent_codes(model, &data.test[..5]).unwrap();
    for (sample, code) in data.test.iter().zip(&means) {
        let record = conceal(model, &sample.pixels, ConcealMode::Mean, RecordMeta::new("x", 0)).unwrap();
        let expected: Vec<f64> = record.z.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(code, &expected);
    }
}

#[test]
fn relabeling_changes_neither_codes_nor_probe_predictions() {
    let (model, data) = tiny_trained();
    let mut relabeled = data.clone();
    let mut attrs: Vec<_> = relabeled.train.iter().map(|s| s.attrs).collect();
    Pcg32::new(17).shuffle(&mut attrs);
    for (s, a) in relabeled.train.iter_mut().zip(attrs) {
        s.attrs = a;
    }

    let codes = latent_codes(model, &data.train).unwrap();
    assert_eq!(codes, latent_codes(model, &relabeled.train).unwrap());
    let sampled = sampled_latent_codes(model, &data.train, 3).unwrap();
    assert_eq!(sampled, sampled_latent_codes(model, &relabeled.train, 3).unwrap());

    let probe = train_probe(
        &codes,
        &labels(ProbeTask::Race, &data.train),
        ProbeTask::Race,
        &ProbeOptions::linear(),
        1,
    )
    .unwrap();
    let relabeled_codes = latent_codes(model, &relabeled.train).unwrap();
    assert_eq!(probe.predict(&codes).unwrap(), probe.predict(&relabeled_codes).unwrap());
}

#[test]
fn overlapping_splits_are_refused() {
    let (model, data) = tiny_trained();
    let mut leaky: DatasetSplit = data.clone();
    leaky.test.push(leaky.train[0].clone());
    assert!(matches!(audit_disjoint(&leaky), Err(Error::Contract(_))));
    assert!(matches!(leakage_report_against(model, None, &leaky, 0), Err(Error::Contract(_))));
    assert!(audit_disjoint(data).is_ok());
}

#[test]
fn leakage_reports_are_deterministic() {
    let (model, data) = tiny_trained();
    let a = leakage_report_against(model, Some(model), data, 5).unwrap();
    let b = leakage_report_against(model, Some(model), data, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!((a.n_train, a.n_test), (data.train.len(), data.test.len()));

    let csv = a.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("attribute,metric,sampled_linear,sampled_mlp,sampled,mean_linear,mean_mlp,mean,baseline,plain_ae,plain_ae_mean")
    );
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["gender", "race", "age"]);
}

#[test]
fn leakage_scores_come_from_held_out_data() {
    let (model, data) = tiny_trained();
    let report = leakage_report_against(model, None, data, 5).unwrap();
    // Every accuracy is a multiple of one test sample.
    let n_test = data.test.len() as f64;
    for task in [ProbeTask::Gender, ProbeTask::Race] {
        let a = report.get(task);
        for score in [a.sampled.linear, a.sampled.mlp, a.mean.linear, a.mean.mlp, a.baseline] {
            let hits = score * n_test;
            assert!((hits - hits.round()).abs() < 1e-9, "{task:?} score {score} is not k/{n_test}");
        }
    }
}

#[test]
fn obedience_report_has_table_structure_and_is_deterministic() {
    let (model, data) = tiny_trained();
    let probes = ImageProbes::train(&data.train, 6).unwrap();
    let a = obedience_report_with(model, &probes, data, &DEFAULT_TARGET_AGES, 6).unwrap();
    let b = obedience_report(model, data, &DEFAULT_TARGET_AGES, 6).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());

    let ages: Vec<f64> = a.rows.iter().map(|r| r.target_age).collect();
    assert_eq!(ages, DEFAULT_TARGET_AGES);
    let mean_rmse = a.rows.iter().map(|r| r.rmse).sum::<f64>() / 5.0;
    assert!((a.average_rmse - mean_rmse).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&a.gender_flip_rate));

    let csv = a.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "target_age,rmse,mae");
    assert!(lines[1].starts_with("1,"));
    assert!(lines[5].starts_with("80,"));
    assert!(lines[6].starts_with("average,"));

    let text = a.to_string();
    assert!(text.contains("RMSE") && text.contains("MAE") && text.contains("Average"), "{text}");
}
