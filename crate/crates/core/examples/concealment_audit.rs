//! Trains the conditional model and its plain-autoencoder twin on
//! synthetic data, then reports latent leakage, reconstruction quality
//! and attribute obedience.
//!
//! ```text
//! cargo run --release --example concealment_audit -- [n_images] [epochs] [beta] [latent_dim] [noplain] [cache_dir] [batch_size]
//! ```
//!
//! With `cache_dir`, trained checkpoints are saved there and reused on the
//! next run with the same settings.

use std::path::PathBuf;
use std::time::Instant;

use blindvae::data::synth_generate;
use blindvae::eval::{
    leakage_report_against, obedience_report, reconstruction_report, train_plain_baseline, DEFAULT_TARGET_AGES,
};
use blindvae::model::{load_checkpoint, save_checkpoint, train, CvaeConfig, CvaeModel, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(2000), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(50), |s| s.parse())?;
    let beta: f64 = args.get(2).map_or(Ok(1.0), |s| s.parse())?;
    let latent_dim: usize = args.get(3).map_or(Ok(16), |s| s.parse())?;
    let batch_size: usize = args.get(6).map_or(Ok(8), |s| s.parse())?;

    let start = Instant::now();
    let data = synth_generate(n, 28, 1)?;
    let config = CvaeConfig {
        latent_dim,
        image_side: 28,
        batch_size,
        epochs,
        beta,
        seed: 1,
        ..CvaeConfig::default()
    };
    println!("{config:?}");
    let cache = args.get(5).map(PathBuf::from);
    let cached = |variant: &str| {
        cache
            .as_ref()
            .map(|dir| dir.join(format!("{variant}_n{n}_e{epochs}_b{beta}_d{latent_dim}_bs{batch_size}.bafo")))
    };

    let model = match cached("cvae").filter(|p| p.exists()) {
        Some(path) => load_checkpoint::<f32>(&path)?,
        None => {
            let mut model = CvaeModel::<f32>::new(config, Variant::Conditional)?;
            let history = train(&mut model, &data.train, &mut |s| {
                println!(
                    "epoch {:>3}  recon {:>9.3}  kl {:>7.3}  ({:.0}s)",
                    s.epoch,
                    s.recon,
                    s.kl,
                    start.elapsed().as_secs_f64()
                )
            })?;
            let first = history.first().map_or(f64::NAN, |s| s.recon);
            let last = history.last().map_or(f64::NAN, |s| s.recon);
            println!("recon ratio last/first = {:.3}", last / first);
            if let Some(path) = cached("cvae") {
                save_checkpoint(&model, path)?;
            }
            model
        }
    };

    let recon = reconstruction_report(&model, &data)?;
    println!("reveal RMSE {:.4} vs mean-image RMSE {:.4}", recon.rmse, recon.mean_image_rmse);

    let with_plain = args.get(4).map_or(true, |s| s != "noplain");
    let plain = match (with_plain, cached("plain")) {
        (false, _) => None,
        (true, Some(path)) if path.exists() => Some(load_checkpoint::<f32>(&path)?),
        (true, path) => {
            let plain = train_plain_baseline(&model, &data)?;
            if let Some(path) = path {
                save_checkpoint(&plain, path)?;
            }
            Some(plain)
        }
    };
    println!("plain baseline done ({:.0}s)", start.elapsed().as_secs_f64());
    let leakage = leakage_report_against(&model, plain.as_ref(), &data, 7)?;
    println!("{leakage}");
    println!("({:.0}s)", start.elapsed().as_secs_f64());

    let obedience = obedience_report(&model, &data, &DEFAULT_TARGET_AGES, 7)?;
    println!("{obedience}");
    println!("done in {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
