//! Trains the blind CVAE on the synthetic glyph dataset and saves a
//! checkpoint plus the per-epoch loss history.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [n_images] [epochs] [out_dir]
//! ```

use std::time::Instant;

use blindvae::data::synth_generate;
use blindvae::model::{save_checkpoint, train, write_loss_csv, CvaeConfig, CvaeModel, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(2000), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let out = std::path::PathBuf::from(args.get(2).map_or("out/train_synthetic", String::as_str));
    std::fs::create_dir_all(&out)?;

    let data = synth_generate(n, 28, 1)?;
    let config = CvaeConfig {
        latent_dim: 16,
        image_side: 28,
        epochs,
        seed: 1,
        ..CvaeConfig::default()
    };
    println!("{config:?}");
    let mut model = CvaeModel::<f32>::new(config, Variant::Conditional)?;
    let start = Instant::now();
    let history = train(&mut model, &data.train, &mut |s| {
        println!(
            "epoch {:>3}  recon {:>9.3}  kl {:>7.3}  total {:>9.3}  ({:.1}s)",
            s.epoch,
            s.recon,
            s.kl,
            s.total,
            start.elapsed().as_secs_f64()
        );
    })?;
    save_checkpoint(&model, out.join("model.bafo"))?;
    write_loss_csv(&history, out.join("loss.csv"))?;
    println!("wrote {}", out.display());
    Ok(())
}
