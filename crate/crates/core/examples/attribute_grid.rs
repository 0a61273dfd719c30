//! Builds a grid of reveals across ages and genders for one image, with the
//! original in the top-left tile.
//!
//! ```text
//! cargo run --release --example attribute_grid -- [checkpoint.bafo] [out.png]
//! ```

use blindvae::conceal::render_grid;
use blindvae::data::synth_generate;
use blindvae::eval::DEFAULT_TARGET_AGES;
use blindvae::model::{load_checkpoint, train, CvaeConfig, CvaeModel, Origin, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.get(1).map_or("out/grid.png", String::as_str);
    if let Some(parent) = std::path::Path::new(out).parent() {
        std::fs::create_dir_all(parent)?;
    }

    let data = synth_generate(400, 28, 5)?;
    let model: CvaeModel<f32> = match args.first() {
        Some(path) => load_checkpoint(path)?,
        None => {
            let config = CvaeConfig { latent_dim: 16, image_side: 28, epochs: 5, seed: 5, ..CvaeConfig::default() };
            let mut model = CvaeModel::new(config, Variant::Conditional)?;
            train(&mut model, &data.train, &mut |_| {})?;
            model
        }
    };

    let image = &data.test[0].pixels;
    let origin = data.test[0].attrs.origin_label().map_or(Origin::Neutral, Origin::Class);
    let grid = render_grid(&model, image, &DEFAULT_TARGET_AGES, &[0.0, 1.0], origin)?;
    grid.save(out)?;
    println!("wrote {out}: {} tiles in {} rows x {} columns", grid.tiles, grid.rows, grid.cols);
    Ok(())
}
