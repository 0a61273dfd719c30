//! Conceals one image into an attribute-free record, then reveals it under
//! several requested attributes.
//!
//! ```text
//! cargo run --release --example conceal_reveal -- [checkpoint.bafo] [out_dir]
//! ```
//!
//! Without a checkpoint a small model is trained first, which takes a few
//! seconds and gives rough reveals.

use blindvae::conceal::{ConcealMode, ConcealedRecord, Concealer, RecordMeta};
use blindvae::data::{image_write, synth_generate};
use blindvae::model::{load_checkpoint, train, AttributeVector, CvaeConfig, CvaeModel, Origin, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = std::path::PathBuf::from(args.get(1).map_or("out/conceal_reveal", String::as_str));
    std::fs::create_dir_all(&out)?;

    let data = synth_generate(400, 28, 3)?;
    let model: CvaeModel<f32> = match args.first() {
        Some(path) => load_checkpoint(path)?,
        None => {
            let config = CvaeConfig { latent_dim: 16, image_side: 28, epochs: 5, seed: 3, ..CvaeConfig::default() };
            let mut model = CvaeModel::new(config, Variant::Conditional)?;
            train(&mut model, &data.train, &mut |s| println!("epoch {} recon {:.2}", s.epoch, s.recon))?;
            model
        }
    };

    let sample = &data.test[0];
    image_write(out.join("original.png"), &sample.pixels)?;
    let concealer = Concealer::new(&model);
    let record = concealer.conceal(&sample.pixels, ConcealMode::Mean, RecordMeta::now(&sample.source_id))?;
    record.save(out.join("record.bfr"))?;
    println!("record z = {:?}", record.z);

    // The record on disk carries only the code and provenance.
    let record = ConcealedRecord::load(out.join("record.bfr"))?;
    let targets = [
        ("own", sample.attrs),
        ("woman_40_origin2", AttributeVector::target(40.0, 1.0, Origin::Class(2))?),
        ("man_80_origin0", AttributeVector::target(80.0, 0.0, Origin::Class(0))?),
        ("neutral_30", AttributeVector::neutral(30.0)?),
    ];
    for (name, target) in targets {
        let image = concealer.reveal(&record, &target)?;
        image_write(out.join(format!("{name}.png")), &image)?;
    }
    println!("wrote reveals to {}", out.display());
    Ok(())
}
