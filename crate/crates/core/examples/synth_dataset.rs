//! Renders a synthetic labeled dataset to PNG files and checks every image
//! with the analytic oracle.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [n_images] [out_dir]
//! ```

use blindvae::data::synth::{oracle_age_tolerance, oracle_classify};
use blindvae::data::{synth_generate, write_dataset_dir, write_manifest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(200), |s| s.parse())?;
    let out = std::path::PathBuf::from(args.get(1).map_or("out/synth", String::as_str));

    let data = synth_generate(n, 28, 0)?;
    let written = write_dataset_dir(&data, &out)?;
    write_manifest(&data, out.join("manifest.csv"))?;
    println!("wrote {written} images ({} train / {} test) to {}", data.train.len(), data.test.len(), out.display());

    let tolerance = oracle_age_tolerance(28);
    let (mut gender, mut origin, mut age) = (0, 0, 0);
    for s in data.train.iter().chain(&data.test) {
        let reading = oracle_classify(&s.pixels)?;
        gender += usize::from(Some(reading.gender) == s.attrs.gender_label());
        origin += usize::from(Some(reading.origin) == s.attrs.origin_label());
        age += usize::from((reading.age_norm - s.attrs.age_norm).abs() <= tolerance);
    }
    println!("oracle recovery: gender {gender}/{n}, origin {origin}/{n}, age within one pixel {age}/{n}");
    Ok(())
}
