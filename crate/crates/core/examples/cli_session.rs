//! Drives the command line in-process: generate data, train a small model,
//! conceal an image and reveal it as someone else.
//!
//! ```text
//! cargo run --release --example cli_session -- [work_dir]
//! ```

use blindvae::cli::run;

fn step(args: &[&str]) -> Result<(), Box<dyn std::error::Error>> {
    println!("\n$ blindvae {}", args.join(" "));
    let argv = std::iter::once("blindvae").chain(args.iter().copied());
    match run(argv) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args[0]).into()),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = std::env::args().nth(1).unwrap_or_else(|| "out/cli_session".into());
    let dir = |p: &str| format!("{work}/{p}");
    std::fs::create_dir_all(&work)?;
    std::fs::write(dir("train.cfg"), "# small desk run\nlatent_dim=16\nimage_side=28\nepochs=3\nsynth_count=300\n")?;

    step(&["synth-data", "--count", "20", "--out-dir", &dir("faces")])?;
    step(&["train", "--config", &dir("train.cfg"), "--seed", "2", "--out-dir", &dir("model")])?;

    let mut faces: Vec<_> = std::fs::read_dir(dir("faces"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    faces.sort();
    let face = faces[0].to_string_lossy().into_owned();
    let stem = faces[0].file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let checkpoint = dir("model/model.bafo");

    step(&["conceal", "--checkpoint", &checkpoint, "--image", &face, "--out-dir", &dir("records")])?;
    let record = dir(&format!("records/{stem}.bfr"));
    step(&[
        "reveal", "--checkpoint", &checkpoint, "--record", &record, "--age", "40", "--gender", "1", "--origin", "2",
        "--out-dir", &dir("revealed"),
    ])?;
    step(&["grid", "--checkpoint", &checkpoint, "--image", &face, "--out-dir", &dir("grids")])?;
    Ok(())
}
