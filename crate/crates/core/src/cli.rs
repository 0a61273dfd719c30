//! The `blindvae` command line.
//!
//! Every option can also come from a `key=value` file passed with
//! `--config` (`#` starts a comment). A flag on the command line wins over
//! the file, which wins over the built-in default. Each run prints the
//! resolved settings in the same `key=value` form before doing anything.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::conceal::{render_grid, ConcealMode, ConcealedRecord, Concealer, RecordMeta};
use crate::data::{image_read, load_dataset, resize_square, synth_generate, write_dataset_dir, write_manifest, DatasetSplit};
use crate::error::{Error, Result};
use crate::eval::{
    leakage_report_against, obedience_report, reconstruction_report, train_plain_baseline, DEFAULT_TARGET_AGES,
};
use crate::model::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, train, write_loss_csv, AttributeVector, CvaeConfig,
    CvaeModel, Origin, Variant,
};
use crate::tensor::{NumericMode, Real};

#[derive(Debug, Parser)]
#[command(name = "blindvae", version, about = "Attribute-blind conditional VAE: train, conceal, reveal, evaluate")]
struct Cli {
    /// File of key=value settings used where no flag is given.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Render a synthetic labeled dataset into a directory.
    SynthData(SynthArgs),
    /// Encode images into concealed record files.
    Conceal(ConcealArgs),
    /// Decode a record under chosen attributes.
    Reveal(RevealArgs),
    /// Reveal one image across a grid of ages and genders.
    Grid(GridArgs),
    /// Leakage, reconstruction and obedience reports for a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    image_side: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    numeric_mode: Option<NumericMode>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Dataset directory, or `synth` for generated data.
    #[arg(long)]
    data: Option<String>,
    /// Number of images when `--data synth`.
    #[arg(long)]
    synth_count: Option<usize>,
    /// Train the plain autoencoder instead of the conditional model.
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    image_side: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConcealArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Images to conceal.
    #[arg(long = "image", value_name = "PATH", num_args = 1..)]
    images: Vec<PathBuf>,
    /// `mean` or `sample`.
    #[arg(long)]
    mode: Option<String>,
    /// Noise seed for `--mode sample`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RevealArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    record: Option<PathBuf>,
    /// Target age in years.
    #[arg(long)]
    age: Option<f64>,
    /// 0 = male, 1 = female, values in between allowed.
    #[arg(long)]
    gender: Option<f64>,
    /// Origin class 0-4 or `neutral`.
    #[arg(long)]
    origin: Option<Origin>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Comma-separated ages in years.
    #[arg(long)]
    ages: Option<List<f64>>,
    /// Comma-separated gender codes.
    #[arg(long)]
    genders: Option<List<f64>>,
    #[arg(long)]
    origin: Option<Origin>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Plain-autoencoder checkpoint; trained on the fly when absent.
    #[arg(long)]
    plain_checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    synth_count: Option<usize>,
    /// Seed for the probes and the sampled codes. The data split always
    /// uses the checkpoint's own seed, so its test portion is the one held
    /// out during training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ages: Option<List<f64>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Comma-separated values.
#[derive(Debug, Clone, PartialEq)]
struct List<T>(Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

const KNOWN_KEYS: &[&str] = &[
    "latent_dim", "image_side", "batch_size", "epochs", "lr", "beta", "seed", "numeric_mode", "data",
    "synth_count", "plain", "out_dir", "count", "checkpoint", "plain_checkpoint", "mode", "record", "age", "gender",
    "origin", "image", "ages", "genders",
];

/// Settings from the config file plus a log of every resolved value.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Domain(Error::io(path, e)))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(Failure::Usage(format!("{}:{}: expected key=value", path.display(), no + 1)));
                };
                let key = k.trim().replace('-', "_");
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return Err(Failure::Usage(format!("{}:{}: unknown key `{key}`", path.display(), no + 1)));
                }
                file.insert(key, v.trim().to_string());
            }
        }
        Ok(Self { file, resolved: Vec::new() })
    }

    fn maybe<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    raw.parse::<T>()
                        .map_err(|e| Failure::Usage(format!("config key `{key}`: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(value)
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        match self.maybe(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.push((key.to_string(), default.to_string()));
                Ok(default)
            }
        }
    }

    fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.maybe(key, flag)?
            .ok_or_else(|| Failure::Usage(format!("missing required setting `{key}` (flag --{})", key.replace('_', "-"))))
    }

    fn print(&self, command: &str) {
        println!("# resolved settings for `{command}`");
        for (k, v) in &self.resolved {
            println!("{k}={v}");
        }
    }
}

struct DisplayPath(PathBuf);

impl Display for DisplayPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

impl FromStr for DisplayPath {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(DisplayPath(PathBuf::from(s)))
    }
}

fn path_setting(s: &mut Settings, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
    s.require(key, flag.map(DisplayPath)).map(|p| p.0)
}

fn out_dir(s: &mut Settings, flag: Option<PathBuf>) -> CliResult<PathBuf> {
    s.get("out_dir", flag.map(DisplayPath), DisplayPath("out".into())).map(|p| p.0)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs the command line given in `argv` (program name first) and returns
/// the process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(&mut s, a),
        Command::SynthData(a) => cmd_synth(&mut s, a),
        Command::Conceal(a) => cmd_conceal(&mut s, a),
        Command::Reveal(a) => cmd_reveal(&mut s, a),
        Command::Grid(a) => cmd_grid(&mut s, a),
        Command::Eval(a) => cmd_eval(&mut s, a),
    }
}

fn resolve_model_config(s: &mut Settings, f: ModelFlags) -> CliResult<CvaeConfig> {
    let d = CvaeConfig::default();
    Ok(CvaeConfig {
        latent_dim: s.get("latent_dim", f.latent_dim, d.latent_dim)?,
        image_side: s.get("image_side", f.image_side, d.image_side)?,
        batch_size: s.get("batch_size", f.batch_size, d.batch_size)?,
        epochs: s.get("epochs", f.epochs, d.epochs)?,
        lr: s.get("lr", f.lr, d.lr)?,
        beta: s.get("beta", f.beta, d.beta)?,
        seed: s.get("seed", f.seed, d.seed)?,
        numeric_mode: s.get("numeric_mode", f.numeric_mode, d.numeric_mode)?,
    })
}

fn load_data(source: &str, count: usize, side: usize, seed: u64) -> Result<DatasetSplit> {
    if source == "synth" {
        synth_generate(count, side, seed)
    } else {
        load_dataset(source, side, seed)
    }
}

fn cmd_train(s: &mut Settings, a: TrainArgs) -> CliResult<()> {
    let config = resolve_model_config(s, a.model)?;
    let data = s.get("data", a.data, "synth".to_string())?;
    let count = s.get("synth_count", a.synth_count, 2000)?;
    let plain = s.get("plain", a.plain.then_some(true), false)?;
    let out = out_dir(s, a.out_dir)?;
    s.print("train");
    config.validate()?;
    let variant = if plain { Variant::Plain } else { Variant::Conditional };
    let split = load_data(&data, count, config.image_side, config.seed)?;
    println!("data: {} train / {} test", split.train.len(), split.test.len());
    create_dir(&out)?;
    match config.numeric_mode {
        NumericMode::F32 => train_and_save(CvaeModel::<f32>::new(config, variant)?, &split, &out)?,
        NumericMode::F64 => train_and_save(CvaeModel::<f64>::new(config, variant)?, &split, &out)?,
    }
    write_manifest(&split, out.join("manifest.csv"))?;
    Ok(())
}

fn train_and_save<T: Real>(mut model: CvaeModel<T>, split: &DatasetSplit, out: &Path) -> Result<()> {
    let history = train(&mut model, &split.train, &mut |e| {
        println!("epoch {:>3}  recon {:.4}  kl {:.4}  total {:.4}", e.epoch, e.recon, e.kl, e.total)
    })?;
    save_checkpoint(&model, out.join("model.bafo"))?;
    write_loss_csv(&history, out.join("loss.csv"))?;
    println!("wrote {} and {}", out.join("model.bafo").display(), out.join("loss.csv").display());
    Ok(())
}

fn cmd_synth(s: &mut Settings, a: SynthArgs) -> CliResult<()> {
    let count = s.get("count", a.count, 2000)?;
    let side = s.get("image_side", a.image_side, 28)?;
    let seed = s.get("seed", a.seed, 0)?;
    let out = out_dir(s, a.out_dir)?;
    s.print("synth-data");
    let split = synth_generate(count, side, seed)?;
    let written = write_dataset_dir(&split, &out)?;
    write_manifest(&split, out.join("manifest.csv"))?;
    println!("wrote {written} images to {}", out.display());
    Ok(())
}

/// A checkpoint loaded at the precision it was trained with.
enum AnyModel {
    F32(CvaeModel<f32>),
    F64(CvaeModel<f64>),
}

fn load_model(path: &Path, latent_dim: Option<usize>) -> Result<AnyModel> {
    let probe: CvaeModel<f32> = load_checkpoint_expecting(path, latent_dim)?;
    Ok(match probe.config.numeric_mode {
        NumericMode::F32 => AnyModel::F32(probe),
        NumericMode::F64 => AnyModel::F64(load_checkpoint(path)?),
    })
}

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::F32($m) => $body,
            AnyModel::F64($m) => $body,
        }
    };
}

fn read_for_model(path: &Path, side: usize) -> Result<crate::Tensor<f32>> {
    let image = image_read(path)?;
    resize_square(&image, side)
}

fn cmd_conceal(s: &mut Settings, a: ConcealArgs) -> CliResult<()> {
    let checkpoint = path_setting(s, "checkpoint", a.checkpoint)?;
    let mut images = a.images;
    if images.is_empty() {
        images = s.maybe::<List<String>>("image", None)?.map_or_else(Vec::new, |l| l.0.into_iter().map(PathBuf::from).collect());
    } else {
        s.resolved.push(("image".into(), List(images.iter().map(|p| p.display().to_string()).collect()).to_string()));
    }
    if images.is_empty() {
        return Err(Failure::Usage("conceal needs at least one --image".into()));
    }
    let mode_name = s.get("mode", a.mode, "mean".to_string())?;
    let mode = match mode_name.as_str() {
        "mean" => ConcealMode::Mean,
        "sample" => ConcealMode::Sample(s.get("seed", a.seed, 0)?),
        other => return Err(Failure::Usage(format!("unknown conceal mode `{other}` (mean or sample)"))),
    };
    let latent_dim = s.maybe("latent_dim", a.latent_dim)?;
    let out = out_dir(s, a.out_dir)?;
    s.print("conceal");
    let model = load_model(&checkpoint, latent_dim)?;
    create_dir(&out)?;
    with_model!(model, m => conceal_files(&m, &images, mode, &out))?;
    Ok(())
}

fn conceal_files<T: Real>(model: &CvaeModel<T>, images: &[PathBuf], mode: ConcealMode, out: &Path) -> Result<()> {
    let concealer = Concealer::new(model);
    for path in images {
        let pixels = read_for_model(path, model.image_side())?.cast::<T>();
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let record = concealer.conceal(&pixels, mode, RecordMeta::now(name))?;
        let stem = path.file_stem().map_or_else(|| "record".into(), |s| s.to_string_lossy().into_owned());
        let dest = out.join(format!("{stem}.bfr"));
        record.save(&dest)?;
        println!("{} -> {}", path.display(), dest.display());
    }
    Ok(())
}

fn cmd_reveal(s: &mut Settings, a: RevealArgs) -> CliResult<()> {
    let checkpoint = path_setting(s, "checkpoint", a.checkpoint)?;
    let record_path = path_setting(s, "record", a.record)?;
    let age = s.require("age", a.age)?;
    let gender = s.require("gender", a.gender)?;
    let origin = s.get("origin", a.origin, Origin::Neutral)?;
    let latent_dim = s.maybe("latent_dim", a.latent_dim)?;
    let out = out_dir(s, a.out_dir)?;
    s.print("reveal");
    let target = AttributeVector::target(age, gender, origin)?;
    if target.gender_label().is_none() || target.origin_label().is_none() {
        log::warn!("revealing with neutral attributes; expect blurry, averaged output");
    }
    let record = ConcealedRecord::load(&record_path)?;
    let model = load_model(&checkpoint, latent_dim)?;
    let image = with_model!(model, m => Concealer::new(&m).reveal(&record, &target).map(|t| t.cast::<f32>()))?;
    create_dir(&out)?;
    let stem = record_path.file_stem().map_or_else(|| "record".into(), |s| s.to_string_lossy().into_owned());
    let dest = out.join(format!("{stem}_age{age}_gender{gender}_origin{origin}.png"));
    crate::data::image_write(&dest, &image)?;
    println!("wrote {}", dest.display());
    Ok(())
}

fn cmd_grid(s: &mut Settings, a: GridArgs) -> CliResult<()> {
    let checkpoint = path_setting(s, "checkpoint", a.checkpoint)?;
    let image_path = path_setting(s, "image", a.image)?;
    let ages = s.get("ages", a.ages, List(DEFAULT_TARGET_AGES.to_vec()))?;
    let genders = s.get("genders", a.genders, List(vec![0.0, 1.0]))?;
    let origin = s.get("origin", a.origin, Origin::Neutral)?;
    let latent_dim = s.maybe("latent_dim", a.latent_dim)?;
    let out = out_dir(s, a.out_dir)?;
    s.print("grid");
    let model = load_model(&checkpoint, latent_dim)?;
    let grid = with_model!(model, m => {
        let pixels = read_for_model(&image_path, m.image_side())?.cast();
        render_grid(&m, &pixels, &ages.0, &genders.0, origin)
    })?;
    create_dir(&out)?;
    let stem = image_path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    let dest = out.join(format!("{stem}_grid.png"));
    grid.save(&dest)?;
    println!("wrote {} ({} tiles, {}x{})", dest.display(), grid.tiles, grid.rows, grid.cols);
    Ok(())
}

fn cmd_eval(s: &mut Settings, a: EvalArgs) -> CliResult<()> {
    let checkpoint = path_setting(s, "checkpoint", a.checkpoint)?;
    let plain_checkpoint = s.maybe("plain_checkpoint", a.plain_checkpoint.map(DisplayPath))?.map(|p| p.0);
    let data = s.get("data", a.data, "synth".to_string())?;
    let count = s.get("synth_count", a.synth_count, 2000)?;
    let seed = s.get("seed", a.seed, 0)?;
    let ages = s.get("ages", a.ages, List(DEFAULT_TARGET_AGES.to_vec()))?;
    let latent_dim = s.maybe("latent_dim", a.latent_dim)?;
    let out = out_dir(s, a.out_dir)?;
    s.print("eval");
    let model = load_model(&checkpoint, latent_dim)?;
    create_dir(&out)?;
    with_model!(model, m => {
        let split = load_data(&data, count, m.image_side(), m.config.seed)?;
        let plain = match &plain_checkpoint {
            Some(p) => load_checkpoint_expecting(p, Some(m.latent_dim()))?,
            None => train_plain_baseline(&m, &split)?,
        };
        evaluate(&m, &plain, &split, &ages.0, seed, &out)
    })?;
    Ok(())
}

fn evaluate<T: Real>(
    model: &CvaeModel<T>,
    plain: &CvaeModel<T>,
    split: &DatasetSplit,
    ages: &[f64],
    seed: u64,
    out: &Path,
) -> Result<()> {
    let recon = reconstruction_report(model, split)?;
    println!(
        "reconstruction RMSE {:.4} (mean-image predictor {:.4})",
        recon.rmse, recon.mean_image_rmse
    );
    let leakage = leakage_report_against(model, Some(plain), split, seed)?;
    print!("{leakage}");
    leakage.write_csv(out.join("leakage.csv"))?;
    let obedience = obedience_report(model, split, ages, seed)?;
    print!("{obedience}");
    obedience.write_csv(out.join("obedience.csv"))?;
    println!("wrote {} and {}", out.join("leakage.csv").display(), out.join("obedience.csv").display());
    Ok(())
}
