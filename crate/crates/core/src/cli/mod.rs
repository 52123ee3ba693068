//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on any runtime error, 2 on usage errors
//! (including out-of-range flag values), 3 when evaluation finds no image
//! passing the confidence filter.

mod overlay;

pub use overlay::{heat, render_overlay, OverlaySpec};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autonet::{load_model, save_model, Arch};
use crate::csv::{format_f64, matrix_to_csv};
use crate::error::{Error, Result};
use crate::fia::{
    run_fia, FiaConfig, ReplacementPolicy, DEFAULT_MIN_CONFIDENCE, DEFAULT_RUNS, DEFAULT_STEPS,
    DEFAULT_THRESHOLD, REFERENCE_OVERHEAD,
};
use crate::fsutil::write_atomic;
use crate::netpbm::{decode_pgm, encode_ppm};
use crate::pipeline::{explain, MethodSpec};
use crate::trainer::{export_dataset, generate_dataset, generate_image, import_dataset, train, TrainConfig};

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_EMPTY_COHORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gradex", version, about = "Saliency maps with gradual extrapolation on small CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset, train a model and save its weights.
    Train(TrainArgs),
    /// Explain one image and write the maps and an overlay.
    Explain(ExplainArgs),
    /// Run pixel flipping, significant-pixel counts and timing over a dataset.
    Evaluate(EvaluateArgs),
    /// Write a slice of the synthetic dataset as PGM files plus labels.csv.
    Dataset(DatasetArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "net-a", value_parser = parse_arch)]
    pub arch: Arch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report path [default: <out>.train.txt].
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().train_count)]
    pub train_count: usize,
    #[arg(long, default_value_t = TrainConfig::default().test_count)]
    pub test_count: usize,
    /// Also export the held-out images to this directory.
    #[arg(long)]
    pub export_test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Binary PGM (P5) image.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_base_method)]
    pub method: crate::attribution::Method,
    #[arg(long)]
    pub gradual: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit)]
    pub blend: f64,
    /// Class to explain [default: the predicted class].
    #[arg(long)]
    pub class: Option<usize>,
    /// Tape index of the base map [default: last spatial ReLU output].
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory with labels.csv and PGM images.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated list such as `gradcam-bilinear,gradcam-gradual`
    /// [default: all three methods in both presentations].
    #[arg(long, value_delimiter = ',', value_parser = parse_method_spec)]
    pub methods: Vec<MethodSpec>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "zero", value_parser = parse_replacement)]
    pub replacement: ReplacementPolicy,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_CONFIDENCE, value_parser = parse_confidence)]
    pub min_confidence: f64,
    /// Stop after this many qualifying images.
    #[arg(long)]
    pub max_images: Option<usize>,
    /// Output directory for report.txt and the curve CSVs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, default_value = "net-a", value_parser = parse_arch)]
    pub arch: Arch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index of the first image.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_arch(s: &str) -> std::result::Result<Arch, String> {
    Arch::from_name(s).map_err(|e| e.to_string())
}

fn parse_base_method(s: &str) -> std::result::Result<crate::attribution::Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method_spec(s: &str) -> std::result::Result<MethodSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_replacement(s: &str) -> std::result::Result<ReplacementPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} outside [0, 1]"))
    }
}

fn parse_confidence(s: &str) -> std::result::Result<f64, String> {
    parse_unit(s).map_err(|m| Error::validation(format!("min confidence {m}")).to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::EmptyCohort { .. } => EXIT_EMPTY_COHORT,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Dataset(a) => cmd_dataset(&a),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = TrainConfig {
        seed: a.seed,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        train_count: a.train_count,
        test_count: a.test_count,
    };
    let [_, h, w] = a.arch.input_dims();
    let data = generate_dataset(a.seed, config.train_count + config.test_count, h, w)?;
    let model = a.arch.build(a.seed)?;
    let report = train(model, &data, &config)?;

    let mut text = String::new();
    let _ = writeln!(text, "arch = {}", a.arch.name());
    let _ = writeln!(text, "seed = {}", config.seed);
    let _ = writeln!(text, "epochs = {}", config.epochs);
    let _ = writeln!(text, "learning_rate = {}", config.learning_rate);
    let _ = writeln!(text, "batch_size = {}", config.batch_size);
    let _ = writeln!(text, "train_count = {}", config.train_count);
    let _ = writeln!(text, "test_count = {}", config.test_count);
    for (i, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(text, "epoch_{}_loss = {}", i + 1, format_f64(*l));
    }
    let _ = writeln!(text, "test_accuracy = {}", format_f64(report.test_accuracy));

    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".train.txt");
        p.into()
    });
    save_model(&report.model, &a.out)?;
    write_atomic(&report_path, text.as_bytes())?;
    if let Some(dir) = &a.export_test {
        export_dataset(&data[config.train_count..], dir)?;
    }
    println!("test accuracy: {:.4}", report.test_accuracy);
    Ok(())
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let image = decode_pgm(&fs::read(&a.image)?)?;
    if image.dims() != model.input_dims() {
        return Err(Error::shape(format!(
            "image {:?} does not fit model {} input {:?}",
            image.dims(),
            model.arch(),
            model.input_dims()
        )));
    }
    if let Some(c) = a.class {
        if c >= model.num_classes() {
            return Err(Error::invalid(format!(
                "class {c} out of range for {} classes",
                model.num_classes()
            )));
        }
    }
    let spec = MethodSpec::new(a.method, a.gradual);
    let e = explain(&model, &image, spec, a.class, a.target)?;
    let overlay = render_overlay(&OverlaySpec {
        image: &image,
        saliency: &e.map,
        blend: a.blend,
    })?;

    // Everything is computed before the first write.
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
        (a.out_dir.join("saliency.csv"), matrix_to_csv(&e.map).into_bytes()),
        (a.out_dir.join("base.csv"), matrix_to_csv(&e.base.map).into_bytes()),
        (a.out_dir.join("overlay.ppm"), encode_ppm(&overlay)?),
    ];
    for (k, stage) in e.stages.iter().enumerate() {
        files.push((a.out_dir.join(format!("stage_{}.csv", k + 1)), matrix_to_csv(stage).into_bytes()));
    }
    fs::create_dir_all(&a.out_dir)?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    println!(
        "predicted: {} ({}) confidence {:.6}",
        e.predicted,
        model.labels()[e.predicted],
        e.confidence
    );
    println!("explained class: {} ({}) with {}", e.class, model.labels()[e.class], spec);
    Ok(())
}

fn default_methods() -> Vec<MethodSpec> {
    crate::attribution::Method::ALL
        .iter()
        .flat_map(|&m| [MethodSpec::new(m, false), MethodSpec::new(m, true)])
        .collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = import_dataset(&a.data)?;
    let methods = if a.methods.is_empty() {
        default_methods()
    } else {
        a.methods.clone()
    };
    let config = FiaConfig {
        steps: a.steps,
        threshold: a.threshold,
        replacement: a.replacement,
        runs: a.runs,
        min_confidence: a.min_confidence,
        max_images: a.max_images,
    };
    let report = run_fia(&model, &data, &methods, &config)?;
    report.write(&a.out)?;
    println!("images evaluated: {}", report.image_count);
    for m in &report.methods {
        println!(
            "{}: auc {:.4} ± {:.4}, median significant pixels {}",
            m.spec, m.auc_mean, m.auc_std, m.significant_median
        );
    }
    for c in report.comparisons() {
        println!(
            "{}: delta auc {:+.4}, delta median significant pixels {:+}, overhead {:.1}% ({:.3} ms; reference bound {:.0}%)",
            c.base,
            c.delta_auc,
            c.delta_significant_median,
            100.0 * c.overhead,
            1e3 * c.overhead_seconds,
            100.0 * REFERENCE_OVERHEAD
        );
    }
    println!("report: {}", a.out.join("report.txt").display());
    Ok(())
}

pub fn cmd_dataset(a: &DatasetArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    let [_, h, w] = a.arch.input_dims();
    let images = (a.start..a.start + a.count)
        .map(|i| generate_image(a.seed, i, h, w))
        .collect::<Result<Vec<_>>>()?;
    export_dataset(&images, Path::new(&a.out))?;
    println!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}
