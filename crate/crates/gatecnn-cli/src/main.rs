//! Command-line front end: dataset generation, training, inference,
//! quantization, latency estimation, ROM export, and the self test.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error,
//! 3 invariant failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gatecnn::model::{load_weights, save_weights};
use gatecnn::pipeline::{compare_to_reference, estimate, PipelineParams};
use gatecnn::quant::{
    audit_ranges, export_rom, load_quantized, predict_fixed, quantize_model, save_quantized,
};
use gatecnn::synth::{generate, load_frames, save_frames, ClassSignature, Trajectory};
use gatecnn::train::format_history;
use gatecnn::{
    predict, run_selftest, Error, FixedPointSpec, GateCnnConfig, MicroDopplerFrame, SynthSpec,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "gatecnn", version, about = "Dimension-gated CNN engine for micro-Doppler activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled frame dataset.
    GenData {
        /// Generator spec: a JSON file path, or "defaults".
        #[arg(long, default_value = "defaults")]
        spec: String,
        /// Output frame file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a frame file and save the weights.
    Train {
        /// Input frame file.
        #[arg(long)]
        data: PathBuf,
        /// Output weight file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        /// Learning rate.
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Seed for both weight init and batch shuffling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Classify frames and report accuracy.
    Infer {
        /// Weight file.
        #[arg(long)]
        weights: PathBuf,
        /// Frame file.
        #[arg(long)]
        data: PathBuf,
        /// Route through the fixed-point path and report agreement
        /// with the float path.
        #[arg(long)]
        fixed: bool,
    },
    /// Convert weights to fixed point, print the activation range
    /// audit, and save the quantized model.
    Quantize {
        /// Weight file.
        #[arg(long)]
        weights: PathBuf,
        /// Output quantized model file.
        #[arg(long)]
        out: PathBuf,
        /// Fractional bits of the 32-bit format.
        #[arg(long, default_value_t = 16)]
        frac_bits: u32,
        /// Calibration frames; omitted, a built-in synthetic set
        /// shaped to the model is used.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print the pipeline latency/throughput estimate for a model.
    Bench {
        /// Weight file; only its stored configuration is used.
        #[arg(long)]
        weights: PathBuf,
        /// MACs retired per cycle within each stage.
        #[arg(long, default_value_t = 1)]
        parallelism: u64,
        #[arg(long, default_value_t = 100_000_000)]
        clock_hz: u64,
        /// Fixed per-stage pipeline fill overhead.
        #[arg(long, default_value_t = 5)]
        fill_cycles: u64,
    },
    /// Write a quantized model as C constant tables.
    ExportRom {
        /// Quantized model file.
        #[arg(long)]
        quantized: PathBuf,
        /// Output text file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle/invariant suite.
    Selftest,
}

enum CliError {
    Usage(String),
    Lib(Error),
    Invariant(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Lib(err)) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Shape { .. } | Error::NonFinite(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
        Err(CliError::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Output paths must be creatable before any heavy work starts.
fn ensure_writable(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Train { data, out, epochs, lr, seed, batch_size } => {
            train_cmd(&data, &out, epochs, lr, seed, batch_size)
        }
        Command::Infer { weights, data, fixed } => infer_cmd(&weights, &data, fixed),
        Command::Quantize { weights, out, frac_bits, data } => {
            quantize_cmd(&weights, &out, frac_bits, data.as_deref())
        }
        Command::Bench { weights, parallelism, clock_hz, fill_cycles } => {
            bench_cmd(&weights, parallelism, clock_hz, fill_cycles)
        }
        Command::ExportRom { quantized, out } => export_rom_cmd(&quantized, &out),
        Command::Selftest => selftest_cmd(),
    }
}

fn gen_data(spec_arg: &str, out: &Path) -> Result<(), CliError> {
    ensure_writable(out)?;
    let spec = if spec_arg == "defaults" {
        SynthSpec::default()
    } else {
        let text = std::fs::read_to_string(spec_arg).map_err(Error::from)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("bad generator spec {spec_arg}: {e}")))?
    };
    let frames = generate::<f64>(&spec)?;
    save_frames(out, &frames)?;
    println!(
        "wrote {} frames ({} classes, {}x{}) to {}",
        frames.len(),
        spec.num_classes(),
        spec.doppler_bins,
        spec.time_steps,
        out.display()
    );
    Ok(())
}

/// Model geometry is read off the data: frame extents plus the label
/// range decide the config; everything else keeps the defaults.
fn config_for_frames(frames: &[MicroDopplerFrame<f64>]) -> Result<GateCnnConfig, CliError> {
    let first = frames.first().ok_or(Error::EmptyData("training frames"))?;
    let shape = first.data.shape();
    let max_label = frames.iter().map(|f| f.label).max().unwrap_or(0);
    let cfg = GateCnnConfig {
        in_channels: shape[0],
        doppler_bins: shape[1],
        time_steps: shape[2],
        num_classes: (max_label + 1).max(2),
        ..GateCnnConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(
    data: &Path,
    out: &Path,
    epochs: usize,
    lr: f64,
    seed: u64,
    batch_size: usize,
) -> Result<(), CliError> {
    let tc = TrainConfig { learning_rate: lr, epochs, batch_size, seed };
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_writable(out)?;
    let frames = load_frames::<f64>(data)?;
    let cfg = config_for_frames(&frames)?;
    let (weights, history) = gatecnn::train(&cfg, &frames, &tc)?;
    print!("{}", format_history(&history));
    save_weights(out, &cfg, &weights)?;
    let last = history.last().expect("at least one epoch");
    println!("final_accuracy={:.6}", last.train_accuracy);
    println!("wrote weights to {}", out.display());
    Ok(())
}

fn infer_cmd(weights_path: &Path, data: &Path, fixed: bool) -> Result<(), CliError> {
    let (cfg, weights) = load_weights::<f64>(weights_path)?;
    let frames = load_frames::<f64>(data)?;
    let expected = cfg.input_shape();
    if let Some(f) = frames.iter().find(|f| f.data.shape() != expected.as_slice()) {
        return Err(CliError::Lib(Error::Format(format!(
            "data frames are {:?}, model expects {:?}",
            f.data.shape(),
            expected
        ))));
    }

    let qm = if fixed {
        Some(quantize_model(&cfg, &weights, &FixedPointSpec::default())?)
    } else {
        None
    };

    let mut correct = 0usize;
    let mut agree = 0usize;
    for (i, frame) in frames.iter().enumerate() {
        let float_pred = predict(&cfg, &weights, &frame.data)?;
        let pred = match &qm {
            Some(qm) => {
                let p = predict_fixed(qm, &frame.data)?;
                if p == float_pred {
                    agree += 1;
                }
                p
            }
            None => float_pred,
        };
        if pred == frame.label {
            correct += 1;
        }
        println!("frame={i} label={} pred={pred}", frame.label);
    }
    let n = frames.len();
    println!("accuracy={:.6} ({correct}/{n})", correct as f64 / n as f64);
    if qm.is_some() {
        println!("fixed_float_agreement={:.6} ({agree}/{n})", agree as f64 / n as f64);
    }
    Ok(())
}

/// Built-in calibration set scaled to the model geometry: three ridge
/// families spread over the Doppler axis.
fn calibration_spec(cfg: &GateCnnConfig) -> SynthSpec {
    let top = (cfg.doppler_bins - 1) as f64;
    let bandwidth = (0.05 * cfg.doppler_bins as f64).max(0.5);
    SynthSpec {
        doppler_bins: cfg.doppler_bins,
        time_steps: cfg.time_steps,
        classes: vec![
            ClassSignature {
                name: "steady".into(),
                trajectory: Trajectory::Constant { bin: 0.25 * top },
                bandwidth,
                amplitude: 1.0,
            },
            ClassSignature {
                name: "sweep".into(),
                trajectory: Trajectory::LinearChirp { start: 0.15 * top, end: 0.85 * top },
                bandwidth,
                amplitude: 1.0,
            },
            ClassSignature {
                name: "oscillate".into(),
                trajectory: Trajectory::Sinusoidal {
                    center: 0.5 * top,
                    swing: 0.3 * top,
                    cycles: 2.0,
                },
                bandwidth,
                amplitude: 1.0,
            },
        ],
        noise_std: 0.05,
        samples_per_class: 16,
        seed: 7,
    }
}

fn quantize_cmd(
    weights_path: &Path,
    out: &Path,
    frac_bits: u32,
    data: Option<&Path>,
) -> Result<(), CliError> {
    let spec = FixedPointSpec::new(
        frac_bits,
        FixedPointSpec::default().rounding,
        FixedPointSpec::default().overflow,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_writable(out)?;
    let (cfg, weights) = load_weights::<f64>(weights_path)?;

    let calibration = match data {
        Some(path) => {
            let frames = load_frames::<f64>(path)?;
            let expected = cfg.input_shape();
            if let Some(f) = frames.iter().find(|f| f.data.shape() != expected.as_slice()) {
                return Err(CliError::Lib(Error::Format(format!(
                    "calibration frames are {:?}, model expects {:?}",
                    f.data.shape(),
                    expected
                ))));
            }
            frames
        }
        None => {
            if cfg.in_channels != 1 {
                return Err(CliError::Usage(
                    "built-in calibration covers single-channel models; pass --data".into(),
                ));
            }
            generate::<f64>(&calibration_spec(&cfg))?
        }
    };

    let qm = quantize_model(&cfg, &weights, &spec)?;
    let audit = audit_ranges(&cfg, &weights, &calibration)?;
    println!("format={}", spec.format_label());
    println!("parameters={}", qm.total_params());
    println!("storage_bytes={}", qm.storage_bytes());
    println!("saturations={}", qm.saturations);
    print!("{}", audit.to_text());
    println!("fits={}", audit.fits(&spec));
    save_quantized(out, &qm)?;
    println!("wrote quantized model to {}", out.display());
    Ok(())
}

fn bench_cmd(
    weights_path: &Path,
    parallelism: u64,
    clock_hz: u64,
    fill_cycles: u64,
) -> Result<(), CliError> {
    if parallelism == 0 {
        return Err(CliError::Usage("parallelism must be at least 1".into()));
    }
    if clock_hz == 0 {
        return Err(CliError::Usage("clock-hz must be nonzero".into()));
    }
    let (cfg, _) = load_weights::<f64>(weights_path)?;
    let params = PipelineParams { parallelism, clock_hz, fill_cycles };
    let report = estimate(&cfg, &params)?;
    print!("{}", report.to_text());
    println!("{}", compare_to_reference(&report));
    Ok(())
}

fn export_rom_cmd(quantized: &Path, out: &Path) -> Result<(), CliError> {
    ensure_writable(out)?;
    let qm = load_quantized(quantized)?;
    let text = export_rom(&qm);
    std::fs::write(out, &text).map_err(Error::from)?;
    println!(
        "wrote {} parameters ({} bytes of codes) to {}",
        qm.total_params(),
        qm.storage_bytes(),
        out.display()
    );
    Ok(())
}

fn selftest_cmd() -> Result<(), CliError> {
    let report = run_selftest();
    print!("{}", report.to_text());
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Invariant("one or more self checks failed".into()))
    }
}
