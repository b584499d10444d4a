//! `attni2i` command-line tool: train, translate, export-masks, evaluate
//! and synth-data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attni2i::data::{load_unpaired, synth_generate, Split, SynthSpec};
use attni2i::training::{load_checkpoint, train_state, Direction, TrainState, TrainingConfig};
use attni2i::workflow::{evaluate, export_masks_dir, translate_dir};
use attni2i::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attni2i", version, about = "Attention-guided unpaired image-to-image translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator pair on `{trainA,trainB}` folders.
    Train(TrainArgs),
    /// Translate every image of a folder, writing `{stem}_fake.png`.
    Translate(InferArgs),
    /// Write attention and content masks of every image of a folder.
    ExportMasks(InferArgs),
    /// Evaluate a checkpoint on a test split and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Generate the synthetic two-domain dataset.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from this checkpoint; its configuration is used, flags override.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset root holding trainA/ and trainB/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints, loss log and config echo.
    #[arg(long, env = "ATTNI2I_RUN_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Channel-width multiplier of every network.
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Folder of input images.
    #[arg(long, alias = "data")]
    input: PathBuf,
    #[arg(long, env = "ATTNI2I_RUN_DIR")]
    out: PathBuf,
    #[arg(long, default_value = "A2B")]
    direction: String,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root with test{A,B}/ and optionally masks{A,B}/, ref{A,B}/.
    #[arg(long)]
    data: PathBuf,
    /// Report file; a directory gets `report_{direction}.json`.
    #[arg(long, env = "ATTNI2I_RUN_DIR")]
    out: PathBuf,
    #[arg(long, default_value = "A2B")]
    direction: String,
    /// Seed of the KID subsets.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Canvas side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Training images per domain.
    #[arg(long, default_value_t = 16)]
    train: usize,
    /// Test images per domain.
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn set_deterministic(on: bool) {
    if on {
        // Read by the tensor backend on every parallel kernel launch.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
}

fn resolve_train_config(args: &TrainArgs, base: TrainingConfig) -> Result<TrainingConfig> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        match value {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        }
    };
    set("scheme", args.scheme.clone())?;
    set("n_masks", args.n.map(|v| v.to_string()))?;
    set("image_size", args.size.map(|v| v.to_string()))?;
    set("crop_size", args.crop.or(args.size).map(|v| v.to_string()))?;
    set("total_steps", args.steps.map(|v| v.to_string()))?;
    set("lr", args.lr.map(|v| v.to_string()))?;
    set("seed", args.seed.map(|v| v.to_string()))?;
    set("batch_size", args.batch_size.map(|v| v.to_string()))?;
    set("width_multiplier", args.width.map(|v| v.to_string()))?;
    set("checkpoint_interval", args.checkpoint_interval.map(|v| v.to_string()))?;
    set("data_root", args.data.as_ref().map(|p| p.display().to_string()))?;
    set("run_dir", args.out.as_ref().map(|p| p.display().to_string()))?;
    if args.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let state = match &args.checkpoint {
        Some(path) => {
            let mut state = load_checkpoint(path)?;
            let cfg = resolve_train_config(&args, state.config.clone())?;
            if cfg.generator_config() != state.config.generator_config() {
                return Err(Error::Config("network settings cannot change when resuming".into()));
            }
            state.config = cfg;
            state
        }
        None => {
            if args.data.is_none() && args.config.is_none() {
                return Err(Error::Config("--data is required".into()));
            }
            TrainState::new(resolve_train_config(&args, TrainingConfig::default())?)?
        }
    };
    if state.config.data_root.as_os_str().is_empty() {
        return Err(Error::Config("--data is required".into()));
    }
    set_deterministic(state.config.deterministic);
    let data = load_unpaired(&state.config.data_root, Split::Train, state.config.seed)?;
    let run_dir = state.config.run_dir.clone();
    let outcome = train_state(state, &data, &run_dir)?;
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    if let Some(log) = outcome.log_path {
        println!("loss log: {}", log.display());
    }
    Ok(())
}

fn cmd_translate(args: InferArgs) -> Result<()> {
    set_deterministic(args.deterministic);
    let state = load_checkpoint(&args.checkpoint)?;
    let written = translate_dir(&state, args.direction.parse()?, &args.input, &args.out)?;
    if written.is_empty() {
        eprintln!("warning: no images found in {}", args.input.display());
    }
    println!("wrote {} images to {}", written.len(), args.out.display());
    Ok(())
}

fn cmd_export_masks(args: InferArgs) -> Result<()> {
    set_deterministic(args.deterministic);
    let state = load_checkpoint(&args.checkpoint)?;
    let exported = export_masks_dir(&state, args.direction.parse()?, &args.input, &args.out)?;
    if exported.is_empty() {
        eprintln!("warning: no images found in {}", args.input.display());
    }
    let files: usize = exported.iter().map(|e| e.attention.len() + e.content.len()).sum();
    println!("wrote {files} mask files for {} inputs to {}", exported.len(), args.out.display());
    Ok(())
}

fn report_path(out: &Path, direction: Direction) -> PathBuf {
    if out.is_dir() || out.extension().is_none() {
        out.join(format!("report_{direction}.json"))
    } else {
        out.to_path_buf()
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    set_deterministic(args.deterministic);
    let state = load_checkpoint(&args.checkpoint)?;
    let direction: Direction = args.direction.parse()?;
    let report = evaluate(&state, direction, &args.data, args.seed)?;
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    let path = report_path(&args.out, direction);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(&report.to_json()).expect("JSON values serialize");
    std::fs::write(&path, text + "\n").map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_synth_data(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        canvas_size: args.size,
        train_a: args.train,
        train_b: args.train,
        test_a: args.test,
        test_b: args.test,
        seed: args.seed,
    };
    let summary = synth_generate(&spec, &args.out)?;
    println!(
        "wrote {} images, {} masks, {} references to {}",
        summary.images,
        summary.masks,
        summary.references,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Translate(a) => cmd_translate(a),
        Command::ExportMasks(a) => cmd_export_masks(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SynthData(a) => cmd_synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                eprintln!("run `attni2i --help` for usage");
            }
            ExitCode::FAILURE
        }
    }
}
