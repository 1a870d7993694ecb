use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcbm::config::PipelineConfig;
use mcbm::pipeline::{self, SynthOptions};
use mcbm::synth::{ForegroundSpec, MotionSpec, SynthSpec};
use mcbm::transform::TransformKind;
use mcbm::{Error, Result};

#[derive(Parser)]
#[command(name = "mcbm", version, about = "Joint alignment and panoramic background estimation for moving-camera video")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    kind: Option<TransformKind>,

    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    serial: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::argument(format!("`--set {kv}` is not KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(kind) = self.kind {
            cfg.kind = kind;
        }
        if self.serial {
            cfg.serial = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Jointly align a frame directory.
    Align {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Trimmed panoramic moments of aligned frames.
    Moments {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        transforms: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Per-frame backgrounds from panoramic moments.
    Background {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        transforms: PathBuf,
        #[arg(long)]
        moments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// ROC and AUC of backgrounds against foreground masks.
    Eval {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        backgrounds: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Synthetic moving-camera sequence with ground truth.
    Synth(SynthArgs),
    /// align, moments, background and optional eval, plus a manifest.
    Run {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Annotation masks; enables eval.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "n-frames", default_value_t = 40)]
    n_frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Side of the generated square panorama.
    #[arg(long = "panorama-size", default_value_t = 256)]
    panorama_size: usize,
    /// Crop from this image instead of generated texture.
    #[arg(long)]
    panorama: Option<PathBuf>,
    #[arg(long = "max-translation", default_value_t = 20.0)]
    max_translation: f64,
    /// Degrees.
    #[arg(long = "max-rotation", default_value_t = 10.0)]
    max_rotation: f64,
    #[arg(long = "max-log-scale", default_value_t = 0.0)]
    max_log_scale: f64,
    #[arg(long, default_value_t = 0.8)]
    smoothness: f64,
    #[arg(long = "integral-translation")]
    integral_translation: bool,
    /// Composite a moving square and write its masks.
    #[arg(long)]
    foreground: bool,
    #[arg(long, default_value_t = 3.0)]
    pad: f64,
}

impl SynthArgs {
    fn options(&self) -> SynthOptions {
        SynthOptions {
            spec: SynthSpec {
                n_frames: self.n_frames,
                frame_height: self.height,
                frame_width: self.width,
                motion: MotionSpec {
                    max_translation: self.max_translation,
                    max_rotation_deg: self.max_rotation,
                    max_log_scale: self.max_log_scale,
                    smoothness: self.smoothness,
                    integral_translation: self.integral_translation,
                },
                foreground: self.foreground.then(ForegroundSpec::default),
                seed: self.seed,
            },
            channels: self.channels,
            panorama_size: self.panorama_size,
            panorama: self.panorama.clone(),
            pad: self.pad,
        }
    }
}

fn single_thread(cfg: &PipelineConfig) {
    if cfg.serial {
        // Fails only if a pool already exists, which nothing here creates.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Align { frames, out, config } => {
            let cfg = config.resolve()?;
            single_thread(&cfg);
            pipeline::align(&frames, &out, &cfg)?;
        }
        Command::Moments {
            frames,
            transforms,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            single_thread(&cfg);
            pipeline::moments(&frames, &transforms, &out, &cfg)?;
        }
        Command::Background {
            frames,
            transforms,
            moments,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            single_thread(&cfg);
            pipeline::background(&frames, &transforms, &moments, &out, &cfg)?;
        }
        Command::Eval {
            frames,
            backgrounds,
            annotations,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            let roc = pipeline::eval(&frames, &backgrounds, &annotations, &out, &cfg)?;
            println!("auc_raw,auc_normalized\n{},{}", roc.auc_raw, roc.auc_normalized);
        }
        Command::Synth(args) => pipeline::synth_to_dir(&args.options(), &args.out)?,
        Command::Run {
            frames,
            out,
            annotations,
            config,
        } => {
            let cfg = config.resolve()?;
            single_thread(&cfg);
            let r = pipeline::run(&frames, annotations.as_deref(), &out, &cfg)?;
            if let Some(roc) = r.roc {
                println!("auc_raw,auc_normalized\n{},{}", roc.auc_raw, roc.auc_normalized);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
