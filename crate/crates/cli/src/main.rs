//! `vidswap`: dataset generation, filtering, mask augmentation, input assembly,
//! toy training, inference, evaluation and self-tests.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
//! JSON object `{code, message, context}` on stderr.

mod commands;
mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use vidswap_core::mask_augment::AugmentMode;

use crate::config::GlobalConfig;

#[derive(Debug, Parser)]
#[command(
    name = "vidswap",
    version,
    about = "Mask-guided video subject swapping at desk scale"
)]
struct Cli {
    /// Seed for every random draw; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic scenes and write a dataset with a JSON-lines manifest.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Quality-filter and category-balance a manifest.
    FilterDataset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augment a mask folder.
    AugmentMask {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Inference)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the fused model input and write it as tensors.
    BuildInput {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy denoiser on a manifest and write a checkpoint.
    TrainToy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Swap the masked subject of a clip for the reference.
    Infer {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Edited first frame (PNG) that the swap propagates from.
        #[arg(long)]
        first_frame: Option<PathBuf>,
        #[arg(long)]
        segment_length: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        feather: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the benchmark over a manifest and write JSON and CSV reports.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

struct Failure {
    exit: u8,
    code: String,
    message: String,
    context: serde_json::Value,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: 2,
            code: "usage".into(),
            message: message.into(),
            context: json!({}),
        }
    }

    fn runtime(err: anyhow::Error, command: &str) -> Self {
        let code = err
            .downcast_ref::<vidswap_core::Error>()
            .map(|e| e.code().to_string())
            .or_else(|| err.downcast_ref::<std::io::Error>().map(|_| "io".to_string()))
            .or_else(|| err.downcast_ref::<serde_json::Error>().map(|_| "json".to_string()))
            .unwrap_or_else(|| "runtime".into());
        let chain: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
        Self {
            exit: 1,
            code,
            message: err.to_string(),
            context: json!({ "command": command, "causes": chain }),
        }
    }

    fn emit(&self) -> ExitCode {
        let body = json!({ "code": self.code, "message": self.message, "context": self.context });
        eprintln!("{body}");
        ExitCode::from(self.exit)
    }
}

fn load_config(cli: &Cli) -> Result<GlobalConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => GlobalConfig::load(p).map_err(|e| {
            let mut f = Failure::runtime(e, "config");
            f.code = "config".into();
            f.context = json!({ "path": p });
            f
        })?,
        None => GlobalConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData { .. } => "gen-data",
        Command::FilterDataset { .. } => "filter-dataset",
        Command::AugmentMask { .. } => "augment-mask",
        Command::BuildInput { .. } => "build-input",
        Command::TrainToy { .. } => "train-toy",
        Command::Infer { .. } => "infer",
        Command::Eval { .. } => "eval",
        Command::Selftest => "selftest",
    }
}

fn or_default(p: &Option<PathBuf>, fallback: &Path) -> PathBuf {
    p.clone().unwrap_or_else(|| fallback.to_path_buf())
}

fn dispatch(command: &Command, cfg: &mut GlobalConfig) -> anyhow::Result<serde_json::Value> {
    match command {
        Command::GenData { out, count } => commands::gen_data(cfg, &or_default(out, &cfg.paths.data_dir), *count),
        Command::FilterDataset { manifest, out } => commands::filter_dataset(cfg, manifest, out),
        Command::AugmentMask { mask, mode, out } => {
            let mode = match mode {
                Mode::Train => AugmentMode::Train,
                Mode::Inference => AugmentMode::Inference,
            };
            commands::augment_mask(cfg, mask, mode, out)
        }
        Command::BuildInput {
            clip,
            mask,
            reference,
            pose,
            out,
        } => {
            let input = commands::InputPaths {
                clip,
                mask,
                reference,
                pose: pose.as_deref(),
            };
            commands::build_input(cfg, &input, out)
        }
        Command::TrainToy { data, out, steps } => {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            commands::train_toy(cfg, data, &or_default(out, &cfg.paths.checkpoint_dir))
        }
        Command::Infer {
            clip,
            mask,
            reference,
            pose,
            weights,
            first_frame,
            segment_length,
            steps,
            feather,
            out,
        } => {
            if let Some(v) = segment_length {
                cfg.sampler.segment_length = *v;
            }
            if let Some(v) = steps {
                cfg.sampler.steps = *v;
            }
            if let Some(v) = feather {
                cfg.sampler.feather = *v;
            }
            let weights = or_default(weights, &cfg.paths.checkpoint_dir);
            let out = or_default(out, &cfg.paths.output_dir);
            let args = commands::InferArgs {
                input: commands::InputPaths {
                    clip,
                    mask,
                    reference,
                    pose: pose.as_deref(),
                },
                weights: &weights,
                first_frame: first_frame.as_deref(),
                out: &out,
            };
            commands::infer(cfg, &args)
        }
        Command::Eval {
            manifest,
            weights,
            limit,
            out,
        } => {
            let weights = or_default(weights, &cfg.paths.checkpoint_dir);
            let out = or_default(out, &cfg.paths.output_dir.join("eval"));
            let args = commands::EvalArgs {
                manifest,
                weights: &weights,
                limit: *limit,
                out: &out,
            };
            commands::eval(cfg, &args)
        }
        Command::Selftest => {
            let checks = selftest::run(cfg.seed);
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            if !failed.is_empty() {
                anyhow::bail!("selftest failed: {}", failed.join(", "));
            }
            Ok(json!({ "checks": checks }))
        }
    }
}

fn run() -> Result<(), Failure> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let mut f = Failure::usage(e.kind().to_string());
            f.context = json!({ "detail": e.to_string().trim() });
            return Err(f);
        }
    };
    let mut cfg = load_config(&cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::usage("a subcommand is required (see --help)"));
    };
    let name = command_name(command);
    cfg.validate().map_err(|e| Failure::runtime(e.into(), name))?;
    let summary = dispatch(command, &mut cfg).map_err(|e| Failure::runtime(e, name))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.emit(),
    }
}
