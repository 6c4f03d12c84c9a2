use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use ukan_core::{ParamStore, Ukan};
use ukan_data::{blobs, two_mode, write_dataset, Split};
use ukan_train::{evaluate, generate, train, RunOptions, Task, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "ukan", version, about = "Train, evaluate and sample U-KAN models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task used when no config file is given.
    #[arg(long, value_enum, default_value = "segment")]
    task: TaskArg,
    /// Override any key, e.g. `--set optim.lr=1e-3` (repeatable; wins over the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    block_kind: Option<String>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Segment,
    Diffuse,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticKind {
    Blobs,
    TwoMode,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config, metric log and checkpoints to the output directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Report IoU and F1 of a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Also write per-image metrics as TSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Sample images from a diffusion checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter and FLOP counts of a configured model.
    Inspect {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a synthetic dataset.
    MakeSynthetic {
        #[arg(long, value_enum)]
        kind: SyntheticKind,
        #[arg(long, short, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, TrainError> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| TrainError::Config(format!("{}: {e}", p.display())))?,
            None => match self.task {
                TaskArg::Segment => "task = \"segment\"\n".to_string(),
                TaskArg::Diffuse => "task = \"diffuse\"\n".to_string(),
            },
        };
        let quote = |s: &str| format!("{s:?}");
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("optim.epochs", self.epochs.map(|v| v.to_string()));
        push("optim.lr", self.lr.map(|v| format!("{v:e}")));
        push("optim.batch_size", self.batch_size.map(|v| v.to_string()));
        push("model.profile", self.profile.as_deref().map(quote));
        push("model.block_kind", self.block_kind.as_deref().map(quote));
        push("model.num_layers", self.num_layers.map(|v| v.to_string()));
        push("data.root", self.data.as_ref().map(|p| quote(&p.display().to_string())));
        push("output.dir", self.out.as_ref().map(|p| quote(&p.display().to_string())));
        o.extend(self.overrides.iter().cloned());
        TrainConfig::parse(&text, &o)
    }
}

fn run(cli: Cli) -> Result<(), TrainError> {
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| TrainError::io("<stdout>", e);
    match cli.command {
        Command::Train { cfg, resume, stop_after } => {
            let config = cfg.resolve()?;
            let summary = train(&config, &RunOptions { resume, stop_after })?;
            writeln!(out, "epochs = {}", summary.epochs).map_err(io)?;
            writeln!(out, "steps = {}", summary.steps).map_err(io)?;
            if let Some(l) = summary.losses.last() {
                writeln!(out, "final_loss = {l}").map_err(io)?;
            }
            writeln!(out, "dir = {}", summary.dir.display()).map_err(io)?;
        }
        Command::Eval { checkpoint, split, table } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
            };
            let m = evaluate(&checkpoint, split)?;
            writeln!(out, "split = {split}\nimages = {}\niou = {}\nf1 = {}", m.len(), m.mean_iou(), m.mean_f1()).map_err(io)?;
            if let Some(path) = table {
                let mut text = String::from("index\tiou\tf1\n");
                for (i, (a, b)) in m.iou.iter().zip(&m.f1).enumerate() {
                    text.push_str(&format!("{i}\t{a}\t{b}\n"));
                }
                std::fs::write(&path, text).map_err(|e| TrainError::io(&path, e))?;
            }
        }
        Command::Generate { checkpoint, n, seed, out: dir } => {
            for p in generate(&checkpoint, n, seed, &dir)? {
                writeln!(out, "{}", p.display()).map_err(io)?;
            }
        }
        Command::Inspect { cfg } => {
            let config = cfg.resolve()?;
            let model = Ukan::new(
                &mut ukan_core::Init::new(&mut ParamStore::<f32>::new(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)),
                config.model_config()?,
            )?;
            let d = &config.data;
            let report = model.flops(&[1, d.channels, d.height, d.width])?;
            let layers: Vec<String> = config.layers()?.iter().map(|k| k.to_string()).collect();
            writeln!(out, "task = {}", if config.task == Task::Segment { "segment" } else { "diffuse" }).map_err(io)?;
            writeln!(out, "profile = {}\nlayers = {}", config.model.profile, layers.join(",")).map_err(io)?;
            writeln!(out, "input = {}x{}x{}", d.channels, d.height, d.width).map_err(io)?;
            writeln!(out, "params = {}\nmparams = {:.3}", report.params, report.mparams()).map_err(io)?;
            writeln!(out, "flops = {}\ngflops = {:.3}", report.flops, report.gflops()).map_err(io)?;
            for (name, f) in &report.stages {
                writeln!(out, "flops.{name} = {f}").map_err(io)?;
            }
        }
        Command::MakeSynthetic { kind, n, size, seed, out: dir } => {
            let samples = match kind {
                SyntheticKind::Blobs => blobs::<f32>(n, size, seed),
                SyntheticKind::TwoMode => two_mode::<f32>(n, size, seed),
            };
            write_dataset(&dir, &samples)?;
            writeln!(out, "wrote {n} samples to {}", dir.display()).map_err(io)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
