mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use liftpose::config::RunConfig;
use liftpose::data::TargetFrame;
use liftpose::{Error, ErrorClass};

/// Environment variable that overrides the output directory.
pub const OUTPUT_DIR_ENV: &str = "LIFTPOSE_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "liftpose", version, about = "Lift 2d joint positions to 3d poses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic mocap dataset and its camera file.
    Synth(commands::SynthArgs),
    /// Train a lifting network on the training subjects.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on the test subjects.
    Eval(commands::EvalArgs),
    /// Protocol-2 error under growing Gaussian pixel noise.
    NoiseSweep(commands::NoiseSweepArgs),
    /// Train and score structural variants from one seed.
    Ablate(commands::AblateArgs),
    /// Write per-frame 3d predictions and skeleton plot data.
    Predict(commands::PredictArgs),
    /// Check every backward pass against central differences.
    Gradcheck(commands::GradcheckArgs),
}

/// Flags shared by every command that reads a run configuration. Each one
/// overrides the matching field of the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct RunFlags {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file (JSON lines).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Camera file (TOML).
    #[arg(long)]
    pub camera_file: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub train_subjects: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub test_subjects: Option<Vec<String>>,
    /// Restrict to these actions (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub actions: Option<Vec<String>>,
    /// Average over the root joint as well.
    #[arg(long)]
    pub include_root: bool,
}

/// Network and optimizer flags.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub no_batch_norm: bool,
    #[arg(long)]
    pub no_residual: bool,
    /// Express targets in the world frame instead of the camera frame.
    #[arg(long)]
    pub world_targets: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub decay_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_norm: Option<f64>,
    /// Write a checkpoint every K epochs (0 = only the final one).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

impl RunFlags {
    /// Defaults, then the config file, then the output-directory variable,
    /// then flags.
    pub fn resolve(&self, model: Option<&ModelFlags>) -> liftpose::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = dir.into();
        }
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.seed => cfg.seed);
        set!(self.dataset => cfg.dataset);
        set!(self.camera_file => cfg.cameras);
        set!(self.output_dir => cfg.output_dir);
        set!(self.train_subjects => cfg.train_subjects);
        set!(self.test_subjects => cfg.test_subjects);
        set!(self.actions => cfg.actions);
        cfg.include_root |= self.include_root;
        if let Some(m) = model {
            set!(m.hidden => cfg.network.hidden_dim);
            set!(m.blocks => cfg.network.n_blocks);
            set!(m.keep_prob => cfg.network.keep_prob);
            set!(m.lr => cfg.train.lr0);
            set!(m.decay_factor => cfg.train.decay_factor);
            set!(m.decay_steps => cfg.train.decay_steps);
            set!(m.batch_size => cfg.train.batch_size);
            set!(m.epochs => cfg.train.epochs);
            set!(m.max_norm => cfg.train.max_norm_cap);
            set!(m.checkpoint_every => cfg.checkpoint_every);
            if m.no_batch_norm {
                cfg.network.batch_norm = false;
            }
            if m.no_residual {
                cfg.network.residual = false;
            }
            if m.world_targets {
                cfg.target_frame = TargetFrame::World;
            }
        }
        let cfg = cfg.resolve()?;
        eprintln!("# resolved configuration\n{}", cfg.to_toml());
        Ok(cfg)
    }
}

pub fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Argument => 2,
        ErrorClass::Io => 3,
        ErrorClass::Schema => 4,
        ErrorClass::Numeric => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (name, result): (&str, Result<(), Error>) = match &cli.command {
        Command::Synth(a) => ("synth", commands::synth(a)),
        Command::Train(a) => ("train", commands::train(a)),
        Command::Eval(a) => ("eval", commands::eval(a)),
        Command::NoiseSweep(a) => ("noise-sweep", commands::noise_sweep(a)),
        Command::Ablate(a) => ("ablate", commands::ablate(a)),
        Command::Predict(a) => ("predict", commands::predict(a)),
        Command::Gradcheck(a) => ("gradcheck", commands::gradcheck(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
