use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use relpolicy_cli::{
    cmd_collect_expert, cmd_eval, cmd_generate, cmd_imitate, cmd_inspect, cmd_score, cmd_train, CliError, Mode,
    RunConfig,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Train,
    Imitate,
    Eval,
    Score,
    Inspect,
    CollectExpert,
    Generate,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => Mode::Train,
            ModeArg::Imitate => Mode::Imitate,
            ModeArg::Eval => Mode::Eval,
            ModeArg::Score => Mode::Score,
            ModeArg::Inspect => Mode::Inspect,
            ModeArg::CollectExpert => Mode::CollectExpert,
            ModeArg::Generate => Mode::Generate,
        }
    }
}

/// Train, imitate, evaluate and inspect graph-neural policies for
/// relational MDPs.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Domain document, or `builtin:sysadmin` / `builtin:gridnav`.
    #[arg(long, default_value = "builtin:sysadmin")]
    domain: String,
    /// Seed of the train/test instance split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Number of instances in the training split.
    #[arg(long, default_value_t = 5)]
    train_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Environment samples for `train`; overrides the config file.
    #[arg(long)]
    total_steps: Option<u64>,
    /// Output directory (for `generate`: the document path).
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation episodes per instance, or expert episodes per instance.
    #[arg(long)]
    episodes: Option<usize>,
    /// Expert dataset: written by `collect-expert`, read by `imitate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// JSON file with `model`, `ppo` and `imitation` overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Imitation epochs; overrides the config file.
    #[arg(long)]
    epochs: Option<usize>,
    /// Second agent for `score`: checkpoint path, `expert`, `noop` or `random`.
    #[arg(long)]
    compare: Option<String>,
    /// Restricts `inspect` to one instance.
    #[arg(long)]
    instance: Option<String>,
    /// Permutations for the `score` significance test.
    #[arg(long, default_value_t = 1_000_000)]
    permutations: usize,
}

fn run(args: Args) -> Result<(), CliError> {
    let mode = Mode::from(args.mode);
    let mut config = RunConfig::new(mode, &args.domain, &args.out);
    config.split_seed = args.split_seed;
    config.train_size = args.train_size;
    config.seed = args.seed;
    config.checkpoint = args.checkpoint;
    config.episodes = args.episodes;
    config.dataset = args.dataset;
    config.compare = args.compare;
    config.instance = args.instance;
    config.permutations = args.permutations;
    if let Some(p) = &args.config {
        config.hyper = RunConfig::load_overrides(p)?;
    }
    if let Some(e) = args.epochs {
        config.hyper.imitation.epochs = e;
    }
    match mode {
        Mode::Train => {
            let a = cmd_train(&config, args.total_steps)?;
            println!("trained on {} samples; checkpoint {}", a.samples, a.checkpoint.display());
        }
        Mode::Imitate => {
            let r = cmd_imitate(&config)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("plain data"));
        }
        Mode::Eval => {
            cmd_eval(&config)?;
        }
        Mode::Score => {
            cmd_score(&config)?;
        }
        Mode::Inspect => print!("{}", cmd_inspect(&config)?),
        Mode::CollectExpert => {
            let path = config
                .dataset
                .clone()
                .unwrap_or_else(|| config.out.join("expert.jsonl"));
            let n = cmd_collect_expert(&config, &path)?;
            println!("wrote {n} samples to {}", path.display());
        }
        Mode::Generate => cmd_generate(&args.domain, &args.out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELPOLICY_LOG", "warn")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
