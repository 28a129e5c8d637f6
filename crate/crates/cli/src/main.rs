use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use inferguard::experiment::{
    fmt_num, regenerate_reports, run_attr_experiment, run_inversion_experiment, run_training, to_json, validate_config,
    ConfigIssue, ExperimentConfig, ExperimentError, ExperimentKind,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "inferguard", version, about = "Privacy attacks and defenses for split and black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured victim model and save its checkpoint.
    Train,
    /// Run the attribute-inference sweep over flip probabilities.
    AttackAttr,
    /// Run the model-inversion grid over cut points and noise levels.
    AttackInv,
    /// Rebuild summaries and plots from the CSVs in the output directory.
    Report,
    /// Check a config and print it with every default filled in.
    Validate,
}

enum Failure {
    Config(Vec<ConfigIssue>),
    Usage(String),
    Runtime(ExperimentError),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(issues) => Failure::Config(issues),
            other => Failure::Runtime(other),
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("--config <path> is required".into()))?;
    let mut cfg = validate_config(path).map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn require(cfg: &ExperimentConfig, kind: ExperimentKind, verb: &str) -> Result<(), Failure> {
    if cfg.kind() == kind {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{verb} needs a {} config, got {}", kind.name(), cfg.kind().name())))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate => {
            let cfg = load(cli)?;
            println!("{}", serde_json::to_string_pretty(&to_json(&cfg)).expect("config serializes"));
        }
        Command::Train => {
            let cfg = load(cli)?;
            let trace = run_training(&cfg)?;
            for (e, s) in trace.iter().enumerate() {
                eprintln!("epoch {:>4}  loss {}  accuracy {}", e + 1, fmt_num(s.loss), fmt_num(s.accuracy));
            }
            println!("{}", cfg.output_dir.display());
        }
        Command::AttackAttr => {
            let cfg = load(cli)?;
            require(&cfg, ExperimentKind::AttrAttack, "attack-attr")?;
            let out = run_attr_experiment(&cfg)?;
            println!("target_attr,flip_p,attack_mean,attack_std,test_mean,test_std,baseline");
            for s in &out.summary {
                println!(
                    "{},{},{},{},{},{},{}",
                    s.target_attr,
                    fmt_num(s.flip_p),
                    fmt_num(s.attack_mean),
                    fmt_num(s.attack_std),
                    fmt_num(s.test_mean),
                    fmt_num(s.test_std),
                    fmt_num(s.baseline)
                );
            }
        }
        Command::AttackInv => {
            let cfg = load(cli)?;
            require(&cfg, ExperimentKind::InversionAttack, "attack-inv")?;
            let out = run_inversion_experiment(&cfg)?;
            println!("cut_layer,sigma,accuracy,mse,psnr,ssim");
            for r in &out.report {
                println!(
                    "{},{},{},{},{},{}",
                    r.cut_layer,
                    fmt_num(r.sigma),
                    fmt_num(r.accuracy),
                    fmt_num(r.mse),
                    fmt_num(r.psnr),
                    fmt_num(r.ssim)
                );
            }
        }
        Command::Report => {
            let dir = match (&cli.out, &cli.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load(cli)?.output_dir,
                (None, None) => return Err(Failure::Usage("report needs --out <dir> or --config <path>".into())),
            };
            for path in regenerate_reports(&dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(issues)) => {
            eprintln!("error: invalid configuration");
            for i in issues {
                eprintln!("  {i}");
            }
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
