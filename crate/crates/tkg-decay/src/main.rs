use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tkg_decay::commands::{self, FilterInputs, SweepLabels};
use tkg_decay::config::{Settings, KEYS};
use tkg_decay::core::synth::SweepParam;
use tkg_decay::{exit, Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid command line
  3  missing, unreadable or unwritable file
  4  invalid configuration (unknown key, bad value)
  5  malformed input data
  6  pipeline stage failure

Errors are printed to stderr as one line:
  error<TAB>kind=<io|config|input|stage><TAB>code=<n><TAB><message>";

#[derive(Parser)]
#[command(name = "tkg-decay", version, about = "Filter outdated facts from temporal knowledge graphs")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// key = value configuration file (see `tkg-decay keys`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=50`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validity threshold
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Evaluation day, in the input's date format
    #[arg(long, global = true)]
    t_current: Option<String>,
    #[arg(long, global = true, value_enum)]
    scope: Option<ScopeArg>,
    #[arg(long, global = true, value_enum)]
    label_source: Option<LabelArg>,
    /// Score facts with a later tail change as 0
    #[arg(long, global = true)]
    zero_superseded: bool,
    /// Flip the hinge orientation of the margin loss
    #[arg(long, global = true)]
    paper_sign: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Train,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Predicted,
    Derived,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Theta,
    HalfLife,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepLabelArg {
    Truth,
    Derived,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input files and print a summary
    Ingest {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print interval histogram and class balance
    Stats {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train the classifier and write a checkpoint, log and labels
    Train {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write filtered files and reports
    Filter {
        /// Training split
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Checkpoint to use instead of training
        #[arg(long)]
        params: Option<PathBuf>,
        /// Ground-truth sidecar whose classes replace the classifier
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with ground truth
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a parameter grid against ground truth
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// `start:stop:step` or a comma-separated list
        #[arg(long)]
        grid: String,
        #[arg(long, value_enum, default_value = "truth")]
        labels: SweepLabelArg,
        /// CSV output path
        #[arg(long)]
        out: PathBuf,
    },
    /// List configuration keys
    Keys,
}

fn settings(g: &Global) -> Result<Settings> {
    let mut s = match &g.config {
        Some(p) => Settings::read(p)?,
        None => Settings::default(),
    };
    for pair in &g.set {
        s.set_pair(pair)?;
    }
    if let Some(v) = g.seed {
        s.set("seed", &v.to_string())?;
    }
    if let Some(v) = g.theta {
        s.set("theta", &v.to_string())?;
    }
    if let Some(v) = g.epochs {
        s.set("epochs", &v.to_string())?;
    }
    if let Some(v) = &g.t_current {
        s.set("t_current", v)?;
    }
    if let Some(v) = g.scope {
        s.set("scope", match v {
            ScopeArg::Train => "train",
            ScopeArg::All => "all",
        })?;
    }
    if let Some(v) = g.label_source {
        s.set("label_source", match v {
            LabelArg::Predicted => "predicted",
            LabelArg::Derived => "derived",
        })?;
    }
    if g.zero_superseded {
        s.set("zero_superseded", "true")?;
    }
    if g.paper_sign {
        s.set("paper_sign", "true")?;
    }
    Ok(s)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = settings(&cli.global)?.resolve()?;
    match cli.command {
        Command::Ingest { inputs } => print(&commands::ingest(&inputs, &cfg)?),
        Command::Stats { inputs } => print(&commands::stats(&inputs, &cfg)?),
        Command::Train { inputs, out } => print(&commands::train(&inputs, &out, &cfg)?),
        Command::Filter {
            input,
            valid,
            test,
            params,
            truth,
            out,
        } => {
            let inputs = FilterInputs {
                train: input,
                valid,
                test,
                params,
                truth,
            };
            print(&commands::filter(&inputs, &out, &cfg)?)
        }
        Command::Synth { out } => print(&commands::synth(&out, &cfg)?),
        Command::Sweep {
            input,
            truth,
            param,
            grid,
            labels,
            out,
        } => {
            let param = match param {
                ParamArg::Theta => SweepParam::Theta,
                ParamArg::HalfLife => SweepParam::HalfLife,
            };
            let labels = match labels {
                SweepLabelArg::Truth => SweepLabels::Truth,
                SweepLabelArg::Derived => SweepLabels::Derived,
            };
            let grid = commands::parse_grid(&grid)?;
            print(&commands::sweep(&input, &truth, param, &grid, labels, &out, &cfg)?)
        }
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<24}{doc}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\tkind={}\tcode={}\t{msg}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
