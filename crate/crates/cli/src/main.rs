use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use tnc_cli::{commands, config, CliError, CliResult, RunConfig, StackSpec};

/// Tensor-network image classifiers built without gradient training.
#[derive(Debug, Parser)]
#[command(name = "tnc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a classifier and store it in the output directory.
    Train,
    /// Evaluate a stored classifier on both splits.
    Eval {
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Accuracy over a grid of bond orders, as CSV.
    Sweep,
    /// Refine a stored classifier with the configured stacking.
    Stack {
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Write the quantum-circuit form of a stored classifier.
    Export {
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Collect manifests and confusion matrices of a run directory.
    Report {
        /// Defaults to the output directory.
        run_dir: Option<PathBuf>,
    },
}

/// Flags mirror the config file fields and take precedence over it.
#[derive(Debug, Args)]
struct Overrides {
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the four standard IDX files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    train_images: Option<PathBuf>,
    #[arg(long, global = true)]
    train_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    test_images: Option<PathBuf>,
    #[arg(long, global = true)]
    test_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    train_limit: Option<usize>,
    #[arg(long, global = true)]
    test_limit: Option<usize>,
    /// centred or corner
    #[arg(long, global = true)]
    pad: Option<String>,
    /// mps or ttn
    #[arg(long, global = true)]
    kind: Option<String>,
    #[arg(long, global = true)]
    d_encode: Option<usize>,
    #[arg(long, global = true)]
    d_batch: Option<usize>,
    #[arg(long, global = true)]
    d_final: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// class-first or mixed
    #[arg(long, global = true)]
    batching: Option<String>,
    #[arg(long, global = true)]
    no_orthogonalise: bool,
    /// postselect or traceout; repeatable
    #[arg(long = "mode", global = true)]
    modes: Vec<String>,
    /// none, classical, dense:M, hier:CxL or mpo:M,D
    #[arg(long, global = true)]
    stack: Option<String>,
    #[arg(long, global = true)]
    dense_learning_rate: Option<f64>,
    #[arg(long, global = true)]
    dense_epochs: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_d_encode: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_d_batch: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_d_final: Option<Vec<usize>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    permutation_restarts: Option<usize>,
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    /// Run every map on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

impl Overrides {
    fn resolve(self) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, &self.data_dir) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(dir)) => RunConfig::with_data_dir(dir),
            (None, None) => RunConfig::default(),
        };
        if let (Some(_), Some(dir)) = (&self.config, &self.data_dir) {
            let paths = RunConfig::with_data_dir(dir);
            cfg.train_images = paths.train_images;
            cfg.train_labels = paths.train_labels;
            cfg.test_images = paths.test_images;
            cfg.test_labels = paths.test_labels;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            train_images,
            train_labels,
            test_images,
            test_labels,
            d_encode,
            d_batch,
            d_final,
            batch_size
        );
        set!(
            dense_learning_rate,
            dense_epochs,
            sweep_d_encode,
            sweep_d_batch,
            sweep_d_final,
            seed
        );
        set!(permutation_restarts, output_dir);
        if self.train_limit.is_some() {
            cfg.train_limit = self.train_limit;
        }
        if self.test_limit.is_some() {
            cfg.test_limit = self.test_limit;
        }
        if let Some(s) = &self.pad {
            cfg.pad = config::parse_name("pad policy", s)?;
        }
        if let Some(s) = &self.kind {
            cfg.kind = config::parse_name("network kind", s)?;
        }
        if let Some(s) = &self.batching {
            cfg.batching = config::parse_name("batching", s)?;
        }
        if !self.modes.is_empty() {
            cfg.modes = self
                .modes
                .iter()
                .map(|m| commands::parse_mode(m))
                .collect::<CliResult<_>>()?;
        }
        if let Some(s) = &self.stack {
            cfg.stack = s.parse::<StackSpec>().map_err(CliError::config)?;
        }
        if self.no_orthogonalise {
            cfg.orthogonalise = false;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.opts.resolve()?;
    match cli.command {
        Command::Train => {
            commands::train(&cfg)?;
        }
        Command::Eval { classifier } => {
            let r = commands::eval(&cfg, classifier.as_deref())?;
            for e in r.train.iter().chain(&r.test) {
                println!("{} {}/{} = {:.2}%", e.mode.as_str(), e.correct, e.total, e.accuracy);
            }
        }
        Command::Sweep => {
            commands::sweep(&cfg)?;
        }
        Command::Stack { classifier } => {
            let r = commands::stack(&cfg, classifier.as_deref())?;
            println!(
                "{}: raw {:.2}% stacked {:.2}%",
                r.spec, r.raw_test_accuracy, r.test_accuracy
            );
        }
        Command::Export { classifier } => {
            commands::export(&cfg, classifier.as_deref())?;
        }
        Command::Report { run_dir } => {
            commands::report(&run_dir.unwrap_or(cfg.output_dir))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("TNC_THREADS").ok().and_then(|v| v.parse().ok()) {
        tnc_core::exec::configure_threads(n);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("E_USAGE", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
