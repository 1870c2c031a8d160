//! `efcn` — experiment driver for the CNN → dense embedding engine.
//!
//! Every subcommand reads one TOML config (all keys optional), applies
//! `--set key=value` overrides and the `--seed` shortcut, and writes its
//! artifacts into a fresh run directory under `--run-root`. Run directories
//! are append-only: reusing a `--run-id` is an error, never an overwrite.
//! With `deterministic = true` (the default) the config plus seed fully
//! determine every artifact byte.

/// Print a status line, ignoring a closed stdout (`efcn --help | head`
/// must not panic on the broken pipe).
macro_rules! say {
    ($($tt:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($tt)*);
    }};
}

/// Print to stderr, ignoring a closed stream.
macro_rules! complain {
    ($($tt:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stderr(), $($tt)*);
    }};
}

mod commands;
mod config;
mod data;
mod errors;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use errors::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "efcn",
    version,
    about = "Train CNNs, embed them into equivalent dense networks, and probe the result"
)]
struct Cli {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set train.cnn.lr=0.05 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed; cascades into every stage seed not pinned explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dataset directory (CIFAR); falls back to config, then $EFCN_DATA_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,

    /// Directory that run directories are created under.
    #[arg(long, global = true, default_value = "runs", value_name = "DIR")]
    run_root: PathBuf,

    /// Name of this run's directory; defaults to "<command>-seed<seed>".
    #[arg(long, global = true, value_name = "NAME")]
    run_id: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProbeWhat {
    Grad,
    Hessian,
    Delta,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum KeepArg {
    /// Zero every off-local weight, keep the embedded filter positions.
    Local,
    /// Zero the embedded filter positions, keep everything else.
    Offlocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    /// Right after embedding, before any dense training.
    AtEmbedding,
    /// After the dense run finished.
    AfterTraining,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InterpMethod {
    Linear,
    String,
    Output,
}

#[derive(Subcommand)]
enum Command {
    /// Train the convolutional model and checkpoint log-spaced snapshots.
    TrainCnn,
    /// Train the dense architecture from scratch (the embedding target,
    /// randomly initialized).
    TrainFcn,
    /// Embed a convolutional checkpoint into its exactly-equivalent dense
    /// network and verify the logits match.
    Embed {
        /// CNN checkpoint to embed; omitted: embed a fresh initialization.
        #[arg(long, value_name = "FILE")]
        from: Option<PathBuf>,
    },
    /// Embed the snapshot taken at epoch T_W and train the dense result.
    Relax {
        /// Relax time: the source-run epoch of the snapshot to embed.
        #[arg(long, value_name = "T_W")]
        tw: usize,
        /// Run directory holding cnn_tw*.efcn snapshots; omitted: train the
        /// source model here first.
        #[arg(long, value_name = "DIR")]
        from: Option<PathBuf>,
    },
    /// Full protocol: train the CNN, embed every snapshot, train each
    /// embedding and the scratch dense baseline, probe everything.
    Protocol,
    /// Measure properties of one checkpoint: gradient norm, top curvature,
    /// deviation from the embedding subspace.
    Probe {
        #[arg(long, value_enum, default_value_t = ProbeWhat::All)]
        what: ProbeWhat,
        /// Checkpoint to probe.
        #[arg(long, value_name = "FILE")]
        from: PathBuf,
        /// Label the row with this relax time (default: the checkpoint's).
        #[arg(long, value_name = "T_W")]
        tw: Option<usize>,
        /// Which phase label the row carries.
        #[arg(long, value_enum, default_value_t = PhaseArg::AfterTraining)]
        phase: PhaseArg,
    },
    /// Zero one part of an embedded checkpoint's weights and evaluate what
    /// survives on the test set.
    MaskEval {
        #[arg(long, value_enum)]
        keep: KeepArg,
        /// Embedded checkpoint (needs its source architecture recorded).
        #[arg(long, value_name = "FILE")]
        from: PathBuf,
    },
    /// Loss/accuracy profile along a path between two checkpoints.
    Interp {
        #[arg(long, value_enum)]
        method: InterpMethod,
        /// Number of points including both endpoints.
        #[arg(long, default_value_t = 11)]
        n: usize,
        /// First endpoint checkpoint.
        #[arg(long, value_name = "FILE")]
        a: PathBuf,
        /// Second endpoint checkpoint.
        #[arg(long, value_name = "FILE")]
        b: PathBuf,
    },
    /// Dump one dense row of an embedded checkpoint as a receptive-field
    /// heatmap over the input plane.
    Filters {
        /// Convolution stage (0 = first conv layer).
        #[arg(long)]
        layer: usize,
        /// Output channel within that stage.
        #[arg(long)]
        channel: usize,
        /// Output position "i,j" within that stage's feature map.
        #[arg(long, value_name = "I,J")]
        pos: String,
        /// Embedded checkpoint (needs its source architecture recorded).
        #[arg(long, value_name = "FILE")]
        from: PathBuf,
    },
    /// Generate the synthetic dataset and dump its patterns and labels.
    Synth,
    /// Run the built-in self-checks and report each one.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainCnn => "train-cnn",
            Command::TrainFcn => "train-fcn",
            Command::Embed { .. } => "embed",
            Command::Relax { .. } => "relax",
            Command::Protocol => "protocol",
            Command::Probe { .. } => "probe",
            Command::MaskEval { .. } => "mask-eval",
            Command::Interp { .. } => "interp",
            Command::Filters { .. } => "filters",
            Command::Synth => "synth",
            Command::Verify => "verify",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config::load(cli.config.as_deref(), &cli.set, cli.seed)?;
    let run_id = cli
        .run_id
        .unwrap_or_else(|| format!("{}-seed{}", cli.command.name(), cfg.seed));
    let run = output::RunDir::create(&cli.run_root, &run_id)?;
    let ctx = commands::Ctx {
        cfg: &cfg,
        run,
        data_dir: cli.data_dir.as_deref(),
    };
    match &cli.command {
        Command::TrainCnn => commands::train_cnn(&ctx),
        Command::TrainFcn => commands::train_fcn(&ctx),
        Command::Embed { from } => commands::embed(&ctx, from.as_deref()),
        Command::Relax { tw, from } => commands::relax(&ctx, *tw, from.as_deref()),
        Command::Protocol => commands::protocol(&ctx),
        Command::Probe {
            what,
            from,
            tw,
            phase,
        } => commands::probe(&ctx, *what, from, *tw, *phase),
        Command::MaskEval { keep, from } => commands::mask_eval(&ctx, *keep, from),
        Command::Interp { method, n, a, b } => commands::interp(&ctx, *method, *n, a, b),
        Command::Filters {
            layer,
            channel,
            pos,
            from,
        } => commands::filters(&ctx, *layer, *channel, pos, from),
        Command::Synth => commands::synth(&ctx),
        Command::Verify => commands::verify(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; real parse
            // errors map to the usage exit code with a machine-readable tail.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                say!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.to_string());
            complain!("{e}");
            complain!("{}", err.record());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            complain!("error: {err}");
            complain!("{}", err.record());
            ExitCode::from(err.exit_code())
        }
    }
}
