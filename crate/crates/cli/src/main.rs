//! `segxai` command-line driver.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "segxai", version, about = "Explain 3D segmentation models: attribution, RoI aggregation, benchmarking and outlier mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Compute attribution maps for every input and predicted class.
    Attribute {
        #[command(flatten)]
        common: Common,
        /// Method name (vg, sg, ig, kshap_cubes, kshap_semantic) or a JSON object.
        #[arg(long)]
        method: Option<String>,
        /// Comma-separated class ids.
        #[arg(long)]
        classes: Option<String>,
    },
    /// Turn attribution maps into RoI-importance matrices and graphs.
    Aggregate {
        #[command(flatten)]
        common: Common,
        /// Output directory of `attribute`.
        attr_dir: PathBuf,
        /// Extra RoI as `name=mask.a2x`; `{input}` expands to the input id.
        #[arg(long)]
        roi: Vec<String>,
        /// Also write the top-k importance graph.
        #[arg(long)]
        graph: bool,
        /// Edges kept per explained class.
        #[arg(long)]
        k: Option<usize>,
        /// absolute, positive_only or negative_only.
        #[arg(long)]
        sign_mode: Option<String>,
    },
    /// Score attribution methods on faithfulness, sensitivity, complexity and runtime.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Restrict to one method.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        classes: Option<String>,
    },
    /// Rank explanation matrices by anomaly score and test against Dice.
    Outliers {
        #[command(flatten)]
        common: Common,
        /// Training matrices (an `aggregate` output directory).
        #[arg(long)]
        train: PathBuf,
        /// Matrices to score.
        #[arg(long)]
        eval: PathBuf,
        /// CSV with columns input_id,class,dice.
        #[arg(long)]
        dice: Option<PathBuf>,
    },
    /// Query a model server and print what it reports.
    Probe {
        /// host:port or stdio:<command>.
        #[arg(long)]
        endpoint: String,
    },
    /// Serve the configured synthetic model over TCP.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Attribute { common, method, classes } => commands::attribute(&common, method.as_deref(), classes.as_deref()),
        Command::Aggregate { common, attr_dir, roi, graph, k, sign_mode } => {
            commands::aggregate(&common, &attr_dir, &roi, graph, k, sign_mode.as_deref())
        }
        Command::Benchmark { common, method, classes } => commands::benchmark(&common, method.as_deref(), classes.as_deref()),
        Command::Outliers { common, train, eval, dice } => commands::outliers(&common, &train, &eval, dice.as_deref()),
        Command::Probe { endpoint } => commands::probe(&endpoint),
        Command::Serve { common, listen } => commands::serve(&common, &listen),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
