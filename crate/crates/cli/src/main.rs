//! `dcrnn`: graph building, synthetic data, training, evaluation,
//! prediction and filter export.
//!
//! Exit codes: 0 success, 2 input error, 3 config or checkpoint mismatch,
//! 4 numeric failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dcrnn",
    version,
    about = "Diffusion convolutional recurrent forecasting on road graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GateArg {
    Reset,
    Update,
    Candidate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StackArg {
    Encoder,
    Decoder,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a thresholded Gaussian-kernel graph from road distances.
    ///
    /// Prints `nodes=`, `edges=` and `sigma=` lines.
    BuildGraph {
        /// CSV with a header and `from_id,to_id,distance` records.
        #[arg(long)]
        distances: PathBuf,
        /// One node id per line; fixes the node order.
        #[arg(long)]
        nodes: PathBuf,
        /// Distance threshold; pairs farther apart get no edge.
        #[arg(long, default_value_t = f64::INFINITY)]
        kappa: f64,
        /// Triplet output; metadata goes to `<out>.meta`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic series diffusing along a graph's edges.
    Synth {
        /// Graph written by `build-graph`.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Weight of diffused traffic against the seasonal forcing.
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        /// Standard deviation of the per-step Gaussian noise.
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Series CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write `train_report.csv` and `best.ckpt`.
    ///
    /// Epoch records are echoed to stdout; wall-clock time goes to stderr.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Replaces `data.output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score forecasts as `horizon_minutes,metric,value` records.
    ///
    /// With `--config` and `--checkpoint`, scores the model on the test
    /// split. With `--truth` and `--prediction`, scores a forecast CSV from
    /// `predict` against a series: prediction row `j` is horizon `j + 1` and
    /// is matched to the truth row with the same timestamp.
    Eval {
        #[arg(long, requires = "checkpoint", conflicts_with_all = ["truth", "prediction"])]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "prediction")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        prediction: Option<PathBuf>,
        /// Horizons in steps. Defaults to 3,6,12 for model evaluation and to
        /// every prediction row for file evaluation.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
    /// Forecast the next `horizon` steps as a series CSV in physical units.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// First forecast step, as a step index or an ISO timestamp. May be
        /// one past the last step of the series.
        #[arg(long)]
        at: String,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a learned filter's response around one node as `node_id,weight`.
    ExportFilter {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Center node id.
        #[arg(long)]
        node: String,
        /// Graph written by `build-graph`.
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        graph: Option<PathBuf>,
        /// Run configuration naming the graph.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Recurrent stack to read; ignored by the feed-forward model.
        #[arg(long, value_enum, default_value_t = StackArg::Encoder)]
        stack: StackArg,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Recurrent gate to read; ignored by the feed-forward model.
        #[arg(long, value_enum, default_value_t = GateArg::Candidate)]
        gate: GateArg,
        /// Input feature of the layer.
        #[arg(long, default_value_t = 0)]
        input: usize,
        /// Output feature of the layer.
        #[arg(long, default_value_t = 0)]
        output: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildGraph {
            distances,
            nodes,
            kappa,
            out,
        } => commands::build_graph(&distances, &nodes, kappa, &out),
        Command::Synth {
            graph,
            steps,
            seed,
            lambda,
            noise,
            out,
        } => commands::synth(&graph, steps, seed, lambda, noise, &out),
        Command::Train {
            config,
            overrides,
            output_dir,
        } => commands::train(&config, &overrides, output_dir),
        Command::Eval {
            config,
            overrides,
            checkpoint,
            truth,
            prediction,
            horizons,
        } => match (config, checkpoint, truth, prediction) {
            (Some(config), Some(checkpoint), None, None) => {
                commands::eval_model(&config, &overrides, &checkpoint, horizons)
            }
            (None, None, Some(truth), Some(prediction)) => {
                commands::eval_files(&truth, &prediction, horizons)
            }
            _ => Err(CliError::Input(
                "eval needs either --config with --checkpoint, or --truth with --prediction".into(),
            )),
        },
        Command::Predict {
            config,
            overrides,
            checkpoint,
            at,
            out,
        } => commands::predict(&config, &overrides, &checkpoint, &at, out.as_deref()),
        Command::ExportFilter {
            checkpoint,
            node,
            graph,
            config,
            stack,
            layer,
            gate,
            input,
            output,
        } => commands::export_filter(&commands::FilterRequest {
            checkpoint,
            node,
            graph,
            config,
            stack,
            layer,
            gate,
            input,
            output,
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
