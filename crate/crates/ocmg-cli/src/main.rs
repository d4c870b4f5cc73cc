use clap::{Parser, Subcommand};

use ocmg_cli::run;

/// Object-centric motion generation toolkit: procedural spray-path
/// datasets, segment-predictor training, path assembly, and coverage
/// evaluation.
#[derive(Parser)]
#[command(name = "ocmg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural dataset with expert-style raster paths.
    Generate(run::GenerateArgs),
    /// Train the segment-and-mask predictor on a dataset manifest.
    Train(run::TrainArgs),
    /// Predict paths for one sample and postprocess them (or replay ground
    /// truth through the postprocessor with --gt-oracle).
    Infer(run::InferArgs),
    /// Score a directory of predictions against a dataset split.
    Evaluate(run::EvaluateArgs),
    /// Render path projections and coverage meshes.
    Plot(run::PlotArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => run::generate(args),
        Command::Train(args) => run::train(args),
        Command::Infer(args) => run::infer_cmd(args),
        Command::Evaluate(args) => run::evaluate(args),
        Command::Plot(args) => run::plot(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        let code = if err.downcast_ref::<run::UsageError>().is_some() { 2 } else { 1 };
        std::process::exit(code);
    }
}
