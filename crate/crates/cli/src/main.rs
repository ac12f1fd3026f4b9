use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use facies_core::pipeline::{
    cmd_attributes, cmd_classify, cmd_interpolate, cmd_pipeline, cmd_render, cmd_synth, cmd_train,
    Artifacts,
};
use facies_core::{PipelineConfig, PipelineError};

const EXIT_STAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "facies-gtm",
    version,
    about = "Seismic facies from GLCM texture and a generative topographic map"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: PathBuf,
    /// Replace a config value, e.g. `gtm.max_iterations=50`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute texture attributes for every voxel.
    Attributes(Common),
    /// Fill missing attribute rows by RBF interpolation.
    Interpolate(Common),
    /// Train the latent map on the filled attributes.
    Train(Common),
    /// Project voxels, cluster them into facies and score against ground truth.
    Classify(Common),
    /// Draw facies and attribute slices.
    Render(Common),
    /// Run attributes, interpolate, train, classify and render in order.
    Pipeline(Common),
    /// Write a synthetic volume and its label map.
    Synth(Common),
}

fn run(command: Command) -> Result<(), PipelineError> {
    let common = match &command {
        Command::Attributes(c)
        | Command::Interpolate(c)
        | Command::Train(c)
        | Command::Classify(c)
        | Command::Render(c)
        | Command::Pipeline(c)
        | Command::Synth(c) => c,
    };
    let config = PipelineConfig::load(&common.config, &common.overrides)?;
    let out = Artifacts::new(&config.output_dir);
    match command {
        Command::Attributes(_) => {
            let table = cmd_attributes(&config)?;
            println!(
                "wrote {} ({} missing rows)",
                out.attributes_csv().display(),
                table.missing_count()
            );
        }
        Command::Interpolate(_) => {
            let report = cmd_interpolate(&config)?;
            for a in &report.attributes {
                let test = a
                    .testing_rmse
                    .map_or("n/a".to_string(), |v| format!("{v:.4e}"));
                println!(
                    "{}: train rmse {:.4e}, test rmse {test}",
                    a.attribute, a.training_rmse
                );
            }
            println!("wrote {}", out.filled_csv().display());
        }
        Command::Train(_) => {
            let s = cmd_train(&config)?;
            println!(
                "trained on {} rows: {} iterations, log-likelihood {:.6e} -> {:.6e}{}",
                s.train_rows,
                s.trace.len(),
                s.initial_log_likelihood,
                s.trace.last().copied().unwrap_or(s.initial_log_likelihood),
                if s.converged { " (converged)" } else { "" }
            );
        }
        Command::Classify(_) => {
            let s = cmd_classify(&config)?;
            println!(
                "wrote {} (inertia {:.4e})",
                out.facies_csv().display(),
                s.clusters.inertia
            );
            if let Some(ari) = s.ari {
                println!("ARI {ari:.4}");
            }
        }
        Command::Render(_) => {
            for p in cmd_render(&config)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Pipeline(_) => {
            cmd_pipeline(&config, &mut io::stdout())?;
        }
        Command::Synth(_) => {
            let truth = cmd_synth(&config)?;
            println!(
                "wrote {} with {} facies",
                config.input.display(),
                truth.n_facies()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                PipelineError::Config(_) => EXIT_CONFIG,
                PipelineError::Stage { .. } => EXIT_STAGE,
            })
        }
    }
}
