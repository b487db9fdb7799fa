mod commands;
mod config;
mod error;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    AblateOpts, AnalyzeOpts, DecodeOpts, DiscoverOpts, EncodeOpts, FitOpts, GenImagesOpts,
    GenPlantedOpts, ScheduleOpts,
};
pub use error::CliError;

/// Channel saliency analysis, grouping and toy-codec experiments.
///
/// Every subcommand accepts `--config FILE` with the same keys as its flags
/// (underscored); flags given on the command line take precedence.
#[derive(Parser)]
#[command(name = "iscs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-channel variance and bias scores plus the similarity matrix.
    Analyze(AnalyzeOpts),
    /// Discover SC/SA groups and bias channels; write a manifest.
    Discover(DiscoverOpts),
    /// Fit the toy codec on a directory of PGM images.
    Fit(FitOpts),
    /// Encode a PGM image into a bitstream.
    Encode(EncodeOpts),
    /// Decode a bitstream into a PGM image.
    Decode(DecodeOpts),
    /// Single-channel removal sweep and rate/degradation correlation.
    Ablate(AblateOpts),
    /// Compare slice schedules of flat and grouped channel organizations.
    Schedule(ScheduleOpts),
    /// Write seeded 1/f noise test images.
    GenImages(GenImagesOpts),
    /// Write a kernel set with planted group structure and its ground truth.
    GenPlanted(GenPlantedOpts),
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(o) => commands::analyze(o),
        Command::Discover(o) => commands::discover(o),
        Command::Fit(o) => commands::fit(o),
        Command::Encode(o) => commands::encode(o),
        Command::Decode(o) => commands::decode(o),
        Command::Ablate(o) => commands::ablate(o),
        Command::Schedule(o) => commands::schedule(o),
        Command::GenImages(o) => commands::gen_images(o),
        Command::GenPlanted(o) => commands::gen_planted(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
