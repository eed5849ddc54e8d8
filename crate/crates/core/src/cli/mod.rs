//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, configuration or input
//! data, 2 for runtime failures (I/O, divergence, unavailable kernel).

mod artifacts;
mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub use artifacts::{read_instance_dir, RunManifest, RUN_MANIFEST};
pub use config::{ModelSection, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kernel {
    /// The external kernel when installed, this crate's geometry otherwise.
    Auto,
    Reference,
    Native,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Auto | Kernel::Reference => "reference",
            Kernel::Native => "native",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "modif", version, about = "Multi-object deformed implicit fields")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Kernel::Auto)]
    pub kernel: Kernel,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML (or JSON) file with `model`, `train`, `weights`, `sampling`,
    /// `fit`, `eval` and `correspond` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic family with analytic ground truth.
    MakeToy(commands::MakeToyArgs),
    /// Sample an instance manifest into an MSDF1 archive.
    Preprocess(commands::PreprocessArgs),
    /// Train networks and codes on a directory of archives.
    Train(commands::TrainArgs),
    /// Extract meshes of trained instances (and optionally the templates).
    Reconstruct(commands::ReconstructArgs),
    /// Fit codes for an archive with frozen networks, optionally with
    /// missing categories.
    Recover(commands::RecoverArgs),
    /// Dense correspondence between two trained instances.
    Correspond(commands::CorrespondArgs),
    /// Chamfer, EMD and intersection-volume report of predicted meshes.
    Eval(commands::EvalArgs),
    /// Reconstructions from randomly edited codes.
    Augment(commands::AugmentArgs),
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Diverged { .. } => 2,
        _ => 1,
    }
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.global.log_level);
    if let Some(n) = cli.global.threads {
        // a pool already installed by an earlier in-process run is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    if cli.global.kernel == Kernel::Native {
        log::error!("native geometry kernel is not available in this build");
        return 2;
    }
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
