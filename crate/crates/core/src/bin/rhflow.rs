use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rhflow::io::commands::{error_exit_code, execute, output_dir, Command};
use rhflow::io::config::VerifyConfig;
use rhflow::io::{RunConfig, Scenario, Suite};
use rhflow::RhError;

#[derive(Parser)]
#[command(name = "rhflow", version, about = "Coupled Ricci / harmonic-map heat flow runs and checks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of grid doublings for refinement studies.
    #[arg(long)]
    refine: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the scenario named in the config.
    Run(Common),
    /// Refinement studies of the discretization.
    Verify {
        #[command(flatten)]
        common: Common,
        /// gauge, evolution, bochner, variation or all.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Functional series along a run.
    Functionals(Common),
    /// Reduced volume series.
    ReducedVolume(Common),
}

fn configure_threads() -> Result<(), RhError> {
    if let Ok(v) = std::env::var("RHFLOW_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| RhError::Config {
            key: "RHFLOW_THREADS".into(),
            message: format!("`{v}` is not a positive integer"),
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RhError::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn load(common: &Common, verify: bool) -> Result<RunConfig, RhError> {
    match &common.config {
        Some(p) => RunConfig::from_path(p),
        None if verify => RunConfig::defaults(Scenario::Verify).resolve(),
        None => Err(RhError::Config { key: "--config".into(), message: "a configuration file is required".into() }),
    }
}

fn verify_section<'a>(config: &'a mut RunConfig, flag: &str) -> Result<&'a mut VerifyConfig, RhError> {
    config.verify.as_mut().ok_or_else(|| RhError::Config {
        key: flag.into(),
        message: "only the verify scenario takes this option".into(),
    })
}

fn main_inner(cli: Cli) -> Result<i32, RhError> {
    configure_threads()?;
    let (cmd, common, suite) = match cli.command {
        Sub::Run(c) => (Command::Run, c, None),
        Sub::Verify { common, suite } => (Command::Verify, common, suite),
        Sub::Functionals(c) => (Command::Functionals, c, None),
        Sub::ReducedVolume(c) => (Command::ReducedVolume, c, None),
    };
    let mut config = load(&common, cmd == Command::Verify)?;
    if let Some(n) = common.refine {
        verify_section(&mut config, "--refine")?.refine = n;
    }
    if let Some(s) = suite {
        let suite: Suite = s.parse()?;
        verify_section(&mut config, "--suite")?.suite = suite;
    }
    let out = output_dir(&config, common.out.clone());
    Ok(execute(cmd, &config, &out)?.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
