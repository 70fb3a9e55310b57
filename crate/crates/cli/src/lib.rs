//! `bcl`: end-to-end verification runs for catalytic Bell nonlocality
//! activation. Every subcommand produces a [`RunReport`] (JSON on stdout,
//! human summary on stderr) and the process exits 0 iff all checks pass.

pub mod commands;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use bcl_core::instruments::Condition;
use clap::{Args, Parser, Subcommand};

pub use commands::{Settings, WitnessSource};
pub use report::{Check, RunReport};

#[derive(Debug, Parser)]
#[command(name = "bcl", version, about = "Catalytic Bell nonlocality activation: simulate and verify")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every randomized step; `BCL_SEED` takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Random restarts of the see-saw and singlet-fraction searches.
    #[arg(long, global = true, default_value_t = 16)]
    pub restarts: usize,
    /// Largest dimension materialized as a dense matrix.
    #[arg(long, global = true, default_value_t = 4096)]
    pub dense_cap: usize,
    /// Tolerance of score identities and catalyst-return conditions.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
    /// Tolerance of exact identities (catalyst return, output law).
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub exact_tol: f64,
    /// Print only the JSON report.
    #[arg(long, global = true)]
    pub json_only: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the catalytic transformation and certify the output with a register-conditioned strategy.
    Catalyze {
        /// `phi+:d`, `isotropic:d:V` or `file:state.json`.
        #[arg(long)]
        state: String,
        /// `zero`, `mixed`, `basis:i:j` or `file:alice.json,bob.json`.
        #[arg(long, default_value = "zero")]
        sigma: String,
        #[arg(long, short = 'n', default_value_t = 2)]
        n: usize,
        /// `chsh` or a functional JSON file.
        #[arg(long, default_value = "chsh")]
        functional: String,
        /// JSON `{alice, bob}` measurements on the n-copy state; see-saw if absent.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Check that the catalyst is returned exactly, the output law, and the dense cross-checks.
    VerifyCatalyst {
        #[arg(long)]
        state: String,
        #[arg(long, default_value = "zero")]
        sigma: String,
        #[arg(long, short = 'n', default_value_t = 2)]
        n: usize,
    },
    /// Apply instruments from a scenario file and check a catalyst-return condition.
    VerifyInstruments {
        scenario: PathBuf,
        /// `c1`, `c2` or `c3`.
        #[arg(long, default_value = "c2")]
        variant: Condition,
        /// JSON `{pX, pY}`; defaults to the scenario's own or uniform.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Maximal CHSH value: two-qubit closed form against the see-saw.
    Chsh { state: String },
    /// Variational singlet fraction.
    SingletFraction { state: String },
    /// Enumerated local bound of a Bell functional.
    LocalBound {
        /// `chsh` or a functional JSON file.
        functional: String,
    },
    /// Headline checks in one run.
    Demo {
        /// Also write the example instrument scenarios here.
        #[arg(long)]
        scenarios_dir: Option<PathBuf>,
    },
}

impl GlobalArgs {
    pub fn settings(&self) -> Settings {
        let seed = std::env::var("BCL_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(self.seed);
        Settings { seed, restarts: self.restarts, dense_cap: self.dense_cap, tol: self.tol, exact_tol: self.exact_tol }
    }
}

pub fn execute(cli: &Cli, command_line: String) -> Result<RunReport> {
    let settings = cli.global.settings();
    let mut report = RunReport::new(command_line, settings.seed);
    let start = Instant::now();
    match &cli.command {
        Command::Catalyze { state, sigma, n, functional, witness } => {
            let source = witness.clone().map(WitnessSource::File).unwrap_or(WitnessSource::Seesaw);
            commands::catalyze(state, sigma, *n, functional, source, &settings, &mut report)?
        }
        Command::VerifyCatalyst { state, sigma, n } => commands::verify_catalyst(state, sigma, *n, &settings, &mut report)?,
        Command::VerifyInstruments { scenario, variant, inputs } => {
            commands::verify_instruments(scenario, *variant, inputs.as_deref(), &settings, &mut report)?
        }
        Command::Chsh { state } => commands::chsh(state, &settings, &mut report)?,
        Command::SingletFraction { state } => commands::singlet_fraction(state, &settings, &mut report)?,
        Command::LocalBound { functional } => commands::local_bound(functional, &mut report)?,
        Command::Demo { scenarios_dir } => commands::demo(&settings, scenarios_dir.as_deref(), &mut report)?,
    }
    report.timing.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Parse `args` (program name first) and run.
pub fn run<I, T>(args: I) -> Result<RunReport>
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args)?;
    execute(&cli, command_line(&args))
}

/// `bcl` followed by the arguments, independent of how the binary was invoked.
pub fn command_line(args: &[String]) -> String {
    std::iter::once("bcl").chain(args.iter().skip(1).map(String::as_str)).collect::<Vec<_>>().join(" ")
}
