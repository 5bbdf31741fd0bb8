//! Command-line front end for designs, games and their analyses.

mod commands;
mod error;
mod scenario;
mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use commands::{Analysis, Outcome};
use error::{CliError, CliResult};
use scenario::Scenario;

#[derive(Parser)]
#[command(name = "codesign", version, about = "Collaborative experimental design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal designs over the pooled points.
    #[command(subcommand)]
    Design(DesignCommand),
    /// Equilibria of the contribution game.
    #[command(subcommand)]
    Game(GameCommand),
    /// Equilibria along a one-parameter family of scenarios, as CSV.
    Sweep(SweepArgs),
    /// Welfare and incentive analyses.
    Analyze {
        #[arg(value_enum)]
        analysis: Analysis,
        #[command(flatten)]
        io: Io,
    },
}

#[derive(Subcommand)]
enum DesignCommand {
    /// D-optimal design of the scenario's points.
    Solve(Io),
}

#[derive(Subcommand)]
enum GameCommand {
    /// Solves for an equilibrium under the scenario's mechanism.
    Solve(Io),
    /// Checks a design for profitable unilateral deviations.
    Verify(Io),
}

#[derive(Args)]
struct Io {
    /// Scenario file, or a report that embeds one.
    #[arg(long)]
    scenario: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    io: Io,
    /// costs[k], points[i][j] or angle[i].
    #[arg(long)]
    param: String,
    /// lo:hi:steps
    #[arg(long, allow_hyphen_values = true)]
    range: String,
    /// Comma-separated mechanisms; the scenario's own when absent.
    #[arg(long)]
    mechanisms: Option<String>,
}

impl Io {
    fn load(&self) -> CliResult<Scenario> {
        let mut s = Scenario::load(&self.scenario)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(s)
    }

    fn sink(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).map_err(|e| CliError::validation(format!("cannot write {}: {e}", p.display())))?,
            )),
            None => Box::new(std::io::stdout().lock()),
        })
    }
}

/// The equilibrium design stored in a report, if the file is one.
fn report_design(path: &Path) -> CliResult<Option<Vec<f64>>> {
    let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    match value.pointer("/equilibrium/w") {
        Some(w) => Ok(Some(serde_json::from_value(w.clone())?)),
        None => Ok(None),
    }
}

fn emit(io: &Io, outcome: Outcome) -> CliResult<()> {
    let mut sink = io.sink()?;
    serde_json::to_writer_pretty(&mut sink, &outcome.report)?;
    writeln!(sink)?;
    sink.flush()?;
    outcome.failure.map_or(Ok(()), Err)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Design(DesignCommand::Solve(io)) => emit(&io, commands::design_solve(&io.load()?)?),
        Command::Game(GameCommand::Solve(io)) => emit(&io, commands::game_solve(&io.load()?)?),
        Command::Game(GameCommand::Verify(io)) => {
            let scenario = io.load()?;
            let design = report_design(&io.scenario)?;
            emit(&io, commands::game_verify(&scenario, design)?)
        }
        Command::Analyze { analysis, io } => emit(&io, commands::analyze(&io.load()?, analysis)?),
        Command::Sweep(args) => {
            let scenario = args.io.load()?;
            let param = args.param.parse()?;
            let range = args.range.parse()?;
            let mechanisms = match &args.mechanisms {
                Some(list) => sweep::parse_mechanisms(list)?,
                None => vec![scenario.mechanism.kind()],
            };
            let failed = sweep::sweep(&scenario, param, range, &mechanisms, args.io.sink()?)?;
            if failed > 0 {
                return Err(CliError::not_converged(format!("{failed} sweep rows did not converge")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if let Some(detail) = &e.detail {
                eprintln!("{detail}");
            }
            ExitCode::from(e.code as u8)
        }
    }
}
