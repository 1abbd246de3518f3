//! Argument parsing and execution for the `gamecoop` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use gamecoop::blackboard::{audit_csv, SyncMode};
use gamecoop::experiment::{
    parse_team, run_suite, ExperimentSpec, SpecError, Suite, SuiteError, DEFAULT_REPS,
};
use gamecoop::runner::{run_traced, GenSpec, LevelSource, RunConfig, RunError};
use gamecoop::world::{load_level, serialize_level};
use thiserror::Error;

/// Scale used by a single run when `--gen basic` gives none.
pub const DEFAULT_RUN_SCALE: u32 = 10;

#[derive(Debug, Parser)]
#[command(
    name = "gamecoop",
    version,
    about = "Cooperative test agents on blocker/enabler grid levels",
    group(clap::ArgGroup::new("source").required(true).args(["level", "gen"]))
)]
pub struct Args {
    /// Level file in the LEVEL v1 format.
    #[arg(long, value_name = "FILE")]
    pub level: Option<PathBuf>,
    /// Generated level: `basic` or `basic:SCALE`.
    #[arg(long, value_name = "basic[:SCALE]")]
    pub gen: Option<String>,
    /// Doors whose button is moved far away (generated levels).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub distant: usize,
    /// Buttons hidden behind another door (generated levels).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub chained: usize,
    /// Buttons wired to extra doors (generated levels).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub multi: usize,
    /// Team, e.g. `high:5,low:5`, `eager*3` or `explorer,low:5,high:5`.
    #[arg(long, value_name = "SPEC")]
    pub agents: Option<String>,
    #[arg(long, value_enum)]
    pub sync: Option<SyncArg>,
    /// View distance in cells.
    #[arg(long, value_name = "N")]
    pub view: Option<u32>,
    /// Global tick budget.
    #[arg(long, value_name = "N")]
    pub budget: Option<u64>,
    /// Tick budget of one attempt at a task.
    #[arg(long, value_name = "N")]
    pub task_budget: Option<u64>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Ticks between synchronizations.
    #[arg(long, value_name = "N")]
    pub sync_every: Option<u64>,
    /// Ticks charged per extended synchronization.
    #[arg(long, value_name = "N")]
    pub sync_tax: Option<u64>,
    /// Experiment suite to run instead of a single run.
    #[arg(long, value_name = "NAME")]
    pub suite: Option<Suite>,
    /// Comma-separated axis values (suite default when omitted).
    #[arg(long, value_name = "A,B,..", requires = "suite")]
    pub axis: Option<String>,
    /// Repetitions per axis point and configuration.
    #[arg(long, value_name = "K", requires = "suite")]
    pub reps: Option<u32>,
    /// Directory for CSV output.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SyncArg {
    Basic,
    Extended,
}

impl From<SyncArg> for SyncMode {
    fn from(s: SyncArg) -> Self {
        match s {
            SyncArg::Basic => SyncMode::Basic,
            SyncArg::Extended => SyncMode::Extended,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Run {
        config: RunConfig,
        out: Option<PathBuf>,
    },
    Suite {
        spec: ExperimentSpec,
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::NeedsGenerator(_) => CliError::Config(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn parse_gen(text: &str) -> Result<Option<u32>, CliError> {
    let bad = || CliError::Usage(format!("--gen expects basic or basic:SCALE, got `{text}`"));
    match text.split_once(':') {
        None if text == "basic" => Ok(None),
        Some(("basic", n)) => match n.parse::<u32>() {
            Ok(0) | Err(_) => Err(bad()),
            Ok(n) => Ok(Some(n)),
        },
        _ => Err(bad()),
    }
}

/// Turns command-line arguments into a run or a suite.
pub fn parse_args<I, T>(argv: I) -> Result<Command, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    build_command(args)
}

pub fn build_command(args: Args) -> Result<Command, CliError> {
    let seed = args.seed.unwrap_or(0);
    let level = match (&args.level, &args.gen) {
        (Some(path), _) => {
            if args.distant + args.chained + args.multi > 0 {
                return Err(CliError::Usage(
                    "--distant/--chained/--multi need --gen".into(),
                ));
            }
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
            let level = load_level(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            LevelSource::Given(Arc::new(level))
        }
        (None, Some(gen)) => {
            let default = args.suite.map_or(DEFAULT_RUN_SCALE, Suite::default_scale);
            let scale = parse_gen(gen)?.unwrap_or(default);
            LevelSource::Generated(GenSpec {
                scale,
                seed,
                distant: args.distant,
                chained: args.chained,
                multi: args.multi,
            })
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --level or --gen is required".into(),
            ))
        }
    };
    let team = args.agents.as_deref().map(parse_team).transpose()?;
    let mut config = RunConfig::new(
        level,
        team.clone()
            .unwrap_or_else(|| parse_team("high:5,low:5").expect("default team")),
    );
    if let Some(s) = args.sync {
        config.sync_mode = s.into();
    }
    if let Some(v) = args.view {
        config.view_distance = v;
    }
    if let Some(b) = args.budget {
        config.global_budget = b;
    }
    config.per_task_budget = args.task_budget;
    config.seed = seed;
    if let Some(n) = args.sync_every {
        config.sync_every = n;
    }
    if let Some(n) = args.sync_tax {
        config.sync_tax = n;
    }
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let Some(suite) = args.suite else {
        return Ok(Command::Run {
            config,
            out: args.out,
        });
    };
    let mut spec = ExperimentSpec::new(suite, config, args.reps.unwrap_or(DEFAULT_REPS));
    spec.team = team;
    if let Some(axis) = &args.axis {
        spec.axis = axis
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    spec.plan()?;
    Ok(Command::Suite {
        spec,
        out: args.out,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Internal(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, text)
        .map_err(|e| CliError::Internal(format!("writing {}: {e}", path.display())))
}

/// Executes the command, printing a summary or table to `stdout`.
pub fn execute(command: &Command, stdout: &mut impl Write) -> Result<(), CliError> {
    let print = |stdout: &mut dyn Write, text: &str| {
        stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Internal(e.to_string()))
    };
    match command {
        Command::Run { config, out } => {
            let trace = run_traced(config)?;
            print(stdout, &trace.report.summary())?;
            if let Some(dir) = out {
                write_file(&dir.join("run.csv"), &trace.report.to_csv())?;
                write_file(&dir.join("audit.csv"), &audit_csv(&trace.audit))?;
                write_file(&dir.join("level.txt"), &serialize_level(&trace.level))?;
            }
            Ok(())
        }
        Command::Suite { spec, out } => {
            let (result, failure) = match run_suite(spec) {
                Ok(r) => (r, None),
                Err(SuiteError::Run {
                    axis,
                    config,
                    rep,
                    source,
                    partial,
                }) => {
                    let code = CliError::from(source);
                    let message = format!("run {config} at {axis} (rep {rep}) failed: {code}");
                    let err = match code {
                        CliError::Config(_) => CliError::Config(message),
                        _ => CliError::Internal(message),
                    };
                    (*partial, Some(err))
                }
                Err(SuiteError::Spec(e)) => return Err(e.into()),
                Err(e @ SuiteError::Io { .. }) => return Err(CliError::Internal(e.to_string())),
            };
            print(stdout, &format!("{}\n", result.table()))?;
            if let Some(dir) = out {
                result
                    .write(dir)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
            }
            failure.map_or(Ok(()), Err)
        }
    }
}

/// Parses, executes and maps the outcome to a process exit code.
pub fn main_with<I, T>(argv: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return 2;
        }
    };
    match build_command(args).and_then(|c| execute(&c, stdout)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
