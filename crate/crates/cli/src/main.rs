use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use supercoop::client::{ENDPOINT_ENV, MODEL_ENV};
use supercoop::config::{Condition, ConfigError, ConfigFile, Overrides, TournamentConfig};
use supercoop::export::{
    export_tables, load_run, render_summary, ExportError, LoadedRun, SummaryRow,
};
use supercoop::log::TrialLog;
use supercoop::manifest::{RunManifest, RunStatus};
use supercoop::metrics::{condition_summary, SamplingUnit, DEFAULT_LEVEL};
use supercoop::mock::{MockOptions, MockServer};
use supercoop::schedule::{build_schedule, validate_budget};
use supercoop::tournament::{preflight, Experiment, TrialError};

const EXIT_CONFIG: u8 = 3;
const EXIT_BACKEND: u8 = 4;
const EXIT_PARTIAL: u8 = 5;
const EXIT_IO: u8 = 6;

#[derive(Parser)]
#[command(
    name = "supercoop",
    version,
    about = "Iterated prisoner's dilemma tournaments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of an experiment and write logs, manifest and CSVs.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Trials to run at the same time.
        #[arg(long, default_value_t = 1)]
        parallel_trials: usize,
        /// Skip the backend health check.
        #[arg(long)]
        no_preflight: bool,
    },
    /// Print the pairings of one trial and the budget check; no model calls.
    Schedule {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print mean cooperation tables for one or more runs.
    Analyze {
        /// Run directories or event-log files; one condition each.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write CSVs to `<out>/<condition>/`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Write the CSV tables of one run.
    Export {
        /// Run directory or event-log file.
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Serve the deterministic mock chat-completion backend.
    MockServe {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
        /// Delay before every reply, in milliseconds.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long, value_enum)]
    condition: Option<ConditionArg>,
    /// Model server base URL (else $SUPERCOOP_ENDPOINT, else the config file).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name (else $SUPERCOOP_MODEL, else the config file).
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    /// What one sample of the confidence interval is.
    #[arg(long, value_enum, default_value_t = UnitArg::PlayerTrial)]
    unit: UnitArg,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Ri,
    Gc,
    Sa,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Condition {
        match c {
            ConditionArg::Ri => Condition::Ri,
            ConditionArg::Gc => Condition::Gc,
            ConditionArg::Sa => Condition::Sa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    PlayerTrial,
    Trial,
    Player,
}

impl From<UnitArg> for SamplingUnit {
    fn from(u: UnitArg) -> SamplingUnit {
        match u {
            UnitArg::PlayerTrial => SamplingUnit::PlayerTrial,
            UnitArg::Trial => SamplingUnit::Trial,
            UnitArg::Player => SamplingUnit::Player,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Failure {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure::new(EXIT_CONFIG, format!("config error: {e}"))
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Failure {
        Failure::new(EXIT_IO, format!("I/O error: {e}"))
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Failure {
        Failure::new(EXIT_IO, e)
    }
}

impl From<TrialError> for Failure {
    fn from(e: TrialError) -> Failure {
        let code = match &e {
            TrialError::Config(_) | TrialError::Prompt(_) => EXIT_CONFIG,
            TrialError::Log(_) => EXIT_IO,
            e if e.is_backend() => EXIT_BACKEND,
            _ => EXIT_CONFIG,
        };
        Failure::new(code, e)
    }
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            trials: self.trials,
            condition: self.condition.map(Condition::from),
            endpoint: self
                .endpoint
                .clone()
                .or_else(|| std::env::var(ENDPOINT_ENV).ok()),
            model: self.model.clone().or_else(|| std::env::var(MODEL_ENV).ok()),
        }
    }

    fn resolve(&self) -> Result<(TournamentConfig, Overrides), Failure> {
        let overrides = self.overrides();
        let config = ConfigFile::load(&self.config)?.resolve(&overrides)?;
        Ok((config, overrides))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            parallel_trials,
            no_preflight,
        } => run(&config, &out, parallel_trials, no_preflight),
        Command::Schedule { config } => schedule(&config),
        Command::Analyze { paths, out, stats } => analyze(&paths, out.as_deref(), &stats),
        Command::Export { path, out, stats } => export(&path, &out, &stats),
        Command::MockServe { addr, delay_ms } => mock_serve(&addr, delay_ms),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if f.message.contains("Broken pipe") => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(args: &ConfigArgs, out: &Path, parallel: usize, no_preflight: bool) -> Result<(), Failure> {
    let (config, overrides) = args.resolve()?;
    let experiment = Experiment::new(config.clone())?;
    if !no_preflight {
        preflight(&experiment).map_err(|e| Failure::new(EXIT_BACKEND, e))?;
    }
    std::fs::create_dir_all(out)?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = RunManifest::start(&config, &overrides);
    manifest.write(&manifest_path)?;

    let outcomes = experiment.run_to_dir(out, parallel);
    manifest.finish(&outcomes);
    manifest.write(&manifest_path)?;

    for o in &outcomes {
        match &o.result {
            Ok(state) => eprintln!(
                "trial {} (seed {}): {} matches, {} events",
                o.trial,
                o.seed,
                state.completed_matches.len(),
                state.events_applied
            ),
            Err(e) => eprintln!("trial {} (seed {}) failed: {e}", o.trial, o.seed),
        }
    }
    if manifest.status != RunStatus::Failed {
        let run = load_run(out)?;
        let unit = SamplingUnit::default();
        export_tables(
            &run.complete,
            config.condition,
            unit,
            DEFAULT_LEVEL,
            &out.join("csv"),
        )?;
    }
    match manifest.status {
        RunStatus::Complete | RunStatus::Running => Ok(()),
        RunStatus::Partial => Err(Failure::new(
            EXIT_PARTIAL,
            format!(
                "{} of {} trials incomplete",
                manifest.trials.iter().filter(|t| !t.complete).count(),
                manifest.trials.len()
            ),
        )),
        RunStatus::Failed => {
            let e = outcomes
                .into_iter()
                .find_map(|o| o.result.err())
                .expect("failed run has an error");
            Err(e.into())
        }
    }
}

fn schedule(args: &ConfigArgs) -> Result<(), Failure> {
    let (config, _) = args.resolve()?;
    let check = validate_budget(&config)?;
    let pairings = build_schedule(&config)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for p in &pairings {
        writeln!(out, "{p}")?;
    }
    writeln!(out)?;
    writeln!(
        out,
        "condition {}: {} pairings, n = {}, N = {}",
        config.condition,
        pairings.len(),
        check.max_rounds,
        check.budget
    )?;
    for (player, m) in &check.matches {
        writeln!(
            out,
            "player {player}: m = {m}, n*m = {}, N < n*m holds",
            u64::from(check.max_rounds) * u64::from(*m)
        )?;
    }
    Ok(())
}

fn report_skipped(run: &LoadedRun, path: &Path) {
    if !run.incomplete.is_empty() {
        eprintln!(
            "{}: skipping {} incomplete trial(s)",
            path.display(),
            run.incomplete.len()
        );
    }
}

fn analyze(paths: &[PathBuf], out: Option<&Path>, stats: &StatsArgs) -> Result<(), Failure> {
    let unit = SamplingUnit::from(stats.unit);
    let mut by_condition: BTreeMap<Condition, Vec<TrialLog>> = BTreeMap::new();
    for path in paths {
        let run = load_run(path)?;
        report_skipped(&run, path);
        if let Some(c) = run.condition() {
            // trial indices restart in every run; renumber so samples stay distinct
            let trials = by_condition.entry(c).or_default();
            for mut t in run.complete {
                t.trial = trials.len() as u32;
                trials.push(t);
            }
        }
    }
    let rows: Vec<SummaryRow> = by_condition
        .iter()
        .map(|(c, trials)| {
            let s = condition_summary(trials, unit, stats.level);
            SummaryRow {
                condition: *c,
                cooperation: s.cooperation,
                one_shot: s.one_shot,
            }
        })
        .collect();
    render_summary(&rows, stats.level, &mut io::stdout().lock())?;
    if let Some(out) = out {
        for (c, trials) in &by_condition {
            export_tables(trials, *c, unit, stats.level, &out.join(c.key()))?;
        }
    }
    Ok(())
}

fn export(path: &Path, out: &Path, stats: &StatsArgs) -> Result<(), Failure> {
    let run = load_run(path)?;
    report_skipped(&run, path);
    let condition = run
        .condition()
        .ok_or_else(|| Failure::new(EXIT_IO, format!("{}: no trials", path.display())))?;
    let files = export_tables(
        &run.complete,
        condition,
        stats.unit.into(),
        stats.level,
        out,
    )?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn mock_serve(addr: &str, delay_ms: u64) -> Result<(), Failure> {
    let server = MockServer::start(
        addr,
        MockOptions {
            delay_ms,
            ..MockOptions::default()
        },
    )?;
    println!("mock backend listening on {}", server.url());
    server.wait();
    Ok(())
}
