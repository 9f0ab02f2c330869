//! Command-line front end. Every subcommand is a thin adapter over the
//! library modules.
//!
//! Exit codes: 0 on success, 1 when a run or operation fails, 2 on usage
//! errors (bad flags, overrides, queries or JSON).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{self, ConfigError, ConfigTree};
use crate::launcher::{
    Launcher, Settings, SettingsOverrides, DEFAULT_LOG_NAME, ENV_LOG_NAME_DEFAULT, ENV_RUN_DIR,
};
use crate::reader::{AggregationMap, Reader, ReaderError, ReaderOptions, Table};
use crate::runstore::{MetricLine, RunId, RunRecord, RunStatus, RunStore, RunStoreError};
use crate::scheduler::{
    self, Backend, CommandBackend, MockOptions, MockScheduler, SchedulerKind, SubmitContext,
};
use crate::versioning::{self, Git, JobPin, SnapshotStore, SyncPolicy};

/// Environment variable naming the binary that job scripts invoke.
pub const ENV_BIN: &str = "XMAN_BIN";

#[derive(Debug, Parser)]
#[command(name = "xman", version, about = "Experiment manager for arbitrary executables")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Root directory holding one directory per run.
    #[arg(long, global = true, value_name = "DIR")]
    logs: Option<PathBuf>,
    /// Directory with config.yaml defaults and mlxp.yaml settings.
    #[arg(long, global = true, value_name = "DIR")]
    config_dir: Option<PathBuf>,
    /// Run jobs from a snapshot of the committed code.
    #[arg(long, global = true, value_name = "BOOL")]
    versioning: Option<bool>,
    /// What to do with uncommitted changes when versioning is on.
    #[arg(long, global = true, value_name = "POLICY")]
    policy: Option<SyncPolicy>,
    /// Where code snapshots are stored.
    #[arg(long, global = true, value_name = "DIR")]
    snapshot_root: Option<PathBuf>,
    /// Seconds to wait for the run-id lock.
    #[arg(long, global = true, value_name = "SECS")]
    lock_timeout: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a command locally, once per configuration of its sweep.
    Run {
        /// Command followed by key=value overrides.
        #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
        command: Vec<String>,
    },
    /// Submit one scheduler job per configuration of a script's sweep.
    Sub {
        script: PathBuf,
        /// slurm, torque, sge, oar, mwm, lsf or mock; defaults to the
        /// scheduler named by the script's directives.
        #[arg(long)]
        backend: Option<String>,
        /// Print the job scripts without touching the logs root.
        #[arg(long)]
        dry_run: bool,
        /// Worker threads of the mock backend.
        #[arg(long, default_value_t = 4)]
        mock_workers: usize,
        /// Delay before a mock job may start, in milliseconds.
        #[arg(long, default_value_t = 0)]
        mock_delay_ms: u64,
    },
    /// Execute a staged run; used inside generated job scripts.
    #[command(hide = true)]
    Exec {
        #[arg(long)]
        run_id: u64,
        /// Enter a run that is already RUNNING, e.g. after preemption.
        #[arg(long)]
        requeue: bool,
        #[arg(required = true, last = true)]
        command: Vec<String>,
    },
    /// Append one metric line to the current run (reads XMAN_RUN_DIR).
    Log {
        #[arg(long)]
        log_name: Option<String>,
        /// A JSON object of numbers, e.g. '{"loss": 0.5, "iter": 1}'.
        json: String,
    },
    /// Filter, group and aggregate runs.
    Query {
        #[arg(long, default_value = "")]
        filter: String,
        /// Comma-separated metadata columns.
        #[arg(long, value_delimiter = ',')]
        group_by: Vec<String>,
        /// Column to reduce to <col>_avg and <col>_std; repeatable.
        #[arg(long)]
        avg_std: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Unknown keys and type mismatches are errors.
        #[arg(long)]
        strict: bool,
    },
    /// Show the config keys that differ between runs.
    Diff {
        #[arg(long, default_value = "")]
        filter: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// List runs with their status.
    Status {
        #[arg(long, default_value = "")]
        filter: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Delete snapshots no STAGED or RUNNING run refers to.
    PurgeSnapshots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Failed(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Failed(_) => 1,
        }
    }
}

type Outcome = Result<i32, Failure>;

fn failed(e: impl std::fmt::Display) -> Failure {
    Failure::Failed(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn config_failure(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io { .. } => failed(e),
        _ => usage(e),
    }
}

fn store_failure(e: RunStoreError) -> Failure {
    match e {
        RunStoreError::Config(c) => config_failure(c),
        other => failed(other),
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Failed(m) => eprintln!("xman: {m}"),
            }
            f.code()
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let g = &cli.global;
    match cli.command {
        Cmd::Run { command } => cmd_run(g, &command),
        Cmd::Sub {
            script,
            backend,
            dry_run,
            mock_workers,
            mock_delay_ms,
        } => cmd_sub(
            g,
            &script,
            backend.as_deref(),
            dry_run,
            MockOptions {
                workers: mock_workers,
                delay: Duration::from_millis(mock_delay_ms),
                ..Default::default()
            },
        ),
        Cmd::Exec {
            run_id,
            requeue,
            command,
        } => cmd_exec(g, RunId(run_id), requeue, &command),
        Cmd::Log { log_name, json } => cmd_log(log_name, &json),
        Cmd::Query {
            filter,
            group_by,
            avg_std,
            format,
            strict,
        } => cmd_query(g, &filter, &group_by, &avg_std, format, strict),
        Cmd::Diff { filter, format } => cmd_diff(g, &filter, format),
        Cmd::Status { filter, format } => cmd_status(g, &filter, format),
        Cmd::PurgeSnapshots => cmd_purge(g),
    }
}

fn cwd() -> Result<PathBuf, Failure> {
    std::env::current_dir().map_err(failed)
}

fn settings(g: &GlobalArgs) -> Result<Settings, Failure> {
    let cli = SettingsOverrides {
        logs_root: g.logs.clone(),
        config_dir: g.config_dir.clone(),
        versioning_enabled: g.versioning,
        interactive_policy: g.policy,
        scheduler: None,
        lock_timeout_s: g.lock_timeout,
        snapshot_root: g.snapshot_root.clone(),
    };
    Settings::resolve(&cwd()?, &cli, &|k| std::env::var(k).ok()).map_err(usage)
}

/// Defaults from the config directory. A missing directory is an error only
/// when it was named explicitly.
fn defaults(g: &GlobalArgs, s: &Settings) -> Result<ConfigTree, Failure> {
    let named = g.config_dir.is_some() || std::env::var_os("XMAN_CONFIG_DIR").is_some();
    if !named && !s.config_dir.exists() {
        return Ok(ConfigTree::new());
    }
    config::load_defaults(&s.config_dir).map_err(config_failure)
}

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn cmd_run(g: &GlobalArgs, tokens: &[String]) -> Outcome {
    let s = settings(g)?;
    let defaults = defaults(g, &s)?;
    let (command, overrides) = config::split_command(tokens);
    if command.is_empty() {
        return Err(usage("no command given"));
    }
    let specs = config::parse_overrides(&overrides).map_err(config_failure)?;
    let plan = config::expand_plan(&defaults, &specs);
    let (launcher, sync) =
        Launcher::prepare(s, &cwd()?, &mut versioning::terminal_prompt).map_err(failed)?;
    if let Some(w) = sync.and_then(|o| o.warning) {
        eprintln!("xman: warning: {w}");
    }
    let records = launcher.launch_multirun(&plan, &command).map_err(failed)?;
    let mut all_ok = true;
    for (run, rec) in plan.runs.iter().zip(&records) {
        let tuple: Vec<String> = run.override_tokens();
        let status = rec.status();
        all_ok &= status == RunStatus::Complete;
        emit(&format!("run {} [{}] {}\n", rec.id, tuple.join(" "), status.as_str()));
    }
    Ok(if all_ok { 0 } else { 1 })
}

fn launcher_program() -> String {
    std::env::var(ENV_BIN).ok().unwrap_or_else(|| {
        std::env::current_exe()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| "xman".to_string())
    })
}

fn cmd_sub(
    g: &GlobalArgs,
    script: &Path,
    backend: Option<&str>,
    dry_run: bool,
    mock: MockOptions,
) -> Outcome {
    let parsed = scheduler::parse_script(script).map_err(usage)?;
    let mut s = settings(g)?;
    let defaults = defaults(g, &s)?;
    let kind: SchedulerKind = match backend.or(s.scheduler.as_deref()) {
        Some(b) => b.parse().map_err(usage)?,
        None => parsed.kind,
    };
    s.scheduler = Some(kind.name().to_ascii_lowercase());
    let cwd = cwd()?;

    if dry_run {
        let ctx = SubmitContext {
            settings: s,
            pin: JobPin::live(&cwd),
            launcher_program: launcher_program(),
        };
        let bundle = scheduler::preview_jobs(&ctx, &parsed, &defaults).map_err(usage)?;
        for (id, text) in &bundle.scripts {
            emit(&format!("# ---- run {id} ----\n{text}"));
        }
        return Ok(0);
    }

    let command_backend = match kind {
        SchedulerKind::LocalMock => None,
        k => {
            let b = CommandBackend::new(k).map_err(failed)?;
            b.check_available().map_err(failed)?;
            Some(b)
        }
    };
    let (pin, sync) = versioning::pin_workdir(
        s.snapshot_store().as_ref(),
        &Git::default(),
        &cwd,
        s.interactive_policy,
        &mut versioning::terminal_prompt,
    )
    .map_err(failed)?;
    if let Some(w) = sync.and_then(|o| o.warning) {
        eprintln!("xman: warning: {w}");
    }
    let ctx = SubmitContext {
        settings: s,
        pin,
        launcher_program: launcher_program(),
    };
    let bundle = scheduler::expand_to_jobs(&ctx, &parsed, &defaults).map_err(|e| match e {
        scheduler::SchedulerError::Config(c) => config_failure(c),
        other => failed(other),
    })?;

    let report = |subs: &[scheduler::Submission]| {
        let mut ok = true;
        for sub in subs {
            match &sub.outcome {
                Ok(job) => emit(&format!("run {} job {}\n", sub.run_id, job)),
                Err(e) => {
                    ok = false;
                    eprintln!("xman: run {}: {e}", sub.run_id);
                }
            }
        }
        ok
    };
    let ok = match command_backend {
        Some(b) => report(&scheduler::submit(&bundle, &b).map_err(failed)?),
        None => {
            let mock = MockScheduler::start(mock);
            let subs = scheduler::submit(&bundle, &mock as &dyn Backend).map_err(failed)?;
            let ok = report(&subs);
            mock.wait_idle(Duration::MAX);
            ok
        }
    };
    Ok(if ok { 0 } else { 1 })
}

fn cmd_exec(g: &GlobalArgs, id: RunId, requeue: bool, command: &[String]) -> Outcome {
    let logs = match &g.logs {
        Some(l) => l.clone(),
        None => settings(g)?.logs_root,
    };
    let record = RunStore::new(&logs).open(id).map_err(store_failure)?;
    let mut s = Settings::from_tree(&record.settings, &cwd()?).map_err(failed)?;
    s.logs_root = logs;
    let launcher =
        Launcher::new(s, JobPin::from_info(&record.info)).with_requeue(requeue);
    let done = launcher
        .launch_single(&record.config, command, Some(id))
        .map_err(failed)?;
    Ok(match done.status() {
        RunStatus::Complete => 0,
        _ => match done.info.exit_code {
            Some(c) if (1..=255).contains(&c) => c,
            _ => 1,
        },
    })
}

fn cmd_log(log_name: Option<String>, json: &str) -> Outcome {
    let run_dir = std::env::var_os(ENV_RUN_DIR)
        .ok_or_else(|| usage(format!("{ENV_RUN_DIR} is not set; run under `xman run`")))?;
    let name = log_name
        .or_else(|| std::env::var(ENV_LOG_NAME_DEFAULT).ok())
        .unwrap_or_else(|| DEFAULT_LOG_NAME.to_string());
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| usage(format!("invalid JSON: {e}")))?;
    let line = MetricLine::from_json(&name, &value).map_err(usage)?;
    let record = RunRecord::open(Path::new(&run_dir)).map_err(failed)?;
    record.log_metrics(&line).map_err(|e| match e {
        RunStoreError::NonFiniteValue(_) | RunStoreError::InvalidName(_) => usage(e),
        other => failed(other),
    })?;
    Ok(0)
}

fn reader_failure(e: ReaderError, query: &str) -> Failure {
    match e {
        ReaderError::Query(q) => usage(q.render(query)),
        ReaderError::NonMetadataGroupKey(_) | ReaderError::UnknownColumn(_) => usage(e),
        other => failed(other),
    }
}

fn open_reader(g: &GlobalArgs, strict: bool) -> Result<Reader, Failure> {
    let s = settings(g)?;
    let reader = Reader::open_with(&s.logs_root, ReaderOptions { strict }).map_err(failed)?;
    for q in reader.quarantine() {
        eprintln!("xman: quarantined {q}");
    }
    Ok(reader)
}

fn emit_table(t: &Table, format: Format) {
    match format {
        Format::Table => emit(&t.to_string()),
        Format::Csv => emit(&t.to_csv()),
        Format::Json => emit(&format!(
            "{}\n",
            serde_json::to_string_pretty(&t.to_json()).expect("json")
        )),
    }
}

fn cmd_query(
    g: &GlobalArgs,
    filter: &str,
    group_by: &[String],
    avg_std: &[String],
    format: Format,
    strict: bool,
) -> Outcome {
    let reader = open_reader(g, strict)?;
    let frame = reader.filter(filter).map_err(|e| reader_failure(e, filter))?;
    if group_by.is_empty() && avg_std.is_empty() {
        match format {
            Format::Table => emit(&frame.to_string()),
            Format::Csv => emit(&frame.to_csv()),
            Format::Json => {
                let j = frame.to_json().map_err(failed)?;
                emit(&format!("{}\n", serde_json::to_string_pretty(&j).expect("json")));
            }
        }
        return Ok(0);
    }
    let groups = frame
        .group_by(group_by)
        .map_err(|e| reader_failure(e, filter))?;
    if avg_std.is_empty() {
        emit_table(&groups.to_table(), format);
        return Ok(0);
    }
    let maps: Vec<AggregationMap> = avg_std.iter().map(AggregationMap::avg_std).collect();
    let table = groups.aggregate(&maps).map_err(failed)?;
    emit_table(&table, format);
    Ok(0)
}

fn cmd_diff(g: &GlobalArgs, filter: &str, format: Format) -> Outcome {
    let reader = open_reader(g, false)?;
    let frame = reader.filter(filter).map_err(|e| reader_failure(e, filter))?;
    let diff = frame.diff().map_err(failed)?;
    emit_table(&diff.to_table(), format);
    Ok(0)
}

fn cmd_status(g: &GlobalArgs, filter: &str, format: Format) -> Outcome {
    let reader = open_reader(g, false)?;
    let frame = reader.filter(filter).map_err(|e| reader_failure(e, filter))?;
    let full = frame.to_table(false, false).map_err(failed)?;
    let keep = [
        "run_id",
        "info.status",
        "info.exit_code",
        "info.scheduler_job_id",
        "info.command",
    ];
    let idx: Vec<usize> = keep.iter().filter_map(|c| full.column(c)).collect();
    let table = Table {
        columns: idx.iter().map(|&i| full.columns[i].clone()).collect(),
        rows: full
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect(),
    };
    emit_table(&table, format);
    Ok(0)
}

fn cmd_purge(g: &GlobalArgs) -> Outcome {
    let s = settings(g)?;
    let store = SnapshotStore::new(s.snapshot_root(), Git::default());
    let removed = store.purge_unreferenced(&s.logs_root).map_err(failed)?;
    for h in &removed {
        emit(&format!("removed {h}\n"));
    }
    Ok(0)
}
