//! Local execution of runs.
//!
//! A child process learns about its run through three environment
//! variables: `XMAN_RUN_DIR` (the run directory), `XMAN_CONFIG` (the
//! resolved `metadata/config.yaml`) and `XMAN_LOG_NAME_DEFAULT` (`train`).
//! Its exit code decides the final status.

use std::ffi::OsString;
use std::io;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus};
use std::time::Duration;

use thiserror::Error;

use crate::config::{ConfigError, ConfigTree, RunPlan, Scalar, SETTINGS_FILE};
use crate::runstore::{RunId, RunInfo, RunRecord, RunStatus, RunStore, RunStoreError};
use crate::versioning::{
    self, Git, JobPin, RepoState, SnapshotStore, SyncOutcome, SyncPolicy, VersioningError,
};

pub const ENV_RUN_DIR: &str = "XMAN_RUN_DIR";
pub const ENV_CONFIG: &str = "XMAN_CONFIG";
pub const ENV_LOG_NAME_DEFAULT: &str = "XMAN_LOG_NAME_DEFAULT";
pub const DEFAULT_LOG_NAME: &str = "train";

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("empty command")]
    EmptyCommand,
    #[error("failed to start run {run_id}: {source}")]
    SpawnFailure {
        run_id: RunId,
        #[source]
        source: io::Error,
    },
    #[error("config passed for run {0} differs from its staged config.yaml")]
    ConfigMismatch(RunId),
    #[error("invalid setting `{key}`: {message}")]
    InvalidSetting { key: String, message: String },
    #[error(transparent)]
    Store(#[from] RunStoreError),
    #[error(transparent)]
    Versioning(#[from] VersioningError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

type Result<T, E = LaunchError> = std::result::Result<T, E>;

/// Tool settings, stored per run as `metadata/mlxp.yaml`.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub logs_root: PathBuf,
    pub config_dir: PathBuf,
    pub versioning_enabled: bool,
    pub interactive_policy: SyncPolicy,
    pub scheduler: Option<String>,
    pub lock_timeout_s: f64,
    pub snapshot_root: Option<PathBuf>,
}

/// Values supplied on the command line; `None` defers to lower layers.
#[derive(Debug, Clone, Default)]
pub struct SettingsOverrides {
    pub logs_root: Option<PathBuf>,
    pub config_dir: Option<PathBuf>,
    pub versioning_enabled: Option<bool>,
    pub interactive_policy: Option<SyncPolicy>,
    pub scheduler: Option<String>,
    pub lock_timeout_s: Option<f64>,
    pub snapshot_root: Option<PathBuf>,
}

impl Settings {
    /// Defaults relative to `cwd`: `./logs`, `./configs`, no versioning.
    pub fn defaults(cwd: &Path) -> Settings {
        Settings {
            logs_root: cwd.join("logs"),
            config_dir: cwd.join("configs"),
            versioning_enabled: false,
            interactive_policy: SyncPolicy::Prompt,
            scheduler: None,
            lock_timeout_s: 30.0,
            snapshot_root: None,
        }
    }

    /// Resolves settings with precedence CLI flag, then `XMAN_*` variable,
    /// then `<config_dir>/mlxp.yaml`, then the built-in default. Relative
    /// paths are made absolute against `cwd`.
    pub fn resolve(
        cwd: &Path,
        cli: &SettingsOverrides,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Settings> {
        let mut s = Settings::defaults(cwd);
        let abs = |p: PathBuf| if p.is_absolute() { p } else { cwd.join(p) };
        s.config_dir = abs(cli
            .config_dir
            .clone()
            .or_else(|| env("XMAN_CONFIG_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("configs")));

        let file_path = s.config_dir.join(SETTINGS_FILE);
        let file = if file_path.exists() {
            ConfigTree::from_yaml_file(&file_path)?
        } else {
            ConfigTree::new()
        };
        let layer = |key: &str, env_key: &str| -> Option<String> {
            env(env_key).or_else(|| match file.get_scalar(key) {
                None | Some(Scalar::Null) => None,
                Some(v) => Some(v.to_string()),
            })
        };
        let invalid = |key: &str, message: String| LaunchError::InvalidSetting {
            key: key.to_string(),
            message,
        };

        if let Some(p) = cli
            .logs_root
            .clone()
            .or_else(|| layer("logs_root", "XMAN_LOGS_ROOT").map(PathBuf::from))
        {
            s.logs_root = abs(p);
        }
        s.versioning_enabled = match cli.versioning_enabled {
            Some(b) => b,
            None => match layer("versioning_enabled", "XMAN_VERSIONING") {
                Some(v) => parse_bool(&v).ok_or_else(|| {
                    invalid("versioning_enabled", format!("`{v}` is not a boolean"))
                })?,
                None => s.versioning_enabled,
            },
        };
        s.interactive_policy = match cli.interactive_policy {
            Some(p) => p,
            None => match layer("interactive_policy", "XMAN_INTERACTIVE_POLICY") {
                Some(v) => v.parse().map_err(|m| invalid("interactive_policy", m))?,
                None => s.interactive_policy,
            },
        };
        s.scheduler = cli
            .scheduler
            .clone()
            .or_else(|| layer("scheduler", "XMAN_SCHEDULER"));
        s.lock_timeout_s = match cli.lock_timeout_s {
            Some(t) => t,
            None => match layer("lock_timeout_s", "XMAN_LOCK_TIMEOUT_S") {
                Some(v) => v
                    .parse()
                    .map_err(|_| invalid("lock_timeout_s", format!("`{v}` is not a number")))?,
                None => s.lock_timeout_s,
            },
        };
        if !(s.lock_timeout_s.is_finite() && s.lock_timeout_s >= 0.0) {
            return Err(invalid("lock_timeout_s", "must be a non-negative number".into()));
        }
        s.snapshot_root = cli
            .snapshot_root
            .clone()
            .or_else(|| layer("snapshot_root", "XMAN_SNAPSHOT_ROOT").map(PathBuf::from))
            .map(abs);
        Ok(s)
    }

    /// Reads settings back from a run's `mlxp.yaml` tree.
    pub fn from_tree(tree: &ConfigTree, cwd: &Path) -> Result<Settings> {
        let text = |k: &str| match tree.get_scalar(k) {
            None | Some(Scalar::Null) => None,
            Some(v) => Some(v.to_string()),
        };
        let mut cli = SettingsOverrides {
            logs_root: text("logs_root").map(PathBuf::from),
            config_dir: text("config_dir").map(PathBuf::from),
            scheduler: text("scheduler"),
            snapshot_root: text("snapshot_root").map(PathBuf::from),
            ..Default::default()
        };
        if let Some(Scalar::Bool(b)) = tree.get_scalar("versioning_enabled") {
            cli.versioning_enabled = Some(*b);
        }
        if let Some(p) = text("interactive_policy") {
            cli.interactive_policy = p.parse().ok();
        }
        cli.lock_timeout_s = tree.get_scalar("lock_timeout_s").and_then(Scalar::as_f64);
        Settings::resolve(cwd, &cli, &|_| None)
    }

    pub fn to_tree(&self) -> ConfigTree {
        let mut t = ConfigTree::new();
        let path = |p: &Path| Scalar::Text(p.display().to_string());
        let entries = [
            ("logs_root", path(&self.logs_root)),
            ("config_dir", path(&self.config_dir)),
            ("versioning_enabled", Scalar::Bool(self.versioning_enabled)),
            (
                "interactive_policy",
                Scalar::Text(
                    match self.interactive_policy {
                        SyncPolicy::Prompt => "prompt",
                        SyncPolicy::AutoCommit => "auto_commit",
                        SyncPolicy::Ignore => "ignore",
                        SyncPolicy::Fail => "fail",
                    }
                    .to_string(),
                ),
            ),
            (
                "scheduler",
                self.scheduler.clone().map_or(Scalar::Null, Scalar::Text),
            ),
            ("lock_timeout_s", Scalar::Float(self.lock_timeout_s)),
            (
                "snapshot_root",
                Scalar::Text(self.snapshot_root().display().to_string()),
            ),
        ];
        for (k, v) in entries {
            t.set(k, v).expect("static keys");
        }
        t
    }

    pub fn lock_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.lock_timeout_s)
    }

    /// Defaults to `<logs_root>/.snapshots`.
    pub fn snapshot_root(&self) -> PathBuf {
        self.snapshot_root
            .clone()
            .unwrap_or_else(|| self.logs_root.join(".snapshots"))
    }

    pub fn run_store(&self) -> RunStore {
        RunStore::new(&self.logs_root).with_lock_timeout(self.lock_timeout())
    }

    pub fn snapshot_store(&self) -> Option<SnapshotStore> {
        self.versioning_enabled
            .then(|| SnapshotStore::new(self.snapshot_root(), Git::default()))
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// What a spawned child is given.
#[derive(Debug, Clone)]
pub struct ExecutionContext {
    pub record: RunRecord,
    pub config_path: PathBuf,
    pub run_dir: PathBuf,
    pub work_dir: PathBuf,
}

/// Maps a child's exit status to the final run status and exit code.
/// Death by signal N reads as exit code 128+N.
pub fn terminal_status(status: ExitStatus) -> (RunStatus, Option<i32>) {
    match (status.code(), status.signal()) {
        (Some(0), _) => (RunStatus::Complete, Some(0)),
        (Some(c), _) => (RunStatus::Failed, Some(c)),
        (None, Some(sig)) => (RunStatus::Failed, Some(128 + sig)),
        (None, None) => (RunStatus::Failed, None),
    }
}

/// Shell-quoted command line; plain words such as `lr=0.1` stay bare.
pub fn command_line(argv: &[String]) -> String {
    let plain = |s: &str| {
        !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || "_-./=:,+@%".contains(c))
    };
    argv.iter()
        .map(|a| {
            if plain(a) {
                a.clone()
            } else {
                shlex::try_quote(a)
                    .map(|q| q.into_owned())
                    .unwrap_or_else(|_| a.clone())
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs payload commands inside run directories.
#[derive(Debug)]
pub struct Launcher {
    settings: Settings,
    store: RunStore,
    pin: JobPin,
    env: Vec<(OsString, OsString)>,
    requeue: bool,
}

impl Launcher {
    /// A launcher whose new runs execute at `pin`.
    pub fn new(settings: Settings, pin: JobPin) -> Self {
        Launcher {
            store: settings.run_store(),
            settings,
            pin,
            env: Vec::new(),
            requeue: false,
        }
    }

    /// Pins `cwd` (snapshotting it when versioning is on) and builds a
    /// launcher around the result. The repository check happens once here,
    /// so every run of a multirun shares one commit.
    pub fn prepare(
        settings: Settings,
        cwd: &Path,
        ask: &mut dyn FnMut(&RepoState) -> Option<bool>,
    ) -> Result<(Self, Option<SyncOutcome>)> {
        let snapshots = settings.snapshot_store();
        let (pin, outcome) = versioning::pin_workdir(
            snapshots.as_ref(),
            &Git::default(),
            cwd,
            settings.interactive_policy,
            ask,
        )?;
        Ok((Launcher::new(settings, pin), outcome))
    }

    /// Extra environment for every child.
    pub fn with_env(mut self, key: impl Into<OsString>, value: impl Into<OsString>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    /// Allows a pre-assigned RUNNING run to be entered again.
    pub fn with_requeue(mut self, requeue: bool) -> Self {
        self.requeue = requeue;
        self
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn pin(&self) -> &JobPin {
        &self.pin
    }

    /// Runs `command` for one configuration. With `pre_assigned`, the run
    /// must already be staged with an equal config; otherwise a new id is
    /// allocated.
    pub fn launch_single(
        &self,
        config: &ConfigTree,
        command: &[String],
        pre_assigned: Option<RunId>,
    ) -> Result<RunRecord> {
        if command.is_empty() {
            return Err(LaunchError::EmptyCommand);
        }
        let mut record = match pre_assigned {
            Some(id) => {
                let mut record = self.store.open(id)?;
                if &record.config != config {
                    return Err(LaunchError::ConfigMismatch(id));
                }
                if record.status() == RunStatus::Running && self.requeue {
                    record.requeue()?;
                } else {
                    record.update_status(RunStatus::Running, None)?;
                }
                record
            }
            None => {
                let id = self.store.allocate_run_id()?;
                let mut info = RunInfo::staged();
                info.command = command_line(command);
                self.pin.apply(&mut info);
                let mut record =
                    self.store
                        .init_run(id, config, &self.settings.to_tree(), info)?;
                record.update_status(RunStatus::Running, None)?;
                record
            }
        };

        let work_dir = match versioning::resolve_job_workdir(&JobPin::from_info(&record.info)) {
            Ok(w) => w,
            Err(e) => {
                record.update_status(RunStatus::Failed, None)?;
                return Err(e.into());
            }
        };
        let ctx = ExecutionContext {
            config_path: record.config_path(),
            run_dir: record.root.clone(),
            work_dir,
            record,
        };
        self.spawn(ctx, command)
    }

    fn spawn(&self, ctx: ExecutionContext, command: &[String]) -> Result<RunRecord> {
        let ExecutionContext {
            mut record,
            config_path,
            run_dir,
            work_dir,
        } = ctx;
        let status = Command::new(&command[0])
            .args(&command[1..])
            .current_dir(&work_dir)
            .env(ENV_RUN_DIR, &run_dir)
            .env(ENV_CONFIG, &config_path)
            .env(ENV_LOG_NAME_DEFAULT, DEFAULT_LOG_NAME)
            .envs(self.env.iter().map(|(k, v)| (k, v)))
            .status();
        match status {
            Ok(st) => {
                let (final_status, code) = terminal_status(st);
                record.update_status(final_status, code)?;
                Ok(record)
            }
            Err(source) => {
                record.update_status(RunStatus::Failed, None)?;
                Err(LaunchError::SpawnFailure {
                    run_id: record.id,
                    source,
                })
            }
        }
    }

    /// Executes the plan in order. Each child receives the command followed
    /// by its own single-valued override tokens. A failing run does not stop
    /// later ones; a run that cannot be spawned is recorded as FAILED.
    pub fn launch_multirun(&self, plan: &RunPlan, command: &[String]) -> Result<Vec<RunRecord>> {
        if command.is_empty() {
            return Err(LaunchError::EmptyCommand);
        }
        let mut records = Vec::with_capacity(plan.len());
        for run in &plan.runs {
            let mut argv = command.to_vec();
            argv.extend(run.override_tokens());
            match self.launch_single(&run.config, &argv, run.run_id) {
                Ok(r) => records.push(r),
                Err(LaunchError::SpawnFailure { run_id, .. }) => {
                    records.push(self.store.open(run_id)?)
                }
                Err(e) => return Err(e),
            }
        }
        Ok(records)
    }
}
