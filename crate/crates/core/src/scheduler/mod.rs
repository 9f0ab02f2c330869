//! Scheduler submission: one job per configuration tuple.
//!
//! A submission script carries scheduler directives (`#SLURM ...`,
//! `#OAR ...`) and a single payload command whose trailing overrides may
//! sweep. Each tuple of the sweep becomes its own job script, with the run
//! id allocated and the run directory staged before anything is submitted.

mod backend;
mod mock;
mod script;

use std::fmt;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{self, ConfigError, ConfigTree, PlannedRun, RunPlan};
use crate::launcher::{command_line, Settings};
use crate::runstore::{RunId, RunInfo, RunRecord, RunStatus, RunStoreError, JOB_SCRIPT};
use crate::versioning::JobPin;

pub use backend::{parse_job_id, Backend, CommandBackend};
pub use mock::{MockJob, MockJobState, MockOptions, MockScheduler};
pub use script::{parse_script, parse_script_str, ParsedScript};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("no scheduler directives found")]
    NoDirectives,
    #[error("script mixes {0} and {1} directives")]
    MixedSchedulers(SchedulerKind, SchedulerKind),
    #[error("no payload command found")]
    NoPayload,
    #[error("found {0} payload commands, expected exactly one")]
    MultiplePayloads(usize),
    #[error("cannot tokenize payload `{0}`")]
    BadPayload(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("scheduler backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("submission of {script} failed: {message}")]
    SubmitCommandFailed { script: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] RunStoreError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

type Result<T, E = SchedulerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Slurm,
    Torque,
    Sge,
    Oar,
    Mwm,
    Lsf,
    LocalMock,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 7] = [
        SchedulerKind::Slurm,
        SchedulerKind::Torque,
        SchedulerKind::Sge,
        SchedulerKind::Oar,
        SchedulerKind::Mwm,
        SchedulerKind::Lsf,
        SchedulerKind::LocalMock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Slurm => "SLURM",
            SchedulerKind::Torque => "TORQUE",
            SchedulerKind::Sge => "SGE",
            SchedulerKind::Oar => "OAR",
            SchedulerKind::Mwm => "MWM",
            SchedulerKind::Lsf => "LSF",
            SchedulerKind::LocalMock => "LOCAL_MOCK",
        }
    }

    /// Marker written in submission scripts, `#<KIND>`.
    pub fn directive_marker(self) -> &'static str {
        match self {
            SchedulerKind::Slurm => "#SLURM",
            SchedulerKind::Torque => "#TORQUE",
            SchedulerKind::Sge => "#SGE",
            SchedulerKind::Oar => "#OAR",
            SchedulerKind::Mwm => "#MWM",
            SchedulerKind::Lsf => "#LSF",
            SchedulerKind::LocalMock => "#MOCK",
        }
    }

    /// Prefix the real scheduler understands.
    pub fn native_prefix(self) -> &'static str {
        match self {
            SchedulerKind::Slurm => "#SBATCH",
            SchedulerKind::Torque => "#PBS",
            SchedulerKind::Sge => "#$",
            SchedulerKind::Oar => "#OAR",
            SchedulerKind::Mwm => "#MSUB",
            SchedulerKind::Lsf => "#BSUB",
            SchedulerKind::LocalMock => "#MOCK",
        }
    }

    pub fn submit_command(self) -> Option<&'static str> {
        match self {
            SchedulerKind::Slurm => Some("sbatch"),
            SchedulerKind::Torque | SchedulerKind::Sge => Some("qsub"),
            SchedulerKind::Oar => Some("oarsub"),
            SchedulerKind::Mwm => Some("msub"),
            SchedulerKind::Lsf => Some("bsub"),
            SchedulerKind::LocalMock => None,
        }
    }

    /// Markers recognized on input: the `#<KIND>` form and the native one.
    pub fn input_markers(self) -> Vec<&'static str> {
        let mut v = vec![self.directive_marker()];
        if self.native_prefix() != self.directive_marker() {
            v.push(self.native_prefix());
        }
        v
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slurm" => Ok(SchedulerKind::Slurm),
            "torque" | "pbs" => Ok(SchedulerKind::Torque),
            "sge" => Ok(SchedulerKind::Sge),
            "oar" => Ok(SchedulerKind::Oar),
            "mwm" | "moab" => Ok(SchedulerKind::Mwm),
            "lsf" => Ok(SchedulerKind::Lsf),
            "mock" | "local_mock" | "local-mock" => Ok(SchedulerKind::LocalMock),
            _ => Err(SchedulerError::UnknownBackend(s.to_string())),
        }
    }
}

/// Everything fixed at submission time that job scripts depend on.
#[derive(Debug, Clone)]
pub struct SubmitContext {
    pub settings: Settings,
    pub pin: JobPin,
    /// Program name or path used to invoke `xman exec` inside job scripts.
    pub launcher_program: String,
}

/// A parsed script expanded into one job per configuration tuple.
#[derive(Debug, Clone)]
pub struct JobBundle {
    pub kind: SchedulerKind,
    pub directives: Vec<String>,
    pub payload: String,
    /// Payload program and its non-override arguments.
    pub command: Vec<String>,
    pub plan: RunPlan,
    pub scripts: Vec<(RunId, String)>,
    pub logs_root: PathBuf,
    pub launcher_program: String,
}

impl JobBundle {
    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }

    pub fn script_path(&self, id: RunId) -> PathBuf {
        self.logs_root
            .join(id.to_string())
            .join("metadata")
            .join(JOB_SCRIPT)
    }
}

/// Tokenizes a payload and drops a leading `xman run [flags] --` so a script
/// written for direct execution can also be expanded job by job.
pub fn payload_tokens(payload: &str) -> Result<Vec<String>> {
    let tokens =
        shlex::split(payload).ok_or_else(|| SchedulerError::BadPayload(payload.to_string()))?;
    let is_xman = tokens
        .first()
        .and_then(|t| Path::new(t).file_name())
        .is_some_and(|n| n == "xman");
    if is_xman && tokens.get(1).map(String::as_str) == Some("run") {
        if let Some(sep) = tokens.iter().position(|t| t == "--") {
            return Ok(tokens[sep + 1..].to_vec());
        }
    }
    Ok(tokens)
}

fn plan_from(parsed: &ParsedScript, defaults: &ConfigTree) -> Result<(Vec<String>, RunPlan)> {
    let tokens = payload_tokens(&parsed.payload)?;
    let (command, overrides) = config::split_command(&tokens);
    if command.is_empty() {
        return Err(SchedulerError::BadPayload(parsed.payload.clone()));
    }
    let specs = config::parse_overrides(&overrides)?;
    Ok((command, config::expand_plan(defaults, &specs)))
}

/// Expands the sweep, allocates run ids, and stages every run directory
/// (config, settings, STAGED info, job script) before returning. Nothing is
/// submitted here.
pub fn expand_to_jobs(
    ctx: &SubmitContext,
    parsed: &ParsedScript,
    defaults: &ConfigTree,
) -> Result<JobBundle> {
    let (command, mut plan) = plan_from(parsed, defaults)?;
    let store = ctx.settings.run_store();
    let settings_tree = ctx.settings.to_tree();
    let mut bundle = JobBundle {
        kind: parsed.kind,
        directives: parsed.directives.clone(),
        payload: parsed.payload.clone(),
        command,
        plan: RunPlan {
            runs: Vec::new(),
            provenance: plan.provenance.clone(),
        },
        scripts: Vec::with_capacity(plan.len()),
        logs_root: ctx.settings.logs_root.clone(),
        launcher_program: ctx.launcher_program.clone(),
    };
    for mut run in plan.runs.drain(..) {
        let id = store.allocate_run_id()?;
        run.run_id = Some(id);
        let mut argv = bundle.command.clone();
        argv.extend(run.override_tokens());
        let mut info = RunInfo::staged();
        info.command = command_line(&argv);
        ctx.pin.apply(&mut info);
        store.init_run(id, &run.config, &settings_tree, info)?;
        let text = render_job_script(&bundle, &run);
        let path = bundle.script_path(id);
        fs::write(&path, &text).map_err(|source| SchedulerError::Io {
            path: path.clone(),
            source,
        })?;
        let _ = fs::set_permissions(&path, fs::Permissions::from_mode(0o755));
        bundle.scripts.push((id, text));
        bundle.plan.runs.push(run);
    }
    Ok(bundle)
}

/// Renders the bundle with the ids the next allocations would get, without
/// touching the logs root.
pub fn preview_jobs(
    ctx: &SubmitContext,
    parsed: &ParsedScript,
    defaults: &ConfigTree,
) -> Result<JobBundle> {
    let (command, mut plan) = plan_from(parsed, defaults)?;
    let first = ctx.settings.run_store().peek_next_id()?.0;
    let mut bundle = JobBundle {
        kind: parsed.kind,
        directives: parsed.directives.clone(),
        payload: parsed.payload.clone(),
        command,
        plan: RunPlan {
            runs: Vec::new(),
            provenance: plan.provenance.clone(),
        },
        scripts: Vec::new(),
        logs_root: ctx.settings.logs_root.clone(),
        launcher_program: ctx.launcher_program.clone(),
    };
    for (i, mut run) in plan.runs.drain(..).enumerate() {
        let id = RunId(first + i as u64);
        run.run_id = Some(id);
        bundle.scripts.push((id, render_job_script(&bundle, &run)));
        bundle.plan.runs.push(run);
    }
    Ok(bundle)
}

/// Job script for one run: shebang, directives under the native prefix,
/// then the launcher invocation for exactly this tuple.
pub fn render_job_script(bundle: &JobBundle, run: &PlannedRun) -> String {
    let id = run.run_id.expect("runs in a bundle carry ids");
    let mut out = String::from("#!/bin/bash\n");
    for d in &bundle.directives {
        out.push_str(bundle.kind.native_prefix());
        if !d.is_empty() {
            out.push(' ');
            out.push_str(d);
        }
        out.push('\n');
    }
    out.push('\n');
    let logs = bundle.logs_root.display().to_string();
    let mut argv: Vec<String> = vec![
        bundle.launcher_program.clone(),
        "exec".into(),
        "--run-id".into(),
        id.to_string(),
        "--logs".into(),
        logs,
        "--".into(),
    ];
    argv.extend(bundle.command.iter().cloned());
    argv.extend(run.override_tokens());
    out.push_str(&command_line(&argv));
    out.push('\n');
    out
}

/// Result of submitting one job.
#[derive(Debug)]
pub struct Submission {
    pub run_id: RunId,
    pub outcome: Result<String>,
}

/// Submits every job in plan order. A rejected submission marks its run
/// FAILED and does not stop the others.
pub fn submit(bundle: &JobBundle, backend: &dyn Backend) -> Result<Vec<Submission>> {
    backend.check_available()?;
    let mut out = Vec::with_capacity(bundle.len());
    for (id, _) in &bundle.scripts {
        let run_dir = bundle.logs_root.join(id.to_string());
        let mut record = RunRecord::open(&run_dir)?;
        match backend.submit(&bundle.script_path(*id)) {
            Ok(job_id) => {
                let jid = job_id.clone();
                record.update_info(|info| {
                    info.scheduler_job_id = Some(jid);
                    Ok(())
                })?;
                out.push(Submission {
                    run_id: *id,
                    outcome: Ok(job_id),
                });
            }
            Err(e) => {
                record.update_status(RunStatus::Failed, None)?;
                out.push(Submission {
                    run_id: *id,
                    outcome: Err(e),
                });
            }
        }
    }
    Ok(out)
}
