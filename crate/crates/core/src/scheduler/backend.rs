use std::env;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use super::{SchedulerError, SchedulerKind};

/// Something that accepts a job script and returns a job id.
pub trait Backend {
    fn name(&self) -> String;

    fn check_available(&self) -> Result<(), SchedulerError> {
        Ok(())
    }

    fn submit(&self, script: &Path) -> Result<String, SchedulerError>;
}

/// Submits through the scheduler's own command line tool.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    kind: SchedulerKind,
    program: String,
}

impl CommandBackend {
    pub fn new(kind: SchedulerKind) -> Result<Self, SchedulerError> {
        let program = kind
            .submit_command()
            .ok_or_else(|| SchedulerError::BackendUnavailable(kind.to_string()))?;
        Ok(CommandBackend {
            kind,
            program: program.to_string(),
        })
    }

    /// Overrides the submit program, e.g. a wrapper or an absolute path.
    pub fn with_program(mut self, program: impl Into<String>) -> Self {
        self.program = program.into();
        self
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    fn locate(&self) -> Option<PathBuf> {
        let p = Path::new(&self.program);
        if p.components().count() > 1 {
            return p.is_file().then(|| p.to_path_buf());
        }
        env::split_paths(&env::var_os("PATH")?)
            .map(|d| d.join(&self.program))
            .find(|c| c.is_file())
    }
}

impl Backend for CommandBackend {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn check_available(&self) -> Result<(), SchedulerError> {
        match self.locate() {
            Some(_) => Ok(()),
            None => Err(SchedulerError::BackendUnavailable(format!(
                "{} (`{}` not found on PATH)",
                self.kind, self.program
            ))),
        }
    }

    fn submit(&self, script: &Path) -> Result<String, SchedulerError> {
        let fail = |message: String| SchedulerError::SubmitCommandFailed {
            script: script.to_path_buf(),
            message,
        };
        let mut cmd = Command::new(&self.program);
        match self.kind {
            SchedulerKind::Lsf => {
                let f = File::open(script).map_err(|e| fail(e.to_string()))?;
                cmd.stdin(Stdio::from(f));
            }
            SchedulerKind::Oar => {
                cmd.arg("-S").arg(script);
            }
            _ => {
                cmd.arg(script);
            }
        }
        if let Some(dir) = script.parent() {
            cmd.current_dir(dir);
        }
        let out = cmd.output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
            return Err(fail(format!("{} ({})", stderr, out.status)));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        parse_job_id(self.kind, &stdout).ok_or_else(|| fail("no job id in output".into()))
    }
}

/// Extracts the job id from a submit command's standard output.
pub fn parse_job_id(kind: SchedulerKind, stdout: &str) -> Option<String> {
    let after = |needle: &str| {
        stdout.lines().find_map(|l| {
            let rest = &l[l.find(needle)? + needle.len()..];
            let id: String = rest
                .trim_start()
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '[' | ']'))
                .collect();
            (!id.is_empty()).then_some(id)
        })
    };
    let found = match kind {
        SchedulerKind::Slurm => after("Submitted batch job"),
        SchedulerKind::Oar => after("OAR_JOB_ID="),
        SchedulerKind::Lsf => after("Job <"),
        SchedulerKind::Sge => after("Your job"),
        _ => None,
    };
    found.or_else(|| {
        stdout
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string)
    })
}
