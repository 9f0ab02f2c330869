//! Commit-pinned code snapshots.
//!
//! Jobs submitted together are tied to one commit. When a job eventually
//! starts it runs from `snapshots/<hash>/`, a materialization of that
//! commit's tree, so edits made to the live working tree while the job was
//! queued cannot leak into it.

use std::fs;
use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runstore::{self, FileLock, RunInfo, RunStatus, RunStoreError};

pub const COMPLETE_MARKER: &str = ".complete";

#[derive(Debug, Error)]
pub enum VersioningError {
    #[error("{0} is not inside a git working tree")]
    NotARepository(PathBuf),
    #[error("version control tool `{0}` not found on PATH")]
    VcsToolMissing(String),
    #[error("repository {0} has no commits")]
    NoCommits(PathBuf),
    #[error("repository has untracked or uncommitted changes: {0}")]
    DirtyRepository(String),
    #[error("automatic commit failed: {0}")]
    CommitFailed(String),
    #[error("unknown commit {0}")]
    UnknownCommit(String),
    #[error("snapshot {0} is missing")]
    SnapshotMissing(PathBuf),
    #[error("git {args}: {stderr}")]
    Git { args: String, stderr: String },
    #[error(transparent)]
    Store(#[from] RunStoreError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

type Result<T, E = VersioningError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> VersioningError + '_ {
    move |source| VersioningError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Thin wrapper over the `git` executable.
#[derive(Debug, Clone)]
pub struct Git {
    program: String,
}

impl Default for Git {
    fn default() -> Self {
        Git {
            program: "git".to_string(),
        }
    }
}

impl Git {
    pub fn with_program(program: impl Into<String>) -> Self {
        Git {
            program: program.into(),
        }
    }

    fn output(&self, dir: &Path, args: &[&str]) -> Result<Output> {
        Command::new(&self.program)
            .arg("-C")
            .arg(dir)
            .args(args)
            .output()
            .map_err(|e| {
                if e.kind() == io::ErrorKind::NotFound {
                    VersioningError::VcsToolMissing(self.program.clone())
                } else {
                    io_err(dir)(e)
                }
            })
    }

    fn run(&self, dir: &Path, args: &[&str]) -> Result<String> {
        let out = self.output(dir, args)?;
        if !out.status.success() {
            return Err(VersioningError::Git {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    pub fn toplevel(&self, dir: &Path) -> Result<PathBuf> {
        match self.run(dir, &["rev-parse", "--show-toplevel"]) {
            Ok(s) => Ok(PathBuf::from(s.trim())),
            Err(VersioningError::Git { .. }) => Err(VersioningError::NotARepository(dir.into())),
            Err(e) => Err(e),
        }
    }

    pub fn head(&self, repo: &Path) -> Result<String> {
        match self.run(repo, &["rev-parse", "--verify", "HEAD"]) {
            Ok(s) => Ok(s.trim().to_string()),
            Err(VersioningError::Git { .. }) => Err(VersioningError::NoCommits(repo.into())),
            Err(e) => Err(e),
        }
    }

    /// Full hash of a commit-ish, or `UnknownCommit`.
    pub fn resolve_commit(&self, repo: &Path, rev: &str) -> Result<String> {
        let spec = format!("{rev}^{{commit}}");
        match self.run(repo, &["rev-parse", "--verify", "--quiet", &spec]) {
            Ok(s) => Ok(s.trim().to_string()),
            Err(VersioningError::Git { .. }) => Err(VersioningError::UnknownCommit(rev.into())),
            Err(e) => Err(e),
        }
    }

    fn archive(&self, repo: &Path, hash: &str) -> Result<Vec<u8>> {
        let out = self.output(repo, &["archive", "--format=tar", hash])?;
        if !out.status.success() {
            return Err(VersioningError::UnknownCommit(hash.to_string()));
        }
        Ok(out.stdout)
    }
}

/// Cleanliness of a working tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoState {
    pub repo_root: PathBuf,
    pub head_commit: String,
    pub untracked: Vec<PathBuf>,
    pub uncommitted: Vec<PathBuf>,
}

impl RepoState {
    pub fn is_clean(&self) -> bool {
        self.untracked.is_empty() && self.uncommitted.is_empty()
    }

    fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.untracked.is_empty() {
            parts.push(format!("{} untracked", self.untracked.len()));
        }
        if !self.uncommitted.is_empty() {
            parts.push(format!("{} uncommitted", self.uncommitted.len()));
        }
        parts.join(", ")
    }
}

pub fn inspect_repo(git: &Git, dir: &Path) -> Result<RepoState> {
    let repo_root = git.toplevel(dir)?;
    let head_commit = git.head(&repo_root)?;
    let status = git.run(
        &repo_root,
        &["status", "--porcelain=v1", "-z", "--untracked-files=all"],
    )?;
    let mut untracked = Vec::new();
    let mut uncommitted = Vec::new();
    let mut entries = status.split('\0').filter(|s| !s.is_empty());
    while let Some(entry) = entries.next() {
        if entry.len() < 4 {
            continue;
        }
        let (code, path) = entry.split_at(3);
        if code.starts_with("??") {
            untracked.push(PathBuf::from(path));
        } else {
            uncommitted.push(PathBuf::from(path));
            // Renames and copies carry the source path as the next entry.
            if code.starts_with('R') || code.starts_with('C') {
                entries.next();
            }
        }
    }
    Ok(RepoState {
        repo_root,
        head_commit,
        untracked,
        uncommitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncPolicy {
    #[default]
    Prompt,
    AutoCommit,
    Ignore,
    Fail,
}

impl std::str::FromStr for SyncPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "prompt" => Ok(SyncPolicy::Prompt),
            "auto_commit" | "auto-commit" => Ok(SyncPolicy::AutoCommit),
            "ignore" => Ok(SyncPolicy::Ignore),
            "fail" => Ok(SyncPolicy::Fail),
            other => Err(format!("unknown interactive policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncOutcome {
    pub commit: String,
    pub committed: bool,
    pub warning: Option<String>,
}

/// Brings a dirty repository to a commit according to `policy`. `ask` is
/// consulted under `Prompt`; it returns `None` when nobody can answer.
pub fn interactive_sync_with(
    git: &Git,
    state: &RepoState,
    policy: SyncPolicy,
    ask: &mut dyn FnMut(&RepoState) -> Option<bool>,
) -> Result<SyncOutcome> {
    if state.is_clean() {
        return Ok(SyncOutcome {
            commit: state.head_commit.clone(),
            committed: false,
            warning: None,
        });
    }
    let effective = match policy {
        SyncPolicy::Prompt => match ask(state) {
            Some(true) => SyncPolicy::AutoCommit,
            Some(false) => SyncPolicy::Ignore,
            None => SyncPolicy::Fail,
        },
        p => p,
    };
    match effective {
        SyncPolicy::AutoCommit => {
            let commit = auto_commit(git, &state.repo_root)?;
            Ok(SyncOutcome {
                commit,
                committed: true,
                warning: None,
            })
        }
        SyncPolicy::Ignore => Ok(SyncOutcome {
            commit: state.head_commit.clone(),
            committed: false,
            warning: Some(format!(
                "running from commit {} while the working tree has {}",
                state.head_commit,
                state.summary()
            )),
        }),
        _ => Err(VersioningError::DirtyRepository(state.summary())),
    }
}

/// Same as [`interactive_sync_with`], asking on the controlling terminal.
pub fn interactive_sync(git: &Git, state: &RepoState, policy: SyncPolicy) -> Result<SyncOutcome> {
    interactive_sync_with(git, state, policy, &mut terminal_prompt)
}

/// Asks on the controlling terminal whether to auto-commit; `None` without a TTY.
pub fn terminal_prompt(state: &RepoState) -> Option<bool> {
    if !io::stdin().is_terminal() {
        return None;
    }
    let mut err = io::stderr();
    let _ = writeln!(
        err,
        "The repository {} has {}.",
        state.repo_root.display(),
        state.summary()
    );
    for p in state.untracked.iter().chain(&state.uncommitted) {
        let _ = writeln!(err, "  {}", p.display());
    }
    let _ = write!(err, "Add untracked files and create an automatic commit? [y/N] ");
    let _ = err.flush();
    let mut answer = String::new();
    io::stdin().read_line(&mut answer).ok()?;
    Some(matches!(answer.trim(), "y" | "Y" | "yes" | "Yes"))
}

fn auto_commit(git: &Git, repo: &Path) -> Result<String> {
    let commit_err = |e: VersioningError| VersioningError::CommitFailed(e.to_string());
    git.run(repo, &["add", "-A"]).map_err(commit_err)?;
    let message = format!("xman auto-commit {}", runstore::now_rfc3339());
    let has_identity = git
        .run(repo, &["config", "user.email"])
        .map(|s| !s.trim().is_empty())
        .unwrap_or(false);
    let mut args = Vec::new();
    if !has_identity {
        args.extend(["-c", "user.name=xman", "-c", "user.email=xman@localhost"]);
    }
    args.extend(["commit", "--no-verify", "-m", &message]);
    git.run(repo, &args).map_err(commit_err)?;
    git.head(repo)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub commit_hash: String,
    pub path: PathBuf,
}

/// Directory of per-commit snapshots. One process-wide counter records how
/// many snapshots this store has materialized.
#[derive(Debug)]
pub struct SnapshotStore {
    root: PathBuf,
    git: Git,
    lock_timeout: Duration,
    materialized: AtomicUsize,
}

impl SnapshotStore {
    pub fn new(root: impl Into<PathBuf>, git: Git) -> Self {
        SnapshotStore {
            root: root.into(),
            git,
            lock_timeout: Duration::from_secs(600),
            materialized: AtomicUsize::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot_path(&self, commit_hash: &str) -> PathBuf {
        self.root.join(commit_hash)
    }

    /// Number of materializations performed through this handle.
    pub fn materializations(&self) -> usize {
        self.materialized.load(Ordering::SeqCst)
    }

    /// Returns the snapshot of `commit`, creating it from the committed tree
    /// if needed. Concurrent callers for one hash serialize on a lock file
    /// and all but the first reuse its result.
    pub fn ensure_snapshot(&self, repo_root: &Path, commit: &str) -> Result<Snapshot> {
        let hash = self.git.resolve_commit(repo_root, commit)?;
        let path = self.snapshot_path(&hash);
        if path.join(COMPLETE_MARKER).exists() {
            return Ok(Snapshot {
                commit_hash: hash,
                path,
            });
        }
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let _lock = FileLock::acquire(&self.root.join(format!("{hash}.lock")), self.lock_timeout)?;
        if path.join(COMPLETE_MARKER).exists() {
            return Ok(Snapshot {
                commit_hash: hash,
                path,
            });
        }
        if path.exists() {
            fs::remove_dir_all(&path).map_err(io_err(&path))?;
        }
        let tarball = self.git.archive(repo_root, &hash)?;
        fs::create_dir_all(&path).map_err(io_err(&path))?;
        tar::Archive::new(tarball.as_slice())
            .unpack(&path)
            .map_err(io_err(&path))?;
        fs::write(path.join(COMPLETE_MARKER), format!("{hash}\n")).map_err(io_err(&path))?;
        self.materialized.fetch_add(1, Ordering::SeqCst);
        Ok(Snapshot {
            commit_hash: hash,
            path,
        })
    }

    /// Hashes that have a complete snapshot.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        if !self.root.exists() {
            return Ok(out);
        }
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join(COMPLETE_MARKER).exists() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Deletes snapshots not referenced by any STAGED or RUNNING run under
    /// `logs_root`. Returns the removed hashes.
    pub fn purge_unreferenced(&self, logs_root: &Path) -> Result<Vec<String>> {
        let store = runstore::RunStore::new(logs_root);
        let mut live = std::collections::HashSet::new();
        for id in store.run_ids()? {
            let info_path = store.run_dir(id).join("metadata/info.yaml");
            let Ok(info) = RunInfo::read(&info_path) else {
                continue;
            };
            if matches!(info.status, RunStatus::Staged | RunStatus::Running) {
                if let Some(h) = info.commit_hash {
                    live.insert(h);
                }
            }
        }
        let mut removed = Vec::new();
        for hash in self.list()? {
            if live.contains(&hash) {
                continue;
            }
            let _lock =
                FileLock::acquire(&self.root.join(format!("{hash}.lock")), self.lock_timeout)?;
            let path = self.snapshot_path(&hash);
            fs::remove_dir_all(&path).map_err(io_err(&path))?;
            let _ = fs::remove_file(self.root.join(format!("{hash}.lock")));
            removed.push(hash);
        }
        Ok(removed)
    }
}

/// Where a job should run: the recorded working directory, which lives
/// inside a snapshot when the job was submitted with versioning enabled.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JobPin {
    pub commit_hash: Option<String>,
    pub snapshot_dir: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl JobPin {
    pub fn live(work_dir: impl Into<PathBuf>) -> Self {
        JobPin {
            work_dir: work_dir.into(),
            ..Default::default()
        }
    }

    pub fn from_info(info: &RunInfo) -> Self {
        JobPin {
            commit_hash: info.commit_hash.clone(),
            snapshot_dir: info.snapshot_dir.clone(),
            work_dir: info.work_dir.clone(),
        }
    }

    pub fn apply(&self, info: &mut RunInfo) {
        info.commit_hash = self.commit_hash.clone();
        info.snapshot_dir = self.snapshot_dir.clone();
        info.work_dir = self.work_dir.clone();
    }
}

/// The directory a pinned job must execute in. A purged snapshot is an
/// error, never a silent fallback to the live tree.
pub fn resolve_job_workdir(pin: &JobPin) -> Result<PathBuf> {
    if let Some(snap) = &pin.snapshot_dir {
        if !snap.join(COMPLETE_MARKER).exists() || !pin.work_dir.is_dir() {
            return Err(VersioningError::SnapshotMissing(snap.clone()));
        }
    }
    Ok(pin.work_dir.clone())
}

/// Pins `cwd` for a batch of jobs. With versioning on, the repository is
/// synced per `policy`, its commit snapshotted, and the pin points at the
/// same relative directory inside the snapshot. Without versioning the pin
/// is the live directory, annotated with the current commit when there is
/// one.
pub fn pin_workdir(
    snapshots: Option<&SnapshotStore>,
    git: &Git,
    cwd: &Path,
    policy: SyncPolicy,
    ask: &mut dyn FnMut(&RepoState) -> Option<bool>,
) -> Result<(JobPin, Option<SyncOutcome>)> {
    let Some(snapshots) = snapshots else {
        let commit_hash = git.toplevel(cwd).ok().and_then(|r| git.head(&r).ok());
        return Ok((
            JobPin {
                commit_hash,
                snapshot_dir: None,
                work_dir: cwd.to_path_buf(),
            },
            None,
        ));
    };
    let state = inspect_repo(git, cwd)?;
    let outcome = interactive_sync_with(git, &state, policy, ask)?;
    let snap = snapshots.ensure_snapshot(&state.repo_root, &outcome.commit)?;
    let cwd_canon = cwd.canonicalize().map_err(io_err(cwd))?;
    let root_canon = state
        .repo_root
        .canonicalize()
        .map_err(io_err(&state.repo_root))?;
    let rel = cwd_canon.strip_prefix(&root_canon).unwrap_or(Path::new(""));
    Ok((
        JobPin {
            commit_hash: Some(snap.commit_hash.clone()),
            work_dir: snap.path.join(rel),
            snapshot_dir: Some(snap.path),
        },
        Some(outcome),
    ))
}


#[cfg(test)]
mod tests {
    use super::testrepo::TestRepo;
    use super::*;
    use std::sync::Arc;
    use std::thread;

    fn tree_digest(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn inspect_clean_and_dirty() {
        let repo = TestRepo::new();
        repo.write("code.txt", "A");
        let h = repo.commit_all("a");
        let git = Git::default();
        let s = inspect_repo(&git, repo.path()).unwrap();
        assert!(s.is_clean());
        assert_eq!(s.head_commit, h);

        repo.write("foo.txt", "new");
        let s = inspect_repo(&git, repo.path()).unwrap();
        assert_eq!(s.untracked, vec![PathBuf::from("foo.txt")]);
        assert!(s.uncommitted.is_empty());
        fs::remove_file(repo.path().join("foo.txt")).unwrap();

        repo.write("code.txt", "B");
        let s = inspect_repo(&git, repo.path()).unwrap();
        assert_eq!(s.uncommitted, vec![PathBuf::from("code.txt")]);
        assert!(s.untracked.is_empty());
    }

    #[test]
    fn inspect_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            inspect_repo(&Git::default(), dir.path()),
            Err(VersioningError::NotARepository(_))
        ));
        assert!(matches!(
            inspect_repo(&Git::with_program("definitely-not-git-xyz"), dir.path()),
            Err(VersioningError::VcsToolMissing(_))
        ));
    }

    #[test]
    fn sync_policies() {
        let repo = TestRepo::new();
        repo.write("code.txt", "A");
        let h = repo.commit_all("a");
        let git = Git::default();
        let mut never = |_: &RepoState| -> Option<bool> { panic!("clean repo must not prompt") };
        let clean = inspect_repo(&git, repo.path()).unwrap();
        for p in [SyncPolicy::Prompt, SyncPolicy::AutoCommit, SyncPolicy::Ignore, SyncPolicy::Fail] {
            let out = interactive_sync_with(&git, &clean, p, &mut never).unwrap();
            assert_eq!(out.commit, h);
            assert!(!out.committed);
        }

        repo.write("new.txt", "x");
        let dirty = inspect_repo(&git, repo.path()).unwrap();
        let mut no_tty = |_: &RepoState| None;
        assert!(matches!(
            interactive_sync_with(&git, &dirty, SyncPolicy::Fail, &mut no_tty),
            Err(VersioningError::DirtyRepository(_))
        ));
        assert!(matches!(
            interactive_sync_with(&git, &dirty, SyncPolicy::Prompt, &mut no_tty),
            Err(VersioningError::DirtyRepository(_))
        ));
        let ignored = interactive_sync_with(&git, &dirty, SyncPolicy::Ignore, &mut no_tty).unwrap();
        assert_eq!(ignored.commit, h);
        assert!(ignored.warning.is_some());

        let mut yes = |_: &RepoState| Some(true);
        let out = interactive_sync_with(&git, &dirty, SyncPolicy::Prompt, &mut yes).unwrap();
        assert_ne!(out.commit, h);
        assert!(inspect_repo(&git, repo.path()).unwrap().is_clean());
        let msg = repo.git(&["log", "-1", "--format=%s"]);
        assert!(msg.starts_with("xman auto-commit "));
    }

    #[test]
    fn snapshot_dedup_and_immutability() {
        let repo = TestRepo::new();
        repo.write("marker.txt", "A");
        repo.write("sub/x.txt", "x");
        let a = repo.commit_all("a");
        repo.write("ignored.tmp", "dirt");
        let snaps = tempfile::tempdir().unwrap();
        let store = SnapshotStore::new(snaps.path(), Git::default());
        let s1 = store.ensure_snapshot(repo.path(), &a).unwrap();
        assert_eq!(s1.path, snaps.path().join(&a));
        assert!(s1.path.join(COMPLETE_MARKER).exists());
        assert_eq!(fs::read_to_string(s1.path.join("marker.txt")).unwrap(), "A");
        assert!(!s1.path.join("ignored.tmp").exists());
        let digest = tree_digest(&s1.path);

        repo.write("marker.txt", "B");
        let b = repo.commit_all("b");
        let s2 = store.ensure_snapshot(repo.path(), &a).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(store.materializations(), 1);
        assert_eq!(tree_digest(&s1.path), digest);

        store.ensure_snapshot(repo.path(), &b).unwrap();
        store.ensure_snapshot(repo.path(), &b[..12]).unwrap();
        assert_eq!(store.list().unwrap().len(), 2);
        assert_eq!(store.materializations(), 2);
        assert!(matches!(
            store.ensure_snapshot(repo.path(), "0123456789abcdef0123456789abcdef01234567"),
            Err(VersioningError::UnknownCommit(_))
        ));
    }

    #[test]
    fn concurrent_snapshot_materializes_once() {
        let repo = TestRepo::new();
        repo.write("marker.txt", "A");
        let a = repo.commit_all("a");
        let snaps = tempfile::tempdir().unwrap();
        let store = Arc::new(SnapshotStore::new(snaps.path(), Git::default()));
        let root = repo.path().to_path_buf();
        let handles: Vec<_> = (0..2)
            .map(|_| {
                let (s, r, h) = (Arc::clone(&store), root.clone(), a.clone());
                thread::spawn(move || s.ensure_snapshot(&r, &h).unwrap())
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(results[0], results[1]);
        assert_eq!(store.materializations(), 1);
    }

    #[test]
    fn workdir_resolution() {
        let repo = TestRepo::new();
        repo.write("sub/marker.txt", "A");
        let a = repo.commit_all("a");
        let snaps = tempfile::tempdir().unwrap();
        let store = SnapshotStore::new(snaps.path(), Git::default());
        let mut no = |_: &RepoState| None;
        let (pin, _) = pin_workdir(
            Some(&store),
            &Git::default(),
            &repo.path().join("sub"),
            SyncPolicy::Fail,
            &mut no,
        )
        .unwrap();
        assert_eq!(pin.commit_hash.as_deref(), Some(a.as_str()));
        let wd = resolve_job_workdir(&pin).unwrap();
        assert_eq!(wd, snaps.path().join(&a).join("sub"));

        repo.write("sub/marker.txt", "B");
        repo.commit_all("b");
        assert_eq!(fs::read_to_string(wd.join("marker.txt")).unwrap(), "A");

        let live = JobPin::live(repo.path());
        assert_eq!(resolve_job_workdir(&live).unwrap(), repo.path());

        fs::remove_dir_all(snaps.path()).unwrap();
        assert!(matches!(
            resolve_job_workdir(&pin),
            Err(VersioningError::SnapshotMissing(_))
        ));
    }

    #[test]
    fn purge_keeps_referenced() {
        let repo = TestRepo::new();
        repo.write("m", "A");
        let a = repo.commit_all("a");
        repo.write("m", "B");
        let b = repo.commit_all("b");
        let snaps = tempfile::tempdir().unwrap();
        let store = SnapshotStore::new(snaps.path(), Git::default());
        store.ensure_snapshot(repo.path(), &a).unwrap();
        store.ensure_snapshot(repo.path(), &b).unwrap();

        let logs = tempfile::tempdir().unwrap();
        let rs = runstore::RunStore::new(logs.path());
        let id = rs.allocate_run_id().unwrap();
        let mut info = RunInfo::staged();
        info.commit_hash = Some(a.clone());
        rs.init_run(id, &Default::default(), &Default::default(), info)
            .unwrap();
        let removed = store.purge_unreferenced(logs.path()).unwrap();
        assert_eq!(removed, vec![b]);
        assert_eq!(store.list().unwrap(), vec![a]);
    }
}
