//! An in-process scheduler that runs job scripts with `bash` on a pool of
//! worker threads. Jobs can be delayed or held so tests can change the
//! working tree between submission and execution.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{Backend, SchedulerError};

#[derive(Debug, Clone)]
pub struct MockOptions {
    /// Minimum time between submission and start.
    pub delay: Duration,
    pub workers: usize,
    /// Newly submitted jobs stay queued until released.
    pub hold_new: bool,
    /// Zero-based submission indices that are rejected.
    pub fail_submissions: HashSet<usize>,
    pub env: Vec<(String, String)>,
    /// Let job stdout/stderr through instead of discarding them.
    pub inherit_output: bool,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            delay: Duration::ZERO,
            workers: 1,
            hold_new: false,
            fail_submissions: HashSet::new(),
            env: Vec::new(),
            inherit_output: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockJobState {
    Queued,
    Running,
    Done(Option<i32>),
}

#[derive(Debug, Clone)]
pub struct MockJob {
    pub id: String,
    pub script: PathBuf,
    pub held: bool,
    pub state: MockJobState,
    ready_at: Instant,
}

#[derive(Debug, Default)]
struct State {
    jobs: Vec<MockJob>,
    submissions: usize,
    hold_new: bool,
    shutdown: bool,
}

#[derive(Debug)]
struct Shared {
    state: Mutex<State>,
    changed: Condvar,
    opts: MockOptions,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct MockScheduler {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl MockScheduler {
    pub fn start(opts: MockOptions) -> Self {
        let n = opts.workers.max(1);
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                hold_new: opts.hold_new,
                ..Default::default()
            }),
            changed: Condvar::new(),
            opts,
        });
        let workers = (0..n)
            .map(|_| {
                let s = Arc::clone(&shared);
                thread::spawn(move || worker(&s))
            })
            .collect();
        MockScheduler { shared, workers }
    }

    pub fn hold_new(&self, hold: bool) {
        self.shared.lock().hold_new = hold;
    }

    pub fn release(&self, id: &str) -> bool {
        let mut st = self.shared.lock();
        let found = st.jobs.iter_mut().find(|j| j.id == id).map(|j| j.held = false);
        self.shared.changed.notify_all();
        found.is_some()
    }

    pub fn release_all(&self) {
        let mut st = self.shared.lock();
        for j in &mut st.jobs {
            j.held = false;
        }
        self.shared.changed.notify_all();
    }

    /// Number of submission attempts, accepted or not.
    pub fn submissions(&self) -> usize {
        self.shared.lock().submissions
    }

    pub fn jobs(&self) -> Vec<MockJob> {
        self.shared.lock().jobs.clone()
    }

    /// Waits until every unheld job has finished. Returns false on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now().checked_add(timeout);
        let mut st = self.shared.lock();
        loop {
            let busy = st
                .jobs
                .iter()
                .any(|j| !j.held && !matches!(j.state, MockJobState::Done(_)));
            if !busy {
                return true;
            }
            st = match deadline {
                None => self.shared.changed.wait(st).unwrap_or_else(|p| p.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return false;
                    }
                    self.shared
                        .changed
                        .wait_timeout(st, d - now)
                        .unwrap_or_else(|p| p.into_inner())
                        .0
                }
            };
        }
    }
}

impl Backend for MockScheduler {
    fn name(&self) -> String {
        "LOCAL_MOCK".into()
    }

    fn submit(&self, script: &Path) -> Result<String, SchedulerError> {
        let mut st = self.shared.lock();
        let index = st.submissions;
        st.submissions += 1;
        if self.shared.opts.fail_submissions.contains(&index) {
            return Err(SchedulerError::SubmitCommandFailed {
                script: script.to_path_buf(),
                message: "rejected by mock scheduler".into(),
            });
        }
        let id = format!("mock-{}", st.jobs.len() + 1);
        let held = st.hold_new;
        st.jobs.push(MockJob {
            id: id.clone(),
            script: script.to_path_buf(),
            held,
            state: MockJobState::Queued,
            ready_at: Instant::now() + self.shared.opts.delay,
        });
        self.shared.changed.notify_all();
        Ok(id)
    }
}

impl Drop for MockScheduler {
    fn drop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.changed.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker(shared: &Shared) {
    loop {
        let (index, script) = {
            let mut st = shared.lock();
            loop {
                if st.shutdown {
                    return;
                }
                let now = Instant::now();
                let mut next_ready: Option<Instant> = None;
                let mut pick = None;
                for (i, j) in st.jobs.iter().enumerate() {
                    if j.held || j.state != MockJobState::Queued {
                        continue;
                    }
                    if j.ready_at <= now {
                        pick = Some(i);
                        break;
                    }
                    next_ready = Some(next_ready.map_or(j.ready_at, |t| t.min(j.ready_at)));
                }
                if let Some(i) = pick {
                    st.jobs[i].state = MockJobState::Running;
                    break (i, st.jobs[i].script.clone());
                }
                st = match next_ready {
                    Some(t) => {
                        shared
                            .changed
                            .wait_timeout(st, t.saturating_duration_since(now))
                            .unwrap_or_else(|p| p.into_inner())
                            .0
                    }
                    None => shared.changed.wait(st).unwrap_or_else(|p| p.into_inner()),
                };
            }
        };
        let code = run_script(&script, &shared.opts);
        let mut st = shared.lock();
        st.jobs[index].state = MockJobState::Done(code);
        shared.changed.notify_all();
    }
}

fn run_script(script: &Path, opts: &MockOptions) -> Option<i32> {
    let mut cmd = Command::new("bash");
    cmd.arg(script).stdin(Stdio::null());
    if let Some(dir) = script.parent() {
        cmd.current_dir(dir);
    }
    if !opts.inherit_output {
        cmd.stdout(Stdio::null()).stderr(Stdio::null());
    }
    for (k, v) in &opts.env {
        cmd.env(k, v);
    }
    cmd.status().ok().and_then(|s| s.code())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, format!("#!/bin/bash\n{body}\n")).unwrap();
        p
    }

    #[test]
    fn runs_jobs_and_reports_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let ok = script(dir.path(), "ok.sh", "echo hi > out.txt");
        let bad = script(dir.path(), "bad.sh", "exit 3");
        let mock = MockScheduler::start(MockOptions {
            workers: 2,
            ..Default::default()
        });
        assert_eq!(mock.submit(&ok).unwrap(), "mock-1");
        assert_eq!(mock.submit(&bad).unwrap(), "mock-2");
        assert!(mock.wait_idle(Duration::from_secs(20)));
        let states: Vec<_> = mock.jobs().iter().map(|j| j.state).collect();
        assert_eq!(
            states,
            vec![MockJobState::Done(Some(0)), MockJobState::Done(Some(3))]
        );
        assert_eq!(fs::read_to_string(dir.path().join("out.txt")).unwrap(), "hi\n");
    }

    #[test]
    fn held_jobs_wait_for_release() {
        let dir = tempfile::tempdir().unwrap();
        let s = script(dir.path(), "s.sh", "touch ran");
        let mock = MockScheduler::start(MockOptions {
            hold_new: true,
            ..Default::default()
        });
        let id = mock.submit(&s).unwrap();
        assert!(mock.wait_idle(Duration::from_millis(50)));
        assert!(!dir.path().join("ran").exists());
        assert!(mock.release(&id));
        assert!(mock.wait_idle(Duration::from_secs(20)));
        assert!(dir.path().join("ran").exists());
    }

    #[test]
    fn rejected_submissions_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let s = script(dir.path(), "s.sh", "true");
        let mock = MockScheduler::start(MockOptions {
            fail_submissions: [1].into_iter().collect(),
            ..Default::default()
        });
        assert!(mock.submit(&s).is_ok());
        assert!(mock.submit(&s).is_err());
        assert_eq!(mock.submit(&s).unwrap(), "mock-2");
        assert_eq!(mock.submissions(), 3);
    }

    #[test]
    fn delay_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let s = script(dir.path(), "s.sh", "true");
        let mock = MockScheduler::start(MockOptions {
            delay: Duration::from_millis(200),
            ..Default::default()
        });
        let t0 = Instant::now();
        mock.submit(&s).unwrap();
        assert!(mock.wait_idle(Duration::from_secs(20)));
        assert!(t0.elapsed() >= Duration::from_millis(200));
    }
}
