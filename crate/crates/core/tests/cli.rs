mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use common::*;
use xman::reader::Reader;
use xman::runstore::{RunId, RunStatus, RunStore};

fn logs_arg(dir: &Path) -> String {
    dir.join("logs").display().to_string()
}

#[test]
fn run_trivial_command_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    let out = xman(tmp.path(), &["run", "--logs", &logs, "--", "true"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "run 1 [] COMPLETE");
    let out = xman(tmp.path(), &["run", "--logs", &logs, "--", "false"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_sweep_prints_one_line_per_tuple() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    let out = xman(
        tmp.path(),
        &["run", "--logs", &logs, "--", "true", "a=1,2", "b=x,y"],
        &[],
    );
    assert!(out.status.success());
    let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(
        lines,
        [
            "run 1 [a=1 b=x] COMPLETE",
            "run 2 [a=1 b=y] COMPLETE",
            "run 3 [a=2 b=x] COMPLETE",
            "run 4 [a=2 b=y] COMPLETE",
        ]
    );
}

#[test]
fn log_with_named_stream_extends_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    let out = xman(
        tmp.path(),
        &[
            "run",
            "--logs",
            &logs,
            "--",
            "bash",
            "-c",
            "xman log '{\"acc\": 0.5}' && xman log --log-name eval '{\"acc\": 0.75}'",
        ],
        &[("PATH", &path_with(tmp.path()))],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("logs/1");
    assert_eq!(
        fs::read_to_string(run.join("metrics/eval.json")).unwrap().trim(),
        "{\"acc\":0.75}"
    );
    assert!(run.join("metrics/train.json").exists());
    let reader = Reader::open(tmp.path().join("logs")).unwrap();
    let cols: Vec<&String> = reader.rows()[0].metrics.keys().collect();
    assert_eq!(cols, ["eval.acc", "train.acc"]);
}

#[test]
fn log_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xman(tmp.path(), &["log", "{}"], &[]);
    assert_eq!(out.status.code(), Some(2), "outside a run");

    let run_dir = tmp.path().join("logs/1");
    let store = RunStore::new(tmp.path().join("logs"));
    let id = store.allocate_run_id().unwrap();
    let mut rec = store
        .init_run(
            id,
            &Default::default(),
            &Default::default(),
            xman::runstore::RunInfo::staged(),
        )
        .unwrap();
    rec.update_status(RunStatus::Running, None).unwrap();
    let env = [("XMAN_RUN_DIR", run_dir.to_str().unwrap())];
    for bad in ["{not json", "{\"loss\": \"high\"}", "[1, 2]"] {
        let out = xman(tmp.path(), &["log", bad], &env);
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
    let out = xman(tmp.path(), &["log", "{\"loss\": 1.5}"], &env);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn query_syntax_error_points_at_token() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    xman(tmp.path(), &["run", "--logs", &logs, "--", "true", "lr=1"], &[]);
    let out = xman(
        tmp.path(),
        &["query", "--logs", &logs, "--filter", "config.lr == "],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("config.lr == "), "{err}");
    assert!(err.contains('^'), "{err}");
    let out = xman(
        tmp.path(),
        &["query", "--logs", &logs, "--filter", "config.lr =< 1"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn query_json_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    let out = xman(
        tmp.path(),
        &[
            "run",
            "--logs",
            &logs,
            "--",
            "bash",
            "-c",
            "for i in 1 2 3; do xman log \"{\\\"loss\\\": $i}\"; done",
            "seed=0,1",
        ],
        &[("PATH", &path_with(tmp.path()))],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let filter = "config.seed >= 1";
    let out = xman(
        tmp.path(),
        &["query", "--logs", &logs, "--filter", filter, "--format", "json"],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let cli: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let lib = Reader::open(&logs)
        .unwrap()
        .filter(filter)
        .unwrap()
        .to_json()
        .unwrap();
    assert_eq!(cli, lib);
    assert_eq!(cli[0]["train.loss"], serde_json::json!([1, 2, 3]));
}

#[test]
fn query_csv_and_strict_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    xman(tmp.path(), &["run", "--logs", &logs, "--", "true", "a=1,2"], &[]);
    let out = xman(
        tmp.path(),
        &["query", "--logs", &logs, "--filter", "config.a == 2", "--format", "csv"],
        &[],
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("run_id,"));
    assert!(lines.next().unwrap().starts_with("2,"));
    assert!(lines.next().is_none());

    let out = xman(
        tmp.path(),
        &["query", "--logs", &logs, "--filter", "config.missing == 1"],
        &[],
    );
    assert!(out.status.success());
    let out = xman(
        tmp.path(),
        &["query", "--logs", &logs, "--strict", "--filter", "config.missing == 1"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diff_and_status() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    xman(
        tmp.path(),
        &["run", "--logs", &logs, "--", "true", "a=1,2", "b=3"],
        &[],
    );
    let out = xman(tmp.path(), &["diff", "--logs", &logs, "--format", "csv"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("config.a"), "{text}");
    assert!(!text.contains("config.b"), "{text}");

    let out = xman(tmp.path(), &["status", "--logs", &logs, "--format", "json"], &[]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["info.status"] == "COMPLETE"));
}

#[test]
fn quarantined_runs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = logs_arg(tmp.path());
    xman(tmp.path(), &["run", "--logs", &logs, "--", "true"], &[]);
    fs::create_dir_all(tmp.path().join("logs/7/metadata")).unwrap();
    let out = xman(tmp.path(), &["query", "--logs", &logs], &[]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("quarantined 7"), "{}", stderr(&out));
}

#[test]
fn dry_run_has_no_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("script.sh"), SCRIPT_SH).unwrap();
    let logs = logs_arg(tmp.path());
    let out = xman(
        tmp.path(),
        &["sub", "script.sh", "--dry-run", "--logs", &logs],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("# ---- run ").count(), 4);
    assert_eq!(text.matches("#SBATCH --ntasks=1").count(), 4);
    assert!(text.contains("python main.py lr=1.0 seed=2"), "{text}");
    assert!(!tmp.path().join("logs").exists());
}

#[test]
fn missing_scheduler_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("script.sh"), SCRIPT_SH).unwrap();
    let logs = logs_arg(tmp.path());
    let out = xman(
        tmp.path(),
        &["sub", "script.sh", "--logs", &logs],
        &[("PATH", "/nonexistent")],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sbatch"), "{}", stderr(&out));
    assert!(RunStore::new(&logs).run_ids().unwrap().is_empty());
}

#[test]
fn sub_without_directives_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("plain.sh"), "#!/bin/bash\npython main.py\n").unwrap();
    let out = xman(tmp.path(), &["sub", "plain.sh", "--backend", "mock"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn concurrent_submissions_get_distinct_ids() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("script.sh"), SCRIPT_SH).unwrap();
    let shim = python_shim(tmp.path());
    let path = path_with(&shim);
    let logs = logs_arg(tmp.path());
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (logs, path, dir) = (logs.clone(), path.clone(), tmp.path().to_path_buf());
            std::thread::spawn(move || {
                xman(
                    &dir,
                    &["sub", "script.sh", "--backend", "mock", "--logs", &logs],
                    &[("PATH", &path)],
                )
            })
        })
        .collect();
    let mut ids = BTreeSet::new();
    for h in handles {
        let out = h.join().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        for line in stdout(&out).lines() {
            let id: u64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
            assert!(ids.insert(id), "duplicate id {id}");
        }
    }
    assert_eq!(ids.len(), 16);
    assert_eq!(RunStore::new(&logs).run_ids().unwrap().len(), 16);
}

#[test]
fn versioned_run_records_commit_and_purge_keeps_pending() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = Repo::init(&tmp.path().join("repo"));
    repo.write("main.sh", "#!/bin/bash\ntrue\n");
    let hash = repo.commit_all("init");
    let logs = logs_arg(tmp.path());
    let out = xman(
        &repo.dir,
        &["run", "--logs", &logs, "--versioning", "true", "--", "bash", "main.sh"],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rec = RunStore::new(&logs).open(RunId(1)).unwrap();
    assert_eq!(rec.info.commit_hash.as_deref(), Some(hash.as_str()));

    // A pending run keeps its snapshot; finished runs no longer need theirs.
    let store = RunStore::new(&logs);
    let id = store.allocate_run_id().unwrap();
    let mut info = xman::runstore::RunInfo::staged();
    info.commit_hash = Some("cafe".into());
    store
        .init_run(id, &Default::default(), &Default::default(), info)
        .unwrap();
    for h in ["cafe", "deadbeef"] {
        let dir = tmp.path().join("logs/.snapshots").join(h);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(".complete"), "").unwrap();
    }
    let out = xman(tmp.path(), &["purge-snapshots", "--logs", &logs], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut removed: Vec<&str> = text.lines().collect();
    removed.sort_unstable();
    let mut expected = vec![format!("removed {hash}"), "removed deadbeef".to_string()];
    expected.sort_unstable();
    assert_eq!(removed, expected);
    assert!(tmp.path().join("logs/.snapshots/cafe").exists());
}

#[test]
fn dirty_tree_under_fail_policy_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = Repo::init(&tmp.path().join("repo"));
    repo.write("main.sh", "true\n");
    repo.commit_all("init");
    repo.write("main.sh", "false\n");
    let logs = logs_arg(tmp.path());
    let out = xman(
        &repo.dir,
        &[
            "run", "--logs", &logs, "--versioning", "true", "--policy", "fail", "--", "bash",
            "main.sh",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("logs/1").exists());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(xman(tmp.path(), &["bogus"], &[]).status.code(), Some(2));
    assert_eq!(xman(tmp.path(), &["run"], &[]).status.code(), Some(2));
    let logs = logs_arg(tmp.path());
    let out = xman(tmp.path(), &["run", "--logs", &logs, "--", "true", "lr=="], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = xman(tmp.path(), &["run", "--logs", &logs, "--", "true", "a=1", "a=2"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(xman(tmp.path(), &["--help"], &[]).status.success());
}
