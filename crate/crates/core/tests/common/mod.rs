#![allow(dead_code)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SCRIPT_SH: &str = "#!/bin/bash\n\n#SLURM --time=1-00:10:00\n#SLURM --ntasks=1\n#SLURM --cpus-per-task=1\n\npython main.py  lr=10.,1. seed=1,2\n";

pub const GAUSS_NEWTON: &str = "#!/bin/bash\n\n#OAR -l core=1, walltime=00:30:00\n#OAR -t besteffort\n#OAR -p gpumem>'16000'\n\npython main.py std=0.01,0.1,0.5,1.,5,10,100\\\n    seed=0,1,2,3,4\\\n    method=RF,GD,GN\\\n";

pub fn xman_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_xman"))
}

pub fn write_exec(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
}

/// A directory holding a `python` stand-in. It accepts `main.py k=v ...`,
/// sleeps `STUB_SLEEP` seconds, and logs five `test` lines whose loss is a
/// closed-form function of `std`, `seed` and `method` (see [`stub_loss`]).
pub fn python_shim(dir: &Path) -> PathBuf {
    let bin = dir.join("shim-bin");
    fs::create_dir_all(&bin).unwrap();
    write_exec(
        &bin.join("python"),
        r#"#!/bin/bash
shift
std=0; seed=0; method=RF; lr=0
for a in "$@"; do
  case "$a" in
    std=*) std="${a#std=}" ;;
    seed=*) seed="${a#seed=}" ;;
    method=*) method="${a#method=}" ;;
    lr=*) lr="${a#lr=}" ;;
  esac
done
case "$method" in RF) m=0 ;; GD) m=1 ;; GN) m=2 ;; *) m=0 ;; esac
sleep "${STUB_SLEEP:-0}"
if [ -n "$STUB_LOG" ]; then
  for i in 1 2 3 4 5; do
    loss=$(awk -v s="$std" -v d="$seed" -v m="$m" -v i="$i" 'BEGIN { printf "%.17g", s / i + m + d * 0.125 }')
    xman log --log-name test "{\"epoch\": $i, \"loss\": $loss}" || exit 9
  done
fi
exit 0
"#,
    );
    bin
}

/// The value the shim logs at `epoch` (1-based).
pub fn stub_loss(std: f64, seed: i64, method: &str, epoch: i64) -> f64 {
    let m = match method {
        "GD" => 1.0,
        "GN" => 2.0,
        _ => 0.0,
    };
    std / epoch as f64 + m + seed as f64 * 0.125
}

/// PATH with the shim directory and the xman binary's directory first.
pub fn path_with(shim: &Path) -> String {
    let bin_dir = xman_bin().parent().unwrap().to_path_buf();
    format!(
        "{}:{}:{}",
        shim.display(),
        bin_dir.display(),
        std::env::var("PATH").unwrap_or_default()
    )
}

/// Runs the binary in `cwd` with extra environment.
pub fn xman(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(xman_bin());
    c.args(args).current_dir(cwd);
    for var in [
        "XMAN_RUN_DIR",
        "XMAN_CONFIG",
        "XMAN_LOGS_ROOT",
        "XMAN_CONFIG_DIR",
        "XMAN_VERSIONING",
        "XMAN_SCHEDULER",
    ] {
        c.env_remove(var);
    }
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Minimal git repository driver with a fixed identity.
pub struct Repo {
    pub dir: PathBuf,
}

impl Repo {
    pub fn init(dir: &Path) -> Repo {
        fs::create_dir_all(dir).unwrap();
        let r = Repo {
            dir: dir.to_path_buf(),
        };
        r.git(&["init", "-q"]);
        r
    }

    pub fn git(&self, args: &[&str]) -> String {
        let out = Command::new("git")
            .args(args)
            .current_dir(&self.dir)
            .env("GIT_AUTHOR_NAME", "t")
            .env("GIT_AUTHOR_EMAIL", "t@example.com")
            .env("GIT_COMMITTER_NAME", "t")
            .env("GIT_COMMITTER_EMAIL", "t@example.com")
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "git {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).trim().to_string()
    }

    pub fn write(&self, rel: &str, content: &str) {
        let p = self.dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, content).unwrap();
    }

    pub fn commit_all(&self, msg: &str) -> String {
        self.git(&["add", "-A"]);
        self.git(&["commit", "-q", "-m", msg]);
        self.git(&["rev-parse", "HEAD"])
    }
}
