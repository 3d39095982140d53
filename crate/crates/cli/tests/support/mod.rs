#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use netscope::data::save_ppm_dir;
use netscope::data::synthetic::gratings;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Runs the binary from the crate directory so relative fixture paths
/// resolve the same way every time.
pub fn netscope<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netscope"))
        .args(args)
        .current_dir(crate_dir())
        .env_remove("NETSCOPE_THREADS")
        .output()
        .expect("binary runs")
}

pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let out = netscope(args);
    let words: Vec<String> = args.iter().map(|a| a.as_ref().to_string_lossy().into_owned()).collect();
    assert!(
        out.status.success(),
        "netscope {} failed ({:?}):\n{}",
        words.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub const FIXTURE_DATA: &str = "tests/fixtures/data";
pub const FIXTURE_MODEL: &str = "tests/fixtures/model.nsck";

pub fn blessing() -> bool {
    std::env::var("NETSCOPE_BLESS").is_ok_and(|v| v == "1")
}

/// The bundled 32-image dataset and the checkpoint trained on it; rebuilt
/// when missing or when `NETSCOPE_BLESS=1`.
pub fn fixtures() -> (&'static str, &'static str) {
    static READY: OnceLock<()> = OnceLock::new();
    READY.get_or_init(|| {
        let root = crate_dir();
        if blessing() || !root.join(FIXTURE_DATA).join("manifest.tsv").is_file() {
            let _ = fs::remove_dir_all(root.join(FIXTURE_DATA));
            save_ppm_dir(&gratings(32, 32, 10, 0), root.join(FIXTURE_DATA), "manifest.tsv").unwrap();
        }
        if blessing() || !root.join(FIXTURE_MODEL).is_file() {
            let tmp = tempfile::tempdir().unwrap();
            let out = tmp.path().to_str().unwrap();
            ok(&[
                "train", "--deterministic", "--data-dir", FIXTURE_DATA, "--preset", "scaled",
                "--set", "model.stage_blocks=1,1", "--set", "model.base_channels=8",
                "--epochs", "2", "--batch", "8", "--lr", "0.05", "--seed", "1", "--out", out,
            ]);
            fs::copy(tmp.path().join("epoch-002.nsck"), root.join(FIXTURE_MODEL)).unwrap();
        }
    });
    (FIXTURE_DATA, FIXTURE_MODEL)
}

/// Relative paths of every file under `dir`, sorted.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, d: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut v = Vec::new();
    walk(dir, dir, &mut v);
    v.sort();
    v
}

/// First difference between two output trees, if any.
pub fn tree_diff(a: &Path, b: &Path) -> Option<String> {
    let (fa, fb) = (files(a), files(b));
    if fa != fb {
        return Some(format!("file sets differ: {fa:?} vs {fb:?}"));
    }
    fa.iter()
        .find(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .map(|f| format!("{} differs", f.display()))
}

pub fn read_tsv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    netscope::tsv::read(path).unwrap()
}
