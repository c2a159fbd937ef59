#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sgil"));
    c.env_remove("SGIL_OUTPUT_ROOT");
    c
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Raw `ratings.txt` and `trust.txt` for 40 users and 50 items.
pub fn write_raw(dir: &Path) {
    let mut ratings = String::new();
    for u in 0..40u32 {
        for j in 0..8u32 {
            let item = (u * 7 + j * j * 3 + j) % 50;
            ratings.push_str(&format!("{} {} {}\n", 900 + u, 10 + item, 1 + (u + j) % 5));
        }
    }
    let mut trust = String::new();
    for u in 0..40u32 {
        for d in [1u32, 3, 11] {
            trust.push_str(&format!("{} {}\n", 900 + u, 900 + (u + d) % 40));
        }
    }
    fs::write(dir.join("ratings.txt"), ratings).unwrap();
    fs::write(dir.join("trust.txt"), trust).unwrap();
    fs::write(
        dir.join("small.conf"),
        "dim = 8\nlayers = 2\nk = 2\nbeta = 0.1\nbatch_size = 48\nadversarial_period = 2\nmax_epochs = 3\n",
    )
    .unwrap();
}

/// Raw files plus a prepared snapshot in `snap/`.
pub fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_raw(dir.path());
    ok(
        &[
            "prepare",
            "--interactions",
            "ratings.txt",
            "--social",
            "trust.txt",
            "--out",
            "snap",
            "--seed",
            "7",
            "--val-frac",
            "0.1",
        ],
        dir.path(),
    );
    dir
}

/// Every file under `dir`, relative, sorted.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Files that differ between two output trees, ignoring wall-clock timing files.
pub fn differing(a: &Path, b: &Path) -> Vec<PathBuf> {
    let fa = files(a);
    assert_eq!(fa, files(b), "file sets differ");
    fa.into_iter()
        .filter(|f| f.file_name().unwrap() != "timing.json")
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .collect()
}
