#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_performancenet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawning the performancenet binary")
}

/// Runs a command that must succeed and returns its stdout.
pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "performancenet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Every file below `dir`, keyed by relative path, in sorted order.
pub fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs every subcommand once inside `dir` on a small toy corpus and returns
/// the stdout of each step. Paths are relative so two runs in different
/// directories write identical manifests.
pub fn pipeline(dir: &Path, seed: u64) -> Vec<String> {
    let seed = seed.to_string();
    let steps: [&[&str]; 8] = [
        &["synth-toy", "--out", "raw", "--num-clips", "3", "--clip-s", "8"],
        &["prepare", "--midi-dir", "raw", "--audio-dir", "raw", "--out", "ds", "--instrument", "toy"],
        &[
            "train", "--data", "ds", "--out", "run", "--epochs", "1", "--batch", "2", "--lr", "1e-3", "--lambda", "0.5",
            "--reduced",
        ],
        &[
            "generate",
            "--checkpoint",
            "run/best.pfnw",
            "--midi",
            "raw/toy/clip_000.mid",
            "--out",
            "gen.wav",
            "--griffinlim-iters",
            "4",
            "--spec-out",
            "gen.pfnw",
        ],
        &["griffinlim", "--spec", "gen.pfnw", "--out", "gl.wav", "--iters", "3"],
        &["eval", "--ref", "raw/toy/clip_000.wav", "--est", "gen.wav", "--roll", "raw/toy/clip_000.mid", "--header"],
        &["eval", "--ref", "raw/toy/clip_001.wav", "--est", "raw/toy/clip_001.wav"],
        &["inspect", "--checkpoint", "run/latest.pfnw"],
    ];
    steps
        .iter()
        .map(|args| {
            let mut args = args.to_vec();
            args.extend(["--seed", &seed]);
            run_ok(dir, &args)
        })
        .collect()
}
