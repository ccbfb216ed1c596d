//! Helpers for driving the `mcnet` binary, plus its command-level invariants.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub fn mcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcnet"))
        .args(args)
        .output()
        .expect("spawn mcnet")
}

/// Runs with `--out dir` and panics with stderr on failure.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let mut full = vec!["--out", dir.to_str().unwrap()];
    full.extend_from_slice(args);
    let out = mcnet(&full);
    assert!(
        out.status.success(),
        "mcnet {full:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        text.trim_end().lines().count(),
        1,
        "expected one stderr line, got {text:?}"
    );
    text.trim_end().to_string()
}

/// Tiny synthetic training flags shared by the command tests.
pub const TOY: &[&str] = &[
    "--synth",
    "--depth",
    "2",
    "--width",
    "6",
    "--side",
    "16",
    "--n-samples",
    "8",
];

pub fn train_toy(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train"];
    args.extend_from_slice(TOY);
    args.extend_from_slice(extra);
    ok(dir, &args)
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

/// Repeated invocations with the same flags and seed produce identical files.
pub fn commands_are_pure(cases: u32) -> Result<(), String> {
    let strategy = (
        2usize..4,
        prop::sample::select(vec![3usize, 6]),
        0usize..4,
        0u64..1000,
        1u64..3,
    );
    runner(cases)
        .run(&strategy, |(depth, width, st, seed, epochs)| {
            let st = ["none", "1", "2", "full"][st];
            let (d, w, s, e) = (
                depth.to_string(),
                width.to_string(),
                seed.to_string(),
                epochs.to_string(),
            );
            let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
            let mut files = Vec::new();
            for dir in &dirs {
                let p = dir.path();
                ok(
                    p,
                    &[
                        "--seed",
                        &s,
                        "audit",
                        "--depth",
                        &d,
                        "--width",
                        &w,
                        "--strategy",
                        st,
                    ],
                );
                ok(
                    p,
                    &[
                        "--seed",
                        &s,
                        "train",
                        "--synth",
                        "--depth",
                        &d,
                        "--width",
                        &w,
                        "--strategy",
                        st,
                        "--side",
                        "16",
                        "--n-samples",
                        "6",
                        "--epochs",
                        &e,
                        "--lr",
                        "1e-3",
                    ],
                );
                ok(
                    p,
                    &[
                        "--seed",
                        &s,
                        "eval",
                        "--split",
                        "all",
                        "--side",
                        "16",
                        "--n-samples",
                        "6",
                    ],
                );
                let read = |f: &str| std::fs::read(p.join(f)).unwrap();
                files.push(
                    [
                        "audit.json",
                        "loss.csv",
                        "model.mcnt",
                        "metrics.json",
                        "metrics.txt",
                    ]
                    .map(read),
                );
            }
            prop_assert!(
                files[0] == files[1],
                "outputs differ for depth {depth} width {width} strategy {st} seed {seed}"
            );
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Failures exit nonzero with exactly one `error[class]: ...` line.
pub fn failures_are_single_line(cases: u32) -> Result<(), String> {
    let junk = prop::collection::vec("[a-z-]{1,8}", 1..4);
    runner(cases)
        .run(&(junk, 0usize..4), |(words, kind)| {
            let dir = tempfile::tempdir().unwrap();
            let missing = dir.path().join("absent.mcnt");
            let missing = missing.to_str().unwrap();
            let mut args: Vec<String> = match kind {
                // Unknown subcommands and flags are usage errors.
                0 => words.iter().map(|w| format!("zz{w}")).collect(),
                1 => vec!["audit".into(), "--depth".into(), "9".into()],
                2 => vec!["eval".into(), "--checkpoint".into(), missing.into()],
                _ => vec![
                    "predict".into(),
                    "--checkpoint".into(),
                    missing.into(),
                    "--image".into(),
                    format!("img{}.pgm", words[0]),
                ],
            };
            args.splice(
                0..0,
                [
                    "--out".to_string(),
                    dir.path().to_str().unwrap().to_string(),
                ],
            );
            let out = mcnet(&args.iter().map(String::as_str).collect::<Vec<_>>());
            let text = String::from_utf8_lossy(&out.stderr).into_owned();
            let lines: Vec<&str> = text.trim_end().lines().collect();
            prop_assert_eq!(lines.len(), 1, "{:?}", text);
            let class = lines[0]
                .strip_prefix("error[")
                .and_then(|r| r.split_once("]: "))
                .map(|(c, _)| c);
            prop_assert!(
                class
                    .is_some_and(|c| !c.is_empty()
                        && c.chars().all(|ch| ch.is_ascii_lowercase() || ch == '_')),
                "{:?}",
                lines[0]
            );
            let code = out.status.code().unwrap();
            prop_assert_eq!(code, if kind == 0 { 2 } else { 1 });
            Ok(())
        })
        .map_err(|e| e.to_string())
}
