//! Shared fixture and golden-file helpers for the CLI test suites.
//!
//! Golden comparisons are byte-exact. Regenerate the committed files with
//! `GOLDEN_REGEN=1 cargo test -p intruder-cli --test acceptance golden`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use intruder_core::checkpoint::Checkpoint;
use intruder_core::intervention::inject_rank_one;
use intruder_core::tensor::{svd, SeededRng};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_intruder")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Deterministic analysis fixture: a 16x16 base pair where the tuned `w1`
/// carries one strong injected direction and `w2` is untouched.
pub fn write_injected_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = SeededRng::new(0xAB);
    let mut base = Checkpoint::new();
    let mut tuned = Checkpoint::new();
    for name in ["w1", "w2"] {
        let raw = rng.normal_matrix(16, 16, 1.0);
        let top = svd(&raw).unwrap().values[0];
        let w = raw.scale(0.9 / top);
        let w_tuned = if name == "w1" {
            let v = rng.unit_vector(16);
            inject_rank_one(&w, &v, 6.0).unwrap()
        } else {
            w.clone()
        };
        base.insert(name, w).unwrap();
        tuned.insert(name, w_tuned).unwrap();
    }
    let base_stem = dir.join("fixture_base");
    let tuned_stem = dir.join("fixture_tuned");
    base.save(&base_stem).unwrap();
    tuned.save(&tuned_stem).unwrap();
    (base_stem, tuned_stem)
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary spawns")
}

pub fn assert_success(output: &Output, context: &str) {
    assert!(
        output.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Compares `actual` with the committed golden file byte for byte, or
/// rewrites the golden when `GOLDEN_REGEN` is set.
pub fn assert_matches_golden(actual: &[u8], golden_name: &str) {
    let path = golden_dir().join(golden_name);
    if std::env::var_os("GOLDEN_REGEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path)
        .unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert!(
        actual == expected.as_slice(),
        "output does not match golden file {} (set GOLDEN_REGEN=1 to regenerate)",
        path.display()
    );
}
