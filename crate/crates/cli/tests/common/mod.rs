#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use cohortguard::synth::{generate_cohort, write_fixture_dir, FixturePaths, SynthCohort, SynthSpec};

pub struct Run {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl Run {
    pub fn stdout_str(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }
}

pub fn cohortguard<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_cohortguard"))
        .args(args)
        .output()
        .expect("spawn cohortguard");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn spec(n: usize, mean: f64, sigma: f64, seed: u64, langs: &[&str]) -> SynthSpec {
    let mut s = SynthSpec::new(n, mean, 32, sigma, seed);
    s.languages = langs.iter().map(|l| (l.parse().unwrap(), 1.0)).collect();
    s
}

pub fn write_spec(dir: &Path, spec: &SynthSpec) -> PathBuf {
    let p = dir.join("spec.json");
    std::fs::write(&p, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    p
}

/// Generates a cohort in-process and writes it under `dir/name`.
pub fn fixture(dir: &Path, name: &str, spec: &SynthSpec) -> (SynthCohort, FixturePaths) {
    let cohort = generate_cohort(spec).unwrap();
    let paths = write_fixture_dir(&cohort, spec, dir.join(name)).unwrap();
    (cohort, paths)
}

pub fn input_args(paths: &FixturePaths) -> Vec<String> {
    vec![
        "--manifest".into(),
        paths.manifest.display().to_string(),
        "--embeddings".into(),
        paths.embeddings.display().to_string(),
    ]
}

pub fn args(base: &[&str], rest: &[String]) -> Vec<String> {
    base.iter().map(|s| s.to_string()).chain(rest.iter().cloned()).collect()
}
