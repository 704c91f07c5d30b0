//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn topology(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../topologies").join(name)
}

pub fn structkan(args: &[&str]) -> Output {
    structkan_env(args, &[])
}

pub fn structkan_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_structkan"));
    cmd.args(args).env_remove("STRUCTKAN_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Fields that record elapsed time and are allowed to differ between runs.
const TIMING_FIELDS: [&str; 2] = ["duration_seconds", "wall_time_seconds"];

/// Every file in `dir` by name. JSON files have their timing fields
/// removed; everything else is kept as raw bytes.
pub fn comparable_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = std::fs::read(&path).unwrap();
        if name.ends_with(".json") {
            let mut v: Value = serde_json::from_slice(&bytes).unwrap();
            if let Value::Object(map) = &mut v {
                for f in TIMING_FIELDS {
                    map.remove(f);
                }
            }
            bytes = serde_json::to_vec(&v).unwrap();
        }
        files.insert(name, bytes);
    }
    files
}

/// Runs `args` twice, each time with `--out` set to a fresh directory, and
/// returns the first directory's outputs if both runs succeeded with
/// identical files.
pub fn run_twice(args: &[&str]) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut seen = Vec::new();
    for dir in &dirs {
        let out = dir.path().to_str().unwrap();
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", out]);
        let o = structkan(&full);
        if !o.status.success() {
            return Err(format!("{args:?} exited with {:?}: {}", o.status.code(), stderr(&o)));
        }
        seen.push((stdout(&o), comparable_outputs(dir.path())));
    }
    let (first, second) = (&seen[0], &seen[1]);
    if first.0 != second.0 {
        return Err(format!("{args:?}: standard output differs"));
    }
    if first.1.keys().ne(second.1.keys()) {
        return Err(format!("{args:?}: different file sets"));
    }
    for (name, bytes) in &first.1 {
        if second.1[name] != *bytes {
            return Err(format!("{args:?}: {name} differs"));
        }
    }
    Ok(seen.swap_remove(0).1)
}
