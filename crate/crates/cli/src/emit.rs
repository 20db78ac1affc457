//! Writing reports and plot data to disk.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ratmix_core::{Error, Result};
use serde_json::json;

use crate::ops::Outcome;
use crate::spec::{Emit, ExperimentSpec};

/// Lowercase alphanumeric slug of a profile label.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for ch in label.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("profile");
    }
    out
}

/// The report document: the resolved spec, its hash and the report.
pub fn report_document(spec: &ExperimentSpec, outcome: &Outcome) -> String {
    let doc = json!({
        "spec": spec,
        "spec_hash": spec.hash(),
        "report": outcome.report.to_json(),
    });
    serde_json::to_string_pretty(&doc).unwrap_or_default() + "\n"
}

/// Writes every output file for one step and returns their paths in order.
pub fn write_outcome(dir: &Path, spec: &ExperimentSpec, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut files = vec![(format!("{}.json", spec.name), report_document(spec, outcome))];
    for a in &outcome.artifacts {
        files.push((format!("{}.{}", spec.name, a.suffix), a.content.clone()));
    }
    if spec.emit == Emit::PlotData {
        let mut used = BTreeSet::new();
        for p in &outcome.report.profiles {
            let base = slug(&p.label);
            let mut s = base.clone();
            let mut i = 2;
            while !used.insert(s.clone()) {
                s = format!("{base}-{i}");
                i += 1;
            }
            files.push((format!("{}.{s}.csv", spec.name), p.to_csv()));
        }
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| io_error(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Console summary: the verdict followed by one line per check.
pub fn summary(spec: &ExperimentSpec, outcome: &Outcome) -> String {
    let r = &outcome.report;
    let mut out = format!("{}: {}\n", spec.name, r.verdict);
    for c in &r.checks {
        let tag = if c.passed { "pass" } else { "fail" };
        out.push_str(&format!("  [{tag}] {}: {}\n", c.name, c.detail));
    }
    out
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}
