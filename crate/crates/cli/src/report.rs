//! Consolidates one or more run directories into `report.json` and a
//! gnuplot script.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::output::{verify_manifest, MANIFEST};

pub struct Report {
    pub json: Value,
    pub script: String,
}

/// Run directories under `dir`: `dir` itself if it holds a manifest,
/// otherwise its immediate subdirectories that do.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>, String> {
    if !dir.is_dir() {
        return Err(format!("{} is not a directory", dir.display()));
    }
    if dir.join(MANIFEST).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_dir() && path.join(MANIFEST).exists() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(format!("no {MANIFEST} in {} or its subdirectories", dir.display()));
    }
    Ok(out)
}

fn rel(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn lookup<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |v, k| v.get(*k))
}

pub fn build(dir: &Path) -> Result<Report, String> {
    let dirs = run_dirs(dir)?;
    let mut runs = Vec::new();
    let mut cross = Map::new();
    let mut plots = String::new();
    for d in &dirs {
        let manifest = verify_manifest(d)?;
        let experiment = manifest.get("experiment").and_then(Value::as_str).unwrap_or("unknown").to_string();
        let summary = manifest.get("summary").cloned().unwrap_or(Value::Null);
        let files: Vec<String> = manifest
            .get("files")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|f| f.get("path")?.as_str().map(String::from)).collect())
            .unwrap_or_default();
        let label = rel(dir, d);
        let label = if label.is_empty() { ".".to_string() } else { label };

        let mut take = |key: &str, path: &[&str]| {
            if let Some(v) = lookup(&summary, path) {
                cross.insert(format!("{label}:{key}"), v.clone());
            }
        };
        take("T_est", &["T_est"]);
        take("T0", &["vertex", "T0"]);
        take("k_hat", &["rate", "k_hat"]);
        take("K_hat", &["rate", "K_hat"]);
        take("N_m_min", &["similarity", "N_m_min"]);
        take("N_m_margin", &["similarity", "N_m_margin"]);
        take("Ltilde_m_max_increase", &["similarity", "Ltilde_m_max_increase"]);
        take("picard_max_ratio", &["max_contraction_ratio"]);

        let prefix = if label == "." { String::new() } else { format!("{label}/") };
        let has = |name: &str| files.iter().any(|f| f == name);
        if has("rate.csv") {
            let _ = writeln!(
                plots,
                "set title 'rate quotient ({label})'\nset xlabel 't'\nset ylabel 'Q(t)'\nplot '{prefix}rate.csv' using 1:2 with linespoints title 'quotient'\n"
            );
        }
        if has("functionals.csv") {
            let _ = writeln!(
                plots,
                "set title 'Lyapunov functionals ({label})'\nset xlabel 's'\nset ylabel ''\nplot '{prefix}functionals.csv' using 1:5 with lines title 'N_m', '' using 1:7 with lines title 'Ltilde_m' axes x1y2\n"
            );
        }
        if has("trajectory.csv") {
            let _ = writeln!(
                plots,
                "set title 'ODE trajectory ({label})'\nset xlabel 't'\nset ylabel 'v'\nset logscale y\nplot '{prefix}trajectory.csv' using 1:2 with lines title 'v'\nunset logscale y\n"
            );
        }
        if has("contraction.csv") {
            let _ = writeln!(
                plots,
                "set title 'Picard contraction ({label})'\nset xlabel 'iteration'\nset ylabel 'sup diff'\nset logscale y\nplot '{prefix}contraction.csv' using 1:2 with linespoints title 'sup diff'\nunset logscale y\n"
            );
        }
        runs.push(json!({
            "dir": label,
            "experiment": experiment,
            "status": manifest.get("status"),
            "summary": summary,
            "files": files,
        }));
    }
    let panels = plots.matches("plot '").count().max(1);
    let script = format!(
        "# gnuplot script; run from the report directory\nset datafile separator ','\nset key autotitle columnhead\nset term pngcairo size 900,{}\nset output 'report.png'\nset multiplot layout {},1\n{plots}unset multiplot\n",
        400 * panels,
        panels
    );
    Ok(Report {
        json: json!({ "runs": runs, "cross_reference": cross }),
        script,
    })
}

pub fn write(dir: &Path, report: &Report) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(&report.json).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    fs::write(dir.join("report.gp"), &report.script)
}
