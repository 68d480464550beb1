//! `pulmo report`: consolidate a run directory, verify artifacts, print the
//! merged table. Missing or corrupt artifacts exit with code 5.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pulmo_core::error::Error;

use crate::{CmdError, CmdResult};

fn read_kv(path: &Path) -> CmdResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CmdError {
        code: 5,
        message: format!("missing artifact: {} ({e})", path.display()),
    })?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// Build the consolidated summary text of a run directory.
pub fn summarize(run_dir: &Path) -> CmdResult<String> {
    let config = read_kv(&run_dir.join("config_resolved.txt"))?;
    let get = |key: &str| config.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
    let k_folds: usize = get("k_folds")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CmdError { code: 5, message: "config_resolved.txt lacks k_folds".into() })?;
    let task = get("task").unwrap_or_default();

    let mut missing: Vec<String> = Vec::new();
    let mut need = |name: String| {
        if !run_dir.join(&name).is_file() {
            missing.push(name.clone());
        }
        name
    };
    for fold in 1..=k_folds {
        need(format!("fold{fold}.ckpt"));
        need(format!("fold{fold}_stats.csv"));
        need(format!("fold{fold}_history.csv"));
    }
    let metrics_file = match task.as_str() {
        "segmentation" => need("segmentation_metrics.csv".into()),
        "classification" => {
            need("roc_avg.csv".into());
            need("confusion.csv".into());
            need("metrics.csv".into())
        }
        other => {
            return Err(CmdError {
                code: 5,
                message: format!("config_resolved.txt has unknown task {other:?}"),
            })
        }
    };
    if !missing.is_empty() {
        return Err(CmdError {
            code: 5,
            message: format!("missing artifacts under {}: {}", run_dir.display(), missing.join(", ")),
        });
    }

    let metrics = fs::read_to_string(run_dir.join(&metrics_file)).map_err(|e| CmdError {
        code: 5,
        message: format!("unreadable {metrics_file}: {e}"),
    })?;

    let mut out = String::new();
    writeln!(out, "run: {}", run_dir.display()).unwrap();
    writeln!(out, "task: {task}, folds: {k_folds}").unwrap();
    if let Some(model) = get("model") {
        writeln!(out, "model: {model}").unwrap();
    }
    writeln!(out, "-- {metrics_file} --").unwrap();
    out.push_str(&metrics);
    if task == "classification" {
        if let Ok(cm) = fs::read_to_string(run_dir.join("confusion.csv")) {
            writeln!(out, "-- confusion.csv (summed over folds) --").unwrap();
            out.push_str(&cm);
        }
    }
    Ok(out)
}

pub fn run(run_dir: &Path) -> CmdResult {
    let summary = summarize(run_dir)?;
    print!("{summary}");
    let path = run_dir.join("report.txt");
    fs::write(&path, &summary)
        .map_err(|e| CmdError::from(Error::io(&path, e)))?;
    Ok(())
}
