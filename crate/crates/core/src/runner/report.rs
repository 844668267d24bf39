use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{ensure_dir, GroupResult, RunResult};
use crate::error::{Error, Result};
use crate::replay::Strategy;

pub const CSV_HEADER: &str = "strategy,budget,acc_mean,acc_std,bwt_mean,bwt_std";

#[derive(Serialize)]
struct ResultsFile<'a> {
    tool: &'static str,
    version: &'static str,
    runs: &'a [RunResult],
}

/// `results.json` content: full matrices, per-seed metrics and the config
/// echo. Field order is fixed by the types and floats use the shortest
/// round-trip form, so identical runs serialize identically.
pub fn results_json(results: &[RunResult]) -> Result<String> {
    let file = ResultsFile {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        runs: results,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::json("serializing results", e))?;
    text.push('\n');
    Ok(text)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv(results: &[RunResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for g in results.iter().flat_map(|r| &r.groups) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            g.strategy,
            opt(g.budget),
            opt(g.acc_mean),
            opt(g.acc_std),
            opt(g.bwt_mean),
            opt(g.bwt_std)
        );
    }
    out
}

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:.2}±{:.2}", 100.0 * m, 100.0 * s),
        (Some(m), None) => format!("{:.2}", 100.0 * m),
        _ => "n/a".to_string(),
    }
}

/// Plain-text table with one row per budget and ACC / BWT columns per
/// replay strategy, in percent. Budget-free strategies follow as extra rows.
pub fn render_table(results: &[RunResult]) -> String {
    let groups: Vec<&GroupResult> = results.iter().flat_map(|r| &r.groups).collect();
    let replay: Vec<Strategy> = [Strategy::Er, Strategy::Far, Strategy::Mir]
        .into_iter()
        .filter(|s| groups.iter().any(|g| g.strategy == *s))
        .collect();
    let mut budgets: Vec<f64> = groups.iter().filter_map(|g| g.budget).collect();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();

    let width = 16;
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "Buffer");
    for metric in ["ACC", "BWT"] {
        for s in &replay {
            let _ = write!(out, "{:>width$}", format!("{metric} {}", s.as_str().to_uppercase()));
        }
    }
    out.push('\n');
    for b in &budgets {
        let _ = write!(out, "{:<8}", format!("{}%", b * 100.0));
        for metric in 0..2 {
            for s in &replay {
                let g = groups.iter().find(|g| g.strategy == *s && g.budget == Some(*b));
                let text = match (g, metric) {
                    (Some(g), 0) => cell(g.acc_mean, g.acc_std),
                    (Some(g), _) => cell(g.bwt_mean, g.bwt_std),
                    (None, _) => "-".to_string(),
                };
                let _ = write!(out, "{text:>width$}");
            }
        }
        out.push('\n');
    }
    let others: BTreeSet<Strategy> = groups.iter().filter(|g| g.budget.is_none()).map(|g| g.strategy).collect();
    for s in others {
        for g in groups.iter().filter(|g| g.strategy == s && g.budget.is_none()) {
            let _ = writeln!(
                out,
                "{:<8}ACC {}  BWT {}",
                s.as_str(),
                cell(g.acc_mean, g.acc_std),
                cell(g.bwt_mean, g.bwt_std)
            );
        }
    }
    out
}

/// Writes `results.json`, `summary.csv` and `table.txt` into `dir`.
pub fn emit_report(results: &[RunResult], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let files = [
        ("results.json", results_json(results)?),
        ("summary.csv", summary_csv(results)),
        ("table.txt", render_table(results)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
