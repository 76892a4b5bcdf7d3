//! Per-solver summaries over a directory of finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{io_err, read_trace, HarnessError, Manifest};
use crate::solvers::TraceRecord;

type Run = (Manifest, Vec<TraceRecord>);

/// Mean and sample standard deviation; `None` when no run had a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub solver: String,
    pub runs: usize,
    pub final_residual: Stat,
    pub best_residual: Stat,
    /// Per threshold: mean oracle count at the first record with residual
    /// at or below it, or `None` (∞) when some run never got there.
    pub oracles_to_threshold: Vec<Option<Stat>>,
    pub final_primal: Option<Stat>,
    pub final_accuracy: Option<Stat>,
    pub wall_s: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub thresholds: Vec<f64>,
    pub rows: Vec<SummaryRow>,
}

/// Residual thresholds used when none are given.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Summarizes every run (manifest plus trace) in `dir`, one row per solver
/// label, rows sorted by label.
pub fn compare(dir: &Path, thresholds: &[f64]) -> Result<Summary, HarnessError> {
    let mut groups: BTreeMap<String, Vec<Run>> = BTreeMap::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    for path in entries {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        // Other JSON files (check reports, configs) are skipped.
        let Ok(manifest) = serde_json::from_str::<Manifest>(&text) else { continue };
        let trace = read_trace(&dir.join(&manifest.trace_file))?;
        groups.entry(manifest.solver.clone()).or_default().push((manifest, trace));
    }
    if groups.is_empty() {
        return Err(HarnessError::Empty(dir.to_path_buf()));
    }

    let rows = groups
        .into_iter()
        .map(|(solver, runs)| {
            let collect = |f: &dyn Fn(&Run) -> Option<f64>| -> Vec<f64> {
                runs.iter().filter_map(f).collect()
            };
            let final_residual = collect(&|(_, t)| t.last().map(|r| r.residual()));
            let best_residual =
                collect(&|(_, t)| t.iter().map(|r| r.residual()).min_by(f64::total_cmp));
            let oracles_to_threshold = thresholds
                .iter()
                .map(|&thr| {
                    let hits: Option<Vec<f64>> = runs
                        .iter()
                        .map(|(_, t)| t.iter().find(|r| r.residual() <= thr).map(|r| r.oracle_count as f64))
                        .collect();
                    hits.and_then(|v| Stat::of(&v))
                })
                .collect();
            SummaryRow {
                runs: runs.len(),
                final_residual: Stat::of(&final_residual).expect("nonempty"),
                best_residual: Stat::of(&best_residual).expect("nonempty"),
                oracles_to_threshold,
                final_primal: Stat::of(&collect(&|(_, t)| t.last().and_then(|r| r.primal))),
                final_accuracy: Stat::of(&collect(&|(_, t)| t.last().and_then(|r| r.accuracy))),
                wall_s: Stat::of(&collect(&|(m, _)| Some(m.wall_s))).expect("nonempty"),
                solver,
            }
        })
        .collect();
    Ok(Summary { thresholds: thresholds.to_vec(), rows })
}

fn stat_cells(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [format!("{:.6e}", s.mean), format!("{:.6e}", s.std)],
        None => [String::new(), String::new()],
    }
}

fn pm(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.3e} ± {:.1e}", s.mean, s.std),
        None => "-".into(),
    }
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut header = vec![
            "solver".to_string(),
            "runs".into(),
            "final_res_mean".into(),
            "final_res_std".into(),
            "best_res_mean".into(),
            "best_res_std".into(),
        ];
        for t in &self.thresholds {
            header.push(format!("oracles_to_{t:e}"));
        }
        for f in ["final_primal", "final_accuracy", "wall_s"] {
            header.push(format!("{f}_mean"));
            header.push(format!("{f}_std"));
        }
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.solver.clone(), r.runs.to_string()];
            cells.extend(stat_cells(Some(r.final_residual)));
            cells.extend(stat_cells(Some(r.best_residual)));
            for o in &r.oracles_to_threshold {
                cells.push(o.map_or("∞".into(), |s| format!("{:.1}", s.mean)));
            }
            cells.extend(stat_cells(r.final_primal));
            cells.extend(stat_cells(r.final_accuracy));
            cells.extend(stat_cells(Some(r.wall_s)));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned table for terminals.
    pub fn to_table(&self) -> String {
        let mut header = vec!["solver".to_string(), "runs".into(), "final res".into(), "best res".into()];
        for t in &self.thresholds {
            header.push(format!("oracles@{t:e}"));
        }
        header.extend(["final Φ̃".to_string(), "accuracy".into(), "wall s".into()]);
        let mut rows = vec![header];
        for r in &self.rows {
            let mut cells =
                vec![r.solver.clone(), r.runs.to_string(), pm(Some(r.final_residual)), pm(Some(r.best_residual))];
            for o in &r.oracles_to_threshold {
                cells.push(o.map_or("∞".into(), |s| format!("{:.0}", s.mean)));
            }
            cells.push(pm(r.final_primal));
            cells.push(pm(r.final_accuracy));
            cells.push(format!("{:.3}", r.wall_s.mean));
            rows.push(cells);
        }
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
