use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::commands::{read_eval_rows, read_place_rows, write_rows};
use super::config::PlacementMethod;
use crate::error::{Error, Result};
use crate::mesh::{MaskStrategy, Split};

const GRID_DENSITIES: [f64; 4] = [0.05, 0.10, 0.20, 0.30];
const GRID_STRATEGIES: [MaskStrategy; 2] = [MaskStrategy::Uniform, MaskStrategy::Random];
const MISSING: &str = "missing";

/// One metric value in plot-ready long format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub source: String,
    /// `reconstruction` or `placement`.
    pub table: String,
    pub split: String,
    pub method: String,
    pub variant: String,
    pub density: f64,
    pub strategy: String,
    pub mse: f64,
    pub mse_e4: f64,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub rows: usize,
    pub missing_cells: usize,
}

/// Gathers `eval_recon.csv` and `eval_place.csv` from every input directory
/// into `<out>/long.csv` and `<out>/summary.md`.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    let mut long = Vec::new();
    for dir in inputs {
        let source = dir.display().to_string();
        let recon = read_eval_rows(dir)?;
        let place = read_place_rows(dir)?;
        if recon.is_none() && place.is_none() {
            return Err(Error::MissingArtifact(format!("{source} has neither eval_recon.csv nor eval_place.csv")));
        }
        for r in recon.unwrap_or_default() {
            long.push(LongRow {
                source: source.clone(),
                table: "reconstruction".into(),
                split: split_name(r.split).into(),
                method: r.method,
                variant: r.variant,
                density: r.density,
                strategy: strategy_name(r.strategy).into(),
                mse: r.mse,
                mse_e4: r.mse_e4,
                seed: r.seed,
                config_hash: r.config_hash,
                checkpoint_hash: r.checkpoint_hash,
            });
        }
        for r in place.unwrap_or_default() {
            long.push(LongRow {
                source: source.clone(),
                table: "placement".into(),
                split: "test".into(),
                method: r.method.to_string(),
                variant: String::new(),
                density: r.density,
                strategy: r.method.to_string(),
                mse: r.mse,
                mse_e4: r.mse_e4,
                seed: r.seed,
                config_hash: r.config_hash,
                checkpoint_hash: r.checkpoint_hash,
            });
        }
    }
    if long.is_empty() {
        return Err(Error::MissingArtifact("no input directories".into()));
    }
    fs::create_dir_all(out)?;
    write_rows(&out.join("long.csv"), &long)?;
    let (md, missing_cells) = summary_markdown(&long);
    fs::write(out.join("summary.md"), md)?;
    Ok(ReportSummary {
        rows: long.len(),
        missing_cells,
    })
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn strategy_name(s: MaskStrategy) -> &'static str {
    match s {
        MaskStrategy::Uniform => "uniform",
        MaskStrategy::Random => "random",
    }
}

fn cell(values: Option<&Vec<f64>>) -> String {
    match values {
        None => MISSING.into(),
        Some(v) => {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            if v.len() == 1 {
                format!("{mean:.1}")
            } else {
                let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                format!("{mean:.1} ± {std:.1} (n={})", v.len())
            }
        }
    }
}

fn pct(d: f64) -> String {
    format!("{}%", (d * 100.0).round())
}

/// Markdown tables of test-split MSE (units of 1e-4) with every cell of the
/// density × strategy grid present; returns the text and the missing count.
fn summary_markdown(rows: &[LongRow]) -> (String, usize) {
    let mut md = String::new();
    let mut missing = 0;
    let test: Vec<&LongRow> = rows.iter().filter(|r| r.split == "test").collect();

    let recon: Vec<&&LongRow> = test.iter().filter(|r| r.table == "reconstruction").collect();
    let mut densities: BTreeSet<OrderedFloat<f64>> = GRID_DENSITIES.iter().map(|&d| OrderedFloat(d)).collect();
    densities.extend(recon.iter().map(|r| OrderedFloat(r.density)));
    let mut strategies: Vec<String> = GRID_STRATEGIES.iter().map(|s| strategy_name(*s).to_string()).collect();
    for r in &recon {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy.clone());
        }
    }
    let mut cells: IndexMap<(String, String), IndexMap<(OrderedFloat<f64>, String), Vec<f64>>> = IndexMap::new();
    for r in &recon {
        let label = if r.variant.is_empty() { r.method.clone() } else { r.variant.clone() };
        cells
            .entry((label, r.method.clone()))
            .or_default()
            .entry((OrderedFloat(r.density), r.strategy.clone()))
            .or_default()
            .push(r.mse_e4);
    }
    let _ = writeln!(md, "# Reconstruction, test split\n\nMasked MSE in units of 1e-4; mean ± std over runs.\n");
    let mut header = String::from("| method |");
    let mut rule = String::from("|---|");
    for d in &densities {
        for s in &strategies {
            let _ = write!(header, " {} {s} |", pct(d.0));
            rule.push_str("---|");
        }
    }
    let _ = writeln!(md, "{header}\n{rule}");
    if cells.is_empty() {
        let _ = writeln!(md, "| {MISSING} |{}", " |".repeat(densities.len() * strategies.len()));
    }
    for ((label, _), row) in &cells {
        let mut line = format!("| {label} |");
        for d in &densities {
            for s in &strategies {
                let v = row.get(&(*d, s.clone()));
                missing += v.is_none() as usize;
                let _ = write!(line, " {} |", cell(v));
            }
        }
        let _ = writeln!(md, "{line}");
    }

    let place: Vec<&&LongRow> = test.iter().filter(|r| r.table == "placement").collect();
    let pd: BTreeSet<OrderedFloat<f64>> = if place.is_empty() {
        [OrderedFloat(0.10)].into()
    } else {
        place.iter().map(|r| OrderedFloat(r.density)).collect()
    };
    let _ = writeln!(md, "\n# Sensor placement, test split\n\nMasked MSE in units of 1e-4; mean ± std over runs.\n");
    let mut header = String::from("| method |");
    let mut rule = String::from("|---|");
    for d in &pd {
        let _ = write!(header, " {} |", pct(d.0));
        rule.push_str("---|");
    }
    let _ = writeln!(md, "{header}\n{rule}");
    for method in PlacementMethod::ALL {
        let mut line = format!("| {method} |");
        for d in &pd {
            let v: Vec<f64> = place
                .iter()
                .filter(|r| r.method == method.name() && OrderedFloat(r.density) == *d)
                .map(|r| r.mse_e4)
                .collect();
            let v = (!v.is_empty()).then_some(v);
            missing += v.is_none() as usize;
            let _ = write!(line, " {} |", cell(v.as_ref()));
        }
        let _ = writeln!(md, "{line}");
    }
    (md, missing)
}
