//! Cartesian grids of pipeline configurations, one benchmark per cell.
//!
//! A grid is a TOML document:
//!
//! ```toml
//! name = "features"
//! pivot = ["k", "features"]   # axes that become summary columns
//!
//! [base]                      # overrides applied to every cell
//! refinement = "crf"
//!
//! [[axis]]
//! key = "resolutions"
//! values = [[16], [32], [16, 32]]
//!
//! [[axis]]
//! key = "k"
//! values = [3, 4, 5]
//! ```
//!
//! `key` is a config field, dotted for nested tables (`crf.iterations`).
//! Two shorthand keys set several fields at once: `features` takes `"F"`
//! (feature maps only) or `"A+F"` (attention as well), and `stage` takes
//! `"baseline"`, `"+caption"`, `"+refinement"` or `"+attention"`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::backbones::Backbone;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, Dataset, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: Map<String, Value>,
    #[serde(default, rename = "axis")]
    pub axes: Vec<Axis>,
    /// Axis keys shown as columns of the summary table.
    #[serde(default)]
    pub pivot: Vec<String>,
}

pub const PRESETS: [&str; 4] = ["stages", "features", "refinement", "coco-k"];

impl AblationGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: AblationGrid = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("grid: {e}")))?;
        for p in &grid.pivot {
            if !grid.axes.iter().any(|a| &a.key == p) {
                return Err(Error::InvalidArgument(format!("pivot `{p}` is not an axis")));
            }
        }
        if let Some(a) = grid.axes.iter().find(|a| a.values.is_empty()) {
            return Err(Error::InvalidArgument(format!("axis `{}` has no values", a.key)));
        }
        Ok(grid)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let axis = |key: &str, values: Value| Axis {
            key: key.to_string(),
            values: values.as_array().cloned().unwrap_or_default(),
        };
        let (axes, pivot) = match name {
            "stages" => (
                vec![axis("stage", json!(["baseline", "+caption", "+refinement", "+attention"]))],
                vec![],
            ),
            "features" => (
                vec![
                    axis("resolutions", json!([[16], [32], [64], [16, 32], [32, 64], [16, 32, 64]])),
                    axis("k", json!([3, 4, 5])),
                    axis("features", json!(["F", "A+F"])),
                ],
                vec!["k".to_string(), "features".to_string()],
            ),
            "refinement" => (
                vec![
                    axis("refinement", json!(["none", "crf", "pamr"])),
                    axis("k", json!([4, 5])),
                    axis("features", json!(["F", "A+F"])),
                ],
                vec!["k".to_string(), "features".to_string()],
            ),
            "coco-k" => (vec![axis("k", json!([3, 4, 5]))], vec![]),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset `{other}`; expected one of {PRESETS:?}"
                )))
            }
        };
        Ok(AblationGrid {
            name: name.to_string(),
            base: Map::new(),
            axes,
            pivot,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Value index per axis for every cell, last axis varying fastest.
    pub fn cell_indices(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new()];
        for a in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    (0..a.values.len()).map(move |i| {
                        let mut c = prefix.clone();
                        c.push(i);
                        c
                    })
                })
                .collect();
        }
        cells
    }

    /// The configuration of one cell, starting from `base`.
    pub fn cell_config(&self, base: &PipelineConfig, indices: &[usize]) -> Result<PipelineConfig> {
        let mut v = serde_json::to_value(base)?;
        for (k, val) in &self.base {
            set_path(&mut v, k, val.clone())?;
        }
        for (axis, &i) in self.axes.iter().zip(indices) {
            apply(&mut v, &axis.key, &axis.values[i])?;
        }
        serde_json::from_value(v).map_err(|e| Error::InvalidArgument(format!("grid cell: {e}")))
    }

    pub fn cell_labels(&self, indices: &[usize]) -> Vec<String> {
        self.axes.iter().zip(indices).map(|(a, &i)| label(&a.values[i])).collect()
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(p) = parts.next() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("`{path}` does not name a config table")))?;
        if parts.peek().is_none() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn apply(config: &mut Value, key: &str, value: &Value) -> Result<()> {
    let bad = || Error::InvalidArgument(format!("axis `{key}` has no value {value}"));
    match key {
        "features" => {
            let attention = match value.as_str() {
                Some("F") => false,
                Some("A+F") => true,
                _ => return Err(bad()),
            };
            set_path(config, "include_attention", Value::Bool(attention))
        }
        "stage" => {
            let (caption, refinement, attention) = match value.as_str() {
                Some("baseline") => (false, "none", false),
                Some("+caption") => (true, "none", false),
                Some("+refinement") => (true, "crf", false),
                Some("+attention") => (true, "crf", true),
                _ => return Err(bad()),
            };
            set_path(config, "use_caption", Value::Bool(caption))?;
            set_path(config, "refinement", Value::String(refinement.into()))?;
            set_path(config, "include_attention", Value::Bool(attention))
        }
        _ => set_path(config, key, value.clone()),
    }
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(label).collect::<Vec<_>>().join("+"),
        other => other.to_string(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationCell {
    pub labels: Vec<String>,
    pub config: PipelineConfig,
    pub report: Report,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationResult {
    pub grid: AblationGrid,
    pub cells: Vec<AblationCell>,
}

/// Benchmarks every cell of `grid` in order.
pub fn run_ablation(
    backbone: &dyn Backbone,
    dataset: &Dataset,
    base: &PipelineConfig,
    grid: &AblationGrid,
    limit: Option<usize>,
) -> Result<AblationResult> {
    let mut cells = Vec::with_capacity(grid.num_cells());
    for indices in grid.cell_indices() {
        let config = grid.cell_config(base, &indices)?;
        let labels = grid.cell_labels(&indices);
        log::info!("cell {}", labels.join(" "));
        let report = run_benchmark(backbone, dataset, &config, limit)?;
        cells.push(AblationCell { labels, config, report });
    }
    Ok(AblationResult {
        grid: grid.clone(),
        cells,
    })
}

impl AblationResult {
    /// mIoU (percent) with row axes down the side and pivot axes across.
    pub fn summary_table(&self) -> String {
        let axes = &self.grid.axes;
        let is_pivot: Vec<bool> = axes.iter().map(|a| self.grid.pivot.contains(&a.key)).collect();
        let pick = |labels: &[String], want: bool| -> Vec<String> {
            labels
                .iter()
                .zip(&is_pivot)
                .filter(|(_, &p)| p == want)
                .map(|(l, _)| l.clone())
                .collect()
        };
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut cols: Vec<Vec<String>> = Vec::new();
        for c in &self.cells {
            let r = pick(&c.labels, false);
            let k = pick(&c.labels, true);
            if !rows.contains(&r) {
                rows.push(r);
            }
            if !cols.contains(&k) {
                cols.push(k);
            }
        }
        let row_names: Vec<&str> = axes
            .iter()
            .zip(&is_pivot)
            .filter(|(_, &p)| !p)
            .map(|(a, _)| a.key.as_str())
            .collect();
        let col_name = |k: &[String]| if k.is_empty() { "mIoU".to_string() } else { k.join(" ") };
        let mut table: Vec<Vec<String>> = Vec::new();
        let mut header: Vec<String> = row_names.iter().map(|s| s.to_string()).collect();
        header.extend(cols.iter().map(|k| col_name(k)));
        table.push(header);
        for r in &rows {
            let mut line = r.clone();
            for k in &cols {
                let cell = self
                    .cells
                    .iter()
                    .find(|c| &pick(&c.labels, false) == r && &pick(&c.labels, true) == k);
                line.push(cell.map_or("-".to_string(), |c| format!("{:.2}", 100.0 * c.report.miou)));
            }
            table.push(line);
        }
        let ncol = table.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..ncol)
            .map(|j| table.iter().filter_map(|l| l.get(j)).map(String::len).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        if !self.grid.name.is_empty() {
            writeln!(out, "{}", self.grid.name).unwrap();
        }
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(j, s)| format!("{s:>w$}", w = widths[j]))
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        }
        out
    }
}
