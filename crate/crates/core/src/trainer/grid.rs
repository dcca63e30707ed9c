//! Cartesian hyperparameter grids over [`RunConfig`] keys.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{distill, save_run, train_teacher, RunConfig};
use crate::backbone::{load_checkpoint, Checkpoint};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::parse_key_values;

/// Base settings plus `grid.<key>=v1,v2,...` axes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub base: RunConfig,
    pub axes: Vec<(String, Vec<String>)>,
}

impl GridSpec {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut base = RunConfig::default();
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (key, value) in parse_key_values(text)? {
            match key.strip_prefix("grid.") {
                Some(axis) => {
                    let values: Vec<String> = value
                        .split(',')
                        .map(|v| v.trim().to_string())
                        .filter(|v| !v.is_empty())
                        .collect();
                    if values.is_empty() {
                        return Err(Error::config(format!("grid axis {axis:?} has no values")));
                    }
                    if axes.iter().any(|(k, _)| k == axis) {
                        return Err(Error::config(format!("duplicate grid axis {axis:?}")));
                    }
                    // Reject unknown keys and bad values before any cell runs.
                    for v in &values {
                        base.clone().set(axis, v)?;
                    }
                    axes.push((axis.to_string(), values));
                }
                None => base.set(&key, &value)?,
            }
        }
        Ok(Self { base, axes })
    }

    /// Axis assignments of every cell, last axis varying fastest.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }

    pub fn cell_config(&self, cell: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        for (k, v) in cell {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub cell: usize,
    pub axes: Vec<(String, String)>,
    pub best_val_ndcg20: Option<f64>,
    pub test_recall20: Option<f64>,
    pub test_ndcg20: Option<f64>,
    pub final_c: Option<f64>,
    pub error: Option<String>,
}

fn run_cell(cfg: &RunConfig, ds: &Dataset, teacher: Option<&Checkpoint>, dir: Option<&Path>) -> Result<super::RunOutcome> {
    let outcome = if cfg.method.uses_teacher() {
        let owned;
        let t = match (teacher, &cfg.teacher) {
            (Some(t), _) => t,
            (None, Some(path)) => {
                owned = load_checkpoint(path)?;
                &owned
            }
            (None, None) => {
                owned = train_teacher(cfg, ds)?.checkpoint;
                &owned
            }
        };
        distill(cfg, ds, Some(t))?
    } else {
        distill(cfg, ds, None)?
    };
    if let Some(d) = dir {
        save_run(d, cfg, &outcome)?;
    }
    Ok(outcome)
}

/// Runs every cell in parallel. A failing cell is reported in its row and
/// does not stop the others. When `teacher` is `None`, each cell loads its
/// configured teacher or trains one.
pub fn run_experiment_grid(
    spec: &GridSpec,
    ds: &Dataset,
    teacher: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Vec<GridRow> {
    spec.cells()
        .into_par_iter()
        .enumerate()
        .map(|(cell, axes)| {
            let dir = out_dir.map(|d| d.join(format!("cell_{cell}")));
            let res = spec
                .cell_config(&axes)
                .and_then(|cfg| run_cell(&cfg, ds, teacher, dir.as_deref()));
            let mut row = GridRow {
                cell,
                axes,
                best_val_ndcg20: None,
                test_recall20: None,
                test_ndcg20: None,
                final_c: None,
                error: None,
            };
            match res {
                Ok(o) => {
                    row.best_val_ndcg20 = o.best_val_ndcg20;
                    row.test_recall20 = o.test.as_ref().and_then(|t| t.recall(20));
                    row.test_ndcg20 = o.test.as_ref().and_then(|t| t.ndcg(20));
                    row.final_c = o.final_c;
                }
                Err(e) => {
                    log::warn!("grid cell {cell} failed: {e}");
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect()
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut out = String::from("cell,axes,best_val_ndcg20,test_recall20,test_ndcg20,final_C,error\n");
    for r in rows {
        let axes: Vec<String> = r.axes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.cell,
            axes.join(";"),
            opt(r.best_val_ndcg20),
            opt(r.test_recall20),
            opt(r.test_ndcg20),
            opt(r.final_c),
            err
        );
    }
    out
}
