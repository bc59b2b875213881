use std::collections::BTreeMap;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{evaluate, AnyPolicy, Metrics};
use crate::error::{Error, Result};
use crate::grpo::FeaturizedPolicy;
use crate::kitchen::{TaskKind, SCHEMA_VERSION};

/// Cross-task metrics: rows are the training task, columns the evaluation
/// task, every cell on the column task's held-out layouts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralizationMatrix {
    pub rows: Vec<TaskKind>,
    pub cols: Vec<TaskKind>,
    pub cells: Vec<Vec<Metrics>>,
}

impl GeneralizationMatrix {
    pub fn cell(&self, trained: TaskKind, evaluated: TaskKind) -> Option<&Metrics> {
        let r = self.rows.iter().position(|&t| t == trained)?;
        let c = self.cols.iter().position(|&t| t == evaluated)?;
        Some(&self.cells[r][c])
    }

    /// `trained_on,evaluated_on,sr,asat,asst,episodes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trained_on,evaluated_on,sr,asat,asst,episodes\n");
        for (r, row) in self.rows.iter().zip(&self.cells) {
            for (c, m) in self.cols.iter().zip(row) {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.name(),
                    c.name(),
                    m.sr_cell(),
                    m.asat_cell(),
                    m.asst_cell(),
                    m.episodes
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("matrix serializes");
        s.push('\n');
        s
    }
}

/// Evaluates every trained policy on all four tasks.
pub fn cross_task_matrix(
    policies: &BTreeMap<TaskKind, FeaturizedPolicy>,
    cfg: &ExperimentConfig,
) -> Result<GeneralizationMatrix> {
    for p in policies.values() {
        if p.feature_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                expected: SCHEMA_VERSION,
                found: p.feature_version,
            });
        }
    }
    let wrapped: BTreeMap<TaskKind, AnyPolicy> = policies
        .iter()
        .map(|(&t, p)| (t, AnyPolicy::Featurized(p.clone())))
        .collect();
    matrix_of(&wrapped, cfg)
}

/// The matrix for arbitrary evaluation policies, one per row.
pub fn matrix_of(policies: &BTreeMap<TaskKind, AnyPolicy>, cfg: &ExperimentConfig) -> Result<GeneralizationMatrix> {
    if policies.is_empty() {
        return Err(Error::Config("no policies given for the cross-task matrix".into()));
    }
    let cols = TaskKind::ALL.to_vec();
    let mut cells = Vec::with_capacity(policies.len());
    for policy in policies.values() {
        let mut row = Vec::with_capacity(cols.len());
        for &task in &cols {
            let mut col_cfg = cfg.clone();
            col_cfg.task = task;
            col_cfg.layout = None;
            col_cfg.timeout = None;
            row.push(evaluate(policy, task, &col_cfg)?);
        }
        cells.push(row);
    }
    Ok(GeneralizationMatrix {
        rows: policies.keys().copied().collect(),
        cols,
        cells,
    })
}
