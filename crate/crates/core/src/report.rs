//! Multi-run aggregation: means and standard deviations per grid cell,
//! learning deltas, training curves and the summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::holdout::ExperimentId;
use crate::seq2seq::{AttentionKind, Unit};
use crate::trainer::{RunHistory, GENERALIZATION};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("context `{0}` is not tracked in the history")]
    UnknownContext(String),
}

/// One (unit, attention) cell of the architecture grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub unit: Unit,
    pub attention: AttentionKind,
}

impl Arch {
    pub const ALL: [Arch; 6] = [
        Arch { unit: Unit::Srn, attention: AttentionKind::None },
        Arch { unit: Unit::Srn, attention: AttentionKind::Multiplicative },
        Arch { unit: Unit::Gru, attention: AttentionKind::None },
        Arch { unit: Unit::Gru, attention: AttentionKind::Multiplicative },
        Arch { unit: Unit::Lstm, attention: AttentionKind::None },
        Arch { unit: Unit::Lstm, attention: AttentionKind::Multiplicative },
    ];

    pub fn new(unit: Unit, attention: AttentionKind) -> Self {
        Arch { unit, attention }
    }

    /// `SRN(-)`, `LSTM(+)`, ...
    pub fn label(self) -> String {
        format!("{}({})", self.unit.label(), self.attention.sign())
    }
}

/// Outcome of one training run, as far as reporting is concerned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub experiment: ExperimentId,
    /// Number of withheld names (E3 only).
    pub k: Option<usize>,
    pub unit: Unit,
    pub attention: AttentionKind,
    pub seed: u64,
    /// Names of the withheld generalization subsets.
    pub withheld_subsets: Vec<String>,
    pub history: Option<RunHistory>,
    /// Diagnostic of an aborted run.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn arch(&self) -> Arch {
        Arch::new(self.unit, self.attention)
    }

    pub fn final_accuracy(&self, subset: &str) -> Option<f64> {
        self.history.as_ref()?.final_accuracy(subset)
    }

    /// Withheld reflexive antecedent contexts (`refl-<name>`).
    pub fn reflexive_contexts(&self) -> Vec<String> {
        self.withheld_subsets.iter().filter(|s| s.starts_with("refl-")).cloned().collect()
    }

    /// Learning delta over the withheld reflexive contexts; `None` for
    /// aborted runs or runs without such contexts.
    pub fn learning_delta(&self) -> Option<Option<usize>> {
        let contexts = self.reflexive_contexts();
        if contexts.is_empty() {
            return None;
        }
        learning_delta(self.history.as_ref()?, &contexts, DELTA_THRESHOLD).ok()
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stats { mean, std: var.sqrt(), n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: ExperimentId,
    pub k: Option<usize>,
    pub unit: Unit,
    pub attention: AttentionKind,
    pub subset: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

type CellKey = (ExperimentId, Option<usize>, Arch);

fn group(records: &[RunRecord]) -> BTreeMap<CellKey, Vec<&RunRecord>> {
    let mut cells: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.experiment, r.k, r.arch())).or_default().push(r);
    }
    cells
}

/// Mean and standard deviation of the final accuracies of completed runs,
/// per (experiment, k, architecture, subset).
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for ((experiment, k, arch), runs) in group(records) {
        let mut per_subset: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &runs {
            if let Some(h) = &r.history {
                for (s, &a) in &h.last().accuracy {
                    per_subset.entry(s.as_str()).or_default().push(a);
                }
            }
        }
        for (subset, values) in per_subset {
            let s = Stats::of(&values).expect("non-empty");
            rows.push(AggregateRow {
                experiment,
                k,
                unit: arch.unit,
                attention: arch.attention,
                subset: subset.to_string(),
                mean: s.mean,
                std: s.std,
                n: s.n,
            });
        }
    }
    rows
}

pub const DELTA_THRESHOLD: f64 = 0.95;

/// Epochs between the first context reaching `threshold` and every context
/// having exceeded it at least once. `Ok(None)` when some context never
/// gets there.
pub fn learning_delta(history: &RunHistory, contexts: &[String], threshold: f64) -> Result<Option<usize>, ReportError> {
    let mut first_reach = Vec::with_capacity(contexts.len());
    let mut first_exceed = Vec::with_capacity(contexts.len());
    for c in contexts {
        let series = history.series(c).ok_or_else(|| ReportError::UnknownContext(c.clone()))?;
        let epoch_of = |pred: &dyn Fn(f64) -> bool| {
            series.iter().zip(&history.epochs).find(|(a, _)| pred(**a)).map(|(_, r)| r.epoch)
        };
        first_reach.push(epoch_of(&|a| a >= threshold));
        first_exceed.push(epoch_of(&|a| a > threshold));
    }
    let Some(e1) = first_reach.iter().flatten().min().copied() else {
        return Ok(None);
    };
    let e2: Option<Vec<usize>> = first_exceed.into_iter().collect();
    Ok(e2.and_then(|v| v.into_iter().max()).map(|e2| e2.saturating_sub(e1)))
}

/// Long-format `epoch,subset,accuracy` rows for the given subsets.
pub fn curve_export(history: &RunHistory, subsets: &[String]) -> String {
    let mut out = String::from("epoch,subset,accuracy\n");
    for r in &history.epochs {
        for s in subsets {
            if let Some(a) = r.accuracy.get(s) {
                writeln!(out, "{},{},{}", r.epoch, s, a).unwrap();
            }
        }
    }
    out
}

/// Table 1 cell: absent (no runs), undefined (no run learned every context),
/// or the mean delta over the runs that did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaCell {
    Absent,
    Undefined { runs: usize },
    Mean { mean: f64, succeeded: usize, runs: usize },
}

impl DeltaCell {
    pub fn render(&self) -> String {
        match self {
            DeltaCell::Absent => String::new(),
            DeltaCell::Undefined { .. } => "—".to_string(),
            DeltaCell::Mean { mean, .. } => format!("{mean:.2}"),
        }
    }
}

pub const TABLE1_KS: [usize; 4] = [2, 3, 6, 14];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub architecture: String,
    pub cells: Vec<(usize, DeltaCell)>,
}

pub fn table1(records: &[RunRecord]) -> Vec<Table1Row> {
    let cells = group(records);
    Arch::ALL
        .iter()
        .map(|&arch| Table1Row {
            architecture: arch.label(),
            cells: TABLE1_KS
                .iter()
                .map(|&k| {
                    let runs: Vec<&&RunRecord> = cells
                        .get(&(ExperimentId::E3, Some(k), arch))
                        .map(|v| v.iter().filter(|r| r.history.is_some()).collect())
                        .unwrap_or_default();
                    let deltas: Vec<f64> =
                        runs.iter().filter_map(|r| r.learning_delta().flatten()).map(|d| d as f64).collect();
                    let cell = match (runs.len(), Stats::of(&deltas)) {
                        (0, _) => DeltaCell::Absent,
                        (n, None) => DeltaCell::Undefined { runs: n },
                        (n, Some(s)) => DeltaCell::Mean { mean: s.mean, succeeded: s.n, runs: n },
                    };
                    (k, cell)
                })
                .collect(),
        })
        .collect()
}

/// Subset rows of the per-experiment tables, in display order.
pub const SUBSET_ORDER: [&str; 5] =
    ["alice-reflexive", "alice-verbs-alice", "alice-subject-trans", "alice-subject-intrans", "alice-object"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub experiment: ExperimentId,
    pub subset: String,
    /// One entry per architecture in [`Arch::ALL`] order; `None` when absent.
    pub cells: Vec<Option<Stats>>,
}

/// Mean final accuracy per withheld subset and architecture.
pub fn subset_table(records: &[RunRecord], experiments: &[ExperimentId]) -> Vec<SubsetRow> {
    let cells = group(records);
    let mut rows = Vec::new();
    for &exp in experiments {
        let present: BTreeSet<&str> = records
            .iter()
            .filter(|r| r.experiment == exp)
            .flat_map(|r| r.withheld_subsets.iter().map(String::as_str))
            .collect();
        for subset in SUBSET_ORDER.iter().filter(|s| present.contains(**s)) {
            let stats = Arch::ALL
                .iter()
                .map(|&arch| {
                    let vals: Vec<f64> = cells
                        .get(&(exp, None, arch))
                        .map(|v| v.iter().filter_map(|r| r.final_accuracy(subset)).collect())
                        .unwrap_or_default();
                    Stats::of(&vals)
                })
                .collect();
            rows.push(SubsetRow { experiment: exp, subset: subset.to_string(), cells: stats });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub architecture: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean pooled generalization accuracy against the number of withheld names.
pub fn figure1(records: &[RunRecord]) -> Vec<FigurePoint> {
    let mut out = Vec::new();
    for ((exp, k, arch), runs) in group(records) {
        let (ExperimentId::E3, Some(k)) = (exp, k) else { continue };
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.final_accuracy(GENERALIZATION)).collect();
        if let Some(s) = Stats::of(&vals) {
            out.push(FigurePoint { architecture: arch.label(), k, mean: s.mean, std: s.std, n: s.n });
        }
    }
    out
}

/// Everything the report writes, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub aggregates: Vec<AggregateRow>,
    pub table1: Vec<Table1Row>,
    pub table2: Vec<SubsetRow>,
    pub table3: Vec<SubsetRow>,
    pub figure1: Vec<FigurePoint>,
    pub aborted: Vec<(String, String)>,
}

pub fn paper_tables(records: &[RunRecord]) -> Tables {
    Tables {
        aggregates: aggregate(records),
        table1: table1(records),
        table2: subset_table(records, &[ExperimentId::E4a, ExperimentId::E4b]),
        table3: subset_table(records, &[ExperimentId::E5a, ExperimentId::E5b]),
        figure1: figure1(records),
        aborted: records
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| (r.run_id.clone(), e.clone())))
            .collect(),
    }
}

fn opt_k(k: Option<usize>) -> String {
    k.map(|k| k.to_string()).unwrap_or_default()
}

impl Tables {
    /// `experiment,k,architecture,subset,mean,std,n` rows of one experiment.
    pub fn experiment_csv(&self, experiment: ExperimentId) -> String {
        let mut out = String::from("experiment,k,architecture,subset,mean,std,n\n");
        for r in self.aggregates.iter().filter(|r| r.experiment == experiment) {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.experiment,
                opt_k(r.k),
                Arch::new(r.unit, r.attention).label(),
                r.subset,
                r.mean,
                r.std,
                r.n
            )
            .unwrap();
        }
        out
    }

    pub fn table1_csv(&self) -> String {
        let mut out = String::from("architecture");
        for k in TABLE1_KS {
            write!(out, ",k={k}").unwrap();
        }
        out.push('\n');
        for row in &self.table1 {
            out.push_str(&row.architecture);
            for (_, c) in &row.cells {
                write!(out, ",{}", c.render()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn subset_csv(rows: &[SubsetRow]) -> String {
        let mut out = String::from("experiment,subset");
        for a in Arch::ALL {
            write!(out, ",{}", a.label()).unwrap();
        }
        out.push('\n');
        for r in rows {
            write!(out, "{},{}", r.experiment, r.subset).unwrap();
            for c in &r.cells {
                match c {
                    Some(s) => write!(out, ",{:.2}", s.mean).unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn figure1_csv(&self) -> String {
        let mut out = String::from("architecture,k,mean,std,n\n");
        for p in &self.figure1 {
            writeln!(out, "{},{},{},{},{}", p.architecture, p.k, p.mean, p.std, p.n).unwrap();
        }
        out
    }

    pub fn summary_json(&self) -> Value {
        let table1: Vec<Value> = self
            .table1
            .iter()
            .map(|r| {
                let cells: serde_json::Map<String, Value> = r
                    .cells
                    .iter()
                    .map(|(k, c)| {
                        let v = match c {
                            DeltaCell::Absent => Value::Null,
                            DeltaCell::Undefined { .. } => json!("—"),
                            DeltaCell::Mean { mean, succeeded, runs } => {
                                json!({ "mean": mean, "succeeded": succeeded, "runs": runs })
                            }
                        };
                        (k.to_string(), v)
                    })
                    .collect();
                json!({ "architecture": r.architecture, "cells": cells })
            })
            .collect();
        let subset_rows = |rows: &[SubsetRow]| -> Vec<Value> {
            rows.iter()
                .map(|r| {
                    let cells: serde_json::Map<String, Value> = Arch::ALL
                        .iter()
                        .zip(&r.cells)
                        .map(|(a, c)| (a.label(), c.map_or(Value::Null, |s| json!(s))))
                        .collect();
                    json!({ "experiment": r.experiment, "subset": r.subset, "cells": cells })
                })
                .collect()
        };
        json!({
            "aggregates": self.aggregates,
            "table1": table1,
            "table2": subset_rows(&self.table2),
            "table3": subset_rows(&self.table3),
            "figure1": self.figure1,
            "aborted": self.aborted.iter().map(|(id, e)| json!({ "run_id": id, "error": e })).collect::<Vec<_>>(),
        })
    }

    /// Writes `tables/*.csv` and `summary.json` under `out`.
    pub fn write(&self, out: &Path) -> io::Result<()> {
        let dir = out.join("tables");
        fs::create_dir_all(&dir)?;
        let experiments: BTreeSet<ExperimentId> = self.aggregates.iter().map(|r| r.experiment).collect();
        for e in experiments {
            fs::write(dir.join(format!("{e}.csv")), self.experiment_csv(e))?;
        }
        fs::write(dir.join("table1.csv"), self.table1_csv())?;
        fs::write(dir.join("table2.csv"), Self::subset_csv(&self.table2))?;
        fs::write(dir.join("table3.csv"), Self::subset_csv(&self.table3))?;
        fs::write(dir.join("figure1.csv"), self.figure1_csv())?;
        let mut summary = serde_json::to_string_pretty(&self.summary_json()).map_err(io::Error::other)?;
        summary.push('\n');
        fs::write(out.join("summary.json"), summary)
    }
}
