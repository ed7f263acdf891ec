use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{RunArtifact, RunStatus};
use crate::backbones::BackboneKind;
use crate::data::DatasetKind;
use crate::dml::HeadVariant;
use crate::error::{Error, Result};
use crate::metrics::{mean, one_tailed_t_test, sample_variance, Direction};

pub const RUNS_FILE: &str = "runs.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const REPORT_TSV: &str = "report.tsv";
pub const REPORT_TXT: &str = "report.txt";

/// One JSON record per line.
pub fn encode_runs(artifacts: &[RunArtifact]) -> Result<String> {
    let mut out = String::new();
    for a in artifacts {
        out.push_str(&serde_json::to_string(a).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_runs(text: &str) -> Result<Vec<RunArtifact>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("run record {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_runs(path: &Path, artifacts: &[RunArtifact]) -> Result<()> {
    std::fs::write(path, encode_runs(artifacts)?).map_err(|e| Error::io(path, e))
}

pub fn read_runs(path: &Path) -> Result<Vec<RunArtifact>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_runs(&text)
}

#[derive(Serialize)]
struct TimingRecord<'a> {
    model: &'a str,
    seed: u64,
    train_secs: f64,
    eval_secs: f64,
}

pub fn write_timings(path: &Path, artifacts: &[RunArtifact]) -> Result<()> {
    let mut out = String::new();
    for a in artifacts {
        let rec = TimingRecord {
            model: &a.model,
            seed: a.seed,
            train_secs: a.timings.train_secs,
            eval_secs: a.timings.eval_secs,
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean and sample standard deviation over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            mean: mean(values),
            std: sample_variance(values).sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: DatasetKind,
    pub backbone: BackboneKind,
    pub variant: HeadVariant,
    pub runs: usize,
    pub diverged: usize,
    pub trainable_params: usize,
    pub cells: Vec<Option<Summary>>,
}

/// Rows are (dataset, backbone, variant) groups in that order; columns
/// are the task metrics followed by the consistency ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    /// `(key, header)` pairs; the key is what [`RunArtifact::metric`] takes.
    pub columns: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

pub fn report_table(artifacts: &[RunArtifact]) -> ReportTable {
    let mut columns: Vec<(String, String)> = Vec::new();
    for a in artifacts {
        if let Some(r) = &a.report {
            for m in &r.tasks {
                let key = m.task.clone();
                if !columns.iter().any(|(k, _)| *k == key) {
                    columns.push((key, format!("{}_{}", m.metric, m.task)));
                }
            }
        }
    }
    if artifacts.iter().any(|a| a.metric("consistency").is_some()) {
        columns.push(("consistency".into(), "consistency_ratio".into()));
    }
    let mut groups: BTreeMap<(DatasetKind, BackboneKind, HeadVariant), Vec<&RunArtifact>> =
        BTreeMap::new();
    for a in artifacts {
        groups
            .entry((a.dataset, a.backbone, a.variant))
            .or_default()
            .push(a);
    }
    let rows = groups
        .into_iter()
        .map(|((dataset, backbone, variant), runs)| {
            let cells = columns
                .iter()
                .map(|(key, _)| {
                    let values: Vec<f64> = runs.iter().filter_map(|a| a.metric(key)).collect();
                    Summary::of(&values)
                })
                .collect();
            ReportRow {
                dataset,
                backbone,
                variant,
                runs: runs.len(),
                diverged: runs
                    .iter()
                    .filter(|a| matches!(a.status, RunStatus::Diverged { .. }))
                    .count(),
                trainable_params: runs[0].trainable_params,
                cells,
            }
        })
        .collect();
    ReportTable { columns, rows }
}

impl ReportTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("dataset\tbackbone\tvariant\truns\tdiverged\tparams");
        for (_, header) in &self.columns {
            let _ = write!(out, "\t{header}_mean\t{header}_std");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                row.dataset,
                row.backbone,
                row.variant,
                row.runs,
                row.diverged,
                row.trainable_params
            );
            for cell in &row.cells {
                match cell {
                    Some(s) => {
                        let _ = write!(out, "\t{:.6}\t{:.6}", s.mean, s.std);
                    }
                    None => out.push_str("\t\t"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["model".to_string(), "runs".into(), "params".into()];
        header.extend(self.columns.iter().map(|(_, h)| h.clone()));
        let mut lines = vec![header];
        let mut last_group = None;
        let mut separators = Vec::new();
        for row in &self.rows {
            let group = (row.dataset, row.backbone);
            if last_group.is_some() && last_group != Some(group) {
                separators.push(lines.len());
            }
            last_group = Some(group);
            let mut line = vec![
                format!("{}/{}+{}", row.dataset, row.backbone, row.variant),
                if row.diverged > 0 {
                    format!("{} ({} diverged)", row.runs, row.diverged)
                } else {
                    row.runs.to_string()
                },
                row.trainable_params.to_string(),
            ];
            line.extend(row.cells.iter().map(|c| match c {
                Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
                None => "-".into(),
            }));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let rule: String = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = String::new();
        for (i, line) in lines.iter().enumerate() {
            if i == 1 || separators.contains(&i) {
                out.push_str(&rule);
                out.push('\n');
            }
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| {
                    let pad = w - cell.chars().count();
                    if c == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Writes `report.tsv` and `report.txt` into `dir` and returns their paths.
pub fn emit_report(artifacts: &[RunArtifact], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if artifacts.is_empty() {
        return Err(Error::Data("no runs to report".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = report_table(artifacts);
    let tsv = dir.join(REPORT_TSV);
    let txt = dir.join(REPORT_TXT);
    std::fs::write(&tsv, table.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
    std::fs::write(&txt, table.to_text()).map_err(|e| Error::io(&txt, e))?;
    Ok((tsv, txt))
}

/// Writes run records, timings and the report tables for `artifacts`.
pub fn write_outputs(artifacts: &[RunArtifact], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_runs(&dir.join(RUNS_FILE), artifacts)?;
    write_timings(&dir.join(TIMINGS_FILE), artifacts)?;
    emit_report(artifacts, dir)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub direction: Direction,
    pub base_model: String,
    pub treat_model: String,
    pub base: Summary,
    pub treat: Summary,
    pub delta: f64,
    pub p_value: f64,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// `less` for MSE columns, `greater` otherwise.
pub fn default_direction(artifacts: &[RunArtifact], metric: &str) -> Direction {
    let is_mse = artifacts
        .iter()
        .filter_map(|a| a.report.as_ref())
        .flat_map(|r| &r.tasks)
        .any(|m| m.task == metric && m.metric == "mse");
    if is_mse {
        Direction::Less
    } else {
        Direction::Greater
    }
}

/// Welch one-tailed comparison of `metric` between two groups of runs.
pub fn compare(
    base: &[RunArtifact],
    treat: &[RunArtifact],
    metric: &str,
    direction: Direction,
) -> Result<Comparison> {
    let dataset = |runs: &[RunArtifact]| -> Result<DatasetKind> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Data("comparison group is empty".into()))?;
        if runs.iter().any(|r| r.dataset != first.dataset) {
            return Err(Error::Data("comparison group mixes datasets".into()));
        }
        Ok(first.dataset)
    };
    let (db, dt) = (dataset(base)?, dataset(treat)?);
    if db != dt {
        return Err(Error::Data(format!(
            "cannot compare {db} runs with {dt} runs"
        )));
    }
    let values = |runs: &[RunArtifact]| -> Result<Vec<f64>> {
        runs.iter()
            .filter(|r| r.report.is_some())
            .map(|r| {
                r.metric(metric).ok_or_else(|| {
                    Error::Data(format!(
                        "run {} seed {} has no metric `{metric}`",
                        r.model, r.seed
                    ))
                })
            })
            .collect()
    };
    let (vb, vt) = (values(base)?, values(treat)?);
    let summary = |v: &[f64]| {
        Summary::of(v).ok_or_else(|| Error::Data("no completed runs to compare".into()))
    };
    let (sb, st) = (summary(&vb)?, summary(&vt)?);
    let p_value = one_tailed_t_test(&vb, &vt, direction)?;
    Ok(Comparison {
        metric: metric.into(),
        direction,
        base_model: base[0].model.clone(),
        treat_model: treat[0].model.clone(),
        base: sb,
        treat: st,
        delta: st.mean - sb.mean,
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}
