//! Aggregate CSV tables from per-cell records.
//!
//! * `<name>.csv`: one row per sweep group (all axes but the repetition).
//! * `<name>_reps.csv`: one row per repetition and metric.
//! * `<name>_params.csv`: per-parameter mean absolute error and spread.
//! * `<name>_observability.csv`, `<name>_singular_values.csv`: when the
//!   observability report is enabled.
//! * `<name>_scatter/<group>_<arm>.csv`: signed test errors, when enabled.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runner::CellRecord;
use super::{ExperimentConfig, GroupKey};
use crate::error::{Error, Result};
use crate::metrics::mean_std;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub repetitions: PathBuf,
    pub parameters: PathBuf,
    #[serde(default)]
    pub observability: Vec<PathBuf>,
    #[serde(default)]
    pub scatter: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub free_parameters: usize,
    pub repetitions: usize,
    pub failed: usize,
    /// Mean over repetitions of the per-repetition mean test error.
    pub test_mean: f64,
    pub test_std: f64,
    /// `test_std / sqrt(successful repetitions)`.
    pub test_sem: f64,
    pub test_min: f64,
    pub test_max: f64,
    pub final_cost_mean: f64,
    pub iterations_mean: f64,
    pub rank_deficient: usize,
    pub o1_mean: f64,
    pub o4_mean: f64,
}

fn groups(records: &[CellRecord]) -> Vec<(GroupKey, Vec<&CellRecord>)> {
    let mut out: Vec<(GroupKey, Vec<&CellRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(k, _)| *k == r.key) {
            Some((_, v)) => v.push(r),
            None => out.push((r.key.clone(), vec![r])),
        }
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    mean_std(&v).0
}

/// Per-group statistics, groups in order of first appearance.
pub fn aggregate(records: &[CellRecord]) -> Vec<GroupSummary> {
    groups(records)
        .into_iter()
        .map(|(key, recs)| {
            let ok: Vec<_> = recs.iter().filter_map(|r| r.result.as_ref()).collect();
            let tests: Vec<f64> = ok.iter().map(|r| r.test.mean).collect();
            let (test_mean, test_std) = mean_std(&tests);
            let obs: Vec<_> = ok.iter().filter_map(|r| r.observability.as_ref()).collect();
            GroupSummary {
                key,
                free_parameters: ok.first().map_or(0, |r| r.solve.free_parameters),
                repetitions: recs.len(),
                failed: recs.len() - ok.len(),
                test_mean,
                test_std,
                test_sem: if tests.is_empty() {
                    f64::NAN
                } else {
                    test_std / (tests.len() as f64).sqrt()
                },
                test_min: tests.iter().copied().fold(f64::NAN, f64::min),
                test_max: tests.iter().copied().fold(f64::NAN, f64::max),
                final_cost_mean: mean(ok.iter().map(|r| r.solve.report.final_cost)),
                iterations_mean: mean(ok.iter().map(|r| r.solve.report.iterations as f64)),
                rank_deficient: ok.iter().filter(|r| r.solve.rank_deficient()).count(),
                o1_mean: mean(obs.iter().map(|o| o.o1)),
                o4_mean: mean(obs.iter().map(|o| o.o4)),
            }
        })
        .collect()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn key_fields(k: &GroupKey) -> Vec<String> {
    vec![
        k.combo.clone(),
        k.mask.clone(),
        k.perturbation.to_string(),
        k.train_size.to_string(),
        k.noise.clone(),
    ]
}

const KEY_HEADER: [&str; 5] = ["combo", "mask", "perturbation", "train_size", "noise"];

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn header(extra: &[&str]) -> Vec<String> {
    KEY_HEADER.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn write_summary(path: &Path, evaluation: &str, summaries: &[GroupSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header(&[
        "evaluation",
        "free_parameters",
        "repetitions",
        "failed",
        "test_mean",
        "test_std",
        "test_sem",
        "test_min",
        "test_max",
        "final_cost_mean",
        "iterations_mean",
        "rank_deficient",
        "o1_mean",
        "o4_mean",
    ]))?;
    for s in summaries {
        let mut row = key_fields(&s.key);
        row.extend([
            evaluation.to_string(),
            s.free_parameters.to_string(),
            s.repetitions.to_string(),
            s.failed.to_string(),
            num(s.test_mean),
            num(s.test_std),
            num(s.test_sem),
            num(s.test_min),
            num(s.test_max),
            num(s.final_cost_mean),
            num(s.iterations_mean),
            s.rank_deficient.to_string(),
            num(s.o1_mean),
            num(s.o4_mean),
        ]);
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_reps(path: &Path, records: &[CellRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header(&["repetition", "metric", "value"]))?;
    for r in records {
        let Some(res) = &r.result else {
            continue;
        };
        let mut metrics = vec![
            ("test_mean", res.test.mean),
            ("test_std", res.test.std),
            ("test_max", res.test.max),
            ("initial_cost", res.solve.report.initial_cost),
            ("final_cost", res.solve.report.final_cost),
            ("iterations", res.solve.report.iterations as f64),
            ("rank", res.solve.rank as f64),
            ("behind_camera", res.solve.report.behind_camera as f64),
        ];
        if let Some(o) = &res.observability {
            metrics.extend([("o1", o.o1), ("o4", o.o4)]);
        }
        for (m, v) in metrics {
            let mut row = key_fields(&r.key);
            row.extend([r.repetition.to_string(), m.to_string(), num(v)]);
            w.write_record(row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_params(path: &Path, records: &[CellRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header(&["parameter", "truth", "mean_abs_error", "std", "repetitions"]))?;
    for (key, recs) in groups(records) {
        let ok: Vec<_> = recs.iter().filter_map(|r| r.result.as_ref()).collect();
        let Some(first) = ok.first() else {
            continue;
        };
        if ok.iter().any(|r| r.estimate.layout != first.estimate.layout) {
            return Err(Error::MaskMismatch);
        }
        for (i, p) in first.parameters.iter().enumerate() {
            let est: Vec<f64> = ok.iter().map(|r| r.estimate.values[i]).collect();
            let mae = est.iter().map(|v| (v - p.truth).abs()).sum::<f64>() / est.len() as f64;
            let mut row = key_fields(&key);
            row.extend([
                p.key.to_string(),
                num(p.truth),
                num(mae),
                num(mean_std(&est).1),
                est.len().to_string(),
            ]);
            w.write_record(row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_observability(dir: &Path, name: &str, records: &[CellRecord]) -> Result<Vec<PathBuf>> {
    let indices = dir.join(format!("{name}_observability.csv"));
    let spectrum = dir.join(format!("{name}_singular_values.csv"));
    let mut wi = writer(&indices)?;
    let mut ws = writer(&spectrum)?;
    wi.write_record(header(&[
        "repetition",
        "free_parameters",
        "residual_dim",
        "rank",
        "o1",
        "o4",
    ]))?;
    ws.write_record(header(&["repetition", "index", "sigma"]))?;
    for r in records {
        let Some(o) = r.result.as_ref().and_then(|res| res.observability.as_ref()) else {
            continue;
        };
        let mut row = key_fields(&r.key);
        row.extend([
            r.repetition.to_string(),
            o.free_parameters.to_string(),
            o.residual_dim.to_string(),
            o.rank.to_string(),
            num(o.o1),
            num(o.o4),
        ]);
        wi.write_record(row)?;
        for (i, s) in o.singular_values.iter().enumerate() {
            let mut row = key_fields(&r.key);
            row.extend([r.repetition.to_string(), (i + 1).to_string(), num(*s)]);
            ws.write_record(row)?;
        }
    }
    wi.flush().map_err(|e| Error::io(&indices, e))?;
    ws.flush().map_err(|e| Error::io(&spectrum, e))?;
    Ok(vec![indices, spectrum])
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                c
            } else {
                '-'
            }
        })
        .collect()
}

fn write_scatter(dir: &Path, name: &str, records: &[CellRecord]) -> Result<Vec<PathBuf>> {
    let sdir = dir.join(format!("{name}_scatter"));
    fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
    let mut files = Vec::new();
    for (key, recs) in groups(records) {
        let arms: Vec<_> = recs.iter().flat_map(|r| r.scatter.iter().map(|s| s.arm)).collect();
        let mut seen = Vec::new();
        for arm in arms {
            if seen.contains(&arm) {
                continue;
            }
            seen.push(arm);
            let stem = file_safe(&format!(
                "{}_{}_p{}_n{}_{}_{}",
                key.combo, key.mask, key.perturbation, key.train_size, key.noise, arm
            ));
            let path = sdir.join(format!("{stem}.csv"));
            let mut w = writer(&path)?;
            for r in &recs {
                for s in r.scatter.iter().filter(|s| s.arm == arm) {
                    for row in &s.rows {
                        w.serialize(row)?;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Writes every table for `records` (in canonical cell order) into `out_dir`.
pub fn write_reports(config: &ExperimentConfig, records: &[CellRecord], out_dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let name = &config.name;
    let files = ReportFiles {
        summary: out_dir.join(format!("{name}.csv")),
        repetitions: out_dir.join(format!("{name}_reps.csv")),
        parameters: out_dir.join(format!("{name}_params.csv")),
        observability: if config.observability.is_some() {
            write_observability(out_dir, name, records)?
        } else {
            Vec::new()
        },
        scatter: if config.scatter {
            write_scatter(out_dir, name, records)?
        } else {
            Vec::new()
        },
    };
    write_summary(&files.summary, &config.evaluation.to_string(), &aggregate(records))?;
    write_reps(&files.repetitions, records)?;
    write_params(&files.parameters, records)?;
    Ok(files)
}
