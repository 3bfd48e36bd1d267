use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{write_reports, ReportFiles};
use super::{resolve_dataset, resolve_model, run_single, test_indices, Cell, ExperimentConfig, GroupKey};
use crate::dataset::{to_jsonl, Dataset};
use crate::error::{Error, Result};
use crate::kinematics::{model_hash, Arm, RobotModel};
use crate::metrics::{CalibrationResult, ScatterRow};

pub const CELL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmScatter {
    pub arm: Arm,
    pub rows: Vec<ScatterRow>,
}

/// Persisted outcome of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub version: u32,
    pub fingerprint: String,
    pub key: GroupKey,
    pub repetition: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<CalibrationResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scatter: Vec<ArmScatter>,
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 means one per CPU.
    pub jobs: usize,
    /// Directory that relative model and dataset paths resolve against.
    pub base_dir: PathBuf,
    /// Reuse successful cell files from an earlier run of the same setup.
    pub resume: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            jobs: 0,
            base_dir: PathBuf::from("."),
            resume: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub cells: usize,
    pub computed: usize,
    pub reused: usize,
    /// `(cell id, error)` for every failed cell.
    pub failed: Vec<(String, String)>,
    pub files: ReportFiles,
}

/// Hash of every input that changes cell results, except the sweep axes
/// themselves (they are part of each cell's key).
fn fingerprint(config: &ExperimentConfig, truth: &RobotModel, dataset: &Dataset) -> Result<String> {
    let setup = serde_json::json!({
        "model": model_hash(truth),
        "test_size": config.test_size,
        "seed": config.seed,
        "solver": config.solver,
        "mu": config.mu,
        "evaluation": config.evaluation,
        "observability": config.observability,
        "solve": config.solve,
    });
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&setup)?);
    h.update(to_jsonl(dataset)?.as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn cell_path(out_dir: &Path, cell: &Cell) -> PathBuf {
    out_dir.join("cells").join(format!("{}.json", cell.id()))
}

fn read_cell(path: &Path) -> Option<CellRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Persisted records in canonical cell order; `None` where a cell file is
/// missing or unreadable.
pub fn load_cells(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<(Cell, Option<CellRecord>)>> {
    Ok(config
        .cells()?
        .into_iter()
        .map(|c| {
            let r = read_cell(&cell_path(out_dir, &c));
            (c, r)
        })
        .collect())
}

fn compute(cell: &Cell, truth: &RobotModel, dataset: &Dataset, test: &[usize], fingerprint: &str) -> CellRecord {
    let base = CellRecord {
        version: CELL_FORMAT_VERSION,
        fingerprint: fingerprint.to_string(),
        key: cell.key.clone(),
        repetition: cell.repetition,
        seed: cell.seed,
        status: CellStatus::Ok,
        result: None,
        scatter: Vec::new(),
    };
    match run_single(truth, dataset, test, &cell.spec, cell.seed) {
        Ok(out) => CellRecord {
            result: Some(out.result),
            scatter: out
                .scatter
                .into_iter()
                .map(|(arm, rows)| ArmScatter {
                    arm,
                    rows: rows
                        .into_iter()
                        .map(|r| ScatterRow {
                            repetition: cell.repetition,
                            ..r
                        })
                        .collect(),
                })
                .collect(),
            ..base
        },
        Err(e) => CellRecord {
            status: CellStatus::Failed { error: e.to_string() },
            ..base
        },
    }
}

/// Runs every missing cell of `config`, persists one JSON file per cell
/// under `out_dir/cells`, then writes the aggregate tables.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentOutcome> {
    config.validate()?;
    let truth = resolve_model(config, &options.base_dir)?;
    let dataset = resolve_dataset(config, &truth, &options.base_dir)?;
    let max_train = config.training_sizes.iter().copied().max().unwrap_or(0);
    if dataset.len() < config.test_size + max_train {
        return Err(Error::InsufficientSamples {
            requested: config.test_size + max_train,
            available: dataset.len(),
        });
    }
    let test = test_indices(dataset.len(), config.test_size, config.seed)?;
    let fingerprint = fingerprint(config, &truth, &dataset)?;
    let cells_dir = options.out_dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let cfg_path = options.out_dir.join("config.json");
    fs::write(&cfg_path, config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;

    let cells = config.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(CellRecord, bool)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| -> Result<(CellRecord, bool)> {
                let path = cell_path(&options.out_dir, cell);
                if options.resume {
                    if let Some(r) = read_cell(&path) {
                        if r.is_ok()
                            && r.fingerprint == fingerprint
                            && r.key == cell.key
                            && r.repetition == cell.repetition
                        {
                            return Ok((r, true));
                        }
                    }
                }
                let record = compute(cell, &truth, &dataset, &test, &fingerprint);
                match &record.status {
                    CellStatus::Ok => log::info!("cell {} done", cell.id()),
                    CellStatus::Failed { error } => log::warn!("cell {} failed: {error}", cell.id()),
                }
                write_atomic(&path, serde_json::to_string(&record)?.as_bytes())?;
                Ok((record, false))
            })
            .collect::<Result<_>>()
    })?;
    let reused = outcomes.iter().filter(|(_, r)| *r).count();
    let records: Vec<CellRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let failed = cells
        .iter()
        .zip(&records)
        .filter_map(|(c, r)| match &r.status {
            CellStatus::Failed { error } => Some((c.id(), error.clone())),
            CellStatus::Ok => None,
        })
        .collect();
    let files = write_reports(config, &records, &options.out_dir)?;
    Ok(ExperimentOutcome {
        cells: cells.len(),
        computed: cells.len() - reused,
        reused,
        failed,
        files,
    })
}
