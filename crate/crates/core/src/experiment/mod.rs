//! Calibration runs and parameter sweeps.
//!
//! A sweep is the Cartesian product of combos, masks, perturbation factors,
//! training sizes and noise levels, repeated `repetitions` times. Every
//! repetition draws its training poses, initial perturbation and measurement
//! noise from a seed that is a stable hash of the master seed and the cell
//! coordinates, so a cell gives the same result alone or inside any sweep.
//! The combo and mask are left out of that hash: all combos of one
//! repetition see the same poses, the same noise and (for equal masks) the
//! same initial model.

mod report;
mod runner;

use std::fmt;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{draw_test, draw_train, noisy_samples, Dataset, GenerationOptions, NoiseSpec};
use crate::error::{Error, Result};
use crate::kinematics::{Arm, RobotModel};
use crate::metrics::{parameter_errors, residual_scatter, test_error, CalibrationResult, Evaluation, ScatterRow};
use crate::observability::analyze;
use crate::optimizer::{solve_problem, CalibrationProblem, SolverSettings};
use crate::params::{default_mask, pack, perturb, ParameterMask, Selection};
use crate::residuals::{frozen_mu, ChainCombo, MuPolicy};

pub use report::{aggregate, write_reports, GroupSummary, ReportFiles};
pub use runner::{load_cells, run_experiment, CellRecord, CellStatus, ExperimentOutcome, RunOptions};

/// When the touch weight `mu` is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// From the current estimate at every residual evaluation.
    #[default]
    Current,
    /// Once per pose at the perturbed initial model.
    Frozen,
}

/// Model at which the observability Jacobian is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianPoint {
    Initial,
    Truth,
}

/// One calibration: what to estimate, from what, and what to record.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub combo: ChainCombo,
    pub selection: Selection,
    pub perturbation: f64,
    pub train_size: usize,
    pub noise: NoiseSpec,
    pub solver: SolverSettings,
    pub mu: MuMode,
    pub evaluation: Evaluation,
    pub observability: Option<JacobianPoint>,
    /// Also solve; when false only the observability report is produced.
    pub solve: bool,
}

impl RunSpec {
    pub fn new(
        combo: ChainCombo,
        selection: Selection,
        perturbation: f64,
        train_size: usize,
        noise: NoiseSpec,
    ) -> Self {
        Self {
            combo,
            selection,
            perturbation,
            train_size,
            noise,
            solver: SolverSettings::default(),
            mu: MuMode::Current,
            evaluation: Evaluation::Ee3d,
            observability: None,
            solve: true,
        }
    }
}

/// Result of [`run_single`] plus the signed end-effector errors per arm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub result: CalibrationResult,
    pub scatter: Vec<(Arm, Vec<ScatterRow>)>,
}

/// Arms whose end-effector a mask can move; both when it moves none.
pub fn evaluated_arms(mask: &ParameterMask) -> Vec<Arm> {
    let touched = mask.touched_chains();
    let arms: Vec<Arm> = Arm::BOTH.into_iter().filter(|a| touched.contains(&a.chain())).collect();
    if arms.is_empty() {
        Arm::BOTH.to_vec()
    } else {
        arms
    }
}

/// Stable 64-bit seed from a master seed and labelled coordinates.
pub fn derive_seed(master: u64, parts: &[(&str, String)]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for (k, v) in parts {
        h.update(k.as_bytes());
        h.update([0x1f]);
        h.update(v.as_bytes());
        h.update([0x1e]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of one repetition of one sweep cell; independent of combo and mask.
pub fn repetition_seed(master: u64, perturbation: f64, train_size: usize, noise: NoiseSpec, repetition: usize) -> u64 {
    derive_seed(
        master,
        &[
            ("perturbation", format!("{:016x}", perturbation.to_bits())),
            ("train_size", train_size.to_string()),
            ("sigma_touch", format!("{:016x}", noise.sigma_touch.to_bits())),
            ("sigma_camera", format!("{:016x}", noise.sigma_camera.to_bits())),
            ("repetition", repetition.to_string()),
        ],
    )
}

/// Seed of the held-out test set of a sweep.
pub fn test_set_seed(master: u64) -> u64 {
    derive_seed(master, &[("test_set", String::new())])
}

/// Test indices drawn from `master`, fixed for a whole sweep.
pub fn test_indices(dataset_len: usize, test_size: usize, master: u64) -> Result<Vec<usize>> {
    draw_test(
        dataset_len,
        test_size,
        &mut ChaCha8Rng::seed_from_u64(test_set_seed(master)),
    )
}

/// Draws training poses, perturbs the truth model, adds noise to the
/// training observations, solves and evaluates on the clean test poses.
pub fn run_single(
    truth: &RobotModel,
    dataset: &Dataset,
    test: &[usize],
    spec: &RunSpec,
    seed: u64,
) -> Result<RunOutput> {
    if !dataset.noise.is_zero() {
        return Err(Error::AlreadyNoisy);
    }
    spec.noise.validate()?;
    spec.solver.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_idx = draw_train(dataset.len(), spec.train_size, test, &mut rng)?;
    let mask = default_mask(truth, &spec.selection)?;
    if mask.free_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let initial_model = perturb(truth, &mask, spec.perturbation, &mut rng);
    let train = noisy_samples(&dataset.subset(&train_idx), spec.noise, &mut rng)?;
    let test_samples = dataset.subset(test);

    let observability = match spec.observability {
        None => None,
        Some(JacobianPoint::Initial) => Some(analyze(&initial_model, &mask, &train, &spec.combo)?),
        Some(JacobianPoint::Truth) => Some(analyze(truth, &mask, &train, &spec.combo)?),
    };

    let mu = match spec.mu {
        MuMode::Current => MuPolicy::Current,
        MuMode::Frozen => frozen_mu(&initial_model, &train)?,
    };
    let problem = CalibrationProblem::new(&initial_model, &mask, &train, &spec.combo).with_mu(mu);
    let solve = if spec.solve {
        solve_problem(&problem, &spec.solver)?
    } else {
        solve_problem(
            &problem,
            &SolverSettings {
                max_iterations: 0,
                ..spec.solver.clone()
            },
        )?
    };
    let calibrated = solve.calibrated().clone();
    let arms = evaluated_arms(&mask);
    let test = test_error(&calibrated, truth, &test_samples, spec.evaluation, &arms)?;
    let estimate = pack(&calibrated, &mask);
    let parameters = parameter_errors(std::slice::from_ref(&estimate), truth)?;
    let scatter = arms
        .iter()
        .map(|&a| residual_scatter(&calibrated, truth, &test_samples, a, 0).map(|rows| (a, rows)))
        .collect::<Result<_>>()?;
    Ok(RunOutput {
        result: CalibrationResult {
            solve,
            initial: pack(&initial_model, &mask),
            estimate,
            test,
            parameters,
            observability,
        },
        scatter,
    })
}

/// Where the poses come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A clean dataset file (relative paths resolve against the config file).
    Path(PathBuf),
    /// Generated from the truth model with these options.
    Generate(GenerationOptions),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output file stem.
    pub name: String,
    /// Truth model file; the built-in model when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub combos: Vec<ChainCombo>,
    /// Mask selections such as `LA:all` or `all:offset`.
    pub masks: Vec<String>,
    pub perturbations: Vec<f64>,
    pub training_sizes: Vec<usize>,
    /// Noise labels `<camera px>E<touch mm>T`.
    pub noise: Vec<String>,
    pub repetitions: usize,
    pub test_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub mu: MuMode,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub observability: Option<JacobianPoint>,
    #[serde(default = "default_true")]
    pub solve: bool,
    /// Write per-arm signed test errors for every group.
    #[serde(default)]
    pub scatter: bool,
}

fn default_true() -> bool {
    true
}

/// Sweep coordinates of one cell, without the repetition.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub combo: String,
    pub mask: String,
    pub perturbation: OrderedF64,
    pub train_size: usize,
    pub noise: String,
}

/// `f64` compared by total order, for use in keys.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderedF64(pub f64);

impl PartialEq for OrderedF64 {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0).is_eq()
    }
}
impl Eq for OrderedF64 {}
impl PartialOrd for OrderedF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl std::hash::Hash for OrderedF64 {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}
impl fmt::Display for OrderedF64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} p={} n={} {}",
            self.combo, self.mask, self.perturbation, self.train_size, self.noise
        )
    }
}

/// One validated sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub spec: RunSpec,
    pub key: GroupKey,
    pub repetition: usize,
    pub seed: u64,
}

impl Cell {
    /// File-name-safe identifier.
    pub fn id(&self) -> String {
        let raw = format!(
            "{}__{}__p{}__n{}__{}__r{}",
            self.key.combo, self.key.mask, self.key.perturbation, self.key.train_size, self.key.noise, self.repetition
        );
        raw.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                    c
                } else {
                    '-'
                }
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn parsed_masks(&self) -> Result<Vec<Selection>> {
        self.masks
            .iter()
            .enumerate()
            .map(|(i, m)| m.parse().map_err(|e| Error::Config(format!("masks[{i}]: {e}"))))
            .collect()
    }

    pub fn parsed_noise(&self) -> Result<Vec<NoiseSpec>> {
        self.noise
            .iter()
            .enumerate()
            .map(|(i, n)| n.parse().map_err(|e| Error::Config(format!("noise[{i}]: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", "must be a non-empty file stem");
        }
        for (field, empty) in [
            ("combos", self.combos.is_empty()),
            ("masks", self.masks.is_empty()),
            ("perturbations", self.perturbations.is_empty()),
            ("training_sizes", self.training_sizes.is_empty()),
            ("noise", self.noise.is_empty()),
        ] {
            if empty {
                return bad(field, "sweep axis must not be empty");
            }
        }
        if self.repetitions == 0 {
            return bad("repetitions", "must be at least 1");
        }
        if let Some(i) = self.perturbations.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return bad(&format!("perturbations[{i}]"), "must be finite and >= 0");
        }
        if let Some(i) = self.training_sizes.iter().position(|n| *n == 0) {
            return bad(&format!("training_sizes[{i}]"), "must be at least 1");
        }
        if self.test_size == 0 {
            return bad("test_size", "must be at least 1");
        }
        self.parsed_masks()?;
        self.parsed_noise()?;
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        if let DatasetSource::Generate(g) = &self.dataset {
            g.validate()
                .map_err(|e| Error::Config(format!("dataset.generate: {e}")))?;
            let need = self.test_size + self.training_sizes.iter().max().copied().unwrap_or(0);
            if g.count < need {
                return bad(
                    "dataset.generate.count",
                    &format!("{} poses cannot hold {need} test + training poses", g.count),
                );
            }
        }
        Ok(())
    }

    /// Every cell in canonical order: combo, mask, perturbation, training
    /// size, noise, repetition.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let masks = self.parsed_masks()?;
        let noise = self.parsed_noise()?;
        let mut cells = Vec::new();
        for combo in &self.combos {
            for (mask_text, selection) in self.masks.iter().zip(&masks) {
                for &p in &self.perturbations {
                    for &n in &self.training_sizes {
                        for (label, &spec_noise) in self.noise.iter().zip(&noise) {
                            let key = GroupKey {
                                combo: combo.name(),
                                mask: mask_text.clone(),
                                perturbation: OrderedF64(p),
                                train_size: n,
                                noise: label.clone(),
                            };
                            let spec = RunSpec {
                                solver: self.solver.clone(),
                                mu: self.mu,
                                evaluation: self.evaluation,
                                observability: self.observability,
                                solve: self.solve,
                                ..RunSpec::new(combo.clone(), selection.clone(), p, n, spec_noise)
                            };
                            for rep in 0..self.repetitions {
                                cells.push(Cell {
                                    spec: spec.clone(),
                                    key: key.clone(),
                                    repetition: rep,
                                    seed: repetition_seed(self.seed, p, n, spec_noise, rep),
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Hash of everything that affects cell results.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Clean poses for a sweep: loaded, or generated from the truth model.
pub fn resolve_dataset(config: &ExperimentConfig, truth: &RobotModel, base: &std::path::Path) -> Result<Dataset> {
    match &config.dataset {
        DatasetSource::Path(p) => {
            let d = crate::dataset::load(base.join(p))?;
            if !d.noise.is_zero() {
                return Err(Error::AlreadyNoisy);
            }
            Ok(d)
        }
        DatasetSource::Generate(g) => crate::dataset::generate(truth, g),
    }
}

/// Truth model for a sweep.
pub fn resolve_model(config: &ExperimentConfig, base: &std::path::Path) -> Result<RobotModel> {
    match &config.model {
        Some(p) => crate::kinematics::load_model(base.join(p)),
        None => Ok(crate::kinematics::default_icub_model()),
    }
}

/// Named combinations accepted wherever a combo is parsed.
pub const COMBO_NAMES: [&str; 9] = [
    "LARA",
    "LALEye",
    "LAREye",
    "RALEye",
    "RAREye",
    "LALREye",
    "RALREye",
    "LARALEye",
    "LARALREye",
];
