use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chaincal::dataset::{self, GenerationOptions, WorkspaceBox};
use chaincal::experiment::{
    self, load_cells, repetition_seed, run_experiment, run_single, test_indices, write_reports, ExperimentConfig,
    MuMode, RunOptions, RunSpec,
};
use chaincal::kinematics::{load_model, to_model_json};
use chaincal::metrics::Evaluation;
use chaincal::observability::analyze;
use chaincal::params::{default_mask, perturb};
use chaincal::{ChainCombo, Dataset, NoiseSpec, RobotModel, Selection, SolverSettings};

#[derive(Parser)]
#[command(
    name = "chaincal",
    version,
    about = "Kinematic self-calibration from self-touch and self-observation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a self-touch / self-observation dataset
    Generate(GenerateArgs),
    /// Perturb the truth model, calibrate it once and report the test error
    Calibrate(CalibrateArgs),
    /// Singular values and observability indices of the identification Jacobian
    Observability(ObservabilityArgs),
    /// Run a parameter sweep described by a JSON config
    Experiment(ExperimentArgs),
    /// Rebuild the aggregate tables of an experiment directory from its cell files
    Report(ReportArgs),
    /// Print the built-in (or given) model as JSON
    DumpModel(DumpModelArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1300)]
    count: usize,
    /// Contact target box `xmin,xmax,ymin,ymax,zmin,zmax` in mm
    #[arg(long = "box", default_value_t = WorkspaceBox::default())]
    workspace: WorkspaceBox,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Touch noise standard deviation per axis (mm)
    #[arg(long, default_value_t = 0.0)]
    sigma_touch: f64,
    /// Camera noise standard deviation per pixel coordinate (px)
    #[arg(long, default_value_t = 0.0)]
    sigma_camera: f64,
    /// Truth model JSON; the built-in model when absent
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Source {
    /// Clean dataset file; generated from the truth model when absent
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Truth model JSON; the built-in model when absent
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MuArg {
    Current,
    Frozen,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Chain combination, e.g. LARA, LALEye, LALREye, LARALREye
    #[arg(long, default_value = "LARALREye")]
    combo: ChainCombo,
    /// Free parameters, e.g. `LA:all`, `all:offset`, `LA,LEye:a,d`
    #[arg(long, default_value = "LA:all")]
    mask: Selection,
    /// Training poses
    #[arg(long, default_value_t = 50)]
    poses: usize,
    /// Perturbation factor of the initial estimate
    #[arg(long, default_value_t = 5.0)]
    pert: f64,
    #[arg(long, default_value_t = 5.0)]
    sigma_touch: f64,
    #[arg(long, default_value_t = 5.0)]
    sigma_camera: f64,
    #[arg(long, default_value_t = 300)]
    test_size: usize,
    #[arg(long, value_enum, default_value_t = MuArg::Current)]
    mu: MuArg,
    #[arg(long, default_value = "ee3d")]
    evaluation: Evaluation,
    #[arg(long, default_value_t = SolverSettings::default().max_iterations)]
    max_iterations: usize,
    /// Also write the full result as JSON
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
}

#[derive(Clone, Copy, ValueEnum)]
enum AtArg {
    Truth,
    Initial,
}

#[derive(Args)]
struct ObservabilityArgs {
    #[arg(long, default_value = "LARALREye")]
    combo: ChainCombo,
    #[arg(long, default_value = "LA:all")]
    mask: Selection,
    #[arg(long, default_value_t = 50)]
    poses: usize,
    /// Model at which the Jacobian is evaluated
    #[arg(long, value_enum, default_value_t = AtArg::Truth)]
    at: AtArg,
    /// Perturbation factor used with `--at initial`
    #[arg(long, default_value_t = 5.0)]
    pert: f64,
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; `out/<config name>` when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per CPU)
    #[arg(long, env = "CHAINCAL_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Recompute every cell even when a valid cell file exists
    #[arg(long)]
    no_resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directory (holds config.json and cells/)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpModelArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Marks failures that should exit with status 1 rather than 2.
#[derive(Debug)]
struct CellFailures(usize);

impl std::fmt::Display for CellFailures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} cell(s) failed or missing", self.0)
    }
}

impl std::error::Error for CellFailures {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use chaincal::Error as E;
    if err.downcast_ref::<CellFailures>().is_some() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<chaincal::Error>()) {
        Some(
            E::Config(_)
            | E::Parse { .. }
            | E::UnsupportedVersion { .. }
            | E::UnknownChain(_)
            | E::UnknownField(_)
            | E::UnknownCombo(_)
            | E::EmptyMask
            | E::AlreadyNoisy
            | E::InsufficientSamples { .. }
            | E::InvalidModel(_)
            | E::Json(_)
            | E::Io { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Observability(a) => observability(a),
        Command::Experiment(a) => run(a),
        Command::Report(a) => report(a),
        Command::DumpModel(a) => dump_model(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn truth_model(path: Option<&Path>) -> anyhow::Result<RobotModel> {
    match path {
        Some(p) => load_model(p).with_context(|| format!("loading model {}", p.display())),
        None => Ok(chaincal::default_icub_model()),
    }
}

fn clean_dataset(source: &Source, truth: &RobotModel, count: usize) -> anyhow::Result<Dataset> {
    let d = match &source.dataset {
        Some(p) => dataset::load(p).with_context(|| format!("loading dataset {}", p.display()))?,
        None => dataset::generate(truth, &GenerationOptions::new(count, source.seed))?,
    };
    if !d.noise.is_zero() {
        return Err(chaincal::Error::AlreadyNoisy.into());
    }
    Ok(d)
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let truth = truth_model(a.model.as_deref())?;
    let noise = NoiseSpec::new(a.sigma_touch, a.sigma_camera);
    noise.validate()?;
    let opts = GenerationOptions {
        count: a.count,
        workspace: a.workspace,
        seed: a.seed,
        ..Default::default()
    };
    let mut d = dataset::generate(&truth, &opts)?;
    if !noise.is_zero() {
        let seed = experiment::derive_seed(a.seed, &[("noise", String::new())]);
        d = dataset::apply_noise(&d, noise, &mut ChaCha8Rng::seed_from_u64(seed))?;
    }
    dataset::save(&d, &a.out)?;
    let v = d.visibility();
    println!(
        "wrote {} poses to {} (left arm seen by both eyes {}, right arm {})",
        d.len(),
        a.out.display(),
        v.left_both,
        v.right_both
    );
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> anyhow::Result<()> {
    let truth = truth_model(a.source.model.as_deref())?;
    let d = clean_dataset(&a.source, &truth, a.poses + a.test_size)?;
    let noise = NoiseSpec::new(a.sigma_touch, a.sigma_camera);
    let spec = RunSpec {
        solver: SolverSettings {
            max_iterations: a.max_iterations,
            ..Default::default()
        },
        mu: match a.mu {
            MuArg::Current => MuMode::Current,
            MuArg::Frozen => MuMode::Frozen,
        },
        evaluation: a.evaluation,
        ..RunSpec::new(a.combo.clone(), a.mask.clone(), a.pert, a.poses, noise)
    };
    let test = test_indices(d.len(), a.test_size, a.source.seed)?;
    let seed = repetition_seed(a.source.seed, a.pert, a.poses, noise, 0);
    let out = run_single(&truth, &d, &test, &spec, seed)?;
    let r = &out.result;
    let s = &r.solve;
    println!(
        "combo {}  mask {}  free parameters {}",
        a.combo.name(),
        a.mask,
        s.free_parameters
    );
    println!(
        "training poses {}  test poses {}  noise {}E{}T  perturbation {}",
        a.poses, a.test_size, a.sigma_camera, a.sigma_touch, a.pert
    );
    println!(
        "iterations {}  termination {:?}  cost {:.6e} -> {:.6e}",
        s.report.iterations, s.report.termination, s.report.initial_cost, s.report.final_cost
    );
    for w in &s.warnings {
        println!("warning: {w}");
    }
    let unit = match a.evaluation {
        Evaluation::Ee3d => "mm",
        Evaluation::Reprojection => "px",
    };
    println!(
        "test {} error: mean {:.4} {unit}  std {:.4}  max {:.4}",
        a.evaluation, r.test.mean, r.test.std, r.test.max
    );
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(r)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn observability(a: ObservabilityArgs) -> anyhow::Result<()> {
    let truth = truth_model(a.source.model.as_deref())?;
    let d = clean_dataset(&a.source, &truth, a.poses)?;
    if d.len() < a.poses {
        return Err(chaincal::Error::InsufficientSamples {
            requested: a.poses,
            available: d.len(),
        }
        .into());
    }
    let samples = &d.samples[..a.poses];
    let mask = default_mask(&truth, &a.mask)?;
    let model = match a.at {
        AtArg::Truth => truth.clone(),
        AtArg::Initial => {
            let seed = experiment::derive_seed(a.source.seed, &[("observability", String::new())]);
            perturb(&truth, &mask, a.pert, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    };
    let report = analyze(&model, &mask, samples, &a.combo)?;
    println!("combo {}  mask {}", a.combo.name(), a.mask);
    println!("{report}");
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn read_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| chaincal::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ExperimentConfig::from_json(&text).with_context(|| format!("config {}", path.display()))
}

fn run(a: ExperimentArgs) -> anyhow::Result<()> {
    let config = read_config(&a.config)?;
    let out_dir = a.out.unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    let base_dir = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let options = RunOptions {
        out_dir: out_dir.clone(),
        jobs: a.jobs,
        base_dir,
        resume: !a.no_resume,
    };
    let outcome = run_experiment(&config, &options)?;
    println!(
        "{}: {} cells ({} computed, {} reused, {} failed)",
        config.name,
        outcome.cells,
        outcome.computed,
        outcome.reused,
        outcome.failed.len()
    );
    println!("summary: {}", outcome.files.summary.display());
    for (id, err) in &outcome.failed {
        eprintln!("failed {id}: {err}");
    }
    if !outcome.failed.is_empty() {
        bail!(CellFailures(outcome.failed.len()));
    }
    Ok(())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let config = read_config(&a.out.join("config.json"))?;
    let cells = load_cells(&config, &a.out)?;
    let total = cells.len();
    let mut missing = 0;
    let mut records = Vec::with_capacity(total);
    for (cell, record) in cells {
        match record {
            Some(r) if r.key == cell.key && r.repetition == cell.repetition => records.push(r),
            _ => {
                missing += 1;
                eprintln!("missing cell {}", cell.id());
            }
        }
    }
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let files = write_reports(&config, &records, &a.out)?;
    println!(
        "{}: {} of {total} cells present, {failed} failed; summary {}",
        config.name,
        records.len(),
        files.summary.display()
    );
    if missing + failed > 0 {
        bail!(CellFailures(missing + failed));
    }
    Ok(())
}

fn dump_model(a: DumpModelArgs) -> anyhow::Result<()> {
    let json = to_model_json(&truth_model(a.model.as_deref())?);
    match a.out {
        Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}
