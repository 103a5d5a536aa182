//! `restraj`: dataset generation, training, planning, evaluation, active
//! learning, ablation and latency benchmarks for residual trajectory planning.

mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use restraj_core::dataset::{build_dataset, load_specs, GridConfig, ResidualDataset};
use restraj_core::dynamics::RobotModel;
use restraj_core::gp::{GpConfig, GpModel};
use restraj_core::nn::{EnsembleModel, NnConfig};
use restraj_core::ocp::{solve_ocp, TranscriptionConfig};
use restraj_core::planner::{
    ablate_naive, active_learn, bench_latency, evaluate, plan, prior_energy, savings, solve_records, AblationConfig,
    ActiveLearnConfig, EvalSet, PlanRequest, Regressor, RegressorKind,
};
use restraj_core::prior::ProblemSpec;
use restraj_core::Error;

use report::Table;

const EXIT_MISSING: u8 = 2;
const EXIT_SCHEMA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_WRITE: u8 = 5;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "restraj", version, about = "Residual learning of minimum-energy point-to-point trajectories")]
struct Cli {
    /// directory for default output paths and run manifests
    #[arg(long, global = true, env = "RESTRAJ_OUT", default_value = "restraj-out")]
    out_dir: PathBuf,
    /// worker threads for parallel OCP solves and training (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one minimum-energy problem by direct collocation
    Ocp(OcpArgs),
    /// Solve every grid spec and store prior residuals
    GenDataset(GenDatasetArgs),
    /// Train the neural-network ensemble on a residual dataset
    TrainNn(TrainArgs),
    /// Fit the boundary-constrained Gaussian process on a residual dataset
    TrainGp(TrainArgs),
    /// Plan a trajectory with a trained regressor
    Plan(PlanArgs),
    /// Savings of trained regressors on dataset and outside specs
    Eval(EvalArgs),
    /// Update a regressor with the most uncertain candidate specs
    ActiveLearn(ActiveLearnArgs),
    /// Boundary violations of unconstrained position regressors
    Ablate(AblateArgs),
    /// Planning latency against one tenth of the task time
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct OcpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// collocation intervals; defaults to the transcription config value
    #[arg(long)]
    intervals: Option<usize>,
    /// transcription config (JSON)
    #[arg(long)]
    transcription: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenDatasetArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    transcription: Option<PathBuf>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// dataset directory
    #[arg(long)]
    data: PathBuf,
    /// training config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    regressor: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// candidates; defaults to the ensemble size or the GP sample count
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// repeatable
    #[arg(long, required = true)]
    regressor: Vec<PathBuf>,
    /// outside specs: JSON array of specs or a grid config
    #[arg(long)]
    outside: Option<PathBuf>,
    #[arg(long)]
    transcription: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    frequency: f64,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ActiveLearnArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    regressor: PathBuf,
    /// candidate pool: JSON array of specs or a grid config
    #[arg(long)]
    candidates: PathBuf,
    #[arg(short, default_value_t = 4)]
    k: usize,
    /// active-learning config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// updated regressor path
    #[arg(long)]
    out: Option<PathBuf>,
    /// report CSV path
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// residual regressors to compare against; repeatable
    #[arg(long)]
    regressor: Vec<PathBuf>,
    #[arg(long)]
    outside: Option<PathBuf>,
    /// ablation config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// repeatable
    #[arg(long, required = true)]
    regressor: Vec<PathBuf>,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit code plus message for stderr.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Io { .. } => EXIT_WRITE,
            Error::Training(_) | Error::NotPositiveDefinite { .. } | Error::DegeneratePriorEnergy(_) => EXIT_NUMERICAL,
            _ => EXIT_SCHEMA,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

/// Inputs and outputs recorded in the run manifest.
#[derive(Default)]
struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<(String, u64)>,
}

impl Run {
    fn input(&mut self, path: &Path) -> CliResult<()> {
        if !path.exists() {
            return Err(Failure::new(EXIT_MISSING, format!("missing input: {}", path.display())));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        self.input(path)?;
        let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_MISSING, format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_SCHEMA, format!("{}: {e}", path.display())))
    }

    fn read_json_or_default<T: DeserializeOwned + Default>(&mut self, path: Option<&PathBuf>) -> CliResult<T> {
        path.map_or_else(|| Ok(T::default()), |p| self.read_json(p))
    }

    fn model(&mut self, path: &Path) -> CliResult<RobotModel> {
        self.input(path)?;
        Ok(RobotModel::load(path)?)
    }

    fn spec(&mut self, path: &Path) -> CliResult<ProblemSpec> {
        let spec: ProblemSpec = self.read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }

    fn dataset(&mut self, dir: &Path) -> CliResult<ResidualDataset> {
        self.input(dir)?;
        Ok(ResidualDataset::load(dir)?)
    }

    fn regressor(&mut self, path: &Path) -> CliResult<Regressor> {
        self.input(path)?;
        Ok(Regressor::load(path)?)
    }

    fn output(&mut self, path: &Path) -> CliResult<PathBuf> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| write_failure(parent, e))?;
        }
        self.outputs.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    fn write_table(&mut self, path: &Path, table: &Table) -> CliResult<()> {
        let path = self.output(path)?;
        table.write_csv(&path).map_err(|e| write_failure(&path, e))
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let path = self.output(path)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_WRITE, e.to_string()))?;
        fs::write(&path, text).map_err(|e| write_failure(&path, e))
    }
}

fn write_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_WRITE, format!("cannot write {}: {e}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a file, or of every file below a directory in sorted order.
fn hash_path(path: &Path) -> Option<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path).ok()?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        let mut hasher = Sha256::new();
        for p in entries.iter().filter(|p| p.is_file()) {
            hasher.update(p.file_name()?.as_encoded_bytes());
            hasher.update(fs::read(p).ok()?);
        }
        Some(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    } else {
        fs::read(path).ok().map(|b| sha256_hex(&b))
    }
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: Option<String>,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    version: &'static str,
    workers: usize,
    config_hash: String,
    seeds: Vec<(String, u64)>,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

fn write_manifest(cli: &Cli, name: &str, argv: &[OsString], run: &Run) -> CliResult<()> {
    let entries = |paths: &[PathBuf]| -> Vec<FileEntry> {
        paths
            .iter()
            .map(|p| FileEntry {
                path: p.display().to_string(),
                sha256: hash_path(p),
            })
            .collect()
    };
    let inputs = entries(&run.inputs);
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut hasher = Sha256::new();
    hasher.update(argv.join("\0"));
    for e in &inputs {
        hasher.update(e.sha256.as_deref().unwrap_or(""));
    }
    let manifest = Manifest {
        command: name.to_string(),
        argv,
        version: env!("CARGO_PKG_VERSION"),
        workers: rayon::current_num_threads(),
        config_hash: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        seeds: run.seeds.clone(),
        inputs,
        outputs: entries(&run.outputs),
    };
    let path = cli.out_dir.join(format!("{name}.manifest.json"));
    fs::create_dir_all(&cli.out_dir).map_err(|e| write_failure(&cli.out_dir, e))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::new(EXIT_WRITE, e.to_string()))?;
    fs::write(&path, text).map_err(|e| write_failure(&path, e))
}

fn out_path(cli: &Cli, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cli.out_dir.join(default))
}

fn default_samples(regressor: &Regressor) -> usize {
    match regressor {
        Regressor::Nn(m) => m.members.len(),
        Regressor::Gp(m) => m.data.config.samples,
    }
}

fn load_transcription(run: &mut Run, path: Option<&PathBuf>) -> CliResult<TranscriptionConfig> {
    let cfg: TranscriptionConfig = run.read_json_or_default(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_ocp(cli: &Cli, a: &OcpArgs, run: &mut Run) -> CliResult<()> {
    let model = run.model(&a.model)?;
    let spec = run.spec(&a.spec)?;
    let mut cfg = load_transcription(run, a.transcription.as_ref())?;
    if let Some(k) = a.intervals {
        cfg.intervals = k;
    }
    let sol = solve_ocp(&model, &spec, &cfg)?;
    let prior = prior_energy(&model, &spec, cfg.intervals + 1)?;
    let path = out_path(cli, &a.out, "ocp.csv");
    run.write_table(&path, &report::trajectory_table(model.dof(), &[("optimal", &sol.trajectory)]))?;
    let mut t = Table::new(["converged", "iterations", "defect", "energy_J", "prior_energy_J", "savings_pct", "time_s"]);
    t.push(vec![
        sol.converged.to_string(),
        sol.iterations.to_string(),
        report::short(sol.defect_norm),
        report::short(sol.objective),
        report::short(prior),
        report::short(savings(&model, &sol.trajectory, &spec)?),
        report::short(sol.wall_time),
    ]);
    print!("{}", t.render());
    if !sol.converged {
        return Err(Failure::new(
            EXIT_NUMERICAL,
            format!("OCP did not converge; best iterate written to {}", path.display()),
        ));
    }
    Ok(())
}

fn cmd_gen_dataset(cli: &Cli, a: &GenDatasetArgs, run: &mut Run) -> CliResult<()> {
    let model = run.model(&a.model)?;
    run.input(&a.grid)?;
    let grid = GridConfig::load(&a.grid)?;
    run.seeds.push(("split_seed".into(), grid.split_seed));
    let cfg = load_transcription(run, a.transcription.as_ref())?;
    let ds = build_dataset(&model, &grid, &cfg)?;
    let dir = out_path(cli, &a.out, "dataset");
    run.output(&dir)?;
    ds.save(&dir)?;
    let mut t = Table::new(["trajectories", "train", "test", "rows", "failed", "mean_optimal_savings_pct"]);
    let n = ds.trajectories.len();
    let mean = ds.trajectories.iter().map(|r| r.optimal_savings()).sum::<f64>() / n.max(1) as f64;
    t.push(vec![
        n.to_string(),
        ds.split(restraj_core::dataset::Split::Train).count().to_string(),
        ds.split(restraj_core::dataset::Split::Test).count().to_string(),
        ds.num_samples().to_string(),
        ds.metadata.failed.len().to_string(),
        report::short(mean),
    ]);
    print!("{}", t.render());
    for f in &ds.metadata.failed {
        log::warn!("failed spec {:?}: {}", f.spec, f.reason);
    }
    Ok(())
}

fn cmd_train_nn(cli: &Cli, a: &TrainArgs, run: &mut Run) -> CliResult<()> {
    let ds = run.dataset(&a.data)?;
    let mut cfg: NnConfig = run.read_json_or_default(a.config.as_ref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    run.seeds.push(("nn_seed".into(), cfg.seed));
    let model = EnsembleModel::train(&ds, &cfg)?;
    let path = out_path(cli, &a.out, "nn.json");
    run.output(&path)?;
    model.save(&path)?;
    let mut t = Table::new(["members", "train_mse", "test_mse"]);
    let opt = |x: Option<f64>| x.map_or("-".to_string(), report::short);
    t.push(vec![model.members.len().to_string(), opt(model.train_mse), opt(model.test_mse)]);
    print!("{}", t.render());
    Ok(())
}

fn cmd_train_gp(cli: &Cli, a: &TrainArgs, run: &mut Run) -> CliResult<()> {
    let ds = run.dataset(&a.data)?;
    let mut cfg: GpConfig = run.read_json_or_default(a.config.as_ref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    run.seeds.push(("gp_seed".into(), cfg.seed));
    let model = GpModel::fit(&ds, &cfg)?;
    let path = out_path(cli, &a.out, "gp.json");
    run.output(&path)?;
    model.save(&path)?;
    let mut t = Table::new(["joint", "lengthscales", "signal_var", "noise_var", "log_likelihood"]);
    for (j, h) in model.data.hyper.iter().enumerate() {
        let ls: Vec<String> = h.lengthscales.iter().map(|&l| report::short(l)).collect();
        t.push(vec![
            (j + 1).to_string(),
            ls.join(" "),
            report::short(h.signal_variance),
            report::short(h.noise_variance),
            report::short(model.data.log_likelihood[j]),
        ]);
    }
    print!("{}", t.render());
    if let Some(mse) = model.data.test_mse {
        println!("test_mse {}", report::short(mse));
    }
    Ok(())
}

fn cmd_plan(cli: &Cli, a: &PlanArgs, run: &mut Run) -> CliResult<()> {
    let model = run.model(&a.model)?;
    let regressor = run.regressor(&a.regressor)?;
    let spec = run.spec(&a.spec)?;
    run.seeds.push(("seed".into(), a.seed));
    let request = PlanRequest {
        spec: spec.clone(),
        resolution: a.resolution,
        samples: a.samples.unwrap_or_else(|| default_samples(&regressor)),
        seed: a.seed,
    };
    let result = plan(&request, &model, &regressor)?;
    let prior = restraj_core::planner::compose(&model, &spec, &vec![vec![0.0; spec.dof()]; a.resolution])?;
    let path = out_path(cli, &a.out, "plan.csv");
    run.write_table(
        &path,
        &report::trajectory_table(model.dof(), &[("prior", &prior), ("mean", &result.mean), ("best", &result.best)]),
    )?;
    let mut t = Table::new(["variant", "energy_J", "savings_pct"]);
    for (name, traj) in [("prior", &prior), ("mean", &result.mean), ("best", &result.best)] {
        t.push(vec![
            name.to_string(),
            report::short(traj.energy.unwrap_or(f64::NAN)),
            report::short(savings(&model, traj, &spec)?),
        ]);
    }
    print!("{}", t.render());
    println!(
        "uncertainty mean {} max {}  time {} s",
        report::short(result.uncertainty_mean),
        report::short(result.uncertainty_max),
        report::short(result.wall_time)
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, run: &mut Run) -> CliResult<()> {
    let model = run.model(&a.model)?;
    let ds = run.dataset(&a.data)?;
    let regressors = a.regressor.iter().map(|p| run.regressor(p)).collect::<CliResult<Vec<_>>>()?;
    run.seeds.push(("seed".into(), a.seed));
    let mut records: Vec<_> = ds.trajectories.iter().map(|t| (t.clone(), EvalSet::from(t.split))).collect();
    if let Some(path) = &a.outside {
        run.input(path)?;
        let specs = load_specs(path)?;
        let cfg = load_transcription(run, a.transcription.as_ref())?;
        let solved = solve_records(&model, &specs, a.frequency, &cfg, restraj_core::dataset::Split::Test);
        for (spec, rec) in specs.iter().zip(solved) {
            match rec {
                Ok(r) => records.push((r, EvalSet::Outside)),
                Err(e) => log::warn!("skipping outside spec {spec:?}: {e}"),
            }
        }
    }
    let mut rows = Vec::new();
    for reg in &regressors {
        let samples = a.samples.unwrap_or_else(|| default_samples(reg));
        rows.extend(evaluate(&model, reg, &records, samples, a.seed)?);
    }
    run.write_table(&out_path(cli, &a.out, "savings.csv"), &report::savings_table(model.dof(), &rows))?;
    print!("{}", report::savings_summary(&rows).render());
    Ok(())
}

fn cmd_active_learn(cli: &Cli, a: &ActiveLearnArgs, run: &mut Run) -> CliResult<()> {
    let model = run.model(&a.model)?;
    let ds = run.dataset(&a.data)?;
    let regressor = run.regressor(&a.regressor)?;
    run.input(&a.candidates)?;
    let candidates = load_specs(&a.candidates)?;
    let mut cfg: ActiveLearnConfig = run.read_json_or_default(a.config.as_ref())?;
    cfg.transcription.validate()?;
    if let Some(s) = a.samples {
        cfg.plan_samples = s;
    } else if a.config.is_none() {
        cfg.plan_samples = default_samples(&regressor);
    }
    run.seeds.push(("seed".into(), cfg.seed));
    let (updated, rep) = active_learn(&regressor, &model, &ds, &candidates, a.k, &cfg)?;
    let default_name = match regressor.kind() {
        RegressorKind::Nn => "nn_al.json",
        RegressorKind::Gp => "gp_al.json",
    };
    let path = out_path(cli, &a.out, default_name);
    run.output(&path)?;
    updated.save(&path)?;
    let table = report::active_learn_table(model.dof(), &rep);
    let csv_path = out_path(cli, &a.report, "active_learning.csv");
    run.write_json(&csv_path.with_extension("json"), &rep)?;
    run.write_table(&csv_path, &table)?;
    print!("{}", table.rounded().render());
    println!("new samples {}", rep.new_samples);
    Ok(())
}

fn cmd_ablate(cli: &Cli, a: &AblateArgs, run: &mut Run) -> CliResult<()> {
    let ds = run.dataset(&a.data)?;
    let regressors = a.regressor.iter().map(|p| run.regressor(p)).collect::<CliResult<Vec<_>>>()?;
    let outside = match &a.outside {
        Some(p) => {
            run.input(p)?;
            load_specs(p)?
        }
        None => Vec::new(),
    };
    let cfg: AblationConfig = run.read_json_or_default(a.config.as_ref())?;
    run.seeds.push(("nn_seed".into(), cfg.nn.seed));
    run.seeds.push(("gp_seed".into(), cfg.gp.seed));
    let names: Vec<String> = regressors.iter().map(|r| format!("residual_{}", r.kind())).collect();
    let models: Vec<(&str, &Regressor)> = names.iter().map(String::as_str).zip(&regressors).collect();
    let entries = ablate_naive(&ds, &models, &outside, &cfg)?;
    run.write_table(&out_path(cli, &a.out, "violations.csv"), &report::violations_table(ds.dof, &entries))?;
    print!("{}", report::violations_summary(&entries).render());
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs, run: &mut Run) -> CliResult<()> {
    let model = run.model(&a.model)?;
    let spec = run.spec(&a.spec)?;
    let regressors = a.regressor.iter().map(|p| run.regressor(p)).collect::<CliResult<Vec<_>>>()?;
    let mut stats = Vec::new();
    for reg in &regressors {
        let request = PlanRequest {
            spec: spec.clone(),
            resolution: a.resolution,
            samples: a.samples.unwrap_or_else(|| default_samples(reg)),
            seed: 0,
        };
        stats.push(bench_latency(&request, &model, reg, a.repetitions)?);
    }
    let table = report::latency_table(&stats);
    run.write_table(&out_path(cli, &a.out, "latency.csv"), &table)?;
    print!("{}", table.rounded().render());
    Ok(())
}

fn execute(cli: &Cli, argv: &[OsString]) -> CliResult<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    }
    let mut run = Run::default();
    let (name, result) = match &cli.command {
        Command::Ocp(a) => ("ocp", cmd_ocp(cli, a, &mut run)),
        Command::GenDataset(a) => ("gen-dataset", cmd_gen_dataset(cli, a, &mut run)),
        Command::TrainNn(a) => ("train-nn", cmd_train_nn(cli, a, &mut run)),
        Command::TrainGp(a) => ("train-gp", cmd_train_gp(cli, a, &mut run)),
        Command::Plan(a) => ("plan", cmd_plan(cli, a, &mut run)),
        Command::Eval(a) => ("eval", cmd_eval(cli, a, &mut run)),
        Command::ActiveLearn(a) => ("active-learn", cmd_active_learn(cli, a, &mut run)),
        Command::Ablate(a) => ("ablate", cmd_ablate(cli, a, &mut run)),
        Command::Bench(a) => ("bench", cmd_bench(cli, a, &mut run)),
    };
    let manifest = write_manifest(cli, name, argv, &run);
    result.and(manifest)
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
