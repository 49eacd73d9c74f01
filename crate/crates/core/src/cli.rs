//! Command-line front end: argument parsing and the subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::datagen::{make_dataset, DatasetSpec};
use crate::dist::{GroupConfig, Scheduler, WorkerGroup};
use crate::error::{Error, Result};
use crate::eval::{evaluate_set, rollout, Horizon, MetricReport};
use crate::io::{read_trajectory, write_trajectory, Manifest, Split};
use crate::mesh::Trajectory;
use crate::partition::{partition, quality};
use crate::perf::{read_trace, runtime_distribution, write_trace, TraceEvent};
use crate::train::{
    read_checkpoint, write_checkpoint, Mode, SampleStream, StepStats, Trainer, TrainingCheckpoint, TrainingData,
};

#[derive(Debug, Parser)]
#[command(name = "mgn", version, about = "Partition-parallel mesh graph network training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Partition a trajectory's mesh and write the plan as JSON.
    Partition(PartitionArgs),
    /// Train a model; writes checkpoint, log, trace and resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Roll a checkpoint out on one trajectory and dump the states.
    Rollout(RolloutArgs),
    /// Summarize a phase trace.
    Perf(PerfArgs),
    /// Evaluate two checkpoints side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset spec JSON; defaults are used for absent keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_valid: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Trajectory file whose mesh is partitioned.
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, visible_alias = "p", default_value_t = 2)]
    pub parts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plan JSON destination; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config JSON. Flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, visible_alias = "p")]
    pub parts: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub accumulation: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub scheduler: Option<Scheduler>,
    #[arg(long)]
    pub trace_steps: Option<usize>,
    #[arg(long)]
    pub freeze_halo_edges: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "validation")]
    pub split: String,
    /// Comma-separated step counts, `full` for whole trajectories.
    #[arg(long, default_value = "1,50,full")]
    pub horizons: String,
    /// Metric CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub t0: usize,
    /// Steps to predict; the whole remaining trajectory when absent.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Report CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "validation")]
    pub split: String,
    #[arg(long, default_value = "1,50,full")]
    pub horizons: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" => Ok(Split::Validation),
            other => Err(Error::Config(format!("unknown split {other:?} (train | validation)"))),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// JSON line written to standard error when a command fails.
pub fn error_line(err: &Error) -> String {
    serde_json::json!({
        "error": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    })
    .to_string()
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(&a).map(|m| println!("wrote {} trajectories", m.entries.len())),
        Command::Partition(a) => cmd_partition(&a),
        Command::Train(a) => {
            let config = resolve_train_config(&a)?;
            let outcome = cmd_train(&config)?;
            if let Some(last) = outcome.history.last() {
                println!("step {} loss {:.6e} lr {:.3e}", last.step, last.loss, last.lr);
            }
            println!("outputs in {}", config.output_dir.display());
            Ok(())
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a.checkpoint, &a.dataset, a.split.parse()?, &Horizon::parse_list(&a.horizons)?)?;
            print!("{}", report.summary());
            if let Some(out) = &a.out {
                write_text(out, &report.to_csv())?;
            }
            Ok(())
        }
        Command::Rollout(a) => cmd_rollout(&a),
        Command::Perf(a) => {
            let report = runtime_distribution(&read_trace(&a.trace)?)?;
            print!("{}", report.summary());
            if let Some(out) = &a.out {
                write_text(out, &report.to_csv())?;
            }
            Ok(())
        }
        Command::Compare(a) => {
            let horizons = Horizon::parse_list(&a.horizons)?;
            let split: Split = a.split.parse()?;
            let ra = cmd_eval(&a.a, &a.dataset, split, &horizons)?;
            let rb = cmd_eval(&a.b, &a.dataset, split, &horizons)?;
            let table = compare_table(&ra, &rb);
            print!("{table}");
            if let Some(out) = &a.out {
                write_text(out, &table)?;
            }
            Ok(())
        }
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<Manifest> {
    let mut spec: DatasetSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => DatasetSpec::default(),
    };
    if let Some(n) = a.n_train {
        spec.n_train = n;
    }
    if let Some(n) = a.n_valid {
        spec.n_valid = n;
    }
    if let Some(s) = a.steps {
        spec.dynamics.steps = s;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let manifest = make_dataset(&spec, &a.out)?;
    write_text(
        &a.out.join("dataset_spec.json"),
        &(serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n"),
    )?;
    Ok(manifest)
}

pub fn cmd_partition(a: &PartitionArgs) -> Result<()> {
    let traj = read_trajectory(&a.trajectory)?;
    let plan = partition(traj.mesh(), a.parts, a.seed)?;
    let json = serde_json::to_string_pretty(&plan.export(traj.mesh())).expect("plan serializes") + "\n";
    match &a.out {
        Some(out) => {
            write_text(out, &json)?;
            let q = quality(traj.mesh(), &plan);
            println!("edge cut {}, balance {:.3}", q.edge_cut, q.balance);
        }
        None => print!("{json}"),
    }
    Ok(())
}

/// Config file (if any) with command-line overrides applied.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = &a.out {
        c.output_dir = v.clone();
    }
    if let Some(v) = a.mode {
        c.mode = v;
    }
    if let Some(v) = a.parts {
        c.parts = v;
    }
    if let Some(v) = a.steps {
        c.steps = v;
    }
    if let Some(v) = a.accumulation {
        c.accumulation = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.lr {
        c.lr.initial = v;
        c.lr.floor = c.lr.floor.min(v);
    }
    if let Some(v) = a.noise_std {
        c.noise_std = vec![v];
    }
    if let Some(v) = a.scheduler {
        c.scheduler = v;
    }
    if let Some(v) = a.trace_steps {
        c.trace_steps = v;
    }
    if a.freeze_halo_edges {
        c.freeze_halo_edges = true;
    }
    c.validate()?;
    Ok(c)
}

fn load_with_schema(manifest: &Manifest, split: Split, config: &RunConfig) -> Result<Vec<Trajectory>> {
    let trajs = manifest.load_split(split)?;
    if trajs.is_empty() {
        return Err(Error::Config(format!("dataset has no {split:?} trajectories")));
    }
    trajs
        .into_iter()
        .map(|t| {
            let schema = config.schema(t.schema().names())?;
            t.with_schema(schema)
        })
        .collect()
}

pub struct TrainOutcome {
    pub history: Vec<StepStats>,
    pub checkpoint: TrainingCheckpoint,
    pub trace: Vec<TraceEvent>,
}

/// Trains per `config` and writes `checkpoint.mgnc`, `train_log.csv`,
/// `trace.json` and `resolved_config.json` into the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest_path = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset manifest given".into()))?;
    let manifest = Manifest::load(manifest_path)?;
    let data = TrainingData::new(load_with_schema(&manifest, Split::Train, config)?)?;
    let schema = data.schema().clone();
    let tc = config.train_config(&schema)?;
    let t0 = &data.trajectories[0];
    let model = config.model_config(
        crate::mesh::node_feature_width(&schema, t0.mesh().n_types()),
        t0.mesh().dim() + 1,
        schema.output_count(),
    )?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("resolved_config.json"), &config.to_json())?;

    let group_cfg = GroupConfig {
        mode: tc.mode,
        parts: tc.parts,
        freeze_halo_edges: tc.freeze_halo_edges,
        partition_seed: tc.partition_seed,
        scheduler: config.scheduler,
        trace: config.trace_steps > 0,
    };
    let mut group = WorkerGroup::new(group_cfg, &model, tc.schedule, tc.normalizer_horizon, tc.seed)?;
    let mut stream = SampleStream::new(tc.seed, tc.noise_std.clone());
    let accumulation = tc.effective_accumulation();
    let start = Instant::now();
    let mut log = String::from("step,loss,lr,wallclock\n");
    let mut history = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        group.set_tracing(step < config.trace_steps);
        let batch = (0..accumulation).map(|_| stream.next(&data)).collect::<Result<Vec<_>>>()?;
        let stats = group.train_step(&data, &batch)?;
        if !stats.loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {} at step {}", stats.loss, stats.step)));
        }
        writeln!(log, "{},{},{},{}", stats.step, stats.loss, stats.lr, start.elapsed().as_secs_f64()).unwrap();
        history.push(stats);
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            write_checkpoint(&snapshot(&group, &schema), out.join(format!("checkpoint_{:06}.mgnc", step + 1)))?;
        }
    }
    let checkpoint = snapshot(&group, &schema);
    write_checkpoint(&checkpoint, out.join("checkpoint.mgnc"))?;
    write_text(&out.join("train_log.csv"), &log)?;
    let trace = group.take_trace();
    write_trace(&trace, out.join("trace.json"))?;
    Ok(TrainOutcome {
        history,
        checkpoint,
        trace,
    })
}

fn snapshot(group: &WorkerGroup, schema: &crate::mesh::ChannelSchema) -> TrainingCheckpoint {
    TrainingCheckpoint {
        schema: schema.clone(),
        params: group.params().clone(),
        optimizer: group.optimizer().clone(),
        normalizers: group.normalizers().clone(),
    }
}

fn named_split(manifest: &Manifest, split: Split, ckpt: &TrainingCheckpoint) -> Result<Vec<(String, Trajectory)>> {
    let paths = manifest.paths(split);
    if paths.is_empty() {
        return Err(Error::Config(format!("dataset has no {split:?} trajectories")));
    }
    paths
        .iter()
        .map(|p| {
            let traj = read_trajectory(p)?.with_schema(ckpt.schema.clone())?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, traj))
        })
        .collect()
}

pub fn cmd_eval(checkpoint: &Path, dataset: &Path, split: Split, horizons: &[Horizon]) -> Result<MetricReport> {
    let ckpt = read_checkpoint(checkpoint)?;
    let manifest = Manifest::load(dataset)?;
    let set = named_split(&manifest, split, &ckpt)?;
    evaluate_set(&ckpt.simulator(), &set, horizons)
}

pub fn cmd_rollout(a: &RolloutArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let traj = read_trajectory(&a.trajectory)?.with_schema(ckpt.schema.clone())?;
    let steps = match a.steps {
        Some(k) => k,
        None => traj.len().saturating_sub(a.t0 + 1),
    };
    let result = rollout(&ckpt.simulator(), &traj, a.t0, steps)?;
    let mut states = vec![traj.states()[a.t0].clone()];
    states.extend(result.states);
    let dump = Trajectory::new(traj.mesh().clone(), traj.schema().clone(), states)?;
    write_trajectory(&dump, &a.out)?;
    println!("wrote {} states to {}", dump.len(), a.out.display());
    Ok(())
}

/// Side-by-side aggregate metrics of two reports over the same set.
pub fn compare_table(a: &MetricReport, b: &MetricReport) -> String {
    let mut out = String::from("metric,horizon,a_mean,a_std_error,b_mean,b_std_error\n");
    let mut row = |m: &str, h: &str, x: Option<&crate::eval::Aggregate>, y: Option<&crate::eval::Aggregate>, s: f64| {
        let f = |v: Option<&crate::eval::Aggregate>| match v {
            Some(g) => format!("{},{}", s * g.mean, s * g.std_error),
            None => "undefined,undefined".into(),
        };
        writeln!(out, "{m},{h},{},{}", f(x), f(y)).unwrap();
    };
    for (i, h) in a.horizons.iter().enumerate() {
        row("rmse", &h.label(), a.rmse.get(i), b.rmse.get(i), 1.0);
    }
    row("nextstep", "1", Some(&a.nextstep), Some(&b.nextstep), 1.0);
    row("e_mean_pct", "full", a.e_mean.as_ref(), b.e_mean.as_ref(), 100.0);
    row("e_std_pct", "full", a.e_std.as_ref(), b.e_std.as_ref(), 100.0);
    writeln!(out, "stationary,full,{},,{},", a.stationary_count, b.stationary_count).unwrap();
    out
}
