//! Command-line front end.
//!
//! Parsed arguments are first resolved into an [`Invocation`], a fully
//! explicit description of the run (config file contents and flag overrides
//! already merged). Executing an invocation writes its outputs and returns a
//! [`RunManifest`] recording the invocation, a content hash of its inputs and
//! the hashes of the files it wrote. Replaying a manifest re-executes the
//! invocation and checks that every output is byte-identical.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    alignment_histogram, at_k, evaluate_behavior, evaluate_standard, evaluate_truncated, summarize, variance_bins,
    write_alignment_csv, write_behavior_csv, write_curves_csv, write_eval_csv, write_truncation_csv,
    write_variance_bins_csv, AnalyzedTrajectory, EvalSettings, TruncationRow,
};
use crate::env::{generate_query, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{Op, Query, Vocab};
use crate::policy::{DecodeConfig, TabularPolicy};
use crate::potential::{PotentialSeries, DEFAULT_EPS_SAT};
use crate::probe::ProbeConfig;
use crate::records::{read_jsonl, read_trajectories, to_jsonl, QueryRecord, TrajectoryRecord};
use crate::seeds::mix;
use crate::trainer::{train_iteration, Estimator, TrainConfig, UpdateReport};

const GEN_TAG: u64 = 0x0047_454e;

#[derive(Debug, Parser)]
#[command(
    name = "spae",
    version,
    about = "Step-potential probing, diagnostics and RL training on a toy arithmetic task"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a deterministic query set.
    Gen(GenArgs),
    /// Train a tabular policy.
    Train(TrainArgs),
    /// Accuracy, length and pass rate at k for a checkpoint.
    Eval(EvalArgs),
    /// Behavioral diagnostics from probed trajectories.
    Diagnose(DiagnoseArgs),
    /// Standard versus probe-truncated decoding.
    TruncateEval(TruncateEvalArgs),
    /// Re-run a manifest and check that its outputs are unchanged.
    Replay(ReplayArgs),
}

/// Task flags shared by commands that build queries.
#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long)]
    pub modulus: Option<u32>,
    #[arg(long)]
    pub chain_length: Option<usize>,
    /// Comma-separated subset of add,sub,mul.
    #[arg(long, value_delimiter = ',', value_parser = parse_op)]
    pub ops: Option<Vec<Op>>,
}

fn parse_op(s: &str) -> std::result::Result<Op, String> {
    match s {
        "add" => Ok(Op::Add),
        "sub" => Ok(Op::Sub),
        "mul" => Ok(Op::Mul),
        _ => Err(format!("unknown op '{s}' (expected add, sub or mul)")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// JSON config file; only the task keys and `seed` are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "SPAE_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub task: TaskArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// JSON config file with `TrainConfig` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, env = "SPAE_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub estimator: Option<Estimator>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps_sat: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub batch_queries: Option<usize>,
    #[arg(long)]
    pub mini_batch: Option<usize>,
    #[arg(long)]
    pub eps_low: Option<f64>,
    #[arg(long)]
    pub eps_high: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Continue from a checkpoint written by an earlier run into `out_dir`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Decoding and probing flags for evaluation commands.
#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 0.6)]
    pub temperature: f64,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub top_p: f64,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 5)]
    pub probe_samples: usize,
    #[arg(long, default_value_t = 3)]
    pub probe_max_tokens: usize,
    #[arg(long, default_value_t = DEFAULT_EPS_SAT)]
    pub eps_sat: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every probed trajectory as JSONL.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Label stored in the trajectory records.
    #[arg(long, default_value = "policy")]
    pub method: String,
    #[arg(long, env = "SPAE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of digit tokens in the vocabulary the trajectories use.
    #[arg(long, default_value_t = 10)]
    pub modulus: u32,
    #[arg(long, default_value_t = DEFAULT_EPS_SAT)]
    pub eps_sat: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TruncateEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "SPAE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Evaluation settings in serializable form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub k: usize,
    pub seed: u64,
    pub decode: DecodeConfig,
    pub probe_samples: usize,
    pub probe_max_tokens: usize,
    pub eps_sat: f64,
}

impl EvalSpec {
    fn from_args(k: usize, seed: u64, d: &DecodeArgs) -> Self {
        EvalSpec {
            k,
            seed,
            decode: DecodeConfig {
                temperature: d.temperature,
                top_k: d.top_k,
                top_p: d.top_p,
                max_len: d.max_len,
            },
            probe_samples: d.probe_samples,
            probe_max_tokens: d.probe_max_tokens,
            eps_sat: d.eps_sat,
        }
    }

    pub fn settings(&self) -> Result<EvalSettings> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.decode.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        let probe = ProbeConfig {
            n_samples: self.probe_samples,
            max_continuation_tokens: self.probe_max_tokens,
            decode: self.decode,
        };
        probe.validate()?;
        Ok(EvalSettings {
            k: self.k,
            decode: self.decode,
            probe,
            eps_sat: self.eps_sat,
            seed: self.seed,
        })
    }
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Gen {
        task: TaskSpec,
        seed: u64,
        n: usize,
        out: PathBuf,
    },
    Train {
        config: TrainConfig,
        out_dir: PathBuf,
        resume: Option<PathBuf>,
    },
    Eval {
        checkpoint: PathBuf,
        queries: PathBuf,
        out: PathBuf,
        trajectories: Option<PathBuf>,
        method: String,
        eval: EvalSpec,
    },
    Diagnose {
        input: PathBuf,
        out_dir: PathBuf,
        modulus: u32,
        eps_sat: f64,
    },
    TruncateEval {
        checkpoint: PathBuf,
        queries: PathBuf,
        out: PathBuf,
        eval: EvalSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub invocation: Invocation,
    pub seed: u64,
    /// SHA-256 over the invocation and the bytes of every input file.
    pub input_hash: String,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn load_config_file(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })
        }
    }
}

fn apply_task(config: &mut TrainConfig, task: &TaskArgs) {
    if let Some(m) = task.modulus {
        config.modulus = m;
    }
    if let Some(c) = task.chain_length {
        config.chain_length = c;
    }
    if let Some(ops) = &task.ops {
        config.ops = ops.clone();
    }
}

/// Merges config files and flags into an invocation.
pub fn resolve(command: Command) -> Result<Invocation> {
    Ok(match command {
        Command::Gen(a) => {
            let mut c = load_config_file(a.config.as_deref())?;
            apply_task(&mut c, &a.task);
            let task = c.task();
            task.validate()?;
            Invocation::Gen {
                task,
                seed: a.seed.unwrap_or(c.seed),
                n: a.n,
                out: a.out,
            }
        }
        Command::Train(a) => {
            let mut c = load_config_file(a.config.as_deref())?;
            apply_task(&mut c, &a.task);
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = a.$f { c.$f = v; } )* };
            }
            set!(
                seed,
                estimator,
                iterations,
                lr,
                xi,
                alpha,
                eps_sat,
                group_size,
                batch_queries,
                mini_batch,
                eps_low,
                eps_high,
                max_len,
                checkpoint_every
            );
            c.validate()?;
            Invocation::Train {
                config: c,
                out_dir: a.out_dir,
                resume: a.resume,
            }
        }
        Command::Eval(a) => Invocation::Eval {
            eval: EvalSpec::from_args(a.k, a.seed, &a.decode),
            checkpoint: a.checkpoint,
            queries: a.queries,
            out: a.out,
            trajectories: a.trajectories,
            method: a.method,
        },
        Command::Diagnose(a) => Invocation::Diagnose {
            input: a.input,
            out_dir: a.out_dir,
            modulus: a.modulus,
            eps_sat: a.eps_sat,
        },
        Command::TruncateEval(a) => Invocation::TruncateEval {
            eval: EvalSpec::from_args(a.k, a.seed, &a.decode),
            checkpoint: a.checkpoint,
            queries: a.queries,
            out: a.out,
        },
        Command::Replay(_) => return Err(Error::Config("replay has no invocation of its own".into())),
    })
}

impl Invocation {
    pub fn seed(&self) -> u64 {
        match self {
            Invocation::Gen { seed, .. } => *seed,
            Invocation::Train { config, .. } => config.seed,
            Invocation::Eval { eval, .. } | Invocation::TruncateEval { eval, .. } => eval.seed,
            Invocation::Diagnose { .. } => 0,
        }
    }

    /// Files read by the invocation.
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Invocation::Gen { .. } => Vec::new(),
            Invocation::Train { resume, .. } => resume.iter().cloned().collect(),
            Invocation::Eval {
                checkpoint, queries, ..
            }
            | Invocation::TruncateEval {
                checkpoint, queries, ..
            } => {
                vec![checkpoint.clone(), queries.clone()]
            }
            Invocation::Diagnose { input, .. } => vec![input.clone()],
        }
    }

    /// Where the manifest of this invocation is written.
    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Invocation::Train { out_dir, .. } | Invocation::Diagnose { out_dir, .. } => out_dir.join("manifest.json"),
            Invocation::Gen { out, .. } | Invocation::Eval { out, .. } | Invocation::TruncateEval { out, .. } => {
                let mut s = out.clone().into_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
        }
    }

    pub fn input_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self)?);
        for p in self.inputs() {
            h.update(p.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(read_file(&p)?);
        }
        Ok(hex(&h.finalize()))
    }

    /// Runs the command, writes its outputs and returns the manifest
    /// (without writing it).
    pub fn execute(&self) -> Result<RunManifest> {
        let input_hash = self.input_hash()?;
        let outputs = match self {
            Invocation::Gen { task, seed, n, out } => run_gen(task, *seed, *n, out)?,
            Invocation::Train {
                config,
                out_dir,
                resume,
            } => run_train(config, out_dir, resume.as_deref())?,
            Invocation::Eval {
                checkpoint,
                queries,
                out,
                trajectories,
                method,
                eval,
            } => run_eval(checkpoint, queries, out, trajectories.as_deref(), method, eval)?,
            Invocation::Diagnose {
                input,
                out_dir,
                modulus,
                eps_sat,
            } => run_diagnose(input, out_dir, *modulus, *eps_sat)?,
            Invocation::TruncateEval {
                checkpoint,
                queries,
                out,
                eval,
            } => run_truncate_eval(checkpoint, queries, out, eval)?,
        };
        let outputs = outputs
            .into_iter()
            .map(|path| {
                let sha256 = sha256_hex(&read_file(&path)?);
                Ok(OutputFile { path, sha256 })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            invocation: self.clone(),
            seed: self.seed(),
            input_hash,
            outputs,
        })
    }
}

/// Outcome of a replay: the recorded outputs whose bytes changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub mismatched: Vec<PathBuf>,
    pub inputs_changed: bool,
}

pub fn replay(manifest: &RunManifest) -> Result<ReplayReport> {
    let inputs_changed = manifest.invocation.input_hash()? != manifest.input_hash;
    let fresh = manifest.invocation.execute()?;
    let mismatched = manifest
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.contains(o))
        .map(|o| o.path.clone())
        .collect();
    Ok(ReplayReport {
        mismatched,
        inputs_changed,
    })
}

/// Deterministic query set: query `i` is generated from `mix(seed, i)`.
pub fn generate_queries(task: &TaskSpec, seed: u64, n: usize) -> Result<Vec<Query>> {
    (0..n as u64)
        .map(|i| {
            let mut q = generate_query(mix(&[seed, GEN_TAG, i]), task)?;
            q.id = i;
            Ok(q)
        })
        .collect()
}

fn run_gen(task: &TaskSpec, seed: u64, n: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let queries = generate_queries(task, seed, n)?;
    let records: Vec<QueryRecord> = queries.iter().map(QueryRecord::from).collect();
    write_file(out, to_jsonl(&records)?.as_bytes())?;
    Ok(vec![out.to_path_buf()])
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("checkpoint-{iteration:06}.bin"))
}

fn run_train(config: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<Vec<PathBuf>> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let reports_path = out_dir.join("reports.jsonl");
    let (mut policy, start, mut reports) = match resume {
        None => (config.initial_policy()?, 0, Vec::new()),
        Some(ckpt) => {
            let (policy, iteration) = TabularPolicy::load(ckpt)?;
            if policy.vocab() != &config.task().vocab()? || policy.context_order() != config.context_order {
                return Err(Error::Checkpoint(format!(
                    "{} does not match the configured task",
                    ckpt.display()
                )));
            }
            let mut reports: Vec<UpdateReport> = read_jsonl(&reports_path)?;
            if (reports.len() as u64) < iteration {
                return Err(Error::Checkpoint(format!(
                    "{} holds {} reports but the checkpoint is at iteration {iteration}",
                    reports_path.display(),
                    reports.len()
                )));
            }
            reports.truncate(iteration as usize);
            (policy, iteration, reports)
        }
    };
    let mut outputs = Vec::new();
    for it in start..config.iterations {
        reports.push(train_iteration(&mut policy, config, it)?);
        let done = it + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            let p = checkpoint_path(out_dir, done);
            policy.save(&p, done)?;
            outputs.push(p);
        }
    }
    let final_path = out_dir.join("policy.bin");
    policy.save(&final_path, config.iterations.max(start))?;
    write_file(&reports_path, to_jsonl(&reports)?.as_bytes())?;
    let mut curves = Vec::new();
    write_curves_csv(&mut curves, &reports)?;
    let curves_path = out_dir.join("curves.csv");
    write_file(&curves_path, &curves)?;
    outputs.extend([final_path, reports_path, curves_path]);
    Ok(outputs)
}

fn load_eval_inputs(checkpoint: &Path, queries: &Path) -> Result<(TabularPolicy, Vec<Query>)> {
    let (policy, _) = TabularPolicy::load(checkpoint)?;
    let records: Vec<QueryRecord> = read_jsonl(queries)?;
    let digits = policy.vocab().digits();
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if r.modulus != digits {
            return Err(Error::Parse {
                path: queries.to_path_buf(),
                line: i + 1,
                message: format!(
                    "query modulus {} does not match the policy's {digits} digits",
                    r.modulus
                ),
            });
        }
        out.push(Query::from(r));
    }
    Ok((policy, out))
}

fn trajectory_record(method: &str, query: &Query, t: &AnalyzedTrajectory) -> TrajectoryRecord {
    let mut r = TrajectoryRecord::from_trajectory(&t.trajectory);
    r.answer = Some(query.answer.clone());
    r.method = Some(method.to_string());
    r.k_gt = t.k_gt;
    r.probe = Some(t.probes.clone());
    r.phi = Some(t.series.phi.clone());
    r.phases = Some(t.phases().steps);
    r
}

fn run_eval(
    checkpoint: &Path,
    queries: &Path,
    out: &Path,
    trajectories: Option<&Path>,
    method: &str,
    eval: &EvalSpec,
) -> Result<Vec<PathBuf>> {
    let (policy, qs) = load_eval_inputs(checkpoint, queries)?;
    let settings = eval.settings()?;
    let vocab = *policy.vocab();
    let mut csv = Vec::new();
    let mut outputs = vec![out.to_path_buf()];
    match trajectories {
        None => {
            let row = crate::diagnostics::eval_at_k(&policy, &qs, eval.k, &vocab, &eval.decode, eval.seed)?;
            write_eval_csv(&mut csv, &[row])?;
        }
        Some(path) => {
            let report = evaluate_behavior(method, &policy, &qs, &vocab, &settings)?;
            write_eval_csv(&mut csv, &[report.at_k])?;
            let records: Vec<TrajectoryRecord> = report
                .trajectories
                .iter()
                .enumerate()
                .map(|(i, t)| trajectory_record(method, &qs[i / eval.k], t))
                .collect();
            write_file(path, to_jsonl(&records)?.as_bytes())?;
            outputs.push(path.to_path_buf());
        }
    }
    write_file(out, &csv)?;
    Ok(outputs)
}

fn analyzed_from_record(r: &TrajectoryRecord, eps_sat: f64, path: &Path, line: usize) -> Result<AnalyzedTrajectory> {
    let at = |e: Error| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let trajectory = r.trajectory().map_err(at)?;
    let probes = r.probe.clone().unwrap_or_default();
    let series = match (&r.probe, &r.phi) {
        (Some(p), _) => PotentialSeries::from_probes(p, eps_sat).map_err(at)?,
        (None, Some(phi)) => PotentialSeries::new(phi.clone(), eps_sat).map_err(at)?,
        (None, None) => PotentialSeries::new(Vec::new(), eps_sat).map_err(at)?,
    };
    if series.len() != trajectory.num_steps() {
        return Err(at(Error::LengthMismatch(format!(
            "{} potentials for {} steps",
            series.len(),
            trajectory.num_steps()
        ))));
    }
    Ok(AnalyzedTrajectory {
        trajectory,
        probes,
        series,
        k_gt: r.k_gt,
    })
}

fn run_diagnose(input: &Path, out_dir: &Path, modulus: u32, eps_sat: f64) -> Result<Vec<PathBuf>> {
    let vocab = Vocab::with_digits(modulus)?;
    let records = read_trajectories(input)?;
    let mut by_method: std::collections::BTreeMap<String, Vec<AnalyzedTrajectory>> = Default::default();
    let mut all = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let a = analyzed_from_record(r, eps_sat, input, i + 1)?;
        by_method
            .entry(r.method.clone().unwrap_or_else(|| "all".into()))
            .or_default()
            .push(a.clone());
        all.push(a);
    }
    let summaries: Vec<_> = by_method.iter().map(|(m, items)| summarize(m, items, &vocab)).collect();
    let probe_sets: Vec<&[_]> = all.iter().map(|a| a.probes.as_slice()).collect();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = out_dir.join(name);
        write_file(&p, &bytes)?;
        outputs.push(p);
        Ok(())
    };
    let mut buf = Vec::new();
    write_behavior_csv(&mut buf, &summaries)?;
    emit("behavior.csv", buf)?;
    let mut buf = Vec::new();
    write_variance_bins_csv(&mut buf, &variance_bins(&probe_sets))?;
    emit("variance_bins.csv", buf)?;
    let mut buf = Vec::new();
    write_alignment_csv(&mut buf, &alignment_histogram(&all))?;
    emit("alignment.csv", buf)?;
    Ok(outputs)
}

fn run_truncate_eval(checkpoint: &Path, queries: &Path, out: &Path, eval: &EvalSpec) -> Result<Vec<PathBuf>> {
    let (policy, qs) = load_eval_inputs(checkpoint, queries)?;
    let settings = eval.settings()?;
    let vocab = *policy.vocab();
    let standard = evaluate_standard(&policy, &qs, &vocab, &settings)?;
    let truncated = evaluate_truncated(&policy, &qs, &vocab, &settings)?;
    let row = |method, groups: &[Vec<AnalyzedTrajectory>]| TruncationRow {
        method,
        at_k: at_k(groups, eval.k),
        r2w: crate::diagnostics::r2w_rate(groups.iter().flatten().map(|t| (&t.series, t.trajectory.reward))),
    };
    let mut csv = Vec::new();
    write_truncation_csv(&mut csv, &[row("standard", &standard), row("truncated", &truncated)])?;
    write_file(out, &csv)?;
    Ok(vec![out.to_path_buf()])
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Replay(a) => RunManifest::load(&a.manifest).and_then(|m| {
            let report = replay(&m)?;
            if report.inputs_changed {
                eprintln!("warning: inputs differ from the recorded ones");
            }
            if report.mismatched.is_empty() {
                println!("replay ok: {} outputs identical", m.outputs.len());
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "outputs changed on replay: {}",
                    report
                        .mismatched
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                )))
            }
        }),
        command => resolve(command).and_then(|inv| {
            let manifest = inv.execute()?;
            manifest.save(&inv.manifest_path())?;
            for o in &manifest.outputs {
                println!("{}", o.path.display());
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
