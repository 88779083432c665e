//! Command-line plumbing: flag/config parsing, seed sweeps, and CSV
//! emission for downstream plotting.
//!
//! Output schema (stable):
//! - `stages.csv`: `run_id,seed,stage,cmd,acc_train,acc_val,acc_test,aug_size,loss,seconds`
//! - `summary.csv`: `run_id,method,label_rate,mean_acc,std_acc,n_seeds`

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Deserialize;

use crate::error::{DcgstError, Result};
use crate::graphdata::synthetic::{sbm_graph, SbmConfig};
use crate::graphdata::{load_graph, make_split, Graph, SplitMode};
use crate::selftrain::{gcn_baseline, run_self_training, st_baseline, RunResult, TrainConfig};

pub const STAGES_HEADER: &str =
    "run_id,seed,stage,cmd,acc_train,acc_val,acc_test,aug_size,loss,seconds";
pub const SUMMARY_HEADER: &str = "run_id,method,label_rate,mean_acc,std_acc,n_seeds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Gcn,
    St,
    Dcgst,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gcn => "gcn",
            Method::St => "st",
            Method::Dcgst => "dcgst",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bias {
    Random,
    Ppr,
}

/// Where the graph comes from: an on-disk export or a built-in synthetic
/// generator (`sbm`, optionally `sbm:<block_size>[:<feature_noise>[:<p_in>]]`).
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Dir(PathBuf),
    Sbm {
        block_size: usize,
        feature_noise: f64,
        p_in: f64,
    },
}

impl DatasetSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "sbm" || s.starts_with("sbm:") {
            let mut parts = s.split(':').skip(1);
            let block_size = match parts.next() {
                None | Some("") => 500,
                Some(p) => p
                    .parse()
                    .map_err(|_| DcgstError::Config(format!("bad sbm block size in {s:?}")))?,
            };
            let feature_noise = match parts.next() {
                None => 2.0,
                Some(p) => p
                    .parse()
                    .map_err(|_| DcgstError::Config(format!("bad sbm noise in {s:?}")))?,
            };
            let p_in = match parts.next() {
                None => 0.02,
                Some(p) => p
                    .parse()
                    .map_err(|_| DcgstError::Config(format!("bad sbm p_in in {s:?}")))?,
            };
            Ok(DatasetSpec::Sbm {
                block_size,
                feature_noise,
                p_in,
            })
        } else {
            Ok(DatasetSpec::Dir(PathBuf::from(s)))
        }
    }

    pub fn load(&self) -> Result<Graph> {
        match self {
            DatasetSpec::Dir(dir) => load_graph(dir),
            DatasetSpec::Sbm {
                block_size,
                feature_noise,
                p_in,
            } => {
                let cfg = SbmConfig {
                    block_size: *block_size,
                    p_in: *p_in,
                    p_out: 0.0,
                    feature_dim: 16,
                    feature_noise: *feature_noise,
                    seed: 42,
                }
                .with_homophily(0.9);
                Ok(sbm_graph(&cfg))
            }
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub dataset: DatasetSpec,
    pub label_rate: f64,
    pub mode: SplitMode,
    pub method: Method,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

#[derive(Parser, Debug)]
#[command(name = "dcgst", about = "Distribution-consistent graph self-training")]
struct Cli {
    /// Dataset directory, or `sbm[:block_size[:feature_noise]]`.
    #[arg(long)]
    dataset: String,
    /// Fraction of nodes given ground-truth labels, in (0, 0.5].
    #[arg(long)]
    label_rate: Option<f64>,
    /// Split sampler: uniform or biased toward high-PageRank regions.
    #[arg(long, value_enum)]
    bias: Option<Bias>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Dropout of the edge-predictor encoder.
    #[arg(long)]
    ep_dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    max_stages: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Edit-candidate node budget.
    #[arg(long)]
    m: Option<usize>,
    /// Edit-candidate pair budget.
    #[arg(long)]
    e: Option<usize>,
    #[arg(long)]
    q_steps: Option<usize>,
    /// `a..b` (inclusive) or comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace Gumbel noise with a constant (test mode).
    #[arg(long)]
    freeze_gumbel: Option<f64>,
    /// Sample edges with unbiased logistic noise instead of the
    /// single-Gumbel form.
    #[arg(long)]
    logistic_noise: bool,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    stage_epochs: Option<usize>,
    #[arg(long)]
    ep_pretrain_epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    label_rate: Option<f64>,
    bias: Option<String>,
    method: Option<String>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    lambda: Option<f64>,
    tau: Option<f64>,
    hidden: Option<usize>,
    ep_dropout: Option<f64>,
    lr: Option<f64>,
    l2: Option<f64>,
    max_stages: Option<usize>,
    patience: Option<usize>,
    m: Option<usize>,
    e: Option<usize>,
    q_steps: Option<usize>,
    seeds: Option<String>,
    out_dir: Option<PathBuf>,
    freeze_gumbel: Option<f64>,
    logistic_noise: Option<bool>,
    pretrain_epochs: Option<usize>,
    stage_epochs: Option<usize>,
    ep_pretrain_epochs: Option<usize>,
}

/// Expand `a..b` (inclusive) or a comma-separated list into seed values.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = |m: &str| DcgstError::Config(format!("bad seed spec {s:?}: {m}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad("range start"))?;
        let b: u64 = b.trim().parse().map_err(|_| bad("range end"))?;
        if b < a {
            return Err(bad("range end below start"));
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| bad("list entry")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(bad("empty"));
    }
    Ok(seeds)
}

/// Resolve flags over an optional TOML config over defaults.
pub fn parse_config(argv: &[String]) -> Result<RunSpec> {
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| DcgstError::Config(e.to_string()))?;
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| DcgstError::Config(format!("{path:?}: {e}")))?
        }
        None => FileConfig::default(),
    };

    let label_rate = cli.label_rate.or(file.label_rate).unwrap_or(0.02);
    if !(label_rate > 0.0 && label_rate <= 0.5) {
        return Err(DcgstError::Config(format!(
            "label rate {label_rate} outside (0, 0.5]"
        )));
    }
    let mode = match cli.bias {
        Some(Bias::Random) => SplitMode::Random,
        Some(Bias::Ppr) => SplitMode::PprBias,
        None => match file.bias.as_deref() {
            None => SplitMode::Random,
            Some("random") => SplitMode::Random,
            Some("ppr") => SplitMode::PprBias,
            Some(other) => {
                return Err(DcgstError::Config(format!("unknown bias {other:?}")))
            }
        },
    };
    let method = match cli.method {
        Some(m) => m,
        None => match file.method.as_deref() {
            None | Some("dcgst") => Method::Dcgst,
            Some("gcn") => Method::Gcn,
            Some("st") => Method::St,
            Some(other) => {
                return Err(DcgstError::Config(format!("unknown method {other:?}")))
            }
        },
    };

    let mut train = TrainConfig::default();
    macro_rules! resolve {
        ($field:ident) => {
            if let Some(v) = cli.$field.or(file.$field) {
                train.$field = v;
            }
        };
    }
    resolve!(alpha);
    resolve!(beta);
    resolve!(gamma);
    resolve!(lambda);
    resolve!(tau);
    resolve!(hidden);
    resolve!(ep_dropout);
    resolve!(lr);
    resolve!(l2);
    resolve!(max_stages);
    resolve!(patience);
    resolve!(q_steps);
    resolve!(pretrain_epochs);
    resolve!(stage_epochs);
    resolve!(ep_pretrain_epochs);
    if let Some(v) = cli.m.or(file.m) {
        train.m = Some(v);
    }
    if let Some(v) = cli.e.or(file.e) {
        train.e = Some(v);
    }
    if let Some(v) = cli.freeze_gumbel.or(file.freeze_gumbel) {
        train.freeze_gumbel = Some(v);
    }
    train.logistic_noise = cli.logistic_noise || file.logistic_noise.unwrap_or(false);

    let seeds = match cli.seeds.or(file.seeds) {
        Some(s) => parse_seeds(&s)?,
        None => vec![0],
    };
    let out_dir = cli
        .out_dir
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("runs"));

    Ok(RunSpec {
        dataset: DatasetSpec::parse(&cli.dataset)?,
        label_rate,
        mode,
        method,
        train,
        seeds,
        out_dir,
    })
}

/// Fixed-point decimal with 6 significant digits.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if !v.is_finite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    let dec = (5 - mag).max(0) as usize;
    format!("{v:.dec$}")
}

fn stage_rows(run_id: &str, seed: u64, result: &RunResult) -> String {
    let mut out = String::new();
    for r in &result.stages {
        out.push_str(&format!(
            "{run_id},{seed},{},{},{},{},{},{},{},{}\n",
            r.stage,
            fmt_sig(r.cmd_value),
            fmt_sig(r.acc_train),
            fmt_sig(r.acc_val),
            fmt_sig(r.acc_test),
            r.aug_size,
            fmt_sig(r.loss),
            r.seconds.round() as i64,
        ));
    }
    out
}

fn worker_count(n_seeds: usize) -> usize {
    let cap = std::env::var("DCGST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(1);
    cap.min(n_seeds).max(1)
}

/// Run every seed of the spec, merging outputs in seed order, and write
/// `stages.csv` and `summary.csv` under `out_dir`. Partial results of
/// completed seeds are flushed even when a later seed fails.
pub fn run_experiment(spec: &RunSpec) -> Result<()> {
    let g = spec.dataset.load()?;
    fs::create_dir_all(&spec.out_dir)?;

    let run_one = |seed: u64| -> Result<RunResult> {
        let split = make_split(&g, spec.label_rate, spec.mode, seed)?;
        let cfg = TrainConfig {
            seed,
            ..spec.train.clone()
        };
        match spec.method {
            Method::Gcn => gcn_baseline(&g, &split, &cfg),
            Method::St => st_baseline(&g, &split, &cfg),
            Method::Dcgst => run_self_training(&g, &split, &cfg),
        }
    };

    let workers = worker_count(spec.seeds.len());
    let mut results: Vec<Option<Result<RunResult>>> = Vec::new();
    results.resize_with(spec.seeds.len(), || None);
    if workers <= 1 {
        for (i, &seed) in spec.seeds.iter().enumerate() {
            results[i] = Some(run_one(seed));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<RunResult>>>> =
            spec.seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= spec.seeds.len() {
                        break;
                    }
                    let r = run_one(spec.seeds[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            results[i] = slot.into_inner().unwrap();
        }
    }

    let run_id = format!("{}-r{}", spec.method.name(), spec.label_rate);
    let mut stages_csv = String::from(STAGES_HEADER);
    stages_csv.push('\n');
    let mut finals = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r.expect("every seed slot filled") {
            Ok(res) => {
                stages_csv.push_str(&stage_rows(&run_id, spec.seeds[i], &res));
                finals.push(res.student_test_acc);
                let mut preds = String::from("node,label\n");
                for &(node, label) in &res.predictions {
                    preds.push_str(&format!("{node},{label}\n"));
                }
                fs::write(
                    spec.out_dir.join(format!("predictions-{}.csv", spec.seeds[i])),
                    preds,
                )?;
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }

    let mean = if finals.is_empty() {
        f64::NAN
    } else {
        finals.iter().sum::<f64>() / finals.len() as f64
    };
    let std = if finals.len() > 1 {
        let var = finals.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
            / (finals.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    let summary_csv = format!(
        "{SUMMARY_HEADER}\n{run_id},{},{},{},{},{}\n",
        spec.method.name(),
        fmt_sig(spec.label_rate),
        fmt_sig(mean),
        fmt_sig(std),
        finals.len(),
    );

    fs::write(spec.out_dir.join("stages.csv"), stages_csv)?;
    fs::write(spec.out_dir.join("summary.csv"), summary_csv)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Entry point used by the binary: returns the process exit code.
pub fn main_from_args(argv: &[String]) -> i32 {
    let spec = match parse_config(argv) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match run_experiment(&spec) {
        Ok(()) => {
            println!(
                "wrote {} and {}",
                spec.out_dir.join("stages.csv").display(),
                spec.out_dir.join("summary.csv").display()
            );
            0
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            1
        }
    }
}

pub fn read_csv(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}
