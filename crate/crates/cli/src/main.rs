mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowlink::analysis::{self, ConsistencyReport};
use flowlink::checkpoint::{self, BEST_DIR, TENSOR_FILE};
use flowlink::dataset::{self, DatasetSplit, NetworkKind, Split};
use flowlink::model::{GavConfig, GavModel, LayerKind};
use flowlink::pipeline::{self, RunConfig};
use flowlink::train::{self, SampleSet};
use flowlink::{Error, Result};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "flowlink", version, about = "Link prediction on flow-driven spatial networks")]
struct Cli {
    /// Worker threads; 0 uses every core. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic spatial network as nodes.csv and edges.csv.
    Synth(SynthArgs),
    /// Sample negatives and write the train/val/test splits.
    Prepare(PrepareArgs),
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Report AUC and Hits@k for a checkpoint or a score file.
    Eval(EvalArgs),
    /// Write per-link predictions as CSV.
    Predict(PredictArgs),
    /// Export flipped flow edges and scale factors as JSON lines.
    Explain(PredictArgs),
    /// Translation or rotation sweep of predictions.
    Invariance(InvarianceArgs),
    /// Score the mock bifurcation over opening angles.
    Toy(ToyArgs),
    /// Train with an ablation layer in place of the GAV layer.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "vessel-like-tree")]
    kind: String,
    #[arg(long, default_value_t = 5000)]
    nodes: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// nodes.csv with columns id,x,y[,z].
    #[arg(long)]
    nodes: PathBuf,
    /// edges.csv with columns u,v.
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling radius; defaults to mean + 2 std of edge lengths.
    #[arg(long)]
    delta: Option<f64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, e.g. --set lr=0.01 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_pair)]
    overrides: Vec<(String, String)>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for checkpoints, history and metrics.json.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    layer: String,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, requires = "checkpoint", conflicts_with = "scores")]
    data: Option<PathBuf>,
    /// Run directory or checkpoint directory.
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    /// CSV with label and score (or prob) columns.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Seed of the Hits@k negative pool; defaults to the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Translate,
    Rotate,
}

#[derive(Args, Debug)]
struct InvarianceArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model; an untrained one from --seed otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Number of target links.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Translations per target.
    #[arg(long, default_value_t = 10)]
    shifts: usize,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ToyArgs {
    /// Opening angle in degrees (repeatable); defaults to 10, 20, ..., 180.
    #[arg(long)]
    psi: Vec<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn env_seed() -> Option<String> {
    std::env::var(config::SEED_ENV).ok()
}

fn seed_or_env(flag: Option<u64>) -> Result<u64> {
    config::resolve_seed(flag, None, env_seed().as_deref())
}

fn parse_split(raw: &str) -> Result<Option<Split>> {
    if raw == "all" {
        Ok(None)
    } else {
        raw.parse().map(Some)
    }
}

fn samples_of(data: &DatasetSplit, split: Option<Split>) -> Vec<dataset::LinkSample> {
    data.samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .copied()
        .collect()
}

/// Accepts a run directory (uses its best checkpoint) or a checkpoint directory.
fn load_model(path: &Path) -> Result<GavModel> {
    let dir = if path.join(TENSOR_FILE).exists() {
        path.to_path_buf()
    } else {
        path.join(BEST_DIR)
    };
    Ok(checkpoint::load(&dir)?.0)
}

fn check_dim(model: &GavModel, data: &DatasetSplit) -> Result<()> {
    if model.config.d_spatial != data.graph.dim() {
        return Err(Error::Validation(format!(
            "model expects {}-d coordinates, data has {}",
            model.config.d_spatial,
            data.graph.dim()
        )));
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let kind: NetworkKind = a.kind.parse()?;
    let g = dataset::generate_synthetic_network(kind, a.nodes, seed_or_env(a.seed)?)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let files = dataset::DatasetFiles::in_dir(&a.out);
    dataset::save_graph_csv(&g, &files.nodes, &files.edges)?;
    println!("nodes={} edges={} kind={kind}", g.num_nodes(), g.num_edges());
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    let g = dataset::load_graph_csv(&a.nodes, &a.edges)?;
    let ds = dataset::prepare_dataset(&g, seed_or_env(a.seed)?, a.delta)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let meta = dataset::save_dataset(&ds, &a.out)?;
    let c = &meta.counts;
    println!(
        "delta={} positives={} negatives={} train={}/{} val={}/{} test={}/{}",
        meta.delta,
        meta.num_positives,
        meta.num_negatives,
        c.train_pos,
        c.train_neg,
        c.val_pos,
        c.val_neg,
        c.test_pos,
        c.test_neg
    );
    Ok(())
}

fn run_config(a: &TrainArgs, d_spatial: usize) -> Result<RunConfig> {
    let file_pairs = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            config::parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    config::build_run_config(d_spatial, &file_pairs, &a.overrides, a.seed, env_seed().as_deref())
}

fn train_with(a: &TrainArgs, layer: Option<LayerKind>) -> Result<()> {
    let data = dataset::load_dataset(&a.data)?;
    let mut run = run_config(a, data.graph.dim())?;
    if let Some(layer) = layer {
        run.model.layer = layer;
    }
    info!("config {}", serde_json::to_string(&run)?);
    let result = pipeline::run_training(&data, &run, &a.out, a.resume)?;
    println!(
        "layer={} steps={} best_val_auc={}",
        run.model.layer,
        result.state.step,
        result.state.best_val_auc().map_or("n/a".to_string(), |x| format!("{x:?}"))
    );
    println!("{}", result.test.summary_line());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    train_with(&a.train, Some(a.layer.parse()?))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let metrics = if let Some(path) = &a.scores {
        let (pos, neg) = pipeline::load_scores_csv(path)?;
        train::metrics_from_labelled(&pos, &neg, seed_or_env(a.seed)?)?
    } else {
        let (Some(data), Some(ckpt)) = (&a.data, &a.checkpoint) else {
            return Err(Error::Config("eval needs --scores or both --data and --checkpoint".into()));
        };
        let data = dataset::load_dataset(data)?;
        let model = load_model(ckpt)?;
        check_dim(&model, &data)?;
        let set = SampleSet::build(&data.graph, samples_of(&data, parse_split(&a.split)?), model.config.h)?;
        train::evaluate(&model, &set, a.seed.unwrap_or(data.seed))?
    };
    let fmt = |h: Option<f64>| h.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    println!("auc={:?}", metrics.auc);
    println!(
        "hits@100={} hits@50={} hits@20={} positives={} negatives={}",
        fmt(metrics.hits_100),
        fmt(metrics.hits_50),
        fmt(metrics.hits_20),
        metrics.num_positives,
        metrics.num_negatives
    );
    if let Some(out) = &a.out {
        pipeline::write_json(out, &metrics)?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let data = dataset::load_dataset(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    check_dim(&model, &data)?;
    let records = pipeline::predict_split(&model, &data, parse_split(&a.split)?)?;
    dataset::write_text(&a.out, &pipeline::predictions_csv(&records))?;
    println!("predictions={}", records.len());
    Ok(())
}

fn cmd_explain(a: &PredictArgs) -> Result<()> {
    let data = dataset::load_dataset(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    check_dim(&model, &data)?;
    let split = parse_split(&a.split)?;
    let records = analysis::explain(&model, &data.graph, &samples_of(&data, split))?;
    dataset::write_text(&a.out, &pipeline::explain_jsonl(&records)?)?;
    let outcomes: Vec<_> = records
        .iter()
        .map(|r| analysis::consistency(&r.edges, r.u, r.v))
        .collect();
    let report = ConsistencyReport::from_outcomes(&outcomes);
    println!(
        "consistency={:.2}% consistent={} inconsistent={} undefined={}",
        report.percentage, report.consistent, report.inconsistent, report.undefined
    );
    println!("definition: {}", report.definition);
    let predictions = pipeline::predict_split(&model, &data, split)?;
    let stats = analysis::certainty_stats(&predictions);
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "mean_abs_s certain={} ({} samples) uncertain={} ({} samples)",
        fmt(stats.certain_mean_abs_s),
        stats.certain_samples,
        fmt(stats.uncertain_mean_abs_s),
        stats.uncertain_samples
    );
    Ok(())
}

fn model_or_untrained(checkpoint: Option<&Path>, dim: usize, seed: u64) -> Result<GavModel> {
    match checkpoint {
        Some(p) => load_model(p),
        None => GavModel::new(GavConfig::new(dim), seed),
    }
}

/// `0` for exact zeros, scientific notation otherwise.
fn exact_or_sci(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:e}")
    }
}

fn cmd_invariance(a: &InvarianceArgs) -> Result<()> {
    let data = dataset::load_dataset(&a.data)?;
    let seed = seed_or_env(a.seed)?;
    let model = model_or_untrained(a.checkpoint.as_deref(), data.graph.dim(), seed)?;
    check_dim(&model, &data)?;
    let targets: Vec<_> = samples_of(&data, parse_split(&a.split)?).into_iter().take(a.samples).collect();
    if targets.is_empty() {
        return Err(Error::Validation("no target links in the chosen split".into()));
    }
    let dim = data.graph.dim();
    match a.mode {
        Mode::Translate => {
            let shifts = analysis::integer_shifts(dim, a.shifts, seed);
            let reports = targets
                .iter()
                .map(|s| analysis::translation_invariance(&model, &data.graph, s.u, s.v, &shifts))
                .collect::<Result<Vec<_>>>()?;
            let std = reports.iter().map(|r| r.std).fold(0.0, f64::max);
            let diff = reports.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max);
            println!("std={}", exact_or_sci(std));
            println!(
                "max_abs_logit_diff={} targets={} shifts={}",
                exact_or_sci(diff),
                reports.len(),
                shifts.len()
            );
            if let Some(out) = &a.out {
                pipeline::write_json(out, &reports)?;
            }
        }
        Mode::Rotate => {
            let sweeps = targets
                .iter()
                .map(|s| analysis::rotation_sweep(&model, &data.graph, s.u, s.v))
                .collect::<Result<Vec<_>>>()?;
            let axes = sweeps.first().map_or(0, Vec::len);
            for axis in 0..axes {
                let mean = sweeps.iter().map(|s| s[axis].std).sum::<f64>() / sweeps.len() as f64;
                println!("axis={} mean_std={mean:.6}", sweeps[0][axis].axis);
            }
            if let Some(out) = &a.out {
                pipeline::write_json(out, &sweeps)?;
            }
        }
    }
    Ok(())
}

fn cmd_toy(a: &ToyArgs) -> Result<()> {
    let model = model_or_untrained(a.checkpoint.as_deref(), a.dim, seed_or_env(a.seed)?)?;
    let angles: Vec<f64> = if a.psi.is_empty() {
        (1..=18).map(|i| 10.0 * i as f64).collect()
    } else {
        a.psi.clone()
    };
    for psi in angles {
        let rec = analysis::toy_bifurcation(&model, psi)?;
        println!(
            "psi={psi} prob={:.6} angle={:.2} s_target={:.6}",
            rec.probability, rec.angle_degrees, rec.edges[0].s
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => train_with(a, None),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Invariance(a) => cmd_invariance(a),
        Command::Toy(a) => cmd_toy(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
