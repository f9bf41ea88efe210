//! Command-line interface: generate, measure, train, eval, ablate, sweep.
//!
//! Configs are JSON files; `--set key.path=value` overrides individual
//! entries before anything runs, and the fully-resolved config lands next
//! to the other artifacts in a content-addressed run directory, so every
//! result can be reproduced from what its directory contains.
//!
//! Exit codes: 1 usage, 2 configuration, 3 data, 4 runtime.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::io::{load_event_graph, save_event_graph, LoadSchema};
use crate::graph::metrics::{
    static_edge_heterophily, temporal_changing_ratio, temporal_edge_heterophily,
};
use crate::graph::{EventGraph, IncidenceDirection, IncidenceIndex};
use crate::model::ThegcnModel;
use crate::sampler::SampledContext;
use crate::synthgen::{generate_synthetic, SynthSpec};
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::training::suite::{run_ablation_suite, run_param_study};
use crate::training::{
    collect_attention, evaluate, model_for, resolved_splits, sample_batch, train, Prediction,
    RunConfig, Splits,
};
use crate::{derive_u64, seed_domain};

#[derive(Debug, Parser)]
#[command(name = "thegcn", version, about = "Temporal heterophilic graph learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic event graph from a spec file.
    Generate(GenerateArgs),
    /// Measure heterophily and label-change statistics of a dataset.
    Measure(MeasureArgs),
    /// Train a model per a config file.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a split.
    Eval(EvalArgs),
    /// Train the full model and its two reductions on shared splits.
    Ablate(AblateArgs),
    /// Grid study over sampler size and message-passing depth.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Override a spec entry, e.g. --set spatial_heterophily=0.5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the dataset files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    node_feats: Option<PathBuf>,
    /// Treat events as directed (incidence on the destination side only).
    #[arg(long)]
    directed: bool,
    #[arg(long)]
    num_nodes: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Time at which the static edge heterophily resolves labels
    /// (defaults to the last label record).
    #[arg(long)]
    static_at: Option<f64>,
    /// Changing-ratio window A,B (defaults to the full label span).
    #[arg(long, value_name = "A,B")]
    changing_window: Option<String>,
    /// Per-node window probe T1,T2,NODE; repeatable.
    #[arg(long, value_name = "T1,T2,NODE")]
    probe: Vec<String>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run config (JSON with `data` and `run` sections).
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. --set run.learning_rate=0.05
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set run.seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for the content-addressed run directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dump per-event edge-weight diagnostics over all labeled queries.
    #[arg(long)]
    dump_attention: bool,
    /// Dump the sampled context of every labeled query.
    #[arg(long)]
    dump_contexts: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Checkpoint produced by a training run.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which queries to score: train, val, test, or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dump_attention: bool,
    #[arg(long)]
    dump_contexts: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seeds per variant, starting at the config's seed.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Sampler-cap grid, comma separated.
    #[arg(long, default_value = "5,10,20")]
    n_max_grid: String,
    /// Message-passing depth grid, comma separated.
    #[arg(long, default_value = "1,2")]
    layers_grid: String,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Where a training config finds its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub events: String,
    pub node_feats: Option<String>,
    pub labels: String,
    pub directed: bool,
    pub num_nodes: Option<usize>,
    pub num_classes: Option<usize>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            events: String::new(),
            node_feats: None,
            labels: String::new(),
            directed: false,
            num_nodes: None,
            num_classes: None,
        }
    }
}

impl DataSpec {
    fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::Config("config is missing data.events".into()));
        }
        if self.labels.is_empty() {
            return Err(Error::Config("config is missing data.labels".into()));
        }
        Ok(())
    }

    fn load(&self) -> Result<EventGraph> {
        self.validate()?;
        let schema = LoadSchema {
            directed: self.directed,
            num_nodes: self.num_nodes,
            num_classes: self.num_classes,
        };
        load_event_graph(
            Path::new(&self.events),
            self.node_feats.as_deref().map(Path::new),
            Path::new(&self.labels),
            &schema,
        )
    }
}

/// A full training configuration: the dataset plus the run parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub data: DataSpec,
    pub run: RunConfig,
}

/// Entry point used by `main`; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Measure(args) => cmd_measure(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn read_config_value(path: &Path) -> Result<serde_json::Value> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))
}

/// Applies dotted-key overrides to a JSON tree. Values parse as JSON when
/// they can and fall back to strings, so `--set run.epochs=5` is a number
/// and `--set data.events=e.csv` is a string.
pub fn apply_overrides(value: &mut serde_json::Value, sets: &[String]) -> Result<()> {
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{s}' is not KEY=VALUE")))?;
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let parts: Vec<&str> = path.split('.').collect();
        let (last, ancestors) = parts.split_last().expect("split produces at least one part");
        let mut cur = &mut *value;
        for part in ancestors {
            let obj = match cur {
                serde_json::Value::Object(map) => map,
                _ => {
                    return Err(Error::Config(format!(
                        "override path '{path}' crosses a non-object at '{part}'"
                    )))
                }
            };
            cur = obj
                .entry((*part).to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        match cur {
            serde_json::Value::Object(map) => {
                map.insert((*last).to_string(), parsed);
            }
            _ => {
                return Err(Error::Config(format!(
                    "override path '{path}' crosses a non-object at '{last}'"
                )))
            }
        }
    }
    Ok(())
}

fn from_value<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("serialization failed: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Content-addressed run directory: the same command on the same resolved
/// config always lands in the same place.
fn make_run_dir(out: &Path, salt: &str, resolved_json: &str) -> Result<PathBuf> {
    let mut hasher = Sha256::new();
    hasher.update(salt.as_bytes());
    hasher.update(resolved_json.as_bytes());
    let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let dir = out.join(format!("run-{}", &hex[..12]));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut text = String::from("node,time,label,pred\n");
    for p in predictions {
        text.push_str(&format!("{},{},{},{}\n", p.node, p.time, p.label, p.pred));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct EntryDump {
    event: u32,
    hop: usize,
    anchor_node: usize,
    anchor_time: f64,
    counterpart: usize,
    delta: f64,
}

#[derive(Serialize)]
struct ContextDump {
    node: usize,
    time: f64,
    window: [f64; 2],
    events: Vec<EntryDump>,
}

fn dump_contexts(contexts: &[SampledContext]) -> Vec<ContextDump> {
    contexts
        .iter()
        .map(|ctx| ContextDump {
            node: ctx.target.0,
            time: ctx.target.1,
            window: [ctx.window.0, ctx.window.1],
            events: ctx
                .entries
                .iter()
                .map(|e| EntryDump {
                    event: e.event_idx,
                    hop: e.hop,
                    anchor_node: e.anchor.0,
                    anchor_time: e.anchor.1,
                    counterpart: e.counterpart,
                    delta: e.delta,
                })
                .collect(),
        })
        .collect()
}

fn write_optional_dumps(
    dir: &Path,
    g: &EventGraph,
    model: &ThegcnModel,
    cfg: &RunConfig,
    attention: bool,
    contexts: bool,
) -> Result<()> {
    if !attention && !contexts {
        return Ok(());
    }
    let queries = g.labeled_queries();
    let index = IncidenceIndex::build(g, cfg.incidence);
    let stream = derive_u64(&[cfg.seed, seed_domain::EVAL]);
    if attention {
        let records = collect_attention(model, g, &index, cfg, &queries, stream)?;
        write_json(&dir.join("attention.json"), &records)?;
    }
    if contexts {
        let mut all = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(cfg.batch_size) {
            all.extend(sample_batch(g, &index, cfg, chunk, stream)?);
        }
        write_json(&dir.join("contexts.json"), &dump_contexts(&all))?;
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut value = read_config_value(&args.spec)?;
    apply_overrides(&mut value, &args.set)?;
    if let Some(seed) = args.seed {
        apply_overrides(&mut value, &[format!("seed={seed}")])?;
    }
    let spec: SynthSpec = from_value(value)?;
    let (graph, meta) = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    let mut written = save_event_graph(&graph, &args.out)?;
    let meta_path = args.out.join("meta.json");
    write_json(&meta_path, &meta)?;
    written.push(meta_path);
    let spec_path = args.out.join("resolved_spec.json");
    write_json(&spec_path, &spec)?;
    written.push(spec_path);
    let mut stdout = std::io::stdout();
    for path in &written {
        writeln!(stdout, "{}", path.display())?;
    }
    writeln!(
        stdout,
        "{} events, {} label records, realized heterophily {}",
        graph.events().len(),
        graph.labeled_queries().len(),
        meta.realized_heterophily
    )?;
    Ok(())
}

fn parse_pair(raw: &str, what: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("{what} '{raw}' must be A,B")));
    }
    let a: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{what} '{raw}' has a non-numeric bound")))?;
    let b: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{what} '{raw}' has a non-numeric bound")))?;
    Ok((a, b))
}

fn parse_probe(raw: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("probe '{raw}' must be T1,T2,NODE")));
    }
    let t1: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("probe '{raw}' has a non-numeric time")))?;
    let t2: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("probe '{raw}' has a non-numeric time")))?;
    let node: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("probe '{raw}' has a bad node id")))?;
    if !(t1 < t2) {
        return Err(Error::Config(format!("probe '{raw}' needs T1 < T2")));
    }
    Ok((t1, t2, node))
}

fn cmd_measure(args: MeasureArgs) -> Result<()> {
    let schema = LoadSchema {
        directed: args.directed,
        num_nodes: args.num_nodes,
        num_classes: args.num_classes,
    };
    let g = load_event_graph(
        &args.events,
        args.node_feats.as_deref(),
        &args.labels,
        &schema,
    )?;
    let queries = g.labeled_queries();
    let label_span = match (queries.first(), queries.last()) {
        (Some(_), Some(_)) => {
            let times: Vec<f64> = queries.iter().map(|q| q.time).collect();
            Some((times.iter().cloned().fold(f64::INFINITY, f64::min), times
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)))
        }
        _ => None,
    };

    let static_at = args
        .static_at
        .or(label_span.map(|(_, hi)| hi))
        .unwrap_or(0.0);
    let (static_h, static_note) = match static_edge_heterophily(&g, static_at) {
        Ok(v) => (Some(v), None),
        Err(Error::Contract(msg)) | Err(Error::Coverage(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };

    let window = match &args.changing_window {
        Some(raw) => Some(parse_pair(raw, "changing window")?),
        None => label_span,
    };
    let (ratio, ratio_note) = match window {
        Some(w) => match temporal_changing_ratio(&g, w) {
            Ok(v) => (Some(v), None),
            Err(Error::Contract(msg)) => (None, Some(msg)),
            Err(e) => return Err(e),
        },
        None => (None, Some("no label records to measure".to_string())),
    };

    let index = IncidenceIndex::build(
        &g,
        if args.directed { IncidenceDirection::DstOnly } else { IncidenceDirection::Both },
    );
    let mut probes = Vec::new();
    for raw in &args.probe {
        let (t1, t2, node) = parse_probe(raw)?;
        let value = temporal_edge_heterophily(&g, &index, t1, t2, node)?;
        probes.push(serde_json::json!({
            "t1": t1, "t2": t2, "node": node, "value": value,
        }));
    }

    let report = serde_json::json!({
        "num_nodes": g.num_nodes(),
        "num_events": g.events().len(),
        "num_label_records": queries.len(),
        "static_at": static_at,
        "static_heterophily": static_h,
        "static_heterophily_note": static_note,
        "changing_window": window.map(|(a, b)| vec![a, b]),
        "changing_ratio": ratio,
        "changing_ratio_note": ratio_note,
        "probes": probes,
    });
    let text = to_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn load_train_spec(config: &Path, sets: &[String], seed: Option<u64>) -> Result<TrainSpec> {
    let mut value = read_config_value(config)?;
    apply_overrides(&mut value, sets)?;
    if let Some(seed) = seed {
        apply_overrides(&mut value, &[format!("run.seed={seed}")])?;
    }
    let spec: TrainSpec = from_value(value)?;
    spec.data.validate()?;
    spec.run.validate()?;
    Ok(spec)
}

fn split_of(splits: &Splits, which: &str) -> Result<Vec<crate::graph::LabeledQuery>> {
    Ok(match which {
        "train" => splits.train.clone(),
        "val" => splits.val.clone(),
        "test" => splits.test.clone(),
        "all" => {
            let mut all = splits.train.clone();
            all.extend_from_slice(&splits.val);
            all.extend_from_slice(&splits.test);
            all
        }
        other => {
            return Err(Error::Config(format!(
                "unknown split '{other}' (expected train, val, test, or all)"
            )))
        }
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let spec = load_train_spec(&args.config, &args.set, args.seed)?;
    let resolved = to_pretty(&spec)?;
    let dir = make_run_dir(&args.out, "train", &resolved)?;
    std::fs::write(dir.join("resolved_config.json"), format!("{resolved}\n"))?;

    let g = spec.data.load()?;
    let (model, report) = train(&g, &spec.run)?;
    write_json(&dir.join("report.json"), &report)?;
    save_checkpoint(&dir.join("checkpoint.json"), &model.named_params())?;

    let (splits, _) = resolved_splits(&g, &spec.run)?;
    let index = IncidenceIndex::build(&g, spec.run.incidence);
    let eval_stream = derive_u64(&[spec.run.seed, seed_domain::EVAL]);
    let test_eval = evaluate(&model, &g, &index, &spec.run, &splits.test, eval_stream)?;
    write_predictions(&dir.join("predictions.csv"), &test_eval.predictions)?;

    write_optional_dumps(&dir, &g, &model, &spec.run, args.dump_attention, args.dump_contexts)?;

    println!("run dir: {}", dir.display());
    println!(
        "best epoch {} val {:?} test {:?}",
        report.best_epoch, report.best_val_accuracy, report.test_accuracy
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let spec = load_train_spec(&args.config, &args.set, None)?;
    let g = spec.data.load()?;
    let mut model = model_for(&g, &spec.run)?;
    let tensors: BTreeMap<String, crate::tensor::Tensor> = load_checkpoint(&args.checkpoint)?;
    model.restore(&tensors)?;

    let (splits, _) = resolved_splits(&g, &spec.run)?;
    let queries = split_of(&splits, &args.split)?;
    let index = IncidenceIndex::build(&g, spec.run.incidence);
    let stream = derive_u64(&[spec.run.seed, seed_domain::EVAL]);
    let eval = evaluate(&model, &g, &index, &spec.run, &queries, stream)?;

    let resolved = to_pretty(&spec)?;
    let dir = make_run_dir(&args.out, &format!("eval:{}", args.split), &resolved)?;
    std::fs::write(dir.join("resolved_config.json"), format!("{resolved}\n"))?;
    write_json(
        &dir.join("eval_report.json"),
        &serde_json::json!({
            "split": args.split,
            "checkpoint": args.checkpoint.display().to_string(),
            "num_queries": queries.len(),
            "accuracy": eval.accuracy,
        }),
    )?;
    write_predictions(&dir.join("predictions.csv"), &eval.predictions)?;
    write_optional_dumps(&dir, &g, &model, &spec.run, args.dump_attention, args.dump_contexts)?;

    println!("run dir: {}", dir.display());
    println!("split {} accuracy {:?} over {} queries", args.split, eval.accuracy, queries.len());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let spec = load_train_spec(&args.config, &args.set, None)?;
    let resolved = to_pretty(&spec)?;
    let dir = make_run_dir(&args.out, &format!("ablate:{}", args.seeds), &resolved)?;
    std::fs::write(dir.join("resolved_config.json"), format!("{resolved}\n"))?;

    let g = spec.data.load()?;
    let report = run_ablation_suite(&g, &spec.run, args.seeds)?;
    write_json(&dir.join("ablation.json"), &report)?;

    println!("run dir: {}", dir.display());
    for v in &report.variants {
        println!(
            "{:<18} mean {:.4} std {:.4} accs {:?}",
            v.name, v.mean_accuracy, v.std_accuracy, v.test_accuracies
        );
    }
    println!("signed histogram {:?}", report.signed_histogram);
    Ok(())
}

fn parse_grid(raw: &str, what: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{what} '{raw}' has a non-integer entry")))
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let spec = load_train_spec(&args.config, &args.set, None)?;
    let n_max_grid = parse_grid(&args.n_max_grid, "n_max grid")?;
    let layers_grid = parse_grid(&args.layers_grid, "layers grid")?;
    let resolved = to_pretty(&spec)?;
    let salt = format!("sweep:{}:{}:{}", args.n_max_grid, args.layers_grid, args.seeds);
    let dir = make_run_dir(&args.out, &salt, &resolved)?;
    std::fs::write(dir.join("resolved_config.json"), format!("{resolved}\n"))?;

    let g = spec.data.load()?;
    let report = run_param_study(&g, &spec.run, &n_max_grid, &layers_grid, args.seeds)?;
    write_json(&dir.join("sweep.json"), &report)?;

    println!("run dir: {}", dir.display());
    for cell in &report.cells {
        println!(
            "n_max {:>3} layers {} mean {:.4} std {:.4}",
            cell.n_max, cell.smp_layers, cell.mean_accuracy, cell.std_accuracy
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_rewrite_nested_and_typed_values() {
        let mut v = serde_json::json!({"run": {"epochs": 3}, "data": {"events": "a.csv"}});
        apply_overrides(
            &mut v,
            &[
                "run.epochs=9".to_string(),
                "run.learning_rate=0.5".to_string(),
                "data.events=b.csv".to_string(),
                "run.window_width=null".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(v["run"]["epochs"], serde_json::json!(9));
        assert_eq!(v["run"]["learning_rate"], serde_json::json!(0.5));
        assert_eq!(v["data"]["events"], serde_json::json!("b.csv"));
        assert!(v["run"]["window_width"].is_null());
    }

    #[test]
    fn malformed_overrides_are_config_errors() {
        let mut v = serde_json::json!({});
        assert!(matches!(
            apply_overrides(&mut v, &["no_equals_sign".to_string()]),
            Err(Error::Config(_))
        ));
        let mut v = serde_json::json!({"a": 3});
        assert!(matches!(
            apply_overrides(&mut v, &["a.b=1".to_string()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn train_spec_rejects_unknown_keys_and_missing_paths() {
        let ok: TrainSpec = serde_json::from_str(
            r#"{"data": {"events": "e.csv", "labels": "l.csv"}, "run": {"epochs": 1}}"#,
        )
        .unwrap();
        assert_eq!(ok.run.epochs, 1);
        assert!(serde_json::from_str::<TrainSpec>(r#"{"data": {}, "runs": {}}"#).is_err());
        let missing: TrainSpec = serde_json::from_str(r#"{"run": {}}"#).unwrap();
        assert!(matches!(missing.data.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn probe_and_grid_parsing_validates() {
        assert_eq!(parse_probe("1.5,2.5,7").unwrap(), (1.5, 2.5, 7));
        assert!(parse_probe("3,2,7").is_err());
        assert!(parse_probe("1,2").is_err());
        assert!(parse_probe("a,2,7").is_err());
        assert_eq!(parse_grid("5,10,20", "g").unwrap(), vec![5, 10, 20]);
        assert!(parse_grid("5,x", "g").is_err());
        assert_eq!(parse_pair("0,9.5", "w").unwrap(), (0.0, 9.5));
        assert!(parse_pair("1", "w").is_err());
    }

    #[test]
    fn run_dirs_are_stable_per_config_and_distinct_per_command() {
        let dir = tempfile::tempdir().unwrap();
        let a = make_run_dir(dir.path(), "train", "{}").unwrap();
        let b = make_run_dir(dir.path(), "train", "{}").unwrap();
        let c = make_run_dir(dir.path(), "ablate:5", "{}").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.file_name().unwrap().to_string_lossy().starts_with("run-"));
    }
}
