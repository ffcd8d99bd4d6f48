use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use kbc_core::data::{node_degrees, Dataset, Split};
use kbc_core::decoder::prob;
use kbc_core::eval::{
    default_buckets, evaluate, indegree_report, parse_buckets, report_csv, report_text,
};
use kbc_core::nn::peek_dtype;
use kbc_core::toy::toy_gradcheck;
use kbc_core::train::{fit, parse_grid, restore, sweep, TrainConfig};
use kbc_core::{Dtype, Error, Real, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Knowledge base completion with a weighted graph convolutional encoder and
/// a convolutional translational decoder.
#[derive(Parser, Debug)]
#[command(name = "kbc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log level written to stderr: off, error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode raw triple files into a prepared dataset directory.
    Prepare(PrepareArgs),
    /// Train a model and write checkpoints and a metrics CSV.
    Train(TrainArgs),
    /// Filtered link prediction metrics for a checkpoint, overall and by indegree.
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient check of the full model on a toy graph.
    Gradcheck(GradcheckArgs),
    /// Train every point of a hyperparameter grid and write a combined CSV.
    Sweep(SweepArgs),
    /// Top-k objects for one (subject, relation) query.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Training triples, one `head<TAB>relation<TAB>tail` per line.
    #[arg(long)]
    train: PathBuf,
    /// Validation triples.
    #[arg(long)]
    valid: PathBuf,
    /// Test triples.
    #[arg(long)]
    test: PathBuf,
    /// Optional `entity<TAB>attribute<TAB>type` triples merged into train.
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key=value` config file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared dataset directory; overrides `data` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for config.txt, metrics.csv, best.ckpt and last.ckpt.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Split to rank: train, valid or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Indegree buckets as `lo-hi` ranges, e.g. `0-100,100-200,200-inf`.
    #[arg(long)]
    buckets: Option<String>,
    /// Directory for report.csv and ranks.tsv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Number of nodes in the toy graph.
    #[arg(long, default_value_t = 6)]
    toy_size: usize,
    /// Random seed for parameter initialization.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Grid file with one `key=v1,v2,...` line per swept field.
    #[arg(long)]
    grid: PathBuf,
    /// Base config file for keys not in the grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared dataset directory; overrides `data` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for run_<i>/ and sweep.csv.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Subject entity name.
    #[arg(long)]
    subject: String,
    /// Relation name; `<name>_inv` asks for subjects of `<name>`.
    #[arg(long)]
    relation: String,
    /// Number of objects to print.
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

fn read_config(
    path: Option<&Path>,
    data: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(TrainConfig, PathBuf)> {
    let mut config = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(d) = data {
        config.data = Some(d);
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let dir = config.data.clone().ok_or_else(|| {
        Error::Config("no dataset: pass --data or set data= in the config".into())
    })?;
    Ok((config, dir))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let data = Dataset::from_files(
        &args.train,
        &args.valid,
        &args.test,
        args.attributes.as_deref(),
    )?;
    data.save(&args.out)?;
    print!("{}", data.stats().to_text());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let (config, dir) = read_config(args.config.as_deref(), args.data, args.seed)?;
    let data = Dataset::load(&dir)?;
    info!("training on {} with seed {}", dir.display(), config.seed);
    let s = fit(&config, &data, &args.out)?;
    println!("epochs run: {}", s.epochs_run);
    if let (Some(e), Some(m)) = (s.best_epoch, s.best) {
        println!("best epoch: {e}");
        println!(
            "valid mrr {:.4} hits@1 {:.4} hits@3 {:.4} hits@10 {:.4}",
            m.mrr, m.hits1, m.hits3, m.hits10
        );
    }
    Ok(())
}

fn evaluate_typed<T: Real>(args: &EvaluateArgs, data: &Dataset) -> Result<()> {
    let split = Split::parse(&args.split)?;
    let buckets = match &args.buckets {
        Some(s) => parse_buckets(s)?,
        None => default_buckets(),
    };
    let (_, model, store) = restore::<T>(&args.checkpoint, data)?;
    let scorer = model.scorer(&store)?;
    let (overall, ranks) = evaluate(&data.store, split, &scorer, &data.filter)?;
    let per_bucket = indegree_report(&ranks, &node_degrees(&data.store, &data.vocab), &buckets)?;
    print!("{}", report_text(&overall, &per_bucket));
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
        write(&out.join("report.csv"), &report_csv(&overall, &per_bucket))?;
        let mut tsv = String::from("subject\trelation\tobject\trank\tcandidates\n");
        for r in &ranks {
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                data.vocab.entity_name(r.subject),
                data.vocab.relation_name(r.relation),
                data.vocab.entity_name(r.object),
                r.rank,
                r.candidates
            ));
        }
        write(&out.join("ranks.tsv"), &tsv)?;
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let report = toy_gradcheck(args.toy_size, args.seed)?;
    for p in &report.params {
        println!(
            "{:<28} {:>6} entries  max rel err {:.3e}",
            p.name, p.entries, p.max_rel_error
        );
    }
    let worst = report.max_rel_error();
    if report.passes(GRADCHECK_TOLERANCE) {
        println!("max rel err {worst:.3e} < {GRADCHECK_TOLERANCE:e}");
        Ok(())
    } else {
        println!("max rel err {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        Err(Error::GradCheck(format!("max relative error {worst:.3e}")))
    }
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let (base, dir) = read_config(args.config.as_deref(), args.data, args.seed)?;
    let text = fs::read_to_string(&args.grid).map_err(|e| io_error(&args.grid, e))?;
    let grid = parse_grid(&text)?;
    let data = Dataset::load(&dir)?;
    let (_, csv) = sweep(&base, &grid, &data, &args.out)?;
    print!("{csv}");
    Ok(())
}

fn predict_typed<T: Real>(args: &PredictArgs, data: &Dataset) -> Result<()> {
    let subject = data
        .vocab
        .entity_id(&args.subject)
        .ok_or_else(|| Error::UnknownName {
            kind: "entity",
            name: args.subject.clone(),
        })?;
    let relation = data
        .vocab
        .relation_id(&args.relation)
        .ok_or_else(|| Error::UnknownName {
            kind: "relation",
            name: args.relation.clone(),
        })?;
    let (_, model, store) = restore::<T>(&args.checkpoint, data)?;
    let logits = model.scorer(&store)?.logits(&[(subject, relation)])?;
    let probs = prob(logits.row(0));
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let known = data.filter.objects(subject, relation);
    for (i, &o) in order.iter().take(args.topk).enumerate() {
        let mark = if known.is_some_and(|k| k.contains(&o)) {
            "known"
        } else {
            ""
        };
        println!(
            "{}\t{}\t{:.6}\t{mark}",
            i + 1,
            data.vocab.entity_name(o),
            probs[o].f64()
        );
    }
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| io_error(path, e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => {
            let data = Dataset::load(&a.data)?;
            match peek_dtype(&a.checkpoint)? {
                Dtype::F32 => evaluate_typed::<f32>(&a, &data),
                Dtype::F64 => evaluate_typed::<f64>(&a, &data),
            }
        }
        Command::Gradcheck(a) => gradcheck(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Predict(a) => {
            let data = Dataset::load(&a.data)?;
            match peek_dtype(&a.checkpoint)? {
                Dtype::F32 => predict_typed::<f32>(&a, &data),
                Dtype::F64 => predict_typed::<f64>(&a, &data),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
