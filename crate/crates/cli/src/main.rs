use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use rawgnn::autodiff::GradCheckConfig;
use rawgnn::checks::gradient_suite;
use rawgnn::graph::{load_dataset, make_splits, read_splits, save_dataset, write_splits, DatasetPaths};
use rawgnn::metrics::DatasetStats;
use rawgnn::synth::{planted_partition, PlantedPartition};
use rawgnn::train::{
    dataset_name, export_embeddings, load_checkpoint, parse_config, run_experiment, save_checkpoint,
    train_one_split, ExperimentSpec, SEED_ENV,
};
use rawgnn::walker::WalkTable;

#[derive(Parser)]
#[command(name = "rawgnn", version, about = "Random-walk path aggregation GNN for node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

const OVERRIDES: &str = "Any config key as `--key value`, e.g. `--path-length 5 --seed 3`";

#[derive(Subcommand)]
enum Command {
    /// Print `name n |E| f |C| LHR FHR` for each dataset directory.
    Stats {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Train on one split and write the best checkpoint.
    Train {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, help = format!("{OVERRIDES}; also `--split k` and `--out path`"))]
        args: Vec<String>,
    },
    /// Train on every split; writes a JSON result file and prints a table.
    Experiment {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, help = format!("{OVERRIDES}; also `--out path`"))]
        args: Vec<String>,
    },
    /// Write node embeddings of a checkpoint, one line per node.
    ExportEmbeddings {
        checkpoint: PathBuf,
        dataset: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare reverse-mode gradients of every op and the full model with finite differences.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the train/val/test splits an experiment would use.
    Splits {
        config: PathBuf,
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, help = OVERRIDES)]
        args: Vec<String>,
    },
    /// Dump one neighborhood sample per strategy as `strategy<TAB>target<TAB>path` lines.
    Walks {
        config: PathBuf,
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, help = OVERRIDES)]
        args: Vec<String>,
    },
    /// Generate a planted-partition dataset directory.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 30)]
        features: usize,
        #[arg(long, default_value_t = 4.0)]
        avg_degree: f64,
        #[arg(long, default_value_t = 0.8)]
        homophily: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Splits `--key value` and `--key=value` arguments into pairs.
fn flag_pairs(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            bail!("unexpected argument `{arg}`; overrides look like `--key value`");
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().with_context(|| format!("`--{key}` needs a value"))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn take(pairs: &mut Vec<(String, String)>, key: &str) -> Option<String> {
    let pos = pairs.iter().rposition(|(k, _)| k == key)?;
    let value = pairs.remove(pos).1;
    pairs.retain(|(k, _)| k != key);
    Some(value)
}

/// Reads a config file, resolving its relative paths against the file's
/// directory, then applies the seed variable and `overrides`.
fn load_spec(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut file = parse_config(&text)?;
    for (k, v) in &mut file {
        if (k == "dataset" || k == "splits_file") && !v.is_empty() && Path::new(v.as_str()).is_relative() {
            *v = base.join(&*v).display().to_string();
        }
    }
    let env = std::env::var(SEED_ENV).ok();
    Ok(ExperimentSpec::resolve(&file, env.as_deref(), overrides)?)
}

fn stats(datasets: &[PathBuf]) -> Result<()> {
    for dir in datasets {
        let (g, labels) = load_dataset(&DatasetPaths::in_dir(dir)).with_context(|| format!("loading {}", dir.display()))?;
        let name = dir.file_name().map_or("dataset".into(), |s| s.to_string_lossy());
        println!("{}", DatasetStats::compute(&name, &g, &labels)?);
    }
    Ok(())
}

fn train(config: &Path, args: &[String]) -> Result<()> {
    let mut pairs = flag_pairs(args)?;
    let k: usize = take(&mut pairs, "split").map_or(Ok(0), |s| s.parse()).context("--split")?;
    let out = take(&mut pairs, "out");
    let spec = load_spec(config, &pairs)?;
    let (g, labels) = load_dataset(&DatasetPaths::in_dir(&spec.dataset))?;
    let split = match &spec.splits_file {
        Some(p) => read_splits(p)?.splits.into_iter().nth(k),
        None => make_splits(&labels, (spec.train_ratio, spec.val_ratio), k + 1, spec.seed)?
            .splits
            .pop(),
    }
    .with_context(|| format!("no split {k}"))?;
    let seed = spec.seed.wrapping_add(k as u64);
    info!("training {} split {k} with seed {seed}", dataset_name(&spec));
    let outcome = train_one_split(&spec, &g, &labels, &split, seed)?;

    let out = out.map(PathBuf::from).unwrap_or_else(|| format!("{}-split{k}.ckpt", dataset_name(&spec)).into());
    save_checkpoint(&out, &outcome.model, &spec.walk_strategies()?)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "split {k}: {} epochs, best epoch {} val {:.2}% test {:.2}% (final train loss {:.4}, {:.1}s)",
        outcome.history.len(),
        outcome.best_epoch,
        100.0 * outcome.best_val_acc,
        100.0 * outcome.test_acc,
        last.train_loss,
        outcome.wall_clock.as_secs_f64()
    );
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn experiment(config: &Path, args: &[String]) -> Result<()> {
    let mut pairs = flag_pairs(args)?;
    let out = take(&mut pairs, "out");
    let spec = load_spec(config, &pairs)?;
    let result = run_experiment(&spec)?;
    let out = out
        .map(PathBuf::from)
        .unwrap_or_else(|| format!("{}-result.json", result.dataset).into());
    fs::write(&out, result.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", result.table());
    println!("result written to {}", out.display());
    if result.summary.is_none() {
        bail!("every split failed");
    }
    Ok(())
}

fn export(checkpoint: &Path, dataset: &Path, out: &Path, seed: u64) -> Result<()> {
    let (model, strategies) = load_checkpoint(checkpoint)?;
    let (g, _) = load_dataset(&DatasetPaths::in_dir(dataset))?;
    let mut w = BufWriter::new(File::create(out)?);
    export_embeddings(&model, &strategies, &g, seed, &mut w)?;
    w.flush()?;
    println!("{} embeddings of width {} written to {}", g.n(), model.config.d_final(), out.display());
    Ok(())
}

fn grad_check(eps: f64, tol: f64, seed: u64) -> Result<bool> {
    let cfg = GradCheckConfig {
        eps,
        seed,
        ..GradCheckConfig::default()
    };
    let mut ok = true;
    for r in gradient_suite(cfg)? {
        let pass = r.passed(tol);
        ok &= pass;
        println!(
            "{:<6} {:<14} max rel error {:.3e} ({} checked, {} at kinks)",
            if pass { "ok" } else { "FAIL" },
            r.name,
            r.report.max_rel_error,
            r.report.checked,
            r.report.excluded
        );
    }
    Ok(ok)
}

fn splits(config: &Path, out: &Path, args: &[String]) -> Result<()> {
    let spec = load_spec(config, &flag_pairs(args)?)?;
    let (_, labels) = load_dataset(&DatasetPaths::in_dir(&spec.dataset))?;
    let set = make_splits(&labels, (spec.train_ratio, spec.val_ratio), spec.n_splits, spec.seed)?;
    write_splits(out, &set)?;
    println!("{} splits written to {}", set.splits.len(), out.display());
    Ok(())
}

fn walks(config: &Path, out: &Path, args: &[String]) -> Result<()> {
    let spec = load_spec(config, &flag_pairs(args)?)?;
    let (g, _) = load_dataset(&DatasetPaths::in_dir(&spec.dataset))?;
    let mut w = BufWriter::new(File::create(out)?);
    for (s, ws) in spec.walk_strategies()?.iter().enumerate() {
        WalkTable::sample(&g, ws, spec.seed, s as u64)?.write_corpus(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Stats { datasets } => stats(&datasets)?,
        Command::Train { config, args } => train(&config, &args)?,
        Command::Experiment { config, args } => experiment(&config, &args)?,
        Command::ExportEmbeddings {
            checkpoint,
            dataset,
            out,
            seed,
        } => export(&checkpoint, &dataset, &out, seed)?,
        Command::GradCheck { eps, tol, seed } => return grad_check(eps, tol, seed),
        Command::Splits { config, out, args } => splits(&config, &out, &args)?,
        Command::Walks { config, out, args } => walks(&config, &out, &args)?,
        Command::Synth {
            out,
            nodes,
            classes,
            features,
            avg_degree,
            homophily,
            seed,
        } => {
            let cfg = PlantedPartition {
                nodes,
                classes,
                features,
                avg_degree,
                homophily,
                seed,
                ..PlantedPartition::default()
            };
            let (g, labels) = planted_partition(&cfg)?;
            fs::create_dir_all(&out)?;
            save_dataset(&DatasetPaths::in_dir(&out), &g, &labels)?;
            println!("{} nodes, {} edges written to {}", g.n(), g.edge_count(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
