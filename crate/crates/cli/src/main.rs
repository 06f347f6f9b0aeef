mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use eigenpool::eigenpool::{corpus_energy_curve, write_energy_csv};
use eigenpool::gnn::{fit_split, write_metrics_csv, Checkpoint, PreparedCorpus};
use eigenpool::synthetic::{cycles_and_stars, DEGREE_SLOTS};
use eigenpool::tudataset::{load_tudataset, make_splits, resolve_dataset_dir, Corpus};
use eigenpool::verify::{run_suite, Fault};

use config::{ModelChoice, RunArgs, RunConfig};

const SYNTHETIC: &str = "synthetic";
const SYNTHETIC_GRAPHS: usize = 400;
const ENERGY_H: usize = 40;

/// Published accuracies per dataset, `(flat GCN, EigenGCN)`.
const REFERENCE: [(&str, f64, f64); 6] = [
    ("ENZYMES", 0.440, 0.650),
    ("PROTEINS", 0.740, 0.751),
    ("DD", 0.759, 0.775),
    ("NCI1", 0.725, 0.760),
    ("NCI109", 0.707, 0.746),
    ("MUTAG", 0.780, 0.801),
];

#[derive(Parser)]
#[command(name = "eigengcn", version, about = "Graph classification with spectral eigenvector pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on repeated random splits and write results.csv, metrics and checkpoints
    Train(RunArgs),
    /// Write the dataset-average energy ratio for H = 1..=40 to energy_curve.csv
    AnalyzeEnergy(RunArgs),
    /// Run the randomized filterbank, gradient and permutation property suite
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instances per property
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Ten instances per property
        #[arg(long)]
        quick: bool,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

enum Failure {
    BadInput(anyhow::Error),
    Failed(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn bad(e: impl Into<anyhow::Error>) -> Failure {
    Failure::BadInput(e.into())
}

fn failed(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Failed(e.into())
}

fn load_corpus(c: &RunConfig) -> Result<Corpus, Failure> {
    if c.dataset == SYNTHETIC {
        let graphs = cycles_and_stars(SYNTHETIC_GRAPHS, c.seed);
        return Ok(Corpus {
            name: SYNTHETIC.into(),
            graphs,
            num_classes: 2,
            feature_dim: DEGREE_SLOTS,
        });
    }
    let dir = resolve_dataset_dir(&c.data_dir, &c.dataset);
    load_tudataset(&dir, &c.dataset)
        .with_context(|| format!("loading dataset {} from {}", c.dataset, c.data_dir.display()))
        .map_err(bad)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(failed)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn reference_for(dataset: &str, model: ModelChoice) -> Option<f64> {
    let key = dataset.replace('&', "").to_ascii_uppercase();
    REFERENCE.iter().find(|r| r.0 == key).map(|&(_, flat, eigen)| match model {
        ModelChoice::Eigengcn => eigen,
        ModelChoice::FlatGcn => flat,
    })
}

fn cmd_train(c: &RunConfig) -> Outcome {
    let corpus = load_corpus(c)?;
    let splits = make_splits(&corpus, c.seed, c.repeats).map_err(bad)?;
    let pre = c.preprocess_config();
    let model = c.model_config();
    eprintln!(
        "{}: {} graphs, {} classes, {} features; {} model, {} splits",
        corpus.name,
        corpus.len(),
        corpus.num_classes,
        corpus.feature_dim,
        c.model.name(),
        c.repeats
    );
    let data = PreparedCorpus::build(&corpus.graphs, corpus.num_classes, model.kind, &pre)
        .context("preprocessing")
        .map_err(failed)?;
    fs::create_dir_all(&c.out)
        .with_context(|| format!("creating {}", c.out.display()))
        .map_err(failed)?;

    let mut results = create(&c.out.join("results.csv"))?;
    let io = |e: std::io::Error| failed(e);
    writeln!(results, "split,test_acc,best_valid_acc,best_epoch").map_err(io)?;
    let mut accs = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let train = c.train_config(i);
        let r = fit_split(&data, &model, split, &train)
            .with_context(|| format!("training split {i}"))
            .map_err(failed)?;
        write_metrics_csv(&r.outcome.metrics, create(&c.out.join(format!("metrics_split{i}.csv")))?).map_err(io)?;
        Checkpoint::new(r.outcome.best.clone(), train, &pre)
            .save(&c.out.join(format!("checkpoint_split{i}.json")))
            .map_err(failed)?;
        writeln!(results, "{i},{},{},{}", r.test_acc, r.outcome.best_valid_acc, r.outcome.best_epoch).map_err(io)?;
        eprintln!(
            "split {i}: test {:.4}, best valid {:.4} at epoch {}",
            r.test_acc, r.outcome.best_valid_acc, r.outcome.best_epoch
        );
        accs.push(r.test_acc);
    }
    let (mean, std) = mean_std(&accs);
    writeln!(results, "mean,{mean},,").map_err(io)?;
    writeln!(results, "std,{std},,").map_err(io)?;
    results.flush().map_err(io)?;

    println!("{} {}: test accuracy {mean:.4} ± {std:.4} over {} splits", corpus.name, c.model.name(), accs.len());
    if let Some(r) = reference_for(&c.dataset, c.model) {
        println!("published {} accuracy on {}: {r:.3}", c.model.name(), c.dataset);
    }
    Ok(())
}

fn cmd_analyze_energy(c: &RunConfig) -> Outcome {
    let corpus = load_corpus(c)?;
    let curve = corpus_energy_curve(&corpus.graphs, ENERGY_H).map_err(failed)?;
    fs::create_dir_all(&c.out)
        .with_context(|| format!("creating {}", c.out.display()))
        .map_err(failed)?;
    let path = c.out.join("energy_curve.csv");
    let mut w = create(&path)?;
    write_energy_csv(&curve, &mut w).and_then(|_| w.flush()).map_err(failed)?;
    println!(
        "{}: r(1) = {:.4}, r({ENERGY_H}) = {:.4}, written to {}",
        corpus.name,
        curve[0],
        curve[ENERGY_H - 1],
        path.display()
    );
    Ok(())
}

fn cmd_verify(seed: u64, instances: usize, fault: Fault) -> Outcome {
    if instances == 0 {
        return Err(bad(anyhow!("instances must be positive")));
    }
    let report = run_suite(seed, instances, fault).map_err(failed)?;
    for t in &report.tallies {
        println!("{:<16} {:>4}/{:<4} worst {:.2e}", t.property.name(), t.passed, t.total, t.worst);
    }
    match report.first_failure {
        None => {
            println!("all properties hold (seed {seed})");
            Ok(())
        }
        Some(f) => Err(failed(anyhow!(
            "{} failed on instance {} with error {:.3e}",
            f.property.name(),
            f.instance,
            f.error
        ))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => args.resolve().map_err(bad).and_then(|c| cmd_train(&c)),
        Command::AnalyzeEnergy(args) => args.resolve().map_err(bad).and_then(|c| cmd_analyze_energy(&c)),
        Command::Verify {
            seed,
            instances,
            quick,
            inject_fault,
        } => {
            let fault = if inject_fault { Fault::FlipThetaSign } else { Fault::None };
            cmd_verify(seed, if quick { 10 } else { instances }, fault)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::BadInput(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
