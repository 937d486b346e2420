use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use latent_prune::abduction::{abduce_with_limit, Abduced, Theory};
use latent_prune::consistency::IncidenceDump;
use latent_prune::dataset::{load_dataset, save_dataset, Dataset};
use latent_prune::error::Error;
use latent_prune::proximity::{candidate_edges, EdgeFile, EdgeRule, EmbeddingTable, Metric};
use latent_prune::pruner::{prune_batch, random, Coupling, PruneStats};
use latent_prune::report::{report, save_run};
use latent_prune::trainer::synth::load_test_set;
use latent_prune::trainer::{evaluate, train, ClassifierModel, Mode, SynthTask, TrainConfig, TrainData};

#[derive(Parser)]
#[command(name = "latent-prune", version, about = "Prune candidate label assignments using latent-space proximity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate the pre-images of every sample.
    Abduce {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail if any sample has more pre-images than this.
        #[arg(long)]
        max_preimages: Option<usize>,
    },
    /// Build candidate proximity edges over the whole dataset.
    Knn {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "euclidean")]
        metric: Metric,
        /// Emit every edge shorter than this instead of the top-k.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune pre-images batch by batch.
    Prune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "euclidean")]
        metric: Metric,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value = "implied")]
        coupling: Coupling,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Write the inconsistency map of every batch as JSON.
        #[arg(long)]
        dump_incidence: Option<PathBuf>,
    },
    /// Generate a synthetic task.
    Synth {
        #[arg(long, default_value = "sum")]
        theory: String,
        #[arg(long, default_value_t = 3)]
        arity: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 500)]
        test_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a classifier.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Accuracy of a saved model on a labelled test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Aggregate run directories into report.csv and report.json.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare the exact solver with brute-force enumeration on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        seeds: u64,
        #[arg(long, default_value = "implied")]
        coupling: Coupling,
    },
}

/// `train --config` file: input paths (relative to the file) plus training
/// options.
#[derive(serde::Deserialize)]
struct TrainFile {
    dataset: PathBuf,
    features: PathBuf,
    embeddings: Option<PathBuf>,
    test: PathBuf,
    #[serde(flatten)]
    train: TrainConfig,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn edge_rule(k: usize, theta: Option<f64>) -> EdgeRule {
    theta.map_or(EdgeRule::TopK(k), EdgeRule::Threshold)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Abduce {
            dataset,
            out,
            max_preimages,
        } => {
            let d = load_dataset(&dataset)?;
            let mut kept = Vec::new();
            let mut rejected = 0;
            for s in d.samples {
                match abduce_with_limit(s, &d.label_space, max_preimages)? {
                    Abduced::Accepted(s) => kept.push(s),
                    Abduced::Rejected { sample_id, reason } => {
                        eprintln!("rejected {sample_id}: {reason}");
                        rejected += 1;
                    }
                }
            }
            let result = Dataset::new(d.label_space, kept)?;
            save_dataset(&result, &out)?;
            println!(
                "{} samples, {} pre-images, {rejected} rejected",
                result.n(),
                result.preimage_count()
            );
        }
        Command::Knn {
            dataset,
            embeddings,
            k,
            metric,
            theta,
            out,
        } => {
            let d = load_dataset(&dataset)?;
            let emb = EmbeddingTable::load(&embeddings)?;
            let set = candidate_edges(&d.samples, &emb, edge_rule(k, theta), metric)?;
            write_json(&out, &EdgeFile::new(&d.samples, &set))?;
            println!("{} candidate edges", set.len());
        }
        Command::Prune {
            dataset,
            embeddings,
            k,
            metric,
            theta,
            batch_size,
            coupling,
            out,
            stats,
            dump_incidence,
        } => {
            if batch_size < 2 {
                return Err(Error::Invalid("batch size must be at least 2".into()).into());
            }
            let d = load_dataset(&dataset)?;
            if let Some(s) = d.samples.iter().find(|s| s.preimages.is_empty()) {
                return Err(Error::Precondition(format!("sample `{}` has no pre-images; run abduce first", s.id)).into());
            }
            let emb = EmbeddingTable::load(&embeddings)?;
            let mut pruned = Vec::with_capacity(d.n());
            let mut per_batch = Vec::new();
            let mut dumps = Vec::new();
            for batch in d.samples.chunks(batch_size) {
                let outcome = prune_batch(batch, &emb, edge_rule(k, theta), metric, coupling)?;
                if dump_incidence.is_some() {
                    dumps.push(IncidenceDump::new(batch, &outcome.edges, &outcome.incidence));
                }
                per_batch.push(outcome.stats);
                pruned.extend(outcome.pruned);
            }
            let result = Dataset::new(d.label_space, pruned)?;
            save_dataset(&result, &out)?;
            let aggregate = PruneStats::aggregate(&per_batch);
            if let Some(path) = stats {
                write_json(
                    &path,
                    &serde_json::json!({ "batches": per_batch, "aggregate": aggregate }),
                )?;
            }
            if let Some(path) = dump_incidence {
                write_json(&path, &dumps)?;
            }
            println!(
                "retained {:.2}% of pre-images ({} -> {}), gold retained {}, {:.3}s solving",
                aggregate.retained_pct,
                aggregate.preimages_before,
                aggregate.preimages_after,
                aggregate
                    .gold_retained_pct
                    .map_or_else(|| "n/a".to_string(), |g| format!("{g:.2}%")),
                aggregate.solve_seconds
            );
        }
        Command::Synth {
            theory,
            arity,
            classes,
            dim,
            noise,
            samples,
            test_size,
            seed,
            out_dir,
        } => {
            let theory: Theory = serde_json::from_value(serde_json::Value::String(theory.clone()))
                .map_err(|_| Error::Invalid(format!("unknown theory `{theory}`")))?;
            let task = SynthTask {
                theory,
                arity,
                classes,
                dim,
                noise,
                samples,
                test_size,
            };
            let data = task.generate(seed)?;
            data.write(&out_dir)?;
            write_json(&out_dir.join("task.json"), &task)?;
            println!(
                "{} samples, {} pre-images, {} test instances in {}",
                data.dataset.n(),
                data.dataset.preimage_count(),
                data.test.len(),
                out_dir.display()
            );
        }
        Command::Train {
            config,
            mode,
            seed,
            out_dir,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::Io {
                path: config.clone(),
                source: e,
            })?;
            let file: TrainFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: config.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            let base = config.parent().unwrap_or(Path::new("."));
            let mut cfg = file.train;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dataset = load_dataset(base.join(&file.dataset))?;
            let features = EmbeddingTable::load(base.join(&file.features))?;
            let embeddings = file
                .embeddings
                .as_ref()
                .map(|p| EmbeddingTable::load(base.join(p)))
                .transpose()?;
            let test = load_test_set(base.join(&file.test))?;
            let outcome = train(
                TrainData {
                    dataset: &dataset,
                    features: &features,
                    embeddings: embeddings.as_ref(),
                    test: &test,
                },
                &cfg,
            )?;
            save_run(&out_dir, &cfg, &outcome)?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "{} seed {}: accuracy {:.4}, retained {:.1}%",
                    cfg.mode, cfg.seed, last.accuracy, last.retained_pct
                );
            }
        }
        Command::Eval { model, test } => {
            let text = fs::read_to_string(&model).map_err(|e| Error::Io {
                path: model.clone(),
                source: e,
            })?;
            let m: ClassifierModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: model.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            let test = load_test_set(&test)?;
            if let Some(t) = test.iter().find(|t| t.features.len() != m.input_dim) {
                bail!(Error::Invalid(format!("test instance `{}` has the wrong dimension", t.id)));
            }
            println!("{}", evaluate(&m, &test)?);
        }
        Command::Report { runs, out_dir } => {
            let r = report(&runs);
            for s in &r.skipped {
                eprintln!("skipped {}: {}", s.dir.display(), s.reason);
            }
            r.write(&out_dir)?;
            let mut table = Vec::new();
            r.write_csv(&mut table)?;
            print!("{}", String::from_utf8_lossy(&table));
        }
        Command::OracleCheck { seeds, coupling } => {
            let r = random::oracle_check(seeds, coupling, random::Limits::default())?;
            println!(
                "{}/{} instances agree ({} with a non-zero optimum)",
                r.agreeing, r.instances, r.nontrivial
            );
            if !r.mismatched_seeds.is_empty() {
                return Err(Error::Invariant(format!(
                    "solver disagrees with the oracle on seeds {:?}",
                    r.mismatched_seeds
                ))
                .into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let invariant = err.downcast_ref::<Error>().is_some_and(Error::is_invariant);
            ExitCode::from(if invariant { 3 } else { 2 })
        }
    }
}
