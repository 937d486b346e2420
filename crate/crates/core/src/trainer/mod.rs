//! Mini-batch training under semantic loss, with per-batch pruning of the
//! pre-images each sample contributes to the loss.
//!
//! Three modes share everything except the pre-images fed to the loss:
//! `baseline` uses all of them, `frozen` prunes with a fixed embedding
//! table, and `trainable` prunes with the classifier's own hidden layer,
//! recomputed before every batch.

pub mod loss;
pub mod model;
pub mod synth;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NesySample, PreImage};
use crate::error::{Error, Result};
use crate::proximity::{EdgeRule, EmbeddingTable, Metric};
use crate::pruner::{pct, prune_batch, Coupling};

pub use loss::{semantic_loss, semantic_loss_grad, LossEval};
pub use model::ClassifierModel;
pub use synth::{LabeledInstance, SynthData, SynthTask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Baseline,
    Frozen,
    Trainable,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "frozen" => Ok(Mode::Frozen),
            "trainable" => Ok(Mode::Trainable),
            other => Err(Error::Invalid(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Frozen => "frozen",
            Mode::Trainable => "trainable",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: Mode,
    pub k: usize,
    /// Distance threshold; replaces the top-k rule when set.
    pub theta: Option<f64>,
    pub metric: Metric,
    pub hidden: usize,
    pub coupling: Coupling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1.0,
            seed: 0,
            mode: Mode::Baseline,
            k: 1,
            theta: None,
            metric: Metric::Euclidean,
            hidden: 32,
            coupling: Coupling::Implied,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || (self.mode != Mode::Baseline && self.batch_size < 2) {
            return Err(Error::Invalid(
                "batch size must be at least 2 when pruning".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.hidden == 0 || self.k == 0 {
            return Err(Error::Invalid("learning rate, hidden width and k must be positive".into()));
        }
        Ok(())
    }

    pub fn edge_rule(&self) -> EdgeRule {
        match self.theta {
            Some(t) => EdgeRule::Threshold(t),
            None => EdgeRule::TopK(self.k),
        }
    }
}

/// Inputs of a training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    /// Classifier inputs per instance id.
    pub features: &'a EmbeddingTable,
    /// Frozen encoder; defaults to `features`.
    pub embeddings: Option<&'a EmbeddingTable>,
    pub test: &'a [LabeledInstance],
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub retained_pct: f64,
    pub gold_retained_pct: Option<f64>,
    pub prune_seconds: f64,
    pub epoch_seconds: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,loss,accuracy,retained_pct,gold_retained_pct,prune_seconds,epoch_seconds";

pub fn write_metrics(rows: &[EpochMetrics], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        let gold = r.gold_retained_pct.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch, r.loss, r.accuracy, r.retained_pct, gold, r.prune_seconds, r.epoch_seconds
        )?;
    }
    Ok(())
}

/// What one batch trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchAudit {
    pub epoch: usize,
    pub batch: usize,
    pub samples: Vec<String>,
    pub preimages_before: Vec<usize>,
    pub preimages_kept: Vec<usize>,
    /// Whether each sample's gold pre-image survived, when gold is known.
    pub gold_kept: Vec<Option<bool>>,
    pub clamped_losses: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub metrics: Vec<EpochMetrics>,
    pub audit: Vec<BatchAudit>,
    /// Every sample with the pre-images it last trained on.
    pub pruned: Dataset,
}

/// Sample order of one epoch; depends only on the seed and the epoch.
pub fn batch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn initial_model(config: &TrainConfig, input_dim: usize, classes: usize) -> ClassifierModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    ClassifierModel::init(input_dim, config.hidden, classes, &mut rng)
}

/// Fraction of test instances whose argmax prediction is the true label.
pub fn evaluate(model: &ClassifierModel, test: &[LabeledInstance]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Precondition("empty test set".into()));
    }
    let correct = test
        .iter()
        .filter(|t| model.predict(&t.features) == t.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn features_of<'a>(features: &'a EmbeddingTable, sample: &NesySample) -> Vec<&'a [f64]> {
    sample
        .instance_ids
        .iter()
        .map(|id| features.get(id).expect("features cover the dataset"))
        .collect()
}

/// Mean semantic loss of a batch and its parameter gradient.
pub fn batch_loss_grad(
    model: &ClassifierModel,
    features: &EmbeddingTable,
    batch: &[&NesySample],
    omegas: &[&[PreImage]],
) -> Result<(f64, ClassifierModel, usize)> {
    let mut grad = model.zeros_like();
    let mut total = 0.0;
    let mut clamped = 0;
    let scale = 1.0 / batch.len() as f64;
    for (sample, omega) in batch.iter().zip(omegas) {
        let xs = features_of(features, sample);
        let fwds: Vec<_> = xs.iter().map(|x| model.forward(x)).collect();
        let scores: Vec<Vec<f64>> = fwds.iter().map(|f| f.probs.clone()).collect();
        let eval = semantic_loss_grad(&scores, omega)?;
        if eval.clamped {
            log::warn!("sample `{}`: pre-image mass below epsilon, loss clamped", sample.id);
            clamped += 1;
        }
        total += eval.loss;
        for ((x, fwd), g) in xs.iter().zip(&fwds).zip(&eval.grad) {
            let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
            model.backward(x, fwd, &scaled, &mut grad);
        }
    }
    Ok((total * scale, grad, clamped))
}

fn hidden_table(model: &ClassifierModel, features: &EmbeddingTable, batch: &[NesySample]) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(model.hidden);
    for s in batch {
        for id in &s.instance_ids {
            let x = features.get(id).expect("features cover the dataset");
            table.insert(id.clone(), &model.encode(x))?;
        }
    }
    Ok(table)
}

/// Runs the training loop.
pub fn train(data: TrainData<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = data.dataset;
    data.features.covers(&dataset.samples)?;
    if let Some(s) = dataset.samples.iter().find(|s| s.preimages.is_empty()) {
        return Err(Error::Precondition(format!("sample `{}` has no pre-images; abduce first", s.id)));
    }
    let frozen = data.embeddings.unwrap_or(data.features);
    if config.mode == Mode::Frozen {
        frozen.covers(&dataset.samples)?;
    }
    if let Some(t) = data.test.iter().find(|t| t.features.len() != data.features.dim()) {
        return Err(Error::Invalid(format!("test instance `{}` has the wrong dimension", t.id)));
    }
    let classes = dataset.label_space.class_count;
    let mut model = initial_model(config, data.features.dim(), classes);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut audit = Vec::new();
    let mut last_omega: Vec<Vec<PreImage>> = dataset.samples.iter().map(|s| s.preimages.clone()).collect();
    let n = dataset.n();

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        let order = batch_order(config.seed, epoch, n);
        let mut loss_sum = 0.0;
        let mut prune_seconds = 0.0;
        let (mut before, mut after, mut gold_n, mut gold_kept) = (0usize, 0usize, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<NesySample> = chunk.iter().map(|&i| dataset.samples[i].clone()).collect();
            let omegas: Vec<Vec<PreImage>> = if config.mode == Mode::Baseline || batch.len() < 2 {
                batch.iter().map(|s| s.preimages.clone()).collect()
            } else {
                let started = Instant::now();
                let table;
                let emb = match config.mode {
                    Mode::Trainable => {
                        table = hidden_table(&model, data.features, &batch)?;
                        &table
                    }
                    _ => frozen,
                };
                let outcome = prune_batch(&batch, emb, config.edge_rule(), config.metric, config.coupling)?;
                prune_seconds += started.elapsed().as_secs_f64();
                outcome.pruned.into_iter().map(|s| s.preimages).collect()
            };

            let mut entry = BatchAudit {
                epoch,
                batch: b,
                samples: batch.iter().map(|s| s.id.clone()).collect(),
                preimages_before: batch.iter().map(|s| s.preimages.len()).collect(),
                preimages_kept: omegas.iter().map(Vec::len).collect(),
                gold_kept: Vec::with_capacity(batch.len()),
                clamped_losses: 0,
            };
            for (s, omega) in batch.iter().zip(&omegas) {
                if omega.is_empty() {
                    return Err(Error::Invariant(format!("sample `{}` kept no pre-image", s.id)));
                }
                before += s.preimages.len();
                after += omega.len();
                let kept = s.gold.as_ref().map(|g| omega.binary_search(g).is_ok());
                if let Some(k) = kept {
                    gold_n += 1;
                    gold_kept += k as usize;
                }
                entry.gold_kept.push(kept);
            }

            let refs: Vec<&NesySample> = batch.iter().collect();
            let omega_refs: Vec<&[PreImage]> = omegas.iter().map(Vec::as_slice).collect();
            let (loss, grad, clamped) = batch_loss_grad(&model, data.features, &refs, &omega_refs)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            entry.clamped_losses = clamped;
            loss_sum += loss * batch.len() as f64;
            model.add_scaled(-config.learning_rate, &grad);
            if !model.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            for (&i, omega) in chunk.iter().zip(omegas) {
                last_omega[i] = omega;
            }
            audit.push(entry);
        }
        let accuracy = if data.test.is_empty() { f64::NAN } else { evaluate(&model, data.test)? };
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            accuracy,
            retained_pct: pct(after, before),
            gold_retained_pct: (gold_n > 0).then(|| pct(gold_kept, gold_n)),
            prune_seconds,
            epoch_seconds: epoch_start.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: loss {:.4} accuracy {:.4} retained {:.1}%",
            metrics.last().unwrap().loss,
            accuracy,
            pct(after, before)
        );
    }

    let samples = dataset
        .samples
        .iter()
        .zip(last_omega)
        .map(|(s, omega)| NesySample {
            preimages: omega,
            ..s.clone()
        })
        .collect();
    Ok(TrainOutcome {
        model,
        metrics,
        audit,
        pruned: Dataset::new(dataset.label_space.clone(), samples)?,
    })
}
