//! Synthetic weakly supervised tasks: Gaussian class clusters whose labels
//! are only observed through a sum, max or formula value.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::abduction::{
    abduce, evaluate_hwf, hwf_label_space, Abduced, Constraint, PositionMask, Theory, HWF_CLASSES,
};
use crate::dataset::{save_dataset, Dataset, LabelSpace, NesySample, PreImage};
use crate::error::{Error, Result};
use crate::proximity::EmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub theory: Theory,
    pub arity: usize,
    pub classes: usize,
    pub dim: usize,
    /// Standard deviation of the isotropic noise around each class mean.
    pub noise: f64,
    pub samples: usize,
    pub test_size: usize,
}

impl Default for SynthTask {
    fn default() -> Self {
        SynthTask {
            theory: Theory::Sum,
            arity: 3,
            classes: 10,
            dim: 16,
            noise: 0.3,
            samples: 100,
            test_size: 500,
        }
    }
}

/// A held-out instance with its true class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInstance {
    pub id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    /// Abduced samples; gold labels are attached for evaluation only.
    pub dataset: Dataset,
    pub features: EmbeddingTable,
    pub test: Vec<LabeledInstance>,
}

impl SynthTask {
    pub fn validate(&self) -> Result<()> {
        Constraint::new(self.theory, 0, self.arity)?;
        if self.theory == Theory::Hwf && self.classes != HWF_CLASSES {
            return Err(Error::Invalid(format!("hwf tasks use {HWF_CLASSES} classes")));
        }
        if self.classes < 2 || self.dim == 0 || self.samples == 0 {
            return Err(Error::Invalid("synthetic task needs classes >= 2, dim >= 1, samples >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Invalid("noise must be non-negative".into()));
        }
        Ok(())
    }

    fn label_space(&self) -> Result<LabelSpace> {
        match self.theory {
            Theory::Hwf => Ok(hwf_label_space()),
            _ => LabelSpace::new(self.classes),
        }
    }

    /// Unit basis vectors when they fit, otherwise random unit directions.
    fn class_means(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|c| {
                if self.classes <= self.dim {
                    let mut v = vec![0.0; self.dim];
                    v[c] = 1.0;
                    v
                } else {
                    let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x / norm).collect()
                }
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Result<SynthData> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let label_space = self.label_space()?;
        let means = self.class_means(&mut rng);
        let mask = match self.theory {
            Theory::Hwf => PositionMask::hwf(self.arity),
            _ => PositionMask::full(self.arity, self.classes),
        };
        let draw = |rng: &mut ChaCha8Rng, class: usize| -> Vec<f64> {
            means[class]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + self.noise * z
                })
                .collect()
        };
        let mut features = EmbeddingTable::new(self.dim);
        let mut samples = Vec::with_capacity(self.samples);
        for l in 0..self.samples {
            let gold: Vec<usize> = (0..self.arity)
                .map(|p| {
                    let allowed = mask.allowed(p);
                    allowed[rng.random_range(0..allowed.len())]
                })
                .collect();
            let target = match self.theory {
                Theory::Sum => gold.iter().sum::<usize>() as i64,
                Theory::Max => *gold.iter().max().expect("arity >= 1") as i64,
                Theory::Hwf => evaluate_hwf(&gold).expect("masked labels form a formula"),
            };
            let mut instance_ids = Vec::with_capacity(self.arity);
            for (p, &class) in gold.iter().enumerate() {
                let id = format!("s{l}_{p}");
                features.insert(&id, &draw(&mut rng, class))?;
                instance_ids.push(id);
            }
            let sample = NesySample {
                id: format!("s{l}"),
                instance_ids,
                constraint: Constraint::new(self.theory, target, self.arity)?,
                preimages: Vec::new(),
                gold: Some(PreImage(gold)),
            };
            match abduce(sample, &label_space)? {
                Abduced::Accepted(s) => samples.push(s),
                Abduced::Rejected { sample_id, reason } => {
                    return Err(Error::Invariant(format!(
                        "generated sample `{sample_id}` rejected: {reason}"
                    )))
                }
            }
        }
        let test_classes: Vec<usize> = match self.theory {
            // operators and digits both appear in formulas
            Theory::Hwf => (0..HWF_CLASSES).collect(),
            _ => (0..self.classes).collect(),
        };
        let test = (0..self.test_size)
            .map(|i| {
                let label = test_classes[rng.random_range(0..test_classes.len())];
                LabeledInstance {
                    id: format!("t{i}"),
                    label,
                    features: draw(&mut rng, label),
                }
            })
            .collect();
        Ok(SynthData {
            dataset: Dataset::new(label_space, samples)?,
            features,
            test,
        })
    }
}

impl SynthData {
    /// Writes `dataset.jsonl`, `features.csv`, `embeddings.csv` (the frozen
    /// encoder: identical to the features) and `test.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_dataset(&self.dataset, dir.join("dataset.jsonl"))?;
        self.features.save(dir.join("features.csv"))?;
        self.features.save(dir.join("embeddings.csv"))?;
        let path = dir.join("test.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_test_set(&self.test, BufWriter::new(file))
    }
}

/// Writes `instance_id,label,v0,...` CSV.
pub fn write_test_set(test: &[LabeledInstance], writer: impl Write) -> Result<()> {
    let dim = test.first().map_or(0, |t| t.features.len());
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Invalid(format!("csv write: {e}"));
    let mut header = vec!["instance_id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|j| format!("v{j}")));
    w.write_record(&header).map_err(err)?;
    for t in test {
        let mut rec = vec![t.id.clone(), t.label.to_string()];
        rec.extend(t.features.iter().map(|x| format!("{x:?}")));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv write: {e}")))
}

pub fn read_test_set(reader: impl Read, origin: &Path) -> Result<Vec<LabeledInstance>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.get(0) != Some("instance_id") || headers.get(1) != Some("label") {
        return Err(parse_err(1, "expected columns `instance_id,label,v0,...`".into()));
    }
    let dim = headers.len() - 2;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let label = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label `{}`", &rec[1])))?;
        let features = rec
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(line, format!("not a number: `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        if features.len() != dim {
            return Err(parse_err(line, "wrong number of features".into()));
        }
        out.push(LabeledInstance {
            id: rec[0].to_string(),
            label,
            features,
        });
    }
    Ok(out)
}

pub fn load_test_set(path: impl AsRef<Path>) -> Result<Vec<LabeledInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_test_set(BufReader::new(file), path)
}
