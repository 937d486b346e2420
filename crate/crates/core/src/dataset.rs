//! Weakly supervised samples, their candidate pre-images and the JSON Lines
//! dataset format.
//!
//! A dataset file starts with a header line
//! `{"label_space":{"class_count":c}}` followed by one sample per line:
//!
//! ```text
//! {"id":"s1","instances":["a","b"],"constraint":{"theory":"sum","target":8,"arity":2},"preimages":[[0,8],[1,7]],"gold":[1,7]}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abduction::Constraint;
use crate::error::{Error, Result};

/// Class ids `0..class_count`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(class_count: usize) -> Result<Self> {
        let space = LabelSpace {
            class_count,
            class_names: None,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let space = LabelSpace {
            class_count: names.len(),
            class_names: Some(names),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Invalid(format!(
                "label space needs at least 2 classes, got {}",
                self.class_count
            )));
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.class_count {
                return Err(Error::Invalid(format!(
                    "label space has {} classes but {} class names",
                    self.class_count,
                    names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self, class: usize) -> String {
        match &self.class_names {
            Some(names) => names[class].clone(),
            None => class.to_string(),
        }
    }
}

/// One label per instance position of the owning sample.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreImage(pub Vec<usize>);

impl PreImage {
    pub fn new(labels: Vec<usize>) -> Self {
        PreImage(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn label(&self, position: usize) -> usize {
        self.0[position]
    }
}

impl From<Vec<usize>> for PreImage {
    fn from(labels: Vec<usize>) -> Self {
        PreImage(labels)
    }
}

impl fmt::Display for PreImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, label) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{label}")?;
        }
        write!(f, ")")
    }
}

/// A view of one instance: which sample owns it and where.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instance<'a> {
    pub id: &'a str,
    pub sample_id: &'a str,
    pub position: usize,
}

/// One weakly supervised training sample.
///
/// `preimages` is kept sorted lexicographically and free of duplicates; this
/// fixes the pre-image indexing used everywhere downstream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NesySample {
    pub id: String,
    #[serde(rename = "instances")]
    pub instance_ids: Vec<String>,
    pub constraint: Constraint,
    #[serde(default)]
    pub preimages: Vec<PreImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PreImage>,
}

impl NesySample {
    pub fn arity(&self) -> usize {
        self.instance_ids.len()
    }

    /// Replaces the pre-images, canonicalizing their order.
    pub fn with_preimages(mut self, preimages: Vec<PreImage>) -> Result<Self> {
        self.preimages = preimages;
        self.canonicalize()?;
        Ok(self)
    }

    /// Index of the gold pre-image within `preimages`, if gold is known.
    pub fn gold_index(&self) -> Option<usize> {
        let gold = self.gold.as_ref()?;
        self.preimages.binary_search(gold).ok()
    }

    pub fn position_of(&self, instance_id: &str) -> Option<usize> {
        self.instance_ids.iter().position(|id| id == instance_id)
    }

    fn rule(&self, rule: impl Into<String>) -> Error {
        Error::InvalidSample {
            sample: self.id.clone(),
            rule: rule.into(),
        }
    }

    /// Sorts pre-images and rejects duplicates.
    fn canonicalize(&mut self) -> Result<()> {
        self.preimages.sort();
        if let Some(pair) = self.preimages.windows(2).find(|w| w[0] == w[1]) {
            return Err(self.rule(format!("duplicate pre-image {}", pair[0])));
        }
        Ok(())
    }

    /// Checks every per-sample invariant. Pre-images may be empty (not yet
    /// abduced); when present they must contain the gold pre-image.
    pub fn validate(&self, label_space: &LabelSpace) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Invalid("sample with empty id".into()));
        }
        if self.instance_ids.is_empty() {
            return Err(self.rule("no instances"));
        }
        self.constraint
            .validate()
            .map_err(|e| self.rule(e.to_string()))?;
        if self.constraint.arity != self.arity() {
            return Err(self.rule(format!(
                "constraint arity {} does not match {} instances",
                self.constraint.arity,
                self.arity()
            )));
        }
        let mut seen = HashSet::new();
        for id in &self.instance_ids {
            if !seen.insert(id.as_str()) {
                return Err(self.rule(format!("instance `{id}` listed twice")));
            }
        }
        let check_labels = |what: &str, p: &PreImage| -> Result<()> {
            if p.len() != self.arity() {
                return Err(self.rule(format!(
                    "{what} {p} has {} labels for {} instances",
                    p.len(),
                    self.arity()
                )));
            }
            if let Some(&bad) = p.labels().iter().find(|&&l| l >= label_space.class_count) {
                return Err(self.rule(format!(
                    "{what} {p} uses class {bad} outside 0..{}",
                    label_space.class_count
                )));
            }
            Ok(())
        };
        for p in &self.preimages {
            check_labels("pre-image", p)?;
        }
        if self.preimages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(self.rule("pre-images not sorted or duplicated"));
        }
        if let Some(gold) = &self.gold {
            check_labels("gold", gold)?;
            // pruning may drop the gold assignment; it only has to be a model
            if !self.constraint.is_satisfied_by(gold.labels()) {
                return Err(self.rule(format!("gold {gold} violates the constraint")));
            }
        }
        Ok(())
    }
}

/// A label space plus the samples that use it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub label_space: LabelSpace,
    pub samples: Vec<NesySample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    label_space: LabelSpace,
}

impl Dataset {
    /// Builds a dataset, canonicalizing pre-image order and validating all
    /// invariants.
    pub fn new(label_space: LabelSpace, mut samples: Vec<NesySample>) -> Result<Self> {
        for s in &mut samples {
            s.canonicalize()?;
        }
        let dataset = Dataset {
            label_space,
            samples,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.label_space.validate()?;
        if self.samples.is_empty() {
            return Err(Error::Invalid("dataset has no samples".into()));
        }
        let mut sample_ids = HashSet::new();
        let mut instance_ids = HashSet::new();
        for s in &self.samples {
            s.validate(&self.label_space)?;
            if !sample_ids.insert(s.id.as_str()) {
                return Err(s.rule("duplicate sample id"));
            }
            for id in &s.instance_ids {
                if !instance_ids.insert(id.as_str()) {
                    return Err(s.rule(format!("instance `{id}` also used by another sample")));
                }
            }
        }
        Ok(())
    }

    pub fn instances(&self) -> impl Iterator<Item = Instance<'_>> {
        self.samples.iter().flat_map(|s| {
            s.instance_ids
                .iter()
                .enumerate()
                .map(move |(position, id)| Instance {
                    id,
                    sample_id: &s.id,
                    position,
                })
        })
    }

    pub fn preimage_count(&self) -> usize {
        self.samples.iter().map(|s| s.preimages.len()).sum()
    }

    /// Parses the JSON Lines format. `origin` is only used in messages.
    pub fn parse(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header: Option<LabelSpace> = None;
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match header {
                None => {
                    let h: Header = serde_json::from_str(&line)
                        .map_err(|e| parse_err(line_no, format!("bad header: {e}")))?;
                    h.label_space
                        .validate()
                        .map_err(|e| parse_err(line_no, e.to_string()))?;
                    header = Some(h.label_space);
                }
                Some(_) => {
                    let mut s: NesySample = serde_json::from_str(&line)
                        .map_err(|e| parse_err(line_no, e.to_string()))?;
                    s.canonicalize()?;
                    samples.push(s);
                }
            }
        }
        let label_space = header.ok_or_else(|| parse_err(1, "missing label_space header".into()))?;
        let dataset = Dataset {
            label_space,
            samples,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = Header {
            label_space: self.label_space.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::parse(BufReader::new(file), path)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    dataset.write(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
