//! Candidate edges of the proximity graph: exact nearest neighbours between
//! instances of different samples in an embedding space.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::NesySample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Invalid(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

/// Euclidean distance, or `1 - cos(u, v)` for the cosine metric.
pub fn distance(u: &[f64], v: &[f64], metric: Metric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Precondition(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    match metric {
        Metric::Euclidean => Ok(u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()),
        Metric::Cosine => {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::Precondition(
                    "cosine distance is undefined for a zero vector".into(),
                ));
            }
            // rounding can push the cosine slightly outside [-1, 1]
            Ok((1.0 - dot / (nu * nv)).max(0.0))
        }
    }
}

/// Dense vectors keyed by instance id, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "embedding for `{id}` has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("embedding for `{id}` contains {bad}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Invalid(format!("duplicate embedding row `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        let row = *self.index.get(id)?;
        Some(&self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .zip(self.data.chunks(self.dim.max(1)))
            .map(|(id, row)| (id.as_str(), row))
    }

    /// Checks that every instance of the samples has a row.
    pub fn covers(&self, samples: &[NesySample]) -> Result<()> {
        for s in samples {
            for id in &s.instance_ids {
                if !self.index.contains_key(id) {
                    return Err(Error::Invalid(format!(
                        "no embedding for instance `{id}` of sample `{}`",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads `instance_id,v0,...,v{d-1}` CSV.
    pub fn read_csv(reader: impl Read, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        if headers.get(0) != Some("instance_id") {
            return Err(parse_err(1, "first column must be `instance_id`".into()));
        }
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("v{j}") {
                return Err(parse_err(1, format!("expected column `v{j}`, found `{h}`")));
            }
        }
        let mut table = EmbeddingTable::new(headers.len() - 1);
        let mut row = Vec::with_capacity(table.dim);
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            row.clear();
            for field in record.iter().skip(1) {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("not a number: `{field}`")))?;
                row.push(x);
            }
            table
                .insert(&record[0], &row)
                .map_err(|e| parse_err(line, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::Invalid(format!("csv write: {e}"));
        let mut header = vec!["instance_id".to_string()];
        header.extend((0..self.dim).map(|j| format!("v{j}")));
        w.write_record(&header).map_err(to_err)?;
        for (id, row) in self.iter() {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::Invalid(format!("csv write: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(file), path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(file))
    }
}

/// Node `(sample, instance)` of the proximity graph, by batch index and
/// position within the sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeRef {
    pub sample: usize,
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateEdge {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub distance: f64,
}

/// How close two instances must be to get a candidate edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeRule {
    /// The `k` nearest instances of other samples.
    TopK(usize),
    /// Every instance of another sample closer than the threshold.
    Threshold(f64),
}

impl Default for EdgeRule {
    fn default() -> Self {
        EdgeRule::TopK(1)
    }
}

/// Edges sorted by source node, then distance, then target instance id.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateEdgeSet {
    pub edges: Vec<CandidateEdge>,
    pub rule: EdgeRule,
    pub metric: Metric,
    /// Set when `k` exceeded the number of cross-sample instances somewhere.
    pub clamped: bool,
}

impl CandidateEdgeSet {
    pub fn empty(rule: EdgeRule, metric: Metric) -> Self {
        CandidateEdgeSet {
            edges: Vec::new(),
            rule,
            metric,
            clamped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn out_degree(&self, node: NodeRef) -> usize {
        self.edges.iter().filter(|e| e.src == node).count()
    }
}

/// Builds the candidate edges of a batch by exact brute-force search.
///
/// Only cross-sample pairs are considered. Equal distances are broken by
/// the smaller instance id.
pub fn candidate_edges(
    batch: &[NesySample],
    embeddings: &EmbeddingTable,
    rule: EdgeRule,
    metric: Metric,
) -> Result<CandidateEdgeSet> {
    if batch.len() < 2 {
        return Err(Error::Precondition(
            "candidate edges need at least 2 samples in the batch".into(),
        ));
    }
    match rule {
        EdgeRule::TopK(0) => return Err(Error::Precondition("k must be positive".into())),
        EdgeRule::Threshold(t) if !(t > 0.0) => {
            return Err(Error::Precondition("threshold must be positive".into()))
        }
        _ => {}
    }
    embeddings.covers(batch)?;

    let nodes: Vec<(NodeRef, &str, &[f64])> = batch
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            s.instance_ids.iter().enumerate().map(move |(pos, id)| {
                (
                    NodeRef {
                        sample: si,
                        position: pos,
                    },
                    id.as_str(),
                    embeddings.get(id).expect("checked by covers"),
                )
            })
        })
        .collect();

    let mut edges = Vec::new();
    let mut clamped = false;
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(nodes.len());
    for &(src, _, u) in &nodes {
        scratch.clear();
        for (j, &(dst, _, v)) in nodes.iter().enumerate() {
            if dst.sample != src.sample {
                scratch.push((distance(u, v, metric)?, j));
            }
        }
        scratch.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| nodes[a.1].1.cmp(nodes[b.1].1))
        });
        let take = match rule {
            EdgeRule::TopK(k) => {
                if k > scratch.len() {
                    clamped = true;
                }
                k.min(scratch.len())
            }
            EdgeRule::Threshold(theta) => scratch.iter().take_while(|(d, _)| *d < theta).count(),
        };
        edges.extend(scratch[..take].iter().map(|&(d, j)| CandidateEdge {
            src,
            dst: nodes[j].0,
            distance: d,
        }));
    }
    if clamped {
        if let EdgeRule::TopK(k) = rule {
            log::warn!("k = {k} exceeds the cross-sample instances of some node; clamped");
        }
    }
    Ok(CandidateEdgeSet {
        edges,
        rule,
        metric,
        clamped,
    })
}

/// JSON form of one candidate edge, naming samples and instances by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src_sample: String,
    pub src_instance: String,
    pub dst_sample: String,
    pub dst_instance: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFile {
    pub metric: Metric,
    pub k: Option<usize>,
    pub theta: Option<f64>,
    pub clamped: bool,
    pub edges: Vec<EdgeRecord>,
}

impl EdgeFile {
    pub fn new(batch: &[NesySample], set: &CandidateEdgeSet) -> Self {
        let (k, theta) = match set.rule {
            EdgeRule::TopK(k) => (Some(k), None),
            EdgeRule::Threshold(t) => (None, Some(t)),
        };
        let edges = set
            .edges
            .iter()
            .map(|e| EdgeRecord {
                src_sample: batch[e.src.sample].id.clone(),
                src_instance: batch[e.src.sample].instance_ids[e.src.position].clone(),
                dst_sample: batch[e.dst.sample].id.clone(),
                dst_instance: batch[e.dst.sample].instance_ids[e.dst.position].clone(),
                distance: e.distance,
            })
            .collect();
        EdgeFile {
            metric: set.metric,
            k,
            theta,
            clamped: set.clamped,
            edges,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abduction::{Constraint, Theory};

    fn sample(id: &str, instances: &[&str]) -> NesySample {
        NesySample {
            id: id.into(),
            instance_ids: instances.iter().map(|s| s.to_string()).collect(),
            constraint: Constraint {
                theory: Theory::Sum,
                target: 0,
                arity: instances.len(),
            },
            preimages: vec![],
            gold: None,
        }
    }

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len());
        for (id, v) in rows {
            t.insert(*id, v).unwrap();
        }
        t
    }

    #[test]
    fn distances() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], Metric::Euclidean).unwrap(), 5.0);
        let u = [0.3, -1.2, 4.0];
        assert!(distance(&u, &u, Metric::Cosine).unwrap().abs() < 1e-12);
        let d = distance(&[5.0, 5.0], &[0.1, 0.0], Metric::Euclidean).unwrap();
        assert!((d - 49.01f64.sqrt()).abs() < 1e-12);
        assert!((d - 7.0007).abs() < 1e-4);
        assert!(distance(&[1.0], &[1.0, 2.0], Metric::Euclidean).is_err());
        assert!(distance(&[0.0, 0.0], &[1.0, 2.0], Metric::Cosine).is_err());
    }

    #[test]
    fn mutual_neighbours() {
        let batch = [sample("s1", &["a"]), sample("s2", &["b"])];
        let t = table(&[("a", &[0.0, 0.0]), ("b", &[1.0, 0.0])]);
        let set = candidate_edges(&batch, &t, EdgeRule::TopK(1), Metric::Euclidean).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.edges[0].src, NodeRef { sample: 0, position: 0 });
        assert_eq!(set.edges[0].dst, NodeRef { sample: 1, position: 0 });
        assert_eq!(set.edges[1].dst, NodeRef { sample: 0, position: 0 });
        assert!(!set.clamped);
        let clamped = candidate_edges(&batch, &t, EdgeRule::TopK(5), Metric::Euclidean).unwrap();
        assert!(clamped.clamped);
        assert_eq!(clamped.len(), 2);
    }

    #[test]
    fn three_points() {
        let batch = [sample("s1", &["a"]), sample("s2", &["b"]), sample("s3", &["c"])];
        let t = table(&[("a", &[0.0, 0.0]), ("b", &[0.1, 0.0]), ("c", &[5.0, 5.0])]);
        let set = candidate_edges(&batch, &t, EdgeRule::TopK(1), Metric::Euclidean).unwrap();
        let pairs: Vec<_> = set.edges.iter().map(|e| (e.src.sample, e.dst.sample)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 1)]);
    }

    #[test]
    fn same_sample_neighbours_are_skipped_and_ties_use_ids() {
        let batch = [sample("s1", &["a", "a2"]), sample("s2", &["z"]), sample("s3", &["m"])];
        // a2 sits on top of a but belongs to the same sample; z and m tie.
        let t = table(&[
            ("a", &[0.0]),
            ("a2", &[0.0]),
            ("z", &[1.0]),
            ("m", &[-1.0]),
        ]);
        let set = candidate_edges(&batch, &t, EdgeRule::TopK(1), Metric::Euclidean).unwrap();
        let from_a: Vec<_> = set
            .edges
            .iter()
            .filter(|e| e.src == NodeRef { sample: 0, position: 0 })
            .collect();
        assert_eq!(from_a.len(), 1);
        assert_eq!(from_a[0].dst.sample, 2, "`m` < `z` breaks the tie");
    }

    #[test]
    fn threshold_rule() {
        let batch = [sample("s1", &["a"]), sample("s2", &["b"]), sample("s3", &["c"])];
        let t = table(&[("a", &[0.0, 0.0]), ("b", &[0.1, 0.0]), ("c", &[5.0, 5.0])]);
        let set = candidate_edges(&batch, &t, EdgeRule::Threshold(1.0), Metric::Euclidean).unwrap();
        assert_eq!(set.len(), 2);
        let none = candidate_edges(&batch, &t, EdgeRule::Threshold(0.05), Metric::Euclidean).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn preconditions() {
        let one = [sample("s1", &["a"])];
        let t = table(&[("a", &[0.0])]);
        assert!(candidate_edges(&one, &t, EdgeRule::TopK(1), Metric::Euclidean).is_err());
        let two = [sample("s1", &["a"]), sample("s2", &["missing"])];
        assert!(candidate_edges(&two, &t, EdgeRule::TopK(1), Metric::Euclidean).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = table(&[("a", &[0.5, -1.25]), ("b", &[1e-3, 7.0])]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("instance_id,v0,v1\n"));
        let back = EmbeddingTable::read_csv(buf.as_slice(), Path::new("e.csv")).unwrap();
        assert_eq!(back, t);
        let bad = "instance_id,v0\na,x\n";
        assert!(matches!(
            EmbeddingTable::read_csv(bad.as_bytes(), Path::new("e.csv")),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
