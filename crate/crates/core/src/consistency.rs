//! Consistency of pre-images with candidate edges.
//!
//! A pre-image of sample `l` is inconsistent with an edge `(l, x) -> (l', x')`
//! when the label it gives `x` is not a label that any pre-image of `l'`
//! gives `x'`. Domains are always taken over the unpruned pre-image sets.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::dataset::NesySample;
use crate::error::{Error, Result};
use crate::proximity::{CandidateEdge, CandidateEdgeSet};

/// `(sample index in batch, pre-image index within sample)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PreImageRef {
    pub sample: usize,
    pub index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct ClassSet {
    words: Vec<u64>,
}

impl ClassSet {
    fn insert(&mut self, class: usize) {
        let w = class / 64;
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << (class % 64);
    }

    fn contains(&self, class: usize) -> bool {
        self.words
            .get(class / 64)
            .is_some_and(|w| w & (1 << (class % 64)) != 0)
    }
}

/// Labels the instance at `position` takes across the sample's pre-images.
pub fn value_domain(sample: &NesySample, position: usize) -> BTreeSet<usize> {
    sample.preimages.iter().map(|p| p.label(position)).collect()
}

/// Per-node value domains of a batch.
struct Domains {
    sets: Vec<Vec<ClassSet>>,
}

impl Domains {
    fn new(batch: &[NesySample]) -> Self {
        let sets = batch
            .iter()
            .map(|s| {
                let mut per_pos = vec![ClassSet::default(); s.arity()];
                for p in &s.preimages {
                    for (pos, &label) in p.labels().iter().enumerate() {
                        per_pos[pos].insert(label);
                    }
                }
                per_pos
            })
            .collect();
        Domains { sets }
    }
}

fn check_edge(batch: &[NesySample], edge: &CandidateEdge) -> Result<()> {
    let ok = |n: crate::proximity::NodeRef| {
        batch
            .get(n.sample)
            .is_some_and(|s| n.position < s.arity())
    };
    if !ok(edge.src) || !ok(edge.dst) {
        return Err(Error::Precondition(format!(
            "edge {:?} -> {:?} does not refer to this batch",
            edge.src, edge.dst
        )));
    }
    Ok(())
}

/// Whether `preimage` is consistent with `edge`.
pub fn is_consistent(batch: &[NesySample], preimage: PreImageRef, edge: &CandidateEdge) -> Result<bool> {
    check_edge(batch, edge)?;
    if edge.src.sample != preimage.sample {
        return Err(Error::Precondition(format!(
            "edge source is in sample {} but the pre-image belongs to sample {}",
            edge.src.sample, preimage.sample
        )));
    }
    let sigma = batch[preimage.sample]
        .preimages
        .get(preimage.index)
        .ok_or_else(|| Error::Precondition(format!("no pre-image {preimage:?}")))?;
    let label = sigma.label(edge.src.position);
    Ok(batch[edge.dst.sample]
        .preimages
        .iter()
        .any(|other| other.label(edge.dst.position) == label))
}

/// Inconsistency relation between the candidate edges and the pre-images of
/// a batch, in both directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Incidence {
    by_edge: Vec<Vec<PreImageRef>>,
    by_preimage: Vec<Vec<Vec<usize>>>,
    globally_consistent: Vec<PreImageRef>,
}

impl Incidence {
    pub fn edge_count(&self) -> usize {
        self.by_edge.len()
    }

    pub fn sample_count(&self) -> usize {
        self.by_preimage.len()
    }

    pub fn preimage_count(&self, sample: usize) -> usize {
        self.by_preimage[sample].len()
    }

    /// Pre-images inconsistent with edge `e`, sorted.
    pub fn inconsistent_with(&self, e: usize) -> &[PreImageRef] {
        &self.by_edge[e]
    }

    /// Edges the pre-image is inconsistent with, sorted.
    pub fn edges_of(&self, p: PreImageRef) -> &[usize] {
        &self.by_preimage[p.sample][p.index]
    }

    pub fn is_globally_consistent(&self, p: PreImageRef) -> bool {
        self.edges_of(p).is_empty()
    }

    pub fn globally_consistent(&self) -> &[PreImageRef] {
        &self.globally_consistent
    }

    /// Number of (edge, pre-image) inconsistent pairs.
    pub fn pair_count(&self) -> usize {
        self.by_edge.iter().map(Vec::len).sum()
    }

    pub fn preimages(&self) -> impl Iterator<Item = PreImageRef> + '_ {
        self.by_preimage.iter().enumerate().flat_map(|(s, v)| {
            (0..v.len()).map(move |index| PreImageRef { sample: s, index })
        })
    }
}

/// Computes the full incidence of a batch against its candidate edges.
pub fn incidence(batch: &[NesySample], edges: &CandidateEdgeSet) -> Result<Incidence> {
    for e in &edges.edges {
        check_edge(batch, e)?;
    }
    let domains = Domains::new(batch);
    let mut by_preimage: Vec<Vec<Vec<usize>>> = batch
        .iter()
        .map(|s| vec![Vec::new(); s.preimages.len()])
        .collect();
    let by_edge: Vec<Vec<PreImageRef>> = edges
        .edges
        .iter()
        .enumerate()
        .map(|(ei, e)| {
            let target = &domains.sets[e.dst.sample][e.dst.position];
            batch[e.src.sample]
                .preimages
                .iter()
                .enumerate()
                .filter(|(_, p)| !target.contains(p.label(e.src.position)))
                .map(|(index, _)| {
                    by_preimage[e.src.sample][index].push(ei);
                    PreImageRef {
                        sample: e.src.sample,
                        index,
                    }
                })
                .collect()
        })
        .collect();
    let globally_consistent = by_preimage
        .iter()
        .enumerate()
        .flat_map(|(s, v)| {
            v.iter()
                .enumerate()
                .filter(|(_, es)| es.is_empty())
                .map(move |(index, _)| PreImageRef { sample: s, index })
        })
        .collect();
    Ok(Incidence {
        by_edge,
        by_preimage,
        globally_consistent,
    })
}

/// JSON dump of an incidence map, naming samples by id.
#[derive(Debug, Serialize)]
pub struct IncidenceDump {
    pub edges: Vec<IncidenceEdge>,
    pub globally_consistent: Vec<(String, usize)>,
}

#[derive(Debug, Serialize)]
pub struct IncidenceEdge {
    pub edge: usize,
    pub src: (String, String),
    pub dst: (String, String),
    pub inconsistent: Vec<(String, usize)>,
}

impl IncidenceDump {
    pub fn new(batch: &[NesySample], edges: &CandidateEdgeSet, inc: &Incidence) -> Self {
        let name = |p: &PreImageRef| (batch[p.sample].id.clone(), p.index);
        let node = |n: crate::proximity::NodeRef| {
            (
                batch[n.sample].id.clone(),
                batch[n.sample].instance_ids[n.position].clone(),
            )
        };
        IncidenceDump {
            edges: edges
                .edges
                .iter()
                .enumerate()
                .map(|(i, e)| IncidenceEdge {
                    edge: i,
                    src: node(e.src),
                    dst: node(e.dst),
                    inconsistent: inc.inconsistent_with(i).iter().map(name).collect(),
                })
                .collect(),
            globally_consistent: inc.globally_consistent().iter().map(name).collect(),
        }
    }
}
