//! The pruning integer program and its exact solution.
//!
//! Variables: one `E` per candidate edge (is the edge in the proximity
//! graph?) and a keep/discard pair `I + I' = 1` per pre-image. Every sample
//! keeps at least one pre-image, pre-images with no inconsistent candidate
//! edge are always kept, and each inconsistent (edge, pre-image) pair
//! couples the two variables. The objective is the number of discarded
//! pre-images.
//!
//! Two readings of the coupling are supported, see [`Coupling`]. Both
//! decompose per sample: an edge only ever discards pre-images of its own
//! source sample, and coverage is a per-sample constraint. Each sample's
//! subproblem is solved by depth-first branch and bound that tries
//! "exclude" before "include" in edge-id order, so the first optimum found
//! has the lexicographically smallest inclusion vector `(E_0, E_1, ...)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::consistency::{incidence, Incidence, PreImageRef};
use crate::dataset::NesySample;
use crate::error::{Error, Result};
use crate::proximity::{candidate_edges, CandidateEdgeSet, EdgeRule, EmbeddingTable, Metric};

/// How an inconsistent (edge, pre-image) pair constrains `E` and `I`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// A pre-image is discarded exactly when some included edge is
    /// inconsistent with it (`E + I <= 1` and `I >= 1 - sum E`).
    #[default]
    Implied,
    /// The literal equality `E + I = 1` for every inconsistent pair. Edges
    /// sharing an inconsistent pre-image must then agree on inclusion.
    Equality,
}

impl std::str::FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implied" => Ok(Coupling::Implied),
            "equality" => Ok(Coupling::Equality),
            other => Err(Error::Invalid(format!("unknown coupling `{other}`"))),
        }
    }
}

/// Explicit constraint lists of the pruning program for one batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IlpModel {
    pub coupling: Coupling,
    /// Source sample of every edge variable that is inconsistent with at
    /// least one pre-image.
    edge_source: Vec<Option<usize>>,
    /// Pre-image variables of sample `s` are `offsets[s]..offsets[s + 1]`.
    offsets: Vec<usize>,
    forced_keep: Vec<usize>,
    /// `(edge, pre-image variable)` per inconsistent pair.
    couplings: Vec<(usize, usize)>,
    vars_of_edge: Vec<Vec<usize>>,
    edges_of_var: Vec<Vec<usize>>,
}

impl IlpModel {
    pub fn edge_var_count(&self) -> usize {
        self.edge_source.len()
    }

    /// Number of `(I, I')` pairs, one per pre-image.
    pub fn preimage_var_count(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn sample_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn complementarity_count(&self) -> usize {
        self.preimage_var_count()
    }

    pub fn coverage_count(&self) -> usize {
        self.sample_count()
    }

    pub fn forced_keep_count(&self) -> usize {
        self.forced_keep.len()
    }

    pub fn coupling_count(&self) -> usize {
        self.couplings.len()
    }

    pub fn couplings(&self) -> &[(usize, usize)] {
        &self.couplings
    }

    pub fn forced_keep(&self) -> &[usize] {
        &self.forced_keep
    }

    pub fn var(&self, p: PreImageRef) -> usize {
        self.offsets[p.sample] + p.index
    }

    pub fn preimage_of(&self, var: usize) -> PreImageRef {
        let sample = self.offsets.partition_point(|&o| o <= var) - 1;
        PreImageRef {
            sample,
            index: var - self.offsets[sample],
        }
    }

    pub fn sample_vars(&self, sample: usize) -> std::ops::Range<usize> {
        self.offsets[sample]..self.offsets[sample + 1]
    }

    /// Checks a solution against every constraint of the model.
    pub fn check(&self, sol: &PruneSolution) -> std::result::Result<(), String> {
        if sol.included.len() != self.edge_var_count() {
            return Err("wrong number of edge variables".into());
        }
        if sol.discard.len() != self.sample_count() {
            return Err("wrong number of samples".into());
        }
        let keep = |v: usize| -> std::result::Result<bool, String> {
            let p = self.preimage_of(v);
            sol.discard[p.sample]
                .get(p.index)
                .map(|d| !d)
                .ok_or_else(|| format!("missing flag for {p:?}"))
        };
        for s in 0..self.sample_count() {
            if sol.discard[s].len() != self.sample_vars(s).len() {
                return Err(format!("sample {s}: wrong number of pre-image flags"));
            }
            let kept = self.sample_vars(s).filter(|&v| keep(v).unwrap_or(false)).count();
            if kept == 0 {
                return Err(format!("sample {s} keeps no pre-image"));
            }
        }
        for &v in &self.forced_keep {
            if !keep(v)? {
                return Err(format!("globally consistent {:?} discarded", self.preimage_of(v)));
            }
        }
        for &(e, v) in &self.couplings {
            let sum = sol.included[e] as u8 + keep(v)? as u8;
            let ok = match self.coupling {
                Coupling::Equality => sum == 1,
                Coupling::Implied => sum <= 1,
            };
            if !ok {
                return Err(format!(
                    "coupling of edge {e} with {:?} violated",
                    self.preimage_of(v)
                ));
            }
        }
        if self.coupling == Coupling::Implied {
            for (v, edges) in self.edges_of_var.iter().enumerate() {
                if !edges.is_empty() && !keep(v)? && !edges.iter().any(|&e| sol.included[e]) {
                    return Err(format!(
                        "{:?} discarded without an included inconsistent edge",
                        self.preimage_of(v)
                    ));
                }
            }
        }
        let discarded = sol.discard.iter().flatten().filter(|&&d| d).count();
        if discarded != sol.objective {
            return Err(format!(
                "objective {} but {discarded} pre-images discarded",
                sol.objective
            ));
        }
        Ok(())
    }
}

/// Builds the program for a batch from its incidence.
pub fn build_ilp(batch: &[NesySample], inc: &Incidence, coupling: Coupling) -> Result<IlpModel> {
    if inc.sample_count() != batch.len()
        || batch
            .iter()
            .enumerate()
            .any(|(s, sample)| inc.preimage_count(s) != sample.preimages.len())
    {
        return Err(Error::Precondition(
            "incidence was not computed for this batch".into(),
        ));
    }
    let mut offsets = Vec::with_capacity(batch.len() + 1);
    offsets.push(0);
    for s in batch {
        offsets.push(offsets.last().unwrap() + s.preimages.len());
    }
    let var = |p: &PreImageRef| offsets[p.sample] + p.index;
    let edge_count = inc.edge_count();
    let mut edge_source = vec![None; edge_count];
    let mut vars_of_edge = Vec::with_capacity(edge_count);
    let mut couplings = Vec::new();
    let total = *offsets.last().unwrap();
    let mut edges_of_var = vec![Vec::new(); total];
    for (e, source) in edge_source.iter_mut().enumerate() {
        let vars: Vec<usize> = inc.inconsistent_with(e).iter().map(var).collect();
        if let Some(first) = inc.inconsistent_with(e).first() {
            *source = Some(first.sample);
        }
        for &v in &vars {
            couplings.push((e, v));
            edges_of_var[v].push(e);
        }
        vars_of_edge.push(vars);
    }
    let forced_keep = inc.globally_consistent().iter().map(var).collect();
    Ok(IlpModel {
        coupling,
        edge_source,
        offsets,
        forced_keep,
        couplings,
        vars_of_edge,
        edges_of_var,
    })
}

/// Optimal edge selection and the pre-images it discards.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneSolution {
    pub included: Vec<bool>,
    /// `I'` per pre-image, indexed `[sample][pre-image]`.
    pub discard: Vec<Vec<bool>>,
    pub objective: usize,
    pub solve_seconds: f64,
    pub proven_optimal: bool,
}

impl PruneSolution {
    pub fn included_edges(&self) -> Vec<usize> {
        self.included
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(e, _)| e)
            .collect()
    }

    /// Same selection and objective; ignores timing.
    pub fn same_optimum(&self, other: &PruneSolution) -> bool {
        self.included == other.included && self.discard == other.discard && self.objective == other.objective
    }

    fn from_included(model: &IlpModel, included: Vec<bool>, started: Instant, proven_optimal: bool) -> Self {
        let discard: Vec<Vec<bool>> = (0..model.sample_count())
            .map(|s| {
                model
                    .sample_vars(s)
                    .map(|v| model.edges_of_var[v].iter().any(|&e| included[e]))
                    .collect()
            })
            .collect();
        let objective = discard.iter().flatten().filter(|&&d| d).count();
        PruneSolution {
            included,
            discard,
            objective,
            solve_seconds: started.elapsed().as_secs_f64(),
            proven_optimal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(len: usize) -> Self {
        Bits(vec![0; len.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn union_count(&self, other: &Bits) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    fn is_subset_of(&self, other: &Bits) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & !b == 0)
    }
}

/// Maximum coverage with at least one element left uncovered. `sets` are in
/// tie-break order; returns the chosen indices as flags.
struct CoverSearch<'a> {
    omega: usize,
    sets: &'a [Bits],
    suffix: Vec<Bits>,
    chosen: Vec<bool>,
    best: Option<(usize, Vec<bool>)>,
}

impl<'a> CoverSearch<'a> {
    fn solve(omega: usize, sets: &'a [Bits]) -> Vec<bool> {
        let mut suffix = vec![Bits::new(omega); sets.len() + 1];
        for i in (0..sets.len()).rev() {
            let mut u = suffix[i + 1].clone();
            u.union_with(&sets[i]);
            suffix[i] = u;
        }
        let mut search = CoverSearch {
            omega,
            sets,
            suffix,
            chosen: vec![false; sets.len()],
            best: None,
        };
        search.dfs(0, Bits::new(omega));
        search.best.expect("excluding everything is feasible").1
    }

    fn dfs(&mut self, i: usize, covered: Bits) {
        let bound = covered.union_count(&self.suffix[i]).min(self.omega - 1);
        if let Some((best, _)) = &self.best {
            if bound <= *best {
                return;
            }
        }
        if i == self.sets.len() {
            self.best = Some((covered.count(), self.chosen.clone()));
            return;
        }
        self.dfs(i + 1, covered.clone());
        if self.sets[i].is_subset_of(&covered) {
            return;
        }
        let mut with = covered;
        with.union_with(&self.sets[i]);
        if with.count() >= self.omega {
            return;
        }
        self.chosen[i] = true;
        self.dfs(i + 1, with);
        self.chosen[i] = false;
    }
}

/// Subset of item sizes with the largest total not exceeding `cap`.
struct KnapsackSearch<'a> {
    cap: usize,
    sizes: &'a [usize],
    suffix: Vec<usize>,
    chosen: Vec<bool>,
    best: Option<(usize, Vec<bool>)>,
}

impl<'a> KnapsackSearch<'a> {
    fn solve(cap: usize, sizes: &'a [usize]) -> Vec<bool> {
        let mut suffix = vec![0; sizes.len() + 1];
        for i in (0..sizes.len()).rev() {
            suffix[i] = suffix[i + 1] + sizes[i];
        }
        let mut search = KnapsackSearch {
            cap,
            sizes,
            suffix,
            chosen: vec![false; sizes.len()],
            best: None,
        };
        search.dfs(0, 0);
        search.best.expect("the empty selection is feasible").1
    }

    fn dfs(&mut self, i: usize, total: usize) {
        let bound = (total + self.suffix[i]).min(self.cap);
        if let Some((best, _)) = &self.best {
            if bound <= *best {
                return;
            }
        }
        if i == self.sizes.len() {
            self.best = Some((total, self.chosen.clone()));
            return;
        }
        self.dfs(i + 1, total);
        if self.sizes[i] > 0 && total + self.sizes[i] <= self.cap {
            self.chosen[i] = true;
            self.dfs(i + 1, total + self.sizes[i]);
            self.chosen[i] = false;
        }
    }
}

/// Disjoint sets over edge ids.
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Keeps the smaller id as representative.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Solves the program exactly.
pub fn solve_exact(model: &IlpModel) -> PruneSolution {
    let started = Instant::now();
    let included = match model.coupling {
        Coupling::Implied => solve_implied(model),
        Coupling::Equality => solve_equality(model),
    };
    let sol = PruneSolution::from_included(model, included, started, true);
    debug_assert_eq!(model.check(&sol), Ok(()));
    sol
}

fn solve_implied(model: &IlpModel) -> Vec<bool> {
    let mut included = vec![false; model.edge_var_count()];
    for s in 0..model.sample_count() {
        let range = model.sample_vars(s);
        let omega = range.len();
        // Among edges with the same inconsistency set only the last can be in
        // the lexicographically smallest optimum, so earlier copies are dropped.
        let mut edges: Vec<usize> = Vec::new();
        let mut sets: Vec<Bits> = Vec::new();
        for e in 0..model.edge_var_count() {
            if model.edge_source[e] != Some(s) {
                continue;
            }
            let mut b = Bits::new(omega);
            for &v in &model.vars_of_edge[e] {
                b.set(v - range.start);
            }
            if let Some(i) = sets.iter().position(|x| *x == b) {
                edges.remove(i);
                sets.remove(i);
            }
            edges.push(e);
            sets.push(b);
        }
        if sets.is_empty() {
            continue;
        }
        for (i, chosen) in CoverSearch::solve(omega, &sets).into_iter().enumerate() {
            included[edges[i]] = chosen;
        }
    }
    included
}

/// Edge groups forced to agree by the equality couplings; each group lists
/// its edges in increasing id order.
fn edge_groups(model: &IlpModel) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(model.edge_var_count());
    for edges in &model.edges_of_var {
        for w in edges.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; model.edge_var_count()];
    for e in 0..model.edge_var_count() {
        let r = uf.find(e);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(e);
    }
    groups
}

fn solve_equality(model: &IlpModel) -> Vec<bool> {
    let mut included = vec![false; model.edge_var_count()];
    let groups = edge_groups(model);
    for s in 0..model.sample_count() {
        let omega = model.sample_vars(s).len();
        // groups are already ordered by their smallest edge id
        let mine: Vec<&Vec<usize>> = groups
            .iter()
            .filter(|g| model.edge_source[g[0]] == Some(s))
            .collect();
        let sizes: Vec<usize> = mine
            .iter()
            .map(|g| {
                let mut vars: Vec<usize> = g.iter().flat_map(|&e| model.vars_of_edge[e].iter().copied()).collect();
                vars.sort_unstable();
                vars.dedup();
                vars.len()
            })
            .collect();
        if sizes.iter().all(|&z| z == 0) {
            continue;
        }
        for (g, chosen) in KnapsackSearch::solve(omega - 1, &sizes).into_iter().enumerate() {
            if chosen {
                for &e in mine[g] {
                    included[e] = true;
                }
            }
        }
    }
    included
}

/// Largest edge count [`brute_force_oracle`] accepts.
pub const ORACLE_EDGE_LIMIT: usize = 20;

/// Enumerates all edge subsets and derives the pre-image variables from the
/// coupling constraints directly. Ties go to the lexicographically smallest
/// inclusion vector, as in [`solve_exact`].
pub fn brute_force_oracle(model: &IlpModel) -> Result<PruneSolution> {
    let n = model.edge_var_count();
    if n > ORACLE_EDGE_LIMIT {
        return Err(Error::LimitExceeded(format!(
            "{n} candidate edges; the oracle enumerates at most {ORACLE_EDGE_LIMIT}"
        )));
    }
    let started = Instant::now();
    let total = model.preimage_var_count();
    let mut coupled: Vec<Vec<usize>> = vec![Vec::new(); total];
    for &(e, v) in model.couplings() {
        coupled[v].push(e);
    }
    let mut forced = vec![false; total];
    for &v in model.forced_keep() {
        forced[v] = true;
    }
    let mut best: Option<(usize, Vec<bool>)> = None;
    let mut keep = vec![false; total];
    // mask bit (n - 1 - e) is E_e, so increasing masks are increasing
    // inclusion vectors with edge 0 most significant
    'subsets: for mask in 0u64..(1u64 << n) {
        let edge_on = |e: usize| mask >> (n - 1 - e) & 1 == 1;
        for v in 0..total {
            let on = coupled[v].iter().filter(|&&e| edge_on(e)).count();
            keep[v] = match model.coupling {
                Coupling::Implied => on == 0,
                Coupling::Equality => {
                    if on > 0 && on < coupled[v].len() {
                        continue 'subsets;
                    }
                    on == 0
                }
            };
            if forced[v] && !keep[v] {
                continue 'subsets;
            }
        }
        for s in 0..model.sample_count() {
            if !model.sample_vars(s).any(|v| keep[v]) {
                continue 'subsets;
            }
        }
        let objective = keep.iter().filter(|&&k| !k).count();
        if best.as_ref().is_none_or(|(b, _)| objective > *b) {
            best = Some((objective, (0..n).map(edge_on).collect()));
        }
    }
    let (_, included) = best.ok_or_else(|| Error::Invariant("no feasible edge subset".into()))?;
    Ok(PruneSolution::from_included(model, included, started, true))
}

/// Retention figures of one pruned batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneStats {
    pub samples: usize,
    pub candidate_edges: usize,
    pub included_edges: usize,
    pub preimages_before: usize,
    pub preimages_after: usize,
    pub retained_pct: f64,
    /// Samples with known gold labels.
    pub gold_samples: usize,
    /// Of those, samples whose gold pre-image survived.
    pub gold_retained: usize,
    pub gold_retained_pct: Option<f64>,
    pub solve_seconds: f64,
}

impl PruneStats {
    fn finish(mut self) -> Self {
        self.retained_pct = pct(self.preimages_after, self.preimages_before);
        self.gold_retained_pct = (self.gold_samples > 0).then(|| pct(self.gold_retained, self.gold_samples));
        self
    }

    /// Sums counts over batches and recomputes the percentages.
    pub fn aggregate<'a>(parts: impl IntoIterator<Item = &'a PruneStats>) -> PruneStats {
        let mut total = PruneStats::default();
        for p in parts {
            total.samples += p.samples;
            total.candidate_edges += p.candidate_edges;
            total.included_edges += p.included_edges;
            total.preimages_before += p.preimages_before;
            total.preimages_after += p.preimages_after;
            total.gold_samples += p.gold_samples;
            total.gold_retained += p.gold_retained;
            total.solve_seconds += p.solve_seconds;
        }
        total.finish()
    }
}

pub(crate) fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        100.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Drops every discarded pre-image from the batch.
pub fn apply_pruning(batch: &[NesySample], solution: &PruneSolution) -> Result<(Vec<NesySample>, PruneStats)> {
    if solution.discard.len() != batch.len() {
        return Err(Error::Precondition("solution does not match the batch".into()));
    }
    let mut stats = PruneStats {
        samples: batch.len(),
        candidate_edges: solution.included.len(),
        included_edges: solution.included.iter().filter(|&&b| b).count(),
        solve_seconds: solution.solve_seconds,
        ..PruneStats::default()
    };
    let mut pruned = Vec::with_capacity(batch.len());
    for (sample, flags) in batch.iter().zip(&solution.discard) {
        if flags.len() != sample.preimages.len() {
            return Err(Error::Precondition(format!(
                "solution has {} flags for the {} pre-images of `{}`",
                flags.len(),
                sample.preimages.len(),
                sample.id
            )));
        }
        let kept: Vec<_> = sample
            .preimages
            .iter()
            .zip(flags)
            .filter(|(_, &d)| !d)
            .map(|(p, _)| p.clone())
            .collect();
        if kept.is_empty() && !sample.preimages.is_empty() {
            return Err(Error::Invariant(format!(
                "pruning left sample `{}` without pre-images",
                sample.id
            )));
        }
        stats.preimages_before += sample.preimages.len();
        stats.preimages_after += kept.len();
        if let Some(gold) = &sample.gold {
            stats.gold_samples += 1;
            if kept.binary_search(gold).is_ok() {
                stats.gold_retained += 1;
            }
        }
        let mut s = sample.clone();
        s.preimages = kept;
        pruned.push(s);
    }
    Ok((pruned, stats.finish()))
}

/// Everything computed while pruning one batch.
#[derive(Clone, Debug)]
pub struct BatchPrune {
    pub edges: CandidateEdgeSet,
    pub incidence: Incidence,
    pub model: IlpModel,
    pub solution: PruneSolution,
    pub pruned: Vec<NesySample>,
    pub stats: PruneStats,
}

/// Candidate edges, incidence, exact solve and pruning for one batch.
///
/// A batch with fewer than two samples has no cross-sample edges and is
/// returned unchanged.
pub fn prune_batch(
    batch: &[NesySample],
    embeddings: &EmbeddingTable,
    rule: EdgeRule,
    metric: Metric,
    coupling: Coupling,
) -> Result<BatchPrune> {
    let edges = if batch.len() < 2 {
        CandidateEdgeSet::empty(rule, metric)
    } else {
        candidate_edges(batch, embeddings, rule, metric)?
    };
    let inc = incidence(batch, &edges)?;
    let model = build_ilp(batch, &inc, coupling)?;
    let solution = solve_exact(&model);
    model
        .check(&solution)
        .map_err(|e| Error::Invariant(format!("solver returned an infeasible point: {e}")))?;
    let (pruned, stats) = apply_pruning(batch, &solution)?;
    Ok(BatchPrune {
        edges,
        incidence: inc,
        model,
        solution,
        pruned,
        stats,
    })
}

pub mod random {
    //! Seeded random pruning instances for solver-vs-oracle checks.

    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::abduction::{Constraint, Theory};
    use crate::dataset::PreImage;
    use crate::proximity::{CandidateEdge, NodeRef};

    /// Size limits of generated instances.
    #[derive(Clone, Copy, Debug)]
    pub struct Limits {
        pub max_samples: usize,
        pub max_preimages: usize,
        pub max_edges: usize,
    }

    impl Default for Limits {
        fn default() -> Self {
            Limits {
                max_samples: 6,
                max_preimages: 10,
                max_edges: 8,
            }
        }
    }

    /// A batch of 2..=max_samples samples with random distinct pre-images
    /// over a small label space, and random cross-sample candidate edges.
    pub fn instance(seed: u64, limits: Limits) -> (Vec<NesySample>, CandidateEdgeSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=5usize);
        let n = rng.random_range(2..=limits.max_samples.max(2));
        let mut batch = Vec::with_capacity(n);
        for s in 0..n {
            let arity = rng.random_range(1..=3usize);
            let space = classes.pow(arity as u32);
            let omega = rng.random_range(1..=limits.max_preimages.min(space));
            let mut all: Vec<usize> = (0..space).collect();
            all.shuffle(&mut rng);
            let mut preimages: Vec<PreImage> = all[..omega]
                .iter()
                .map(|&code| {
                    PreImage((0..arity).map(|j| code / classes.pow(j as u32) % classes).collect())
                })
                .collect();
            preimages.sort();
            batch.push(NesySample {
                id: format!("s{s}"),
                instance_ids: (0..arity).map(|j| format!("s{s}x{j}")).collect(),
                constraint: Constraint {
                    theory: Theory::Sum,
                    target: 0,
                    arity,
                },
                preimages,
                gold: None,
            });
        }
        let nodes: Vec<NodeRef> = batch
            .iter()
            .enumerate()
            .flat_map(|(s, x)| (0..x.arity()).map(move |p| NodeRef { sample: s, position: p }))
            .collect();
        let mut pairs: Vec<(NodeRef, NodeRef)> = nodes
            .iter()
            .flat_map(|&a| nodes.iter().filter(move |b| b.sample != a.sample).map(move |&b| (a, b)))
            .collect();
        pairs.shuffle(&mut rng);
        let m = rng.random_range(0..=limits.max_edges.min(pairs.len()));
        let mut chosen = pairs[..m].to_vec();
        chosen.sort();
        let edges = chosen
            .into_iter()
            .map(|(src, dst)| CandidateEdge {
                src,
                dst,
                distance: 0.0,
            })
            .collect();
        (
            batch,
            CandidateEdgeSet {
                edges,
                rule: EdgeRule::TopK(1),
                metric: Metric::Euclidean,
                clamped: false,
            },
        )
    }

    /// Outcome of comparing [`solve_exact`] with [`brute_force_oracle`].
    #[derive(Clone, Debug, Default, Serialize)]
    pub struct OracleReport {
        pub instances: usize,
        pub agreeing: usize,
        pub nontrivial: usize,
        pub mismatched_seeds: Vec<u64>,
    }

    pub fn oracle_check(seeds: u64, coupling: Coupling, limits: Limits) -> Result<OracleReport> {
        let mut report = OracleReport::default();
        for seed in 0..seeds {
            let (batch, edges) = instance(seed, limits);
            let inc = incidence(&batch, &edges)?;
            let model = build_ilp(&batch, &inc, coupling)?;
            let exact = solve_exact(&model);
            let oracle = brute_force_oracle(&model)?;
            report.instances += 1;
            if oracle.objective > 0 {
                report.nontrivial += 1;
            }
            if exact.same_optimum(&oracle) && model.check(&exact).is_ok() {
                report.agreeing += 1;
            } else {
                report.mismatched_seeds.push(seed);
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abduction::{abduce_sum, Constraint, Theory};
    use crate::dataset::PreImage;
    use crate::proximity::{CandidateEdge, NodeRef};

    fn sum_sample(id: &str, target: i64) -> NesySample {
        NesySample {
            id: id.into(),
            instance_ids: vec![format!("{id}1"), format!("{id}2")],
            constraint: Constraint {
                theory: Theory::Sum,
                target,
                arity: 2,
            },
            preimages: abduce_sum(2, target, 10).preimages,
            gold: None,
        }
    }

    fn edge(src: usize, dst: usize) -> CandidateEdge {
        CandidateEdge {
            src: NodeRef { sample: src, position: 0 },
            dst: NodeRef { sample: dst, position: 0 },
            distance: 0.0,
        }
    }

    fn edge_set(edges: Vec<CandidateEdge>) -> CandidateEdgeSet {
        CandidateEdgeSet {
            edges,
            rule: EdgeRule::TopK(1),
            metric: Metric::Euclidean,
            clamped: false,
        }
    }

    fn fixture() -> Vec<NesySample> {
        vec![sum_sample("a", 8), sum_sample("b", 2), sum_sample("c", 16)]
    }

    fn model_for(batch: &[NesySample], edges: Vec<CandidateEdge>, coupling: Coupling) -> IlpModel {
        let inc = incidence(batch, &edge_set(edges)).unwrap();
        build_ilp(batch, &inc, coupling).unwrap()
    }

    #[test]
    fn fixture_model_counts() {
        let batch = fixture();
        let m = model_for(&batch, vec![edge(0, 1), edge(0, 2)], Coupling::Implied);
        assert_eq!(m.preimage_var_count(), 15);
        assert_eq!(m.edge_var_count(), 2);
        assert_eq!(m.coupling_count(), 13);
        assert_eq!(m.coverage_count(), 3);
        assert_eq!(m.complementarity_count(), 15);
        assert_eq!(m.forced_keep_count(), 6);
    }

    #[test]
    fn fixture_optimum() {
        let batch = fixture();
        let m = model_for(&batch, vec![edge(0, 1), edge(0, 2)], Coupling::Implied);
        let sol = solve_exact(&m);
        assert_eq!(sol.objective, 7);
        assert_eq!(sol.included, vec![false, true]);
        let (pruned, stats) = apply_pruning(&batch, &sol).unwrap();
        assert_eq!(pruned[0].preimages, vec![PreImage(vec![7, 1]), PreImage(vec![8, 0])]);
        assert_eq!(pruned[1], batch[1]);
        assert_eq!(pruned[2], batch[2]);
        assert_eq!(stats.preimages_after, 8);

        let mut both = sol.clone();
        both.included = vec![true, true];
        both.discard[0] = vec![true; 9];
        both.objective = 9;
        assert!(m.check(&both).unwrap_err().contains("keeps no pre-image"));
    }

    #[test]
    fn single_edge_optimum() {
        let batch = fixture();
        let m = model_for(&batch, vec![edge(0, 1)], Coupling::Implied);
        let sol = solve_exact(&m);
        assert_eq!(sol.objective, 6);
        assert_eq!(sol.included, vec![true]);
    }

    #[test]
    fn equality_coupling_groups_shared_edges() {
        // e1 and e2 share x1 in 3..=6, so the literal equality coupling ties
        // them together and the pair would discard everything.
        let batch = fixture();
        let m = model_for(&batch, vec![edge(0, 1), edge(0, 2)], Coupling::Equality);
        let sol = solve_exact(&m);
        assert_eq!(sol.objective, 0);
        assert_eq!(brute_force_oracle(&m).unwrap().objective, 0);
        let m1 = model_for(&batch, vec![edge(0, 1)], Coupling::Equality);
        assert_eq!(solve_exact(&m1).objective, 6);
    }

    #[test]
    fn empty_edges() {
        let batch = fixture();
        for coupling in [Coupling::Implied, Coupling::Equality] {
            let m = model_for(&batch, vec![], coupling);
            assert_eq!(m.edge_var_count(), 0);
            assert_eq!(m.forced_keep_count(), 15);
            let sol = solve_exact(&m);
            assert_eq!(sol.objective, 0);
            assert_eq!(brute_force_oracle(&m).unwrap().objective, 0);
            let (pruned, stats) = apply_pruning(&batch, &sol).unwrap();
            assert_eq!(pruned, batch);
            assert_eq!(stats.retained_pct, 100.0);
        }
    }

    #[test]
    fn edge_hitting_every_preimage_is_excluded() {
        // sample 0 only allows x1 in 7..=9; the target only ever has 0.
        let mut a = sum_sample("a", 16);
        a.instance_ids = vec!["a1".into(), "a2".into()];
        let b = sum_sample("b", 0);
        let batch = vec![a, b];
        let m = model_for(&batch, vec![edge(0, 1)], Coupling::Implied);
        assert_eq!(m.coupling_count(), 3);
        let sol = solve_exact(&m);
        assert_eq!(sol.included, vec![false]);
        assert_eq!(sol.objective, 0);
    }

    #[test]
    fn supervised_samples_are_untouched() {
        let mut sup = sum_sample("s", 4);
        sup.preimages = vec![PreImage(vec![1, 3])];
        let batch = vec![sup, sum_sample("b", 2)];
        let m = model_for(&batch, vec![edge(0, 1), edge(1, 0)], Coupling::Implied);
        let sol = solve_exact(&m);
        let (pruned, _) = apply_pruning(&batch, &sol).unwrap();
        assert_eq!(pruned[0], batch[0]);
    }

    #[test]
    fn apply_rejects_empty_samples() {
        let batch = fixture();
        let m = model_for(&batch, vec![], Coupling::Implied);
        let mut sol = solve_exact(&m);
        sol.discard[1] = vec![true; 3];
        assert!(matches!(apply_pruning(&batch, &sol), Err(Error::Invariant(_))));
    }

    #[test]
    fn oracle_rejects_large_models() {
        let batch = fixture();
        let edges = (0..21).map(|_| edge(0, 1)).collect();
        let m = model_for(&batch, edges, Coupling::Implied);
        assert!(matches!(brute_force_oracle(&m), Err(Error::LimitExceeded(_))));
    }

    #[test]
    fn tie_break_prefers_excluding_redundant_edges() {
        let batch = fixture();
        // three copies of e1: excluding the earlier ones is lexicographically smaller
        let m = model_for(&batch, vec![edge(0, 1), edge(0, 1), edge(0, 1)], Coupling::Implied);
        let sol = solve_exact(&m);
        assert_eq!(sol.included, vec![false, false, true]);
        assert!(sol.same_optimum(&brute_force_oracle(&m).unwrap()));
    }

    #[test]
    fn preimage_var_mapping() {
        let batch = fixture();
        let m = model_for(&batch, vec![], Coupling::Implied);
        for v in 0..m.preimage_var_count() {
            assert_eq!(m.var(m.preimage_of(v)), v);
        }
        assert_eq!(m.preimage_of(9), PreImageRef { sample: 1, index: 0 });
    }

    #[test]
    fn random_instances_agree() {
        for coupling in [Coupling::Implied, Coupling::Equality] {
            let r = random::oracle_check(200, coupling, random::Limits::default()).unwrap();
            assert!(r.mismatched_seeds.is_empty(), "{coupling:?}: {:?}", r.mismatched_seeds);
            assert!(r.nontrivial > 20, "{coupling:?}: only {} nontrivial", r.nontrivial);
        }
    }
}
