#![allow(dead_code)]

use latent_prune::abduction::{abduce_sum, Constraint, Theory};
use latent_prune::proximity::{CandidateEdge, CandidateEdgeSet, NodeRef};
use latent_prune::{EdgeRule, Metric, NesySample};

/// Two-digit SUM sample `id` with instances `{id}1`, `{id}2` and all its
/// pre-images.
pub fn sum2(id: &str, target: i64) -> NesySample {
    NesySample {
        id: id.into(),
        instance_ids: vec![format!("{id}1"), format!("{id}2")],
        constraint: Constraint::new(Theory::Sum, target, 2).unwrap(),
        preimages: abduce_sum(2, target, 10).preimages,
        gold: None,
    }
}

/// Samples with sums 8, 2 and 16.
pub fn three_sample_fixture() -> Vec<NesySample> {
    vec![sum2("a", 8), sum2("b", 2), sum2("c", 16)]
}

pub fn first_digit_edge(src: usize, dst: usize) -> CandidateEdge {
    CandidateEdge {
        src: NodeRef { sample: src, position: 0 },
        dst: NodeRef { sample: dst, position: 0 },
        distance: 0.0,
    }
}

pub fn edge_set(edges: Vec<CandidateEdge>) -> CandidateEdgeSet {
    CandidateEdgeSet {
        edges,
        rule: EdgeRule::TopK(1),
        metric: Metric::Euclidean,
        clamped: false,
    }
}

/// Relative error with an absolute floor, so tiny gradients compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

use latent_prune::trainer::{batch_loss_grad, ClassifierModel};
use latent_prune::{EmbeddingTable as Table, PreImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random probability vector with every entry at least `floor / len`.
pub fn random_distribution(rng: &mut ChaCha8Rng, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random score rows and a random non-empty pre-image set over them.
pub fn random_loss_case(seed: u64) -> (Vec<Vec<f64>>, Vec<PreImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arity = rng.random_range(1..=4usize);
    let classes = rng.random_range(2..=10usize);
    let scores = (0..arity).map(|_| random_distribution(&mut rng, classes, 0.1)).collect();
    let count = rng.random_range(1..=12usize);
    let mut omega: Vec<PreImage> = (0..count)
        .map(|_| PreImage((0..arity).map(|_| rng.random_range(0..classes)).collect()))
        .collect();
    omega.sort();
    omega.dedup();
    (scores, omega)
}

/// Largest relative deviation between the analytic parameter gradient of
/// the mean batch loss and central differences with step `h`.
pub fn end_to_end_gradient_error(
    model: &ClassifierModel,
    features: &Table,
    batch: &[NesySample],
    omegas: &[Vec<PreImage>],
    h: f64,
) -> f64 {
    let refs: Vec<&NesySample> = batch.iter().collect();
    let omega_refs: Vec<&[PreImage]> = omegas.iter().map(Vec::as_slice).collect();
    let loss_at = |m: &ClassifierModel| batch_loss_grad(m, features, &refs, &omega_refs).unwrap().0;
    let (_, grad, _) = batch_loss_grad(model, features, &refs, &omega_refs).unwrap();
    let analytic = grad.parameters();
    let theta = model.parameters();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        probe.set_parameters(&t);
        let up = loss_at(&probe);
        t[i] = theta[i] - h;
        probe.set_parameters(&t);
        let down = loss_at(&probe);
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Small SUM-2 batch over `classes` digits with random features.
pub fn random_training_batch(seed: u64, dim: usize) -> (Vec<NesySample>, Table) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Table::new(dim);
    let batch: Vec<NesySample> = (0..4)
        .map(|i| {
            let s = sum2(&format!("s{i}"), rng.random_range(0..=18));
            for id in &s.instance_ids {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                features.insert(id.clone(), &v).unwrap();
            }
            s
        })
        .collect();
    (batch, features)
}
