mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{end_to_end_gradient_error, random_loss_case, random_training_batch, rel_err};
use latent_prune::trainer::model::softmax;
use latent_prune::trainer::{semantic_loss, semantic_loss_grad, ClassifierModel};

#[test]
fn semantic_loss_gradient_matches_central_differences() {
    // the step stays inside the distribution check's tolerance
    let h = 1e-7;
    for seed in 0..100 {
        let (scores, omega) = random_loss_case(seed);
        let eval = semantic_loss_grad(&scores, &omega).unwrap();
        assert!(!eval.clamped);
        assert!((eval.loss - semantic_loss(&scores, &omega).unwrap()).abs() < 1e-12);
        for j in 0..scores.len() {
            for y in 0..scores[j].len() {
                let mut s = scores.clone();
                s[j][y] += h;
                let up = semantic_loss(&s, &omega).unwrap();
                s[j][y] -= 2.0 * h;
                let down = semantic_loss(&s, &omega).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!(rel_err(eval.grad[j][y], fd) < 1e-4, "seed {seed} [{j}][{y}]: {} vs {fd}", eval.grad[j][y]);
            }
        }
    }
}

#[test]
fn parameter_gradients_match_central_differences() {
    for seed in 0..5 {
        let (batch, features) = random_training_batch(seed, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = ClassifierModel::init(6, 5, 10, &mut rng);
        let mut omegas: Vec<_> = batch.iter().map(|s| s.preimages.clone()).collect();
        // a pruned-looking pre-image set for one sample
        let half = omegas[0].len().div_ceil(2);
        omegas[0].truncate(half);
        let err = end_to_end_gradient_error(&model, &features, &batch, &omegas, 1e-5);
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_rows_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let len = rng.random_range(1..=20);
        let scale = [1.0, 30.0, 700.0][rng.random_range(0..3)];
        let logits: Vec<f64> = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
}

#[test]
fn forward_probabilities_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = ClassifierModel::init(8, 16, 12, &mut rng);
    for _ in 0..200 {
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = model.forward(&x).probs;
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}
