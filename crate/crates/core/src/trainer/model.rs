use rand::Rng;
use serde::{Deserialize, Serialize};

/// One-hidden-layer perceptron with tanh hidden units and a softmax output.
///
/// The hidden activations double as the trainable encoder when proximity is
/// computed from the classifier itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// `hidden x input_dim`, row major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `classes x hidden`, row major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ClassifierModel {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        ClassifierModel {
            input_dim,
            hidden,
            classes,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input_dim, hidden, classes);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for w in m.w1.iter_mut().chain(m.b1.iter_mut()) {
            *w = rng.random_range(-a1..a1);
        }
        for w in m.w2.iter_mut().chain(m.b2.iter_mut()) {
            *w = rng.random_range(-a2..a2);
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden, self.classes)
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim);
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h];
                z.tanh()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let hidden = self.encode(x);
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[k]
            })
            .collect();
        Forward {
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Argmax class; ties go to the smallest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let probs = self.forward(x).probs;
        let mut best = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        best
    }

    /// Adds the parameter gradient for loss gradient `dprobs` (with respect to
    /// the output probabilities) into `grad`.
    pub fn backward(&self, x: &[f64], fwd: &Forward, dprobs: &[f64], grad: &mut ClassifierModel) {
        let p = &fwd.probs;
        let dot: f64 = dprobs.iter().zip(p).map(|(g, q)| g * q).sum();
        let dlogits: Vec<f64> = p.iter().zip(dprobs).map(|(q, g)| q * (g - dot)).collect();
        let mut dhidden = vec![0.0; self.hidden];
        for (k, &dz) in dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            grad.b2[k] += dz;
            let base = k * self.hidden;
            for h in 0..self.hidden {
                grad.w2[base + h] += dz * fwd.hidden[h];
                dhidden[h] += dz * self.w2[base + h];
            }
        }
        for h in 0..self.hidden {
            let da = dhidden[h] * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
            grad.b1[h] += da;
            let base = h * self.input_dim;
            for (i, &xi) in x.iter().enumerate() {
                grad.w1[base + i] += da * xi;
            }
        }
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// All parameters in a fixed order: w1, b1, w2, b2.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for slice in self.slices_mut() {
            for w in slice.iter_mut() {
                *w = *it.next().expect("parameter count");
            }
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ClassifierModel) {
        let others = [&other.w1, &other.b1, &other.w2, &other.b2];
        for (mine, theirs) in self.slices_mut().into_iter().zip(others) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += alpha * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|w| w.is_finite())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn zero_model_ties_to_smallest_class() {
        let m = ClassifierModel::zeros(3, 4, 5);
        assert_eq!(m.predict(&[1.0, -2.0, 0.5]), 0);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = ClassifierModel::init(16, 8, 10, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ClassifierModel::init(16, 8, 10, &mut rng);
        assert_eq!(a, b);
        assert!(a.w1.iter().all(|w| w.abs() < 0.25));
        assert!(a.w2.iter().all(|w| w.abs() < 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn parameters_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ClassifierModel::init(2, 3, 4, &mut rng);
        let mut b = a.zeros_like();
        b.set_parameters(&a.parameters());
        assert_eq!(a, b);
    }
}
