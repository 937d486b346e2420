//! Semantic loss: the negative log of the probability mass a classifier puts
//! on a set of label assignments, with instances treated as independent.

use crate::dataset::PreImage;
use crate::error::{Error, Result};

/// Floor on the total mass before taking the log.
pub const MASS_EPSILON: f64 = 1e-12;

/// Loss value, its gradient with respect to every score, and whether the
/// mass had to be clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// `grad[j][y]` = d loss / d `scores[j][y]`.
    pub grad: Vec<Vec<f64>>,
    pub mass: f64,
    pub clamped: bool,
}

fn check(scores: &[Vec<f64>], omega: &[PreImage]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::Precondition("semantic loss over an empty pre-image set".into()));
    }
    for (j, s) in scores.iter().enumerate() {
        let total: f64 = s.iter().sum();
        if (total - 1.0).abs() > 1e-6 || s.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Precondition(format!(
                "scores of position {j} are not a distribution (sum {total})"
            )));
        }
    }
    for p in omega {
        if p.len() != scores.len() || p.labels().iter().zip(scores).any(|(&l, s)| l >= s.len()) {
            return Err(Error::Precondition(format!(
                "pre-image {p} does not fit {} score vectors",
                scores.len()
            )));
        }
    }
    Ok(())
}

/// `-ln sum_{sigma in omega} prod_j scores[j][sigma(j)]`.
pub fn semantic_loss(scores: &[Vec<f64>], omega: &[PreImage]) -> Result<f64> {
    check(scores, omega)?;
    let mass = mass(scores, omega);
    Ok(-mass.max(MASS_EPSILON).ln())
}

fn mass(scores: &[Vec<f64>], omega: &[PreImage]) -> f64 {
    omega
        .iter()
        .map(|p| {
            p.labels()
                .iter()
                .zip(scores)
                .map(|(&l, s)| s[l])
                .product::<f64>()
        })
        .sum()
}

/// Loss and analytic gradient.
///
/// `d/d scores[j][y] = -(sum over sigma with sigma(j) = y of prod_{j' != j}
/// scores[j'][sigma(j')]) / mass`. When the mass is below [`MASS_EPSILON`]
/// the denominator is clamped as well and `clamped` is set.
pub fn semantic_loss_grad(scores: &[Vec<f64>], omega: &[PreImage]) -> Result<LossEval> {
    check(scores, omega)?;
    let arity = scores.len();
    let mut grad: Vec<Vec<f64>> = scores.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut total = 0.0;
    let mut prefix = vec![1.0; arity + 1];
    for p in omega {
        let labels = p.labels();
        for j in 0..arity {
            prefix[j + 1] = prefix[j] * scores[j][labels[j]];
        }
        total += prefix[arity];
        // suffix product accumulated right to left avoids dividing by scores
        let mut suffix = 1.0;
        for j in (0..arity).rev() {
            grad[j][labels[j]] += prefix[j] * suffix;
            suffix *= scores[j][labels[j]];
        }
    }
    let clamped = total < MASS_EPSILON;
    let denom = total.max(MASS_EPSILON);
    for row in &mut grad {
        for g in row.iter_mut() {
            *g = -*g / denom;
        }
    }
    Ok(LossEval {
        loss: -denom.ln(),
        grad,
        mass: total,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abduction::abduce_sum;

    fn uniform(arity: usize, c: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / c as f64; c]; arity]
    }

    #[test]
    fn uniform_sum_eight() {
        let omega = abduce_sum(2, 8, 10).preimages;
        let l = semantic_loss(&uniform(2, 10), &omega).unwrap();
        assert!((l - (-(0.09f64).ln())).abs() < 1e-12);
        assert!((l - 2.4079).abs() < 1e-4);
        let g = semantic_loss_grad(&uniform(2, 10), &omega).unwrap();
        for y in 0..10 {
            let count = omega.iter().filter(|p| p.label(0) == y).count() as f64;
            assert!((g.grad[0][y] - (-(count * 0.1) / 0.09)).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_on_kept_preimage() {
        let mut s = vec![vec![0.0; 10]; 2];
        s[0][1] = 1.0;
        s[1][7] = 1.0;
        let omega = abduce_sum(2, 8, 10).preimages;
        assert_eq!(semantic_loss(&s, &omega).unwrap(), 0.0);
    }

    #[test]
    fn two_preimages_give_ln2() {
        let mut s = vec![vec![0.0; 10]; 2];
        s[0][1] = 0.5;
        s[0][3] = 0.5;
        s[1][7] = 0.5;
        s[1][5] = 0.5;
        let omega = vec![PreImage(vec![1, 7]), PreImage(vec![3, 5])];
        let l = semantic_loss(&s, &omega).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_preimage_is_cross_entropy() {
        let mut s = uniform(2, 10);
        s[0] = vec![0.05, 0.4, 0.05, 0.05, 0.05, 0.1, 0.1, 0.1, 0.05, 0.05];
        let omega = vec![PreImage(vec![1, 7])];
        let g = semantic_loss_grad(&s, &omega).unwrap();
        for j in 0..2 {
            for y in 0..10 {
                let gold = if j == 0 { 1 } else { 7 };
                let expect = if y == gold { -1.0 / s[j][y] } else { 0.0 };
                assert!((g.grad[j][y] - expect).abs() < 1e-9, "{j} {y}");
            }
        }
    }

    #[test]
    fn zero_mass_is_clamped() {
        let mut s = vec![vec![0.0; 3]; 2];
        s[0][0] = 1.0;
        s[1][0] = 1.0;
        let g = semantic_loss_grad(&s, &[PreImage(vec![1, 2])]).unwrap();
        assert!(g.clamped);
        assert!(g.loss.is_finite() && (g.loss + MASS_EPSILON.ln()).abs() < 1e-9);
    }

    #[test]
    fn preconditions() {
        assert!(semantic_loss(&uniform(2, 10), &[]).is_err());
        assert!(semantic_loss(&[vec![0.5, 0.6]], &[PreImage(vec![0])]).is_err());
        assert!(semantic_loss(&uniform(1, 2), &[PreImage(vec![5])]).is_err());
    }
}
