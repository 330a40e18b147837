//! Gradient surgery for conflicting task gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Project each task gradient away from every other task gradient it
/// conflicts with, visiting the others in a seeded random order. Pairs whose
/// partner has zero norm are skipped. Returns the surgered gradients.
pub fn pcgrad_surgery(grads: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
    let Some(first) = grads.first() else {
        return Err(Error::Parameter("pcgrad needs at least one gradient".into()));
    };
    let dim = first.len();
    if grads.iter().any(|g| g.len() != dim) {
        return Err(Error::Parameter("task gradients differ in length".into()));
    }
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite task gradient".into()));
    }
    let norms: Vec<f64> = grads.iter().map(|g| dot(g, g)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(grads.len());
    for (i, gi) in grads.iter().enumerate() {
        let mut order: Vec<usize> = (0..grads.len()).filter(|&j| j != i).collect();
        order.shuffle(&mut rng);
        let mut g = gi.clone();
        for j in order {
            let d = dot(&g, &grads[j]);
            if d < 0.0 && norms[j] > 0.0 {
                let c = d / norms[j];
                for (x, y) in g.iter_mut().zip(&grads[j]) {
                    *x -= c * y;
                }
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Sum of the surgered gradients. When no pair conflicts this is exactly
/// the plain sum.
pub fn pcgrad_project(grads: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let surgered = pcgrad_surgery(grads, seed)?;
    let mut total = vec![0.0; surgered[0].len()];
    for g in &surgered {
        for (t, x) in total.iter_mut().zip(g) {
            *t += x;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_gradients_pass_through() {
        let out = pcgrad_project(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn conflicting_pair_is_projected() {
        // g1 = (1,0) against g2 = (-1,1): g1' = (0.5, 0.5);
        // g2 against g1: g2' = (0, 1).
        let out = pcgrad_project(&[vec![1.0, 0.0], vec![-1.0, 1.0]], 3).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_gradient_is_identity() {
        let g = vec![0.3, -2.0, 7.5];
        assert_eq!(pcgrad_project(std::slice::from_ref(&g), 9).unwrap(), g);
        assert!(pcgrad_project(&[], 0).is_err());
    }

    #[test]
    fn zero_norm_partner_is_skipped() {
        let out = pcgrad_project(&[vec![1.0, 2.0], vec![0.0, 0.0]], 1).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }
}
