//! Bayes posterior over the support and Monte-Carlo MMSE.

use crate::channel::{ChannelInstance, GramLike, ProjectionObservation};
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, MeanEstimate};
use crate::rng::StreamKey;
use crate::trial::TrialTable;

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub weights: Vec<f64>,
    /// ⟨X, X̂⟩ = Σ_i w_i G_{J,i}
    pub overlap_true: f64,
    /// ‖X̂‖² = wᵀ G w
    pub norm_sq_est: f64,
    /// ‖X − X̂‖²
    pub sq_error: f64,
}

/// w_i ∝ exp(√λ u_i), normalized after a max shift.
pub fn posterior_weights(obs: &ProjectionObservation) -> Vec<f64> {
    let m = obs.u.len();
    if obs.lambda == 0.0 {
        return vec![1.0 / m as f64; m];
    }
    let theta = obs.lambda.sqrt();
    let top = obs.u.iter().fold(f64::NEG_INFINITY, |a, &u| a.max(theta * u));
    let mut w: Vec<f64> = obs.u.iter().map(|&u| (theta * u - top).exp()).collect();
    let s = pairwise_sum(&w);
    w.iter_mut().for_each(|x| *x /= s);
    w
}

pub fn posterior_statistics<G: GramLike + ?Sized>(weights: &[f64], gram: &G, true_index: usize) -> Result<PosteriorSummary> {
    if weights.len() != gram.size() {
        return Err(Error::DimensionMismatch { left: weights.len(), right: gram.size() });
    }
    if true_index >= gram.size() {
        return Err(Error::InvalidParameter(format!("true index {true_index} out of range")));
    }
    let overlap_true = gram.row_dot(true_index, weights);
    let norm_sq_est = gram.quad_form(weights);
    Ok(PosteriorSummary {
        weights: weights.to_vec(),
        overlap_true,
        norm_sq_est,
        sq_error: 1.0 - 2.0 * overlap_true + norm_sq_est,
    })
}

/// argmax_i u_i (0-based), smallest index on ties.
pub fn map_estimate(obs: &ProjectionObservation) -> usize {
    let mut best = 0;
    for (i, &u) in obs.u.iter().enumerate() {
        if u > obs.u[best] {
            best = i;
        }
    }
    best
}

/// Mean and standard error of ‖X − E[X|Y]‖² at the instance's λ.
pub fn mmse_monte_carlo(instance: &ChannelInstance, n_trials: usize, key: StreamKey) -> Result<MeanEstimate> {
    Ok(mmse_curve(instance, &[instance.lambda()], n_trials, key)?[0])
}

/// MMSE at several λ with common random numbers across λ.
pub fn mmse_curve(instance: &ChannelInstance, lambdas: &[f64], n_trials: usize, key: StreamKey) -> Result<Vec<MeanEstimate>> {
    let table = TrialTable::run(instance, lambdas, n_trials, key, true)?;
    Ok((0..lambdas.len()).map(|i| table.mean(i, |o| o.sq_error())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Caps, IdentityGram};
    use crate::prior::DiscretePrior;

    fn obs(u: &[f64], lambda: f64) -> ProjectionObservation {
        ProjectionObservation { u: u.to_vec(), true_index: 0, lambda }
    }

    #[test]
    fn weights_basic_cases() {
        assert_eq!(posterior_weights(&obs(&[3.0, -1.0, 7.0, 0.0], 0.0)), vec![0.25; 4]);
        assert_eq!(posterior_weights(&obs(&[2.0, 2.0], 5.0)), vec![0.5, 0.5]);
        let w = posterior_weights(&obs(&[1.0, 0.0], 1.0));
        let e = 1f64.exp();
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        let w = posterior_weights(&obs(&[1e3, -1e3, 999.0], 1e6));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn statistics_closed_forms() {
        let g = IdentityGram(4);
        let s = posterior_statistics(&[1.0, 0.0, 0.0, 0.0], &g, 0).unwrap();
        assert_eq!(s.sq_error, 0.0);
        let s = posterior_statistics(&[0.25; 4], &g, 2).unwrap();
        assert!((s.norm_sq_est - 0.25).abs() < 1e-15);
        assert!((s.sq_error - 0.75).abs() < 1e-15);
        let w = [0.1, 0.2, 0.3, 0.4];
        let s = posterior_statistics(&w, &g, 1).unwrap();
        let want = 1.0 - 0.4 + w.iter().map(|x| x * x).sum::<f64>();
        assert!((s.sq_error - want).abs() < 1e-15);
        assert!(posterior_statistics(&w, &IdentityGram(3), 0).is_err());
    }

    #[test]
    fn map_ties_go_to_smallest_index() {
        assert_eq!(map_estimate(&obs(&[3.0, 1.0, 2.0], 1.0)), 0);
        assert_eq!(map_estimate(&obs(&[2.0, 2.0, 0.0], 1.0)), 0);
        assert_eq!(map_estimate(&obs(&[0.0, 2.0, 2.0], 1.0)), 1);
    }

    #[test]
    fn null_mmse_orthogonal() {
        let prior = DiscretePrior::orthogonal(8, 1).unwrap();
        let inst = ChannelInstance::new(prior, 0.0, &Caps::default()).unwrap();
        let est = mmse_monte_carlo(&inst, 200, StreamKey::named(3, "null")).unwrap();
        assert!((est.mean - 0.875).abs() < 1e-12);
    }
}
