//! Gram matrices of enumerated supports and their PSD factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::prior::{DiscretePrior, SignalVector};
use crate::tensor::tensor_overlap;

pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Read access to a Gram matrix G_ij = ⟨X_i, X_j⟩.
pub trait GramLike {
    fn size(&self) -> usize;
    fn entry(&self, i: usize, j: usize) -> f64;

    /// Σ_i w_i G_{j,i}
    fn row_dot(&self, j: usize, w: &[f64]) -> f64 {
        (0..self.size()).map(|i| w[i] * self.entry(j, i)).sum()
    }

    /// wᵀ G w
    fn quad_form(&self, w: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdentityGram(pub usize);

impl GramLike for IdentityGram {
    fn size(&self) -> usize {
        self.0
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            0.0
        }
    }

    fn row_dot(&self, j: usize, w: &[f64]) -> f64 {
        w[j]
    }

    fn quad_form(&self, w: &[f64]) -> f64 {
        let sq: Vec<f64> = w.iter().map(|x| x * x).collect();
        crate::numeric::pairwise_sum(&sq)
    }
}

impl GramLike for DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }

    fn row_dot(&self, j: usize, w: &[f64]) -> f64 {
        // G is symmetric; columns are contiguous.
        self.column(j).iter().zip(w).map(|(g, x)| g * x).sum()
    }

    fn quad_form(&self, w: &[f64]) -> f64 {
        let v = DVector::from_column_slice(w);
        (self * &v).dot(&v)
    }
}

/// Support, Gram matrix and lower-triangular L with LLᵀ = G + jitter·I.
#[derive(Clone, Debug)]
pub struct GramFactor {
    pub support: Vec<SignalVector>,
    pub order: u32,
    pub gram: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

pub fn gram_matrix(prior: &DiscretePrior, cap: usize) -> Result<GramFactor> {
    let support = prior.enumerate_support(cap)?;
    gram_from_support(support, prior.order())
}

pub fn gram_from_support(support: Vec<SignalVector>, order: u32) -> Result<GramFactor> {
    let m = support.len();
    if m == 0 {
        return Err(Error::InvalidParameter("empty support".into()));
    }
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        gram[(i, i)] = 1.0;
        for j in 0..i {
            let v = tensor_overlap(&support[i], &support[j], order)?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let (factor, jitter) = cholesky_with_jitter(&gram)?;
    Ok(GramFactor { support, order, gram, factor, jitter })
}

/// Cholesky factor of G + εI for the first ε on the jitter ladder that works.
pub fn cholesky_with_jitter(gram: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    for &eps in &JITTER_LADDER {
        let mut g = gram.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += eps;
        }
        if let Some(ch) = g.cholesky() {
            let l = ch.l();
            if l.iter().all(|v| v.is_finite()) {
                return Ok((l, eps));
            }
        }
    }
    Err(Error::FactorizationFailure { max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_4_2_square_gram() {
        let prior = DiscretePrior::bernoulli(4, 2, 2).unwrap();
        let g = gram_matrix(&prior, 100).unwrap();
        assert_eq!(g.gram.nrows(), 6);
        for i in 0..6 {
            assert_eq!(g.gram[(i, i)], 1.0);
            for j in 0..6 {
                let v = g.gram[(i, j)];
                assert!(i == j || v == 0.0 || v == 0.25);
                assert_eq!(v, g.gram[(j, i)]);
            }
        }
        let rebuilt = &g.factor * g.factor.transpose();
        assert!((rebuilt - &g.gram).abs().max() < 1e-6);
    }

    #[test]
    fn rank_deficient_gram_needs_small_jitter() {
        let prior = DiscretePrior::bernoulli(4, 2, 1).unwrap();
        let g = gram_matrix(&prior, 100).unwrap();
        let eig = g.gram.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-10 && min > -1e-8);
        assert!(g.jitter <= 1e-8);
        let rebuilt = &g.factor * g.factor.transpose();
        assert!((rebuilt - &g.gram).abs().max() < 1e-7);
    }

    #[test]
    fn quadratic_forms_agree() {
        let prior = DiscretePrior::bernoulli_rademacher(5, 2, 3).unwrap();
        let g = gram_matrix(&prior, 1000).unwrap();
        let m = g.gram.nrows();
        let w: Vec<f64> = (0..m).map(|i| (i as f64 + 1.0) / (m * (m + 1) / 2) as f64).collect();
        let mut direct = 0.0;
        for i in 0..m {
            for j in 0..m {
                direct += w[i] * w[j] * g.gram[(i, j)];
            }
        }
        assert!((direct - g.gram.quad_form(&w)).abs() < 1e-12);
        let id = IdentityGram(3);
        assert!((id.quad_form(&[0.5, 0.25, 0.25]) - 0.375).abs() < 1e-15);
        assert_eq!(id.row_dot(1, &[0.5, 0.25, 0.25]), 0.25);
    }
}
