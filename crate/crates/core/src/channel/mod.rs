//! The observation Y = √λ X + Z and its sufficient statistics.
//!
//! Three backends share one interface:
//! * identity: orthogonal priors, projections are independent normals;
//! * gram: enumerated support, projections u = √λ G e_J + L ξ;
//! * implicit: sparse supports too large to enumerate, evaluated from a dense
//!   ambient observation by a structured walk (see [`implicit`]).

pub mod gram;
pub mod implicit;

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::prior::{DiscretePrior, PriorKind, SignalVector};
use crate::tensor::{materialize_tensor, TensorSignal};
pub use gram::{gram_from_support, gram_matrix, GramFactor, GramLike, IdentityGram};
pub use implicit::ImplicitSupport;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Caps {
    /// Largest enumerated support for which a dense Gram matrix is built.
    pub gram_cap: usize,
    /// Largest p^d for which a dense ambient observation is simulated.
    pub ambient_cap: usize,
    /// Largest element-set table used by the implicit backend.
    pub table_cap: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self { gram_cap: 2048, ambient_cap: 1 << 22, table_cap: 1 << 23 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Auto,
    Gram,
    Implicit,
}

#[derive(Clone, Debug)]
pub enum Structure {
    Identity { m: usize },
    Gram(GramFactor),
    Implicit(ImplicitSupport),
}

/// Per-trial, per-λ sufficient summaries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaOutcome {
    pub lambda: f64,
    /// ln Z(Y)
    pub log_z: f64,
    /// ⟨Y, X_J⟩
    pub u_true: f64,
    /// ⟨Z, X_J⟩
    pub noise_true: f64,
    /// ⟨X_J, X̂⟩ (NaN when posterior statistics were not requested)
    pub overlap_true: f64,
    /// ‖X̂‖²
    pub norm_sq: f64,
}

impl LambdaOutcome {
    pub fn sq_error(&self) -> f64 {
        1.0 - 2.0 * self.overlap_true + self.norm_sq
    }

    /// √λ u_J − λ/2 − ln Z, whose mean is the mutual information.
    pub fn info_term(&self) -> f64 {
        self.lambda.sqrt() * self.u_true - 0.5 * self.lambda - self.log_z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionObservation {
    pub u: Vec<f64>,
    pub true_index: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseObservation {
    pub y: Vec<f64>,
    pub signal: SignalVector,
    pub true_index: Option<usize>,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct ChannelInstance {
    prior: Option<DiscretePrior>,
    order: u32,
    lambda: f64,
    log_m: f64,
    structure: Arc<Structure>,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda must be finite and nonnegative, got {lambda}")))
    }
}

impl ChannelInstance {
    pub fn new(prior: DiscretePrior, lambda: f64, caps: &Caps) -> Result<Self> {
        Self::with_backend(prior, lambda, Backend::Auto, caps)
    }

    pub fn with_backend(prior: DiscretePrior, lambda: f64, backend: Backend, caps: &Caps) -> Result<Self> {
        check_lambda(lambda)?;
        let structure = match (prior.kind(), backend) {
            (PriorKind::Orthogonal { m }, Backend::Auto) => Structure::Identity { m },
            (_, Backend::Gram) => Structure::Gram(gram_matrix(&prior, caps.gram_cap)?),
            (_, Backend::Implicit) => {
                Structure::Implicit(ImplicitSupport::new(prior, caps.ambient_cap, caps.table_cap)?)
            }
            (_, Backend::Auto) => {
                if prior.support_size() <= caps.gram_cap as f64 + 0.5 {
                    Structure::Gram(gram_matrix(&prior, caps.gram_cap)?)
                } else {
                    match ImplicitSupport::new(prior, caps.ambient_cap, caps.table_cap) {
                        Ok(s) => Structure::Implicit(s),
                        Err(_) => {
                            return Err(Error::CardinalityExceeded {
                                cardinality: prior.support_size(),
                                cap: caps.gram_cap,
                            })
                        }
                    }
                }
            }
        };
        Ok(Self {
            prior: Some(prior),
            order: prior.order(),
            lambda,
            log_m: prior.log_cardinality(),
            structure: Arc::new(structure),
        })
    }

    /// An instance over an explicit list of support vectors (uniform prior).
    pub fn from_support(support: Vec<SignalVector>, order: u32, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let log_m = (support.len() as f64).ln();
        let g = gram_from_support(support, order)?;
        Ok(Self { prior: None, order, lambda, log_m, structure: Arc::new(Structure::Gram(g)) })
    }

    /// Same support structure, different SNR. The structure is shared.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { lambda, ..self.clone() })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn prior(&self) -> Option<&DiscretePrior> {
        self.prior.as_ref()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// ln M_N as used for the SNR scale and the divergence bounds.
    pub fn log_cardinality(&self) -> f64 {
        self.log_m
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn gram(&self) -> Option<&GramFactor> {
        match self.structure.as_ref() {
            Structure::Gram(g) => Some(g),
            _ => None,
        }
    }

    /// Number of rows the posterior ranges over (signed vectors counted separately).
    pub fn rows(&self) -> Option<usize> {
        match self.structure.as_ref() {
            Structure::Identity { m } => Some(*m),
            Structure::Gram(g) => Some(g.support.len()),
            Structure::Implicit(_) => None,
        }
    }

    #[doc(hidden)]
    pub fn perturb_gram_diagonal(&mut self, eps: f64) {
        let mut s = (*self.structure).clone();
        if let Structure::Gram(g) = &mut s {
            for i in 0..g.gram.nrows() {
                g.gram[(i, i)] += eps;
            }
        }
        self.structure = Arc::new(s);
    }

    fn support_vector(&self, i: usize) -> Result<SignalVector> {
        match self.structure.as_ref() {
            Structure::Identity { m } => SignalVector::basis(*m, i),
            Structure::Gram(g) => Ok(g.support[i].clone()),
            Structure::Implicit(_) => Err(Error::InvalidParameter("implicit support has no row index".into())),
        }
    }

    // J first, then the noise vector; every backend draws in this order.
    fn draw_projection_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, Vec<f64>)> {
        match self.structure.as_ref() {
            Structure::Identity { m } => {
                let j = rng.random_range(0..*m);
                let xi: Vec<f64> = (0..*m).map(|_| rng.sample(StandardNormal)).collect();
                Ok((j, xi))
            }
            Structure::Gram(g) => {
                let m = g.support.len();
                let j = rng.random_range(0..m);
                let xi = DVector::from_iterator(m, (0..m).map(|_| rng.sample(StandardNormal)));
                Ok((j, (&g.factor * xi).as_slice().to_vec()))
            }
            Structure::Implicit(_) => Err(self.no_projection_error()),
        }
    }

    fn no_projection_error(&self) -> Error {
        let size = self.prior.map_or(f64::NAN, |p| p.support_size());
        Error::CardinalityExceeded { cardinality: size, cap: self.rows().unwrap_or(0) }
    }

    /// u = √λ G e_J + L ξ
    pub fn sample_projections<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ProjectionObservation> {
        let (j, mut u) = self.draw_projection_noise(rng)?;
        let theta = self.lambda.sqrt();
        match self.structure.as_ref() {
            Structure::Identity { .. } => u[j] += theta,
            Structure::Gram(g) => {
                for (ui, gi) in u.iter_mut().zip(g.gram.column(j).iter()) {
                    *ui += theta * gi;
                }
            }
            Structure::Implicit(_) => unreachable!(),
        }
        Ok(ProjectionObservation { u, true_index: j, lambda: self.lambda })
    }

    /// Dense Y = √λ x_J^⊗d + Z of length p^d.
    pub fn sample_dense<R: Rng + ?Sized>(&self, rng: &mut R, cap: usize) -> Result<DenseObservation> {
        let (signal, true_index) = match (self.prior, self.structure.as_ref()) {
            (_, Structure::Gram(g)) if self.prior.is_none() => {
                let j = rng.random_range(0..g.support.len());
                (g.support[j].clone(), Some(j))
            }
            (Some(prior), Structure::Identity { m }) => {
                let x = prior.sample_signal(rng);
                let j = x.indices()[0];
                debug_assert!(j < *m);
                (x, Some(j))
            }
            (Some(prior), _) => (prior.sample_signal(rng), None),
            (None, _) => unreachable!(),
        };
        let t = TensorSignal::new(signal.clone(), self.order)?;
        let mut y = materialize_tensor(&t, cap)?;
        let theta = self.lambda.sqrt();
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = theta * *v + z;
        }
        let true_index = match (true_index, self.structure.as_ref()) {
            (None, Structure::Gram(g)) => g.support.iter().position(|s| *s == signal),
            (ix, _) => ix,
        };
        Ok(DenseObservation { y, signal, true_index, lambda: self.lambda })
    }

    /// ⟨Y, x_i^⊗d⟩ for every enumerated support vector.
    pub fn project_dense(&self, y: &[f64]) -> Result<Vec<f64>> {
        let rows = self.rows().ok_or_else(|| self.no_projection_error())?;
        (0..rows)
            .map(|i| crate::tensor::project_dense(&self.support_vector(i)?, self.order, y))
            .collect()
    }

    /// One Monte-Carlo trial evaluated at every λ in `lambdas` with common
    /// (J, Z). Posterior statistics are computed only when `posterior` is set.
    pub fn trial<R: Rng + ?Sized>(&self, lambdas: &[f64], rng: &mut R, posterior: bool) -> Result<Vec<LambdaOutcome>> {
        for &l in lambdas {
            check_lambda(l)?;
        }
        if let Structure::Implicit(s) = self.structure.as_ref() {
            return s.trial(lambdas, rng, posterior);
        }
        let (j, noise) = self.draw_projection_noise(rng)?;
        let noise_true = noise[j];
        let mut u = noise.clone();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let theta = lambda.sqrt();
            match self.structure.as_ref() {
                Structure::Identity { .. } => {
                    u.copy_from_slice(&noise);
                    u[j] += theta;
                }
                Structure::Gram(g) => {
                    for ((ui, ni), gi) in u.iter_mut().zip(&noise).zip(g.gram.column(j).iter()) {
                        *ui = ni + theta * gi;
                    }
                }
                Structure::Implicit(_) => unreachable!(),
            }
            let obs = ProjectionObservation { u: std::mem::take(&mut u), true_index: j, lambda };
            let log_z = log_partition(&obs);
            let (overlap_true, norm_sq) = if posterior {
                let w = crate::estimator::posterior_weights(&obs);
                match self.structure.as_ref() {
                    Structure::Identity { m } => {
                        let g = IdentityGram(*m);
                        (g.row_dot(j, &w), g.quad_form(&w))
                    }
                    Structure::Gram(g) => (g.gram.row_dot(j, &w), g.gram.quad_form(&w)),
                    Structure::Implicit(_) => unreachable!(),
                }
            } else {
                (f64::NAN, f64::NAN)
            };
            u = obs.u;
            out.push(LambdaOutcome {
                lambda,
                log_z,
                u_true: u[j],
                noise_true,
                overlap_true,
                norm_sq,
            });
        }
        Ok(out)
    }

    /// One draw of max_i ⟨x_i^⊗d, Z⟩².
    pub fn sample_max_noise_projection_sq<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if let Structure::Implicit(s) = self.structure.as_ref() {
            let (_, z) = s.sample_noise(rng);
            return Ok(s.max_projection_sq(&z));
        }
        let (_, noise) = self.draw_projection_noise(rng)?;
        Ok(noise.iter().fold(0.0, |a, v| a.max(v * v)))
    }
}

/// ln[(1/M) Σ_i exp(√λ u_i − λ/2)]
pub fn log_partition(obs: &ProjectionObservation) -> f64 {
    if obs.lambda == 0.0 {
        return 0.0;
    }
    let theta = obs.lambda.sqrt();
    let terms: Vec<f64> = obs.u.iter().map(|u| theta * u).collect();
    log_sum_exp(&terms) - (obs.u.len() as f64).ln() - 0.5 * obs.lambda
}
