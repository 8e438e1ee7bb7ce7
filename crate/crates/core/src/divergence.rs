//! KL, mutual information, χ² and binary divergences, all in nats.

use crate::channel::ChannelInstance;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, pooled_se, MeanEstimate};
use crate::prior::{DiscretePrior, OverlapPmf};
use crate::rng::StreamKey;
use crate::tensor::lifted_overlap_pmf;
use crate::trial::TrialTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceKind {
    Kl,
    Mi,
    Chi2Exact,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_trials: usize,
    pub lambda: f64,
    pub kind: DivergenceKind,
}

/// How E_{Q_λ}[ln Z] is averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlEstimator {
    /// Plain sample mean.
    Mean,
    /// Sample mean minus the regression on √λ⟨Z, X⟩, a variate with known
    /// mean zero that carries most of the variance of ln Z above the transition.
    ControlVariate,
}

pub fn kl_from_table(table: &TrialTable, index: usize, estimator: KlEstimator) -> MeanEstimate {
    let lambda = table.lambdas[index];
    let log_z = table.column(index, |o| o.log_z);
    match estimator {
        KlEstimator::Mean => MeanEstimate::from_samples(&log_z),
        KlEstimator::ControlVariate => {
            let cv: Vec<f64> = table.column(index, |o| lambda.sqrt() * o.noise_true);
            control_variate_mean(&log_z, &cv)
        }
    }
}

/// Mean of `y` adjusted by a zero-mean control `c`, with the residual SE.
pub fn control_variate_mean(y: &[f64], c: &[f64]) -> MeanEstimate {
    let n = y.len();
    let my = MeanEstimate::from_samples(y);
    let mc = MeanEstimate::from_samples(c);
    let (mut sxy, mut sxx) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (a, b) in y.iter().zip(c) {
        sxy.push((a - my.mean) * (b - mc.mean));
        sxx.push((b - mc.mean) * (b - mc.mean));
    }
    let vxx = crate::numeric::pairwise_sum(&sxx);
    if n < 3 || vxx == 0.0 {
        return my;
    }
    let beta = crate::numeric::pairwise_sum(&sxy) / vxx;
    let adjusted: Vec<f64> = y.iter().zip(c).map(|(a, b)| a - beta * b).collect();
    let est = MeanEstimate::from_samples(&adjusted);
    let dof = (n - 1) as f64 / (n - 2) as f64;
    MeanEstimate { standard_error: est.standard_error * dof.sqrt(), ..est }
}

/// E_{Y∼Q_λ}[ln Z(Y)] = D(Q_λ ‖ Q_0).
pub fn kl_monte_carlo(instance: &ChannelInstance, n_trials: usize, key: StreamKey) -> Result<DivergenceEstimate> {
    let lambda = instance.lambda();
    let table = TrialTable::run(instance, &[lambda], n_trials, key, false)?;
    let est = kl_from_table(&table, 0, KlEstimator::Mean);
    Ok(DivergenceEstimate {
        value: est.mean,
        standard_error: est.standard_error,
        n_trials,
        lambda,
        kind: DivergenceKind::Kl,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MutualInformationCheck {
    pub lambda: f64,
    pub i_direct: MeanEstimate,
    pub kl: MeanEstimate,
    /// I + KL − λ/2
    pub residual: f64,
    pub pooled_se: f64,
}

impl MutualInformationCheck {
    pub fn holds(&self, sigmas: f64) -> bool {
        self.residual.abs() <= sigmas * self.pooled_se
    }
}

pub fn mutual_information_check(instance: &ChannelInstance, n_trials: usize, key: StreamKey) -> Result<MutualInformationCheck> {
    let lambda = instance.lambda();
    let table = TrialTable::run(instance, &[lambda], n_trials, key, false)?;
    Ok(mutual_information_from_table(&table, 0))
}

pub fn mutual_information_from_table(table: &TrialTable, index: usize) -> MutualInformationCheck {
    let lambda = table.lambdas[index];
    let i_direct = table.mean(index, |o| o.info_term());
    let kl = table.mean(index, |o| o.log_z);
    let residual = if lambda == 0.0 { 0.0 } else { i_direct.mean + kl.mean - 0.5 * lambda };
    MutualInformationCheck {
        lambda,
        i_direct,
        kl,
        residual,
        pooled_se: pooled_se(i_direct.standard_error, kl.standard_error),
    }
}

/// λ/2 − ln M
pub fn kl_lower_bound(lambda: f64, log_m: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(0.5 * lambda - log_m)
}

/// d(a1‖a2) = a1 ln(a1/a2) + (1−a1) ln((1−a1)/(1−a2)), with 0 ln 0 = 0.
pub fn binary_divergence(a1: f64, a2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a1) || !(0.0..=1.0).contains(&a2) {
        return Err(Error::DomainError(format!("arguments must lie in [0, 1], got ({a1}, {a2})")));
    }
    if a1 == a2 {
        return Ok(0.0);
    }
    if a2 == 0.0 || a2 == 1.0 {
        return Err(Error::DomainError(format!("d({a1}‖{a2}) is infinite")));
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok(term(a1, a2) + term(1.0 - a1, 1.0 - a2))
}

/// ln(1 + χ²(Q_λ ‖ Q_0)) = ln Σ_ρ q(ρ) e^{λρ}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquareExact {
    pub lambda: f64,
    pub ln_one_plus: f64,
}

impl ChiSquareExact {
    /// χ² in linear scale.
    pub fn value(&self) -> Result<f64> {
        if self.ln_one_plus > 700.0 {
            return Err(Error::Overflow { log_value: self.ln_one_plus });
        }
        Ok(self.ln_one_plus.exp_m1())
    }
}

pub fn chi_square_exact(prior: &DiscretePrior, lambda: f64) -> Result<ChiSquareExact> {
    chi_square_from_pmf(&lifted_overlap_pmf(prior), lambda)
}

pub fn chi_square_from_pmf(pmf: &OverlapPmf, lambda: f64) -> Result<ChiSquareExact> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(ChiSquareExact { lambda, ln_one_plus: 0.0 });
    }
    let terms: Vec<f64> = pmf.atoms().iter().map(|a| a.ln_prob + lambda * a.value).collect();
    Ok(ChiSquareExact { lambda, ln_one_plus: log_sum_exp(&terms) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImmseRow {
    pub beta: f64,
    pub lambda: f64,
    /// KL / λ_N with λ_N = 2 ln M.
    pub kl_normalized: f64,
    pub kl_normalized_se: f64,
    pub mmse: f64,
    pub mmse_se: f64,
    /// Central difference of the normalized KL (interior points only).
    pub derivative: Option<f64>,
    /// ½ − ½·MMSE
    pub target: f64,
    pub residual: Option<f64>,
    /// ½(β − 1)₊
    pub prop1_target: f64,
}

pub fn immse_curve_check(
    instance: &ChannelInstance,
    beta_grid: &[f64],
    n_trials: usize,
    key: StreamKey,
    estimator: KlEstimator,
) -> Result<Vec<ImmseRow>> {
    if beta_grid.len() < 3 {
        return Err(Error::InvalidParameter("β grid needs at least three points".into()));
    }
    let h = beta_grid[1] - beta_grid[0];
    if !(h > 0.0) || beta_grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::InvalidParameter("β grid must be uniform and increasing".into()));
    }
    let lambda_n = 2.0 * instance.log_cardinality();
    let lambdas: Vec<f64> = beta_grid.iter().map(|b| b * lambda_n).collect();
    let table = TrialTable::run(instance, &lambdas, n_trials, key, true)?;
    let kls: Vec<MeanEstimate> = (0..lambdas.len()).map(|i| kl_from_table(&table, i, estimator)).collect();
    let mut rows = Vec::with_capacity(beta_grid.len());
    for (i, &beta) in beta_grid.iter().enumerate() {
        let mmse = table.mean(i, |o| o.sq_error());
        let target = 0.5 - 0.5 * mmse.mean;
        let derivative = (i > 0 && i + 1 < beta_grid.len())
            .then(|| (kls[i + 1].mean - kls[i - 1].mean) / lambda_n / (2.0 * h));
        rows.push(ImmseRow {
            beta,
            lambda: lambdas[i],
            kl_normalized: kls[i].mean / lambda_n,
            kl_normalized_se: kls[i].standard_error / lambda_n,
            mmse: mmse.mean,
            mmse_se: mmse.standard_error,
            derivative,
            target,
            residual: derivative.map(|d| d - target),
            prop1_target: 0.5 * (beta - 1.0).max(0.0),
        });
    }
    Ok(rows)
}
