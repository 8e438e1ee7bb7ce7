//! Deterministic parallel trial scheduling.
//!
//! Trial i always uses stream i of the experiment key, and results come back
//! in trial order, so reductions over them do not depend on the worker count.

use rayon::prelude::*;

use crate::channel::{ChannelInstance, LambdaOutcome};
use crate::error::{Error, Result};
use crate::numeric::MeanEstimate;
use crate::rng::{StreamKey, StreamRng};

pub fn map_trials<T, F>(n_trials: usize, key: StreamKey, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut StreamRng) -> Result<T> + Sync,
{
    (0..n_trials).into_par_iter().map(|i| f(&mut key.stream(i as u64))).collect()
}

/// Runs `f` inside a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(threads: usize, f: F) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trial-major outcomes of a common-random-numbers run over a λ list.
#[derive(Clone, Debug)]
pub struct TrialTable {
    pub lambdas: Vec<f64>,
    pub outcomes: Vec<Vec<LambdaOutcome>>,
}

impl TrialTable {
    pub fn run(instance: &ChannelInstance, lambdas: &[f64], n_trials: usize, key: StreamKey, posterior: bool) -> Result<Self> {
        if n_trials == 0 {
            return Err(Error::InvalidParameter("n_trials must be positive".into()));
        }
        let outcomes = map_trials(n_trials, key, |rng| instance.trial(lambdas, rng, posterior))?;
        Ok(Self { lambdas: lambdas.to_vec(), outcomes })
    }

    pub fn n_trials(&self) -> usize {
        self.outcomes.len()
    }

    pub fn column<F: Fn(&LambdaOutcome) -> f64>(&self, index: usize, f: F) -> Vec<f64> {
        self.outcomes.iter().map(|row| f(&row[index])).collect()
    }

    pub fn mean<F: Fn(&LambdaOutcome) -> f64>(&self, index: usize, f: F) -> MeanEstimate {
        MeanEstimate::from_samples(&self.column(index, f))
    }
}
