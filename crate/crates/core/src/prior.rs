//! Discrete uniform priors on the unit sphere and their overlap laws.
//!
//! Support vectors are kept sparse: a sorted index list plus a sign per index,
//! with common amplitude `1/√k`. Nothing here ever builds a dense vector
//! unless asked to.

use rand::seq::index;
use rand::{Rng, RngExt};

use crate::channel::{Caps, ChannelInstance};
use crate::error::{Error, Result};
use crate::numeric::{ln_add_exp, ln_binomial, MeanEstimate};
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PriorKind {
    /// `m` standard basis vectors.
    Orthogonal { m: usize },
    /// k-sparse vectors with entries in {0, 1/√k}.
    Bernoulli { p: usize, k: usize },
    /// k-sparse vectors with entries in {0, ±1/√k}.
    BernoulliRademacher { p: usize, k: usize },
}

/// A unit vector with `k` nonzero entries, each of magnitude `1/√k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignalVector {
    dim: usize,
    indices: Vec<usize>,
    signs: Vec<i8>,
}

impl SignalVector {
    pub fn new(dim: usize, indices: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("signal needs at least one nonzero entry".into()));
        }
        if indices.len() != signs.len() {
            return Err(Error::DimensionMismatch { left: indices.len(), right: signs.len() });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("indices must be strictly increasing".into()));
        }
        if *indices.last().unwrap() >= dim {
            return Err(Error::InvalidParameter(format!("index out of range for dimension {dim}")));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter("signs must be ±1".into()));
        }
        Ok(Self { dim, indices, signs })
    }

    pub fn basis(dim: usize, i: usize) -> Result<Self> {
        Self::new(dim, vec![i], vec![1])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sparsity(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn amplitude(&self) -> f64 {
        1.0 / (self.sparsity() as f64).sqrt()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let a = self.amplitude();
        self.indices.iter().zip(&self.signs).map(move |(&i, &s)| (i, a * f64::from(s)))
    }

    /// Σ σᵢσ'ᵢ over the common support. For equal sparsity k the inner
    /// product is this integer divided by k.
    pub fn signed_intersection(&self, other: &Self) -> Result<i64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let (mut i, mut j, mut acc) = (0, 0, 0i64);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += i64::from(self.signs[i] * other.signs[j]);
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(acc)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        let s = self.signed_intersection(other)?;
        Ok(s as f64 * self.amplitude() * other.amplitude())
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries().map(|(_, v)| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.entries() {
            out[i] = v;
        }
        out
    }
}

/// Uniform distribution over a finite subset of the unit sphere, optionally
/// lifted to rank-one tensors of order `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DiscretePrior {
    kind: PriorKind,
    order: u32,
}

impl DiscretePrior {
    pub fn new(kind: PriorKind, order: u32) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParameter("tensor order d must be at least 1".into()));
        }
        match kind {
            PriorKind::Orthogonal { m } if m < 2 => {
                return Err(Error::InvalidParameter(format!("orthogonal prior needs M >= 2, got {m}")))
            }
            PriorKind::Bernoulli { p, k } | PriorKind::BernoulliRademacher { p, k } => {
                if k == 0 {
                    return Err(Error::InvalidParameter("sparsity k must be positive".into()));
                }
                if k > p {
                    return Err(Error::InvalidParameter(format!("sparsity k={k} exceeds dimension p={p}")));
                }
            }
            _ => {}
        }
        let prior = Self { kind, order };
        if prior.log_cardinality() < 2f64.ln() - 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "prior {kind:?} with d={order} has fewer than two distinct support points"
            )));
        }
        Ok(prior)
    }

    pub fn orthogonal(m: usize, order: u32) -> Result<Self> {
        Self::new(PriorKind::Orthogonal { m }, order)
    }

    pub fn bernoulli(p: usize, k: usize, order: u32) -> Result<Self> {
        Self::new(PriorKind::Bernoulli { p, k }, order)
    }

    pub fn bernoulli_rademacher(p: usize, k: usize, order: u32) -> Result<Self> {
        Self::new(PriorKind::BernoulliRademacher { p, k }, order)
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Dimension of the base vectors (p, or M for the orthogonal prior).
    pub fn dim(&self) -> usize {
        match self.kind {
            PriorKind::Orthogonal { m } => m,
            PriorKind::Bernoulli { p, .. } | PriorKind::BernoulliRademacher { p, .. } => p,
        }
    }

    pub fn sparsity(&self) -> usize {
        match self.kind {
            PriorKind::Orthogonal { .. } => 1,
            PriorKind::Bernoulli { k, .. } | PriorKind::BernoulliRademacher { k, .. } => k,
        }
    }

    pub fn is_signed(&self) -> bool {
        matches!(self.kind, PriorKind::BernoulliRademacher { .. })
    }

    /// ln of the number of base vectors that are enumerated and sampled.
    /// For the Bernoulli–Rademacher prior this counts x and −x separately.
    pub fn log_support_size(&self) -> f64 {
        match self.kind {
            PriorKind::Orthogonal { m } => (m as f64).ln(),
            PriorKind::Bernoulli { p, k } => ln_binomial(p as u64, k as u64),
            PriorKind::BernoulliRademacher { p, k } => {
                ln_binomial(p as u64, k as u64) + k as f64 * std::f64::consts::LN_2
            }
        }
    }

    pub fn support_size(&self) -> f64 {
        self.log_support_size().exp()
    }

    /// ln M_N: the number of distinct lifted tensors. Even orders identify
    /// x with −x, which halves the Bernoulli–Rademacher count.
    pub fn log_cardinality(&self) -> f64 {
        let base = self.log_support_size();
        if self.is_signed() && self.order % 2 == 0 {
            base - std::f64::consts::LN_2
        } else {
            base
        }
    }

    pub fn cardinality(&self) -> f64 {
        self.log_cardinality().exp()
    }

    /// Tensor dimension N = p^d as a float (it overflows integers quickly).
    pub fn ambient_dim(&self) -> f64 {
        (self.dim() as f64).powi(self.order as i32)
    }

    pub fn sample_signal<R: Rng + ?Sized>(&self, rng: &mut R) -> SignalVector {
        match self.kind {
            PriorKind::Orthogonal { m } => {
                let i = rng.random_range(0..m);
                SignalVector { dim: m, indices: vec![i], signs: vec![1] }
            }
            PriorKind::Bernoulli { p, k } | PriorKind::BernoulliRademacher { p, k } => {
                let mut indices = index::sample(rng, p, k).into_vec();
                indices.sort_unstable();
                let signs = if self.is_signed() {
                    (0..k).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
                } else {
                    vec![1; k]
                };
                SignalVector { dim: p, indices, signs }
            }
        }
    }

    /// All support vectors in lexicographic order of (indices, signs), with
    /// `+` ordered before `−`.
    pub fn enumerate_support(&self, cap: usize) -> Result<Vec<SignalVector>> {
        let size = self.support_size();
        if size > cap as f64 + 0.5 {
            return Err(Error::CardinalityExceeded { cardinality: size, cap });
        }
        let (p, k) = (self.dim(), self.sparsity());
        let mut out = Vec::with_capacity(size.round() as usize);
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            if self.is_signed() {
                for mask in 0u64..(1u64 << k) {
                    let signs = (0..k)
                        .map(|i| if mask >> (k - 1 - i) & 1 == 1 { -1 } else { 1 })
                        .collect();
                    out.push(SignalVector { dim: p, indices: combo.clone(), signs });
                }
            } else {
                out.push(SignalVector { dim: p, indices: combo.clone(), signs: vec![1; k] });
            }
            if !next_combination(&mut combo, p) {
                break;
            }
        }
        Ok(out)
    }

    /// Law of the base overlap ⟨x, x′⟩ = j/k on the integer lattice j ∈ [−k, k].
    pub fn overlap_lattice(&self) -> OverlapLattice {
        match self.kind {
            PriorKind::Orthogonal { m } => {
                let mf = m as f64;
                OverlapLattice {
                    denominator: 1,
                    total: Some(m as u128),
                    atoms: vec![
                        LatticeAtom {
                            numerator: 0,
                            count: Some(m as u128 - 1),
                            prob: (mf - 1.0) / mf,
                            ln_prob: ((mf - 1.0) / mf).ln(),
                        },
                        LatticeAtom { numerator: 1, count: Some(1), prob: 1.0 / mf, ln_prob: -mf.ln() },
                    ],
                }
            }
            PriorKind::Bernoulli { p, k } | PriorKind::BernoulliRademacher { p, k } => {
                sparse_overlap_lattice(p, k, self.is_signed())
            }
        }
    }

    pub fn base_overlap_pmf(&self) -> OverlapPmf {
        self.overlap_lattice().pushforward(1)
    }
}

pub(crate) fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binom_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

const EXACT_DIM_LIMIT: usize = 64;

fn sparse_overlap_lattice(p: usize, k: usize, signed: bool) -> OverlapLattice {
    let (pu, ku) = (p as u64, k as u64);
    let s_min = (2 * k).saturating_sub(p);
    let ln_total = ln_binomial(pu, ku);

    // Accumulate ln-probabilities per numerator j ∈ [−k, k].
    let mut ln_probs = vec![f64::NEG_INFINITY; 2 * k + 1];
    for s in s_min..=k {
        let ln_h = ln_binomial(ku, s as u64) + ln_binomial(pu - ku, (k - s) as u64) - ln_total;
        if signed {
            for agree in 0..=s {
                let j = 2 * agree as i64 - s as i64;
                let ln_sign = ln_binomial(s as u64, agree as u64) - s as f64 * std::f64::consts::LN_2;
                let slot = (j + k as i64) as usize;
                ln_probs[slot] = ln_add_exp(ln_probs[slot], ln_h + ln_sign);
            }
        } else {
            ln_probs[s + k] = ln_add_exp(ln_probs[s + k], ln_h);
        }
    }

    let exact = if p <= EXACT_DIM_LIMIT { exact_sparse_counts(p, k, signed) } else { None };

    let mut atoms = Vec::new();
    for (slot, &lp) in ln_probs.iter().enumerate() {
        let numerator = slot as i64 - k as i64;
        let count = exact.as_ref().map(|(_, c)| c[slot]);
        if lp == f64::NEG_INFINITY && count.unwrap_or(0) == 0 {
            continue;
        }
        let (prob, ln_prob) = match (&exact, count) {
            (Some((total, _)), Some(c)) => {
                let pr = c as f64 / *total as f64;
                (pr, pr.ln())
            }
            _ => (lp.exp(), lp),
        };
        atoms.push(LatticeAtom { numerator, count, prob, ln_prob });
    }
    OverlapLattice { denominator: k as u64, total: exact.map(|(t, _)| t), atoms }
}

// Integer pair counts over a common denominator: C(p,k) (·2^k when signed).
fn exact_sparse_counts(p: usize, k: usize, signed: bool) -> Option<(u128, Vec<u128>)> {
    let (pu, ku) = (p as u64, k as u64);
    let total = binom_u128(pu, ku)?.checked_mul(if signed { 1u128 << k } else { 1 })?;
    let mut counts = vec![0u128; 2 * k + 1];
    for s in (2 * k).saturating_sub(p)..=k {
        let h = binom_u128(ku, s as u64)?.checked_mul(binom_u128(pu - ku, (k - s) as u64)?)?;
        if signed {
            for agree in 0..=s {
                let j = 2 * agree as i64 - s as i64;
                let c = h
                    .checked_mul(binom_u128(s as u64, agree as u64)?)?
                    .checked_mul(1u128 << (k - s))?;
                counts[(j + k as i64) as usize] += c;
            }
        } else {
            counts[s + k] += h;
        }
    }
    Some((total, counts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeAtom {
    pub numerator: i64,
    /// Exact count over `OverlapLattice::total`, when available.
    pub count: Option<u128>,
    pub prob: f64,
    pub ln_prob: f64,
}

/// Base overlap law on the lattice {j/denominator}.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapLattice {
    pub denominator: u64,
    pub total: Option<u128>,
    pub atoms: Vec<LatticeAtom>,
}

impl OverlapLattice {
    /// Law of (j/k)^d, merging atoms whose powers coincide.
    pub fn pushforward(&self, d: u32) -> OverlapPmf {
        let key = |j: i64| if d % 2 == 0 { j.abs() } else { j };
        let mut merged: Vec<(i64, Option<u128>, f64)> = Vec::new();
        for a in &self.atoms {
            let kj = key(a.numerator);
            match merged.iter_mut().find(|(j, _, _)| *j == kj) {
                Some(slot) => {
                    slot.1 = match (slot.1, a.count) {
                        (Some(x), Some(y)) => Some(x + y),
                        _ => None,
                    };
                    slot.2 = ln_add_exp(slot.2, a.ln_prob);
                }
                None => merged.push((kj, a.count, a.ln_prob)),
            }
        }
        let mut atoms: Vec<OverlapAtom> = merged
            .into_iter()
            .map(|(j, count, ln_prob)| {
                let (prob, ln_prob) = match (count, self.total) {
                    (Some(c), Some(t)) => {
                        let pr = c as f64 / t as f64;
                        (pr, pr.ln())
                    }
                    _ => (ln_prob.exp(), ln_prob),
                };
                OverlapAtom { value: lattice_power(j, self.denominator, d), prob, ln_prob }
            })
            .filter(|a| a.ln_prob > f64::NEG_INFINITY)
            .collect();
        atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
        OverlapPmf { atoms }
    }
}

// (j/k)^d as one correctly rounded division of exact integers when possible,
// so that atoms and grid points built as i/n compare exactly.
pub(crate) fn lattice_power(j: i64, k: u64, d: u32) -> f64 {
    let num = (j as i128).checked_pow(d);
    let den = (k as i128).checked_pow(d);
    match (num, den) {
        (Some(n), Some(m)) if n.unsigned_abs() < (1u128 << 53) && m < (1i128 << 53) => {
            n as f64 / m as f64
        }
        _ => (j as f64 / k as f64).powi(d as i32),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapAtom {
    pub value: f64,
    pub prob: f64,
    pub ln_prob: f64,
}

/// Finite law of an overlap, atoms sorted by strictly increasing value.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapPmf {
    atoms: Vec<OverlapAtom>,
}

impl OverlapPmf {
    pub fn from_atoms(mut atoms: Vec<OverlapAtom>) -> Result<Self> {
        atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
        if atoms.windows(2).any(|w| w[0].value >= w[1].value) {
            return Err(Error::InvalidParameter("overlap atoms must have distinct values".into()));
        }
        if atoms.iter().any(|a| !(-1.0..=1.0).contains(&a.value) || !(0.0..=1.0).contains(&a.prob)) {
            return Err(Error::InvalidParameter("overlap atoms out of range".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[OverlapAtom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        let probs: Vec<f64> = self.atoms.iter().map(|a| a.prob).collect();
        crate::numeric::pairwise_sum(&probs)
    }

    pub fn prob_of(&self, value: f64) -> f64 {
        self.atoms.iter().find(|a| a.value == value).map_or(0.0, |a| a.prob)
    }

    /// ln P[ρ ≥ t]
    pub fn ln_tail(&self, t: f64) -> f64 {
        let lps: Vec<f64> = self.atoms.iter().filter(|a| a.value >= t).map(|a| a.ln_prob).collect();
        crate::numeric::log_sum_exp(&lps)
    }

    /// P[ρ ≥ t]
    pub fn tail(&self, t: f64) -> f64 {
        let ps: Vec<f64> = self.atoms.iter().filter(|a| a.value >= t).map(|a| a.prob).collect();
        crate::numeric::pairwise_sum(&ps)
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let terms: Vec<f64> = self.atoms.iter().map(|a| a.prob * f(a.value)).collect();
        crate::numeric::pairwise_sum(&terms)
    }

    /// Total variation distance; atoms are matched by exact value.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut diff = 0.0;
        for a in &self.atoms {
            diff += (a.prob - other.prob_of(a.value)).abs();
        }
        for b in &other.atoms {
            if !self.atoms.iter().any(|a| a.value == b.value) {
                diff += b.prob;
            }
        }
        0.5 * diff
    }
}

/// Monte-Carlo estimate of E max_i ⟨x_i, Z⟩² over the lifted support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxProjectionEstimate {
    pub estimate: MeanEstimate,
    pub log_m: f64,
    /// Union-bound reference 2·ln M + 2.
    pub reference: f64,
}

pub fn max_projection_moment(
    prior: &DiscretePrior,
    n_trials: usize,
    key: StreamKey,
    caps: &Caps,
) -> Result<MaxProjectionEstimate> {
    let instance = ChannelInstance::new(*prior, 0.0, caps)?;
    max_projection_moment_for(&instance, n_trials, key)
}

pub fn max_projection_moment_for(
    instance: &ChannelInstance,
    n_trials: usize,
    key: StreamKey,
) -> Result<MaxProjectionEstimate> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be positive".into()));
    }
    let samples = crate::trial::map_trials(n_trials, key, |rng| instance.sample_max_noise_projection_sq(rng))?;
    let log_m = instance.log_cardinality();
    Ok(MaxProjectionEstimate {
        estimate: MeanEstimate::from_samples(&samples),
        log_m,
        reference: 2.0 * log_m + 2.0,
    })
}
