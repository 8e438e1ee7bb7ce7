//! Rank-one tensor lifting. Tensors stay virtual: every quantity here is a
//! function of the base overlap ⟨x, x′⟩.

use crate::error::{Error, Result};
use crate::prior::{lattice_power, DiscretePrior, OverlapPmf, SignalVector};

/// x^⊗d for a base signal x; ambient dimension p^d.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSignal {
    pub base: SignalVector,
    pub order: u32,
}

impl TensorSignal {
    pub fn new(base: SignalVector, order: u32) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParameter("tensor order must be at least 1".into()));
        }
        Ok(Self { base, order })
    }

    pub fn ambient_dim(&self) -> f64 {
        (self.base.dim() as f64).powi(self.order as i32)
    }
}

/// ⟨a^⊗d, b^⊗d⟩ = ⟨a, b⟩^d from the sparse supports.
pub fn tensor_overlap(a: &SignalVector, b: &SignalVector, d: u32) -> Result<f64> {
    let s = a.signed_intersection(b)?;
    if a.sparsity() == b.sparsity() {
        return Ok(lattice_power(s, a.sparsity() as u64, d));
    }
    Ok(a.dot(b)?.powi(d as i32))
}

/// Law of ⟨X, X′⟩^d for independent prior draws.
pub fn lifted_overlap_pmf(prior: &DiscretePrior) -> OverlapPmf {
    prior.overlap_lattice().pushforward(prior.order())
}

/// Dense row-major entries x_{i₁}···x_{i_d}; flat index Σ iⱼ p^{d−1−j}.
pub fn materialize_tensor(t: &TensorSignal, cap: usize) -> Result<Vec<f64>> {
    let n = t.ambient_dim();
    if n > cap as f64 {
        return Err(Error::CardinalityExceeded { cardinality: n, cap });
    }
    let p = t.base.dim();
    let mut out = vec![0.0; n as usize];
    let entries: Vec<(usize, f64)> = t.base.entries().collect();
    let k = entries.len();
    let d = t.order as usize;
    let mut pos = vec![0usize; d];
    loop {
        let mut flat = 0usize;
        let mut val = 1.0;
        for &j in &pos {
            flat = flat * p + entries[j].0;
            val *= entries[j].1;
        }
        out[flat] = val;
        let mut level = d;
        loop {
            if level == 0 {
                return Ok(out);
            }
            level -= 1;
            pos[level] += 1;
            if pos[level] < k {
                break;
            }
            pos[level] = 0;
        }
    }
}

/// ⟨Y, x^⊗d⟩ for a dense row-major Y of length p^d, touching only k^d entries.
pub fn project_dense(x: &SignalVector, d: u32, y: &[f64]) -> Result<f64> {
    let p = x.dim();
    let expected = p.checked_pow(d).ok_or(Error::CardinalityExceeded { cardinality: (p as f64).powi(d as i32), cap: usize::MAX })?;
    if y.len() != expected {
        return Err(Error::DimensionMismatch { left: y.len(), right: expected });
    }
    let entries: Vec<(usize, f64)> = x.entries().collect();
    let k = entries.len();
    let d = d as usize;
    let mut pos = vec![0usize; d];
    let mut acc = 0.0;
    loop {
        let (mut flat, mut val) = (0usize, 1.0);
        for &j in &pos {
            flat = flat * p + entries[j].0;
            val *= entries[j].1;
        }
        acc += val * y[flat];
        let mut level = d;
        loop {
            if level == 0 {
                return Ok(acc);
            }
            level -= 1;
            pos[level] += 1;
            if pos[level] < k {
                break;
            }
            pos[level] = 0;
        }
    }
}

pub fn default_t_grid() -> Vec<f64> {
    (0..=100).map(|i| f64::from(i) / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePoint {
    pub t: f64,
    pub tail: f64,
    pub ln_tail: f64,
    /// −ln P[ρ ≥ t] / ln M; +∞ when the tail is empty.
    pub rate: f64,
    /// 2t/(1+t)
    pub bound: f64,
    pub margin: f64,
}

pub fn rate_function(prior: &DiscretePrior, t_grid: &[f64]) -> Result<Vec<RatePoint>> {
    let pmf = lifted_overlap_pmf(prior);
    rate_function_from_pmf(&pmf, prior.log_cardinality(), t_grid)
}

pub fn rate_function_from_pmf(pmf: &OverlapPmf, log_m: f64, t_grid: &[f64]) -> Result<Vec<RatePoint>> {
    if let Some(t) = t_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidParameter(format!("t grid point {t} outside [0, 1]")));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let ln_tail = pmf.ln_tail(t);
            let rate = if ln_tail == f64::NEG_INFINITY { f64::INFINITY } else { (-ln_tail / log_m).max(0.0) };
            let bound = 2.0 * t / (1.0 + t);
            RatePoint { t, tail: ln_tail.exp(), ln_tail, rate, bound, margin: rate - bound }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(dim: usize, idx: &[usize], signs: &[i8]) -> SignalVector {
        SignalVector::new(dim, idx.to_vec(), signs.to_vec()).unwrap()
    }

    #[test]
    fn overlap_powers() {
        let a = sv(4, &[0, 1], &[1, 1]);
        let b = sv(4, &[1, 2], &[1, 1]);
        let c = sv(4, &[1, 2], &[-1, 1]);
        assert_eq!(tensor_overlap(&a, &a, 5).unwrap(), 1.0);
        assert_eq!(tensor_overlap(&a, &b, 2).unwrap(), 0.25);
        assert_eq!(tensor_overlap(&a, &c, 3).unwrap(), -0.125);
        assert!(tensor_overlap(&a, &sv(5, &[0], &[1]), 2).is_err());
    }

    #[test]
    fn lifted_pmfs() {
        let b = DiscretePrior::bernoulli(4, 2, 2).unwrap();
        let pmf = lifted_overlap_pmf(&b);
        let want = [(0.0, 1.0 / 6.0), (0.25, 4.0 / 6.0), (1.0, 1.0 / 6.0)];
        for (a, (v, p)) in pmf.atoms().iter().zip(want) {
            assert_eq!(a.value, v);
            assert!((a.prob - p).abs() < 1e-15);
        }
        let br = DiscretePrior::bernoulli_rademacher(4, 2, 2).unwrap();
        let pmf = lifted_overlap_pmf(&br);
        let want = [(0.0, 0.25), (0.25, 2.0 / 3.0), (1.0, 1.0 / 12.0)];
        assert_eq!(pmf.atoms().len(), 3);
        for (a, (v, p)) in pmf.atoms().iter().zip(want) {
            assert_eq!(a.value, v);
            assert!((a.prob - p).abs() < 1e-15);
        }
        let d1 = DiscretePrior::bernoulli_rademacher(7, 3, 1).unwrap();
        assert_eq!(lifted_overlap_pmf(&d1), d1.base_overlap_pmf());
    }

    #[test]
    fn materialize_small_cases() {
        let e1 = TensorSignal::new(sv(2, &[0], &[1]), 2).unwrap();
        assert_eq!(materialize_tensor(&e1, 100).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let x = TensorSignal::new(sv(3, &[0, 1], &[1, 1]), 2).unwrap();
        let dense = materialize_tensor(&x, 100).unwrap();
        for (i, v) in dense.iter().enumerate() {
            let (r, c) = (i / 3, i % 3);
            let want = if r < 2 && c < 2 { 0.5 } else { 0.0 };
            assert!((v - want).abs() < 1e-15);
        }
        let big = TensorSignal::new(sv(100, &[0], &[1]), 5).unwrap();
        assert!(matches!(materialize_tensor(&big, 1_000_000), Err(Error::CardinalityExceeded { .. })));
    }

    #[test]
    fn sparse_overlap_matches_dense_product() {
        let a = sv(5, &[0, 2, 4], &[1, -1, 1]);
        let b = sv(5, &[1, 2, 4], &[-1, -1, -1]);
        for d in 1..=4 {
            let da = materialize_tensor(&TensorSignal::new(a.clone(), d).unwrap(), 100_000).unwrap();
            let db = materialize_tensor(&TensorSignal::new(b.clone(), d).unwrap(), 100_000).unwrap();
            let dense: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
            assert!((dense - tensor_overlap(&a, &b, d).unwrap()).abs() < 1e-10);
            let norm: f64 = da.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_rate_is_one() {
        let o = DiscretePrior::orthogonal(50, 1).unwrap();
        let pts = rate_function(&o, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(pts[0].rate, 0.0);
        assert!((pts[1].tail - 0.02).abs() < 1e-15);
        assert!((pts[1].rate - 1.0).abs() < 1e-12);
        assert!((pts[1].margin - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tail_gives_infinite_rate() {
        let b = DiscretePrior::bernoulli(10, 3, 2).unwrap();
        let pmf = lifted_overlap_pmf(&b);
        let pts = rate_function_from_pmf(&pmf, b.log_cardinality(), &[0.99]).unwrap();
        assert!(pts[0].rate.is_finite());
        // No atom strictly between (2/3)^2 and 1 besides 1 itself; above 1 nothing.
        let top = OverlapPmf::from_atoms(vec![crate::prior::OverlapAtom { value: 0.5, prob: 1.0, ln_prob: 0.0 }]).unwrap();
        let pts = rate_function_from_pmf(&top, 2.0, &[0.75]).unwrap();
        assert_eq!(pts[0].rate, f64::INFINITY);
        assert!(rate_function(&b, &[1.5]).is_err());
    }

    #[test]
    fn tails_are_monotone_and_dominated_by_base() {
        for prior in [
            DiscretePrior::bernoulli(40, 6, 2).unwrap(),
            DiscretePrior::bernoulli_rademacher(40, 6, 3).unwrap(),
        ] {
            let lifted = lifted_overlap_pmf(&prior);
            let base = prior.base_overlap_pmf();
            let grid = default_t_grid();
            let mut prev = f64::INFINITY;
            for &t in &grid {
                let tail = lifted.tail(t);
                assert!(tail <= prev + 1e-15);
                prev = tail;
                assert!(tail <= base.tail(t.sqrt()) + 1e-15);
            }
        }
    }
}
