//! Truncated second moment: P[Ω], m_N(ρ) by exponential tilting, the
//! conditional χ² bound over the overlap law, and the large-deviation
//! supremum it is compared against.

use crate::error::{Error, Result};
use crate::numeric::{argmax_unimodal, integrate_adaptive, ln_norm_interval, ln_norm_pdf, log_sum_exp, norm_sf};
use crate::prior::{DiscretePrior, OverlapPmf};
use crate::tensor::{lifted_overlap_pmf, rate_function, RatePoint};

/// Largest scaled margin λ^{1/4}·[(1/λ) ln m_N(ρ) − (ρ/(1+ρ))₊] seen
/// by `calibrate_margin_constant` over 2001 equally spaced ρ ∈ [−1, 1] and
/// λ ∈ {1e2, 1e3, 1e4, 1e5}, rounded up at the third decimal. Regenerate with
/// `cargo run --release -p aonlab-core --example calibrate`.
pub const C_FROZEN: f64 = 0.971;

const QUAD_REL_TOL: f64 = 1e-13;
const QUAD_DEPTH: u32 = 50;
const LOG_WINDOW: f64 = 60.0;

/// Closed rectangle [lo₀, hi₀] × [lo₁, hi₁]; bounds may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

/// Ω as a square S = [1 − λ^{−1/4}, 1 + λ^{−1/4}]² in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationEvent {
    pub lambda: f64,
    /// λ^{1/4}
    pub half_width: f64,
    pub rect: Rect,
}

impl TruncationEvent {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DomainError(format!("lambda must be positive, got {lambda}")));
        }
        let half_width = lambda.powf(0.25);
        let h = 1.0 / half_width;
        Ok(Self { lambda, half_width, rect: Rect { lo: [1.0 - h; 2], hi: [1.0 + h; 2] } })
    }
}

/// P[|N(0,1)| ≤ λ^{1/4}]
pub fn omega_probability(lambda: f64) -> Result<f64> {
    let ev = TruncationEvent::new(lambda)?;
    Ok(1.0 - 2.0 * norm_sf(ev.half_width))
}

/// ln P[(W₀, W₁) ∈ rect] for (W₀, W₁) ∼ N(mean, cov).
///
/// W₁ is integrated out in closed form given W₀, leaving a one-dimensional
/// log-concave integrand that is integrated around its mode.
pub fn ln_bvn_rectangle(mean: [f64; 2], cov: [[f64; 2]; 2], rect: Rect) -> Result<f64> {
    let (v0, v1, c) = (cov[0][0], cov[1][1], cov[0][1]);
    if !(v0 >= 0.0 && v1 >= 0.0) || (cov[1][0] - c).abs() > 1e-12 * (v0 * v1).sqrt().max(1e-300) {
        return Err(Error::InvalidParameter("covariance must be symmetric with nonnegative variances".into()));
    }
    if c * c > v0 * v1 * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter("covariance is not positive semidefinite".into()));
    }
    if rect.lo.iter().zip(&rect.hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::InvalidParameter("rectangle bounds must satisfy lo ≤ hi".into()));
    }
    let (s0, s1) = (v0.sqrt(), v1.sqrt());
    let interval = |m: f64, s: f64, lo: f64, hi: f64| -> (f64, f64) { ((lo - m) / s, (hi - m) / s) };
    let inside = |x: f64, lo: f64, hi: f64| if lo <= x && x <= hi { 0.0 } else { f64::NEG_INFINITY };

    if s0 == 0.0 && s1 == 0.0 {
        return Ok(inside(mean[0], rect.lo[0], rect.hi[0]) + inside(mean[1], rect.lo[1], rect.hi[1]));
    }
    if s0 == 0.0 {
        let (a, b) = interval(mean[1], s1, rect.lo[1], rect.hi[1]);
        return Ok(inside(mean[0], rect.lo[0], rect.hi[0]) + ln_norm_interval(a, b));
    }
    if s1 == 0.0 {
        let (a, b) = interval(mean[0], s0, rect.lo[0], rect.hi[0]);
        return Ok(inside(mean[1], rect.lo[1], rect.hi[1]) + ln_norm_interval(a, b));
    }
    let r = (c / (s0 * s1)).clamp(-1.0, 1.0);
    let (a0, b0) = interval(mean[0], s0, rect.lo[0], rect.hi[0]);
    let (a1, b1) = interval(mean[1], s1, rect.lo[1], rect.hi[1]);
    if 1.0 - r.abs() < 1e-12 {
        // Rank one: W₁ = μ₁ + r·σ₁·z with z the standardized W₀.
        let (lo, hi) = if r > 0.0 { (a1, b1) } else { (-b1, -a1) };
        return Ok(ln_norm_interval(a0.max(lo), b0.min(hi)));
    }
    let sr = (1.0 - r * r).sqrt();
    let g = |z: f64| ln_norm_pdf(z) + ln_norm_interval((a1 - r * z) / sr, (b1 - r * z) / sr);
    let lo = if a0.is_finite() { a0 } else { b0.min(0.0) - 40.0 };
    let hi = if b0.is_finite() { b0 } else { a0.max(0.0) + 40.0 };
    if !(lo < hi) {
        return Ok(f64::NEG_INFINITY);
    }
    let mode = argmax_unimodal(|z| finite_or_floor(g(z)), lo, hi, 1e-12);
    let peak = g(mode);
    if peak == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    // Points where g drops by one unit bracket a region of mass at least
    // their distance over e, which sets the quadrature scale.
    let drop = |dir: f64, limit: f64, level: f64| -> f64 {
        let mut step = 1e-12_f64.max(1e-12 * mode.abs());
        loop {
            let z = mode + dir * step;
            if dir * (z - limit) >= 0.0 {
                if g(limit) >= level {
                    return limit;
                }
                return bisect_level(&g, mode, limit, level);
            }
            if g(z) < level {
                return bisect_level(&g, mode, z, level);
            }
            step *= 2.0;
        }
    };
    let inner = drop(1.0, hi, peak - 1.0) - drop(-1.0, lo, peak - 1.0);
    let left = drop(-1.0, lo, peak - LOG_WINDOW);
    let right = drop(1.0, hi, peak - LOG_WINDOW);
    let rel = QUAD_REL_TOL.max(1e3 * f64::EPSILON * peak.abs());
    let tol = rel * inner.max(f64::MIN_POSITIVE) / std::f64::consts::E;
    let integral = integrate_adaptive(|z| (g(z) - peak).exp(), left, right, tol, QUAD_DEPTH)?;
    Ok(peak + integral.ln())
}

/// Point between `inside` (g ≥ level) and `outside` (g < level).
fn bisect_level<G: Fn(f64) -> f64>(g: &G, mut inside: f64, mut outside: f64, level: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if g(mid) >= level {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    outside
}

fn finite_or_floor(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        -1e300
    }
}

pub fn bvn_rectangle(mean: [f64; 2], cov: [[f64; 2]; 2], rect: Rect) -> Result<f64> {
    Ok(ln_bvn_rectangle(mean, cov, rect)?.exp())
}

fn check_rho_lambda(rho: f64, lambda: f64) -> Result<TruncationEvent> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::DomainError(format!("overlap must lie in [-1, 1], got {rho}")));
    }
    TruncationEvent::new(lambda)
}

/// ln m_N(ρ) = λρ + ln P[N((1+ρ, 1+ρ), Σ_ρ/λ) ∈ S].
pub fn ln_m_n(rho: f64, lambda: f64) -> Result<f64> {
    let ev = check_rho_lambda(rho, lambda)?;
    let v = 1.0 / lambda;
    let mean = [1.0 + rho; 2];
    let p = ln_bvn_rectangle(mean, [[v, rho * v], [rho * v, v]], ev.rect)?;
    Ok(lambda * rho + p)
}

/// m_N(ρ) = E[e^{λ(W+W′−1)} 1_S] with (W, W′) ∼ N(0, Σ_ρ/λ).
pub fn m_n(rho: f64, lambda: f64) -> Result<f64> {
    Ok(ln_m_n(rho, lambda)?.exp())
}

/// ln E[e^{λ(W″−1)} 1{|W″−2| ≤ 2λ^{−1/4}}] with W″ ∼ N(0, 2(1+ρ)/λ), an
/// upper bound on ln m_N(ρ) obtained by keeping only the constraint on W+W′.
pub fn ln_case3_bound(rho: f64, lambda: f64) -> Result<f64> {
    let ev = check_rho_lambda(rho, lambda)?;
    let h = 1.0 / ev.half_width;
    let var = 2.0 * (1.0 + rho) / lambda;
    let mean = 2.0 * (1.0 + rho);
    let (lo, hi) = (2.0 - 2.0 * h, 2.0 + 2.0 * h);
    let p = if var == 0.0 {
        if lo <= mean && mean <= hi {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        let s = var.sqrt();
        ln_norm_interval((lo - mean) / s, (hi - mean) / s)
    };
    Ok(lambda * rho + p)
}

/// (ρ/(1+ρ))₊, zero at ρ = −1.
pub fn overlap_exponent(rho: f64) -> f64 {
    if rho <= 0.0 {
        0.0
    } else {
        rho / (1.0 + rho)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedMarginRow {
    pub rho: f64,
    pub lambda: f64,
    /// (1/λ) ln m_N(ρ)
    pub normalized_log_m: f64,
    pub margin: f64,
    /// margin · λ^{1/4}
    pub scaled_margin: f64,
}

pub fn tilted_margins(rho_grid: &[f64], lambda: f64) -> Result<Vec<TiltedMarginRow>> {
    rho_grid
        .iter()
        .map(|&rho| {
            let normalized_log_m = ln_m_n(rho, lambda)? / lambda;
            let margin = normalized_log_m - overlap_exponent(rho);
            Ok(TiltedMarginRow { rho, lambda, normalized_log_m, margin, scaled_margin: margin * lambda.powf(0.25) })
        })
        .collect()
}

/// Max scaled margin over a (ρ, λ) grid.
pub fn calibrate_margin_constant(rho_grid: &[f64], lambdas: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &lambda in lambdas {
        for row in tilted_margins(rho_grid, lambda)? {
            best = best.max(row.scaled_margin);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalChiSquare {
    pub lambda: f64,
    /// ln E_{ρ}[m_N(ρ)]
    pub ln_expected_m: f64,
    /// (1/λ) ln E[m_N]
    pub normalized: f64,
    pub omega_probability: f64,
    /// (1/λ) ln(E[m_N] / P[Ω])
    pub normalized_corrected: f64,
}

pub fn conditional_chi_square_bound(prior: &DiscretePrior, lambda: f64) -> Result<ConditionalChiSquare> {
    conditional_chi_square_from_pmf(&lifted_overlap_pmf(prior), lambda)
}

pub fn conditional_chi_square_from_pmf(pmf: &OverlapPmf, lambda: f64) -> Result<ConditionalChiSquare> {
    let terms = pmf
        .atoms()
        .iter()
        .map(|a| Ok(a.ln_prob + ln_m_n(a.value, lambda)?))
        .collect::<Result<Vec<f64>>>()?;
    let ln_expected_m = log_sum_exp(&terms);
    let omega = omega_probability(lambda)?;
    Ok(ConditionalChiSquare {
        lambda,
        ln_expected_m,
        normalized: ln_expected_m / lambda,
        omega_probability: omega,
        normalized_corrected: (ln_expected_m - omega.ln()) / lambda,
    })
}

/// max over the grid of (t/(1+t) − r̂(t)/2)₊
pub fn rate_supremum(prior: &DiscretePrior, t_grid: &[f64]) -> Result<f64> {
    Ok(rate_supremum_from_rates(&rate_function(prior, t_grid)?))
}

pub fn rate_supremum_from_rates(rates: &[RatePoint]) -> f64 {
    rates
        .iter()
        .map(|r| if r.rate.is_infinite() { 0.0 } else { (r.t / (1.0 + r.t) - 0.5 * r.rate).max(0.0) })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::norm_cdf;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn omega_values() {
        assert!((omega_probability(16.0).unwrap() - 0.954_499_736_103_642).abs() < 1e-12);
        assert!((omega_probability(1.0).unwrap() - 0.682_689_492_137_086).abs() < 1e-12);
        assert!(omega_probability(0.0).is_err());
        let mut prev = 0.0;
        for i in 1..50 {
            let v = omega_probability(f64::from(i) * 3.0).unwrap();
            assert!(v > prev && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn rectangle_closed_forms() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let quad = bvn_rectangle([0.0; 2], id, Rect { lo: [-INF; 2], hi: [0.0; 2] }).unwrap();
        assert!((quad - 0.25).abs() < 1e-12);
        let one = [[1.0, 1.0], [1.0, 1.0]];
        let p = bvn_rectangle([0.0; 2], one, Rect { lo: [0.0; 2], hi: [1.0; 2] }).unwrap();
        assert!((p - (norm_cdf(1.0) - 0.5)).abs() < 1e-12);
        let half = [[1.0, 0.5], [0.5, 1.0]];
        let p = bvn_rectangle([0.0; 2], half, Rect { lo: [0.0; 2], hi: [INF; 2] }).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-10);
        let anti = [[1.0, -1.0], [-1.0, 1.0]];
        let p = bvn_rectangle([0.0; 2], anti, Rect { lo: [0.0, -INF], hi: [INF, 0.0] }).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rectangle_orthant_formula_over_correlations() {
        for i in -9..=9 {
            let r = f64::from(i) / 10.0;
            let cov = [[2.0, 2.0 * r], [2.0 * r, 2.0]];
            let p = bvn_rectangle([0.0; 2], cov, Rect { lo: [0.0; 2], hi: [INF; 2] }).unwrap();
            let want = 0.25 + r.asin() / (2.0 * std::f64::consts::PI);
            assert!((p - want).abs() < 1e-10, "r={r}: {p} vs {want}");
        }
    }

    #[test]
    fn rectangle_deep_tail_stays_finite() {
        let v = 1e-4;
        let lp = ln_bvn_rectangle([1.5; 2], [[v, 0.5 * v], [0.5 * v, v]], Rect { lo: [0.9; 2], hi: [1.1; 2] }).unwrap();
        assert!(lp.is_finite() && lp < -500.0);
        // Leading order: −λ·min quadratic form = −(2·0.4²/(1.5))·1e4/2 · 2.
        let approx = -(0.4f64 * 0.4) / 1.5 * 1e4;
        assert!((lp - approx).abs() / approx.abs() < 0.05, "{lp} vs {approx}");
    }

    #[test]
    fn m_n_examples() {
        let p = 1.0 - 2.0 * norm_sf(2.0);
        assert!((m_n(0.0, 16.0).unwrap() - p * p).abs() < 1e-10);
        assert!(m_n(-1.0, 16.0).unwrap() <= 1.2e-7);
        for rho in [-1.0, -0.7, -0.2, 0.0] {
            assert!(ln_m_n(rho, 50.0).unwrap() / 50.0 <= 0.0);
        }
        assert!(m_n(1.5, 1.0).is_err());
    }

    #[test]
    fn m_n_bounded_by_tilt_factor_and_monotone() {
        for lambda in [1.0, 10.0, 300.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in -20..=20 {
                let rho = f64::from(i) / 20.0;
                let lm = ln_m_n(rho, lambda).unwrap();
                assert!(lm <= lambda * rho + 1e-12);
                assert!(lm <= ln_case3_bound(rho, lambda).unwrap() + 1e-9, "rho {rho} lambda {lambda}");
                if rho >= 0.0 {
                    assert!(lm >= prev - 1e-9, "rho {rho} lambda {lambda}");
                    prev = lm;
                }
            }
        }
    }

    #[test]
    fn negative_overlap_degenerate_case() {
        // ρ = −1 and λ < 1: e^{−λ}·P[W ∈ [1−h, h−1]], W ∼ N(0, 1/λ).
        let lambda: f64 = 0.5;
        let h = lambda.powf(-0.25);
        let s = (1.0 / lambda).sqrt();
        let want = (-lambda).exp() * (norm_cdf((h - 1.0) / s) - norm_cdf((1.0 - h) / s));
        assert!((m_n(-1.0, lambda).unwrap() - want).abs() < 1e-14);
        assert_eq!(m_n(-1.0, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_conditional_bound() {
        let prior = DiscretePrior::orthogonal(7, 1).unwrap();
        let lambda = 3.0;
        let got = conditional_chi_square_bound(&prior, lambda).unwrap();
        let want = (6.0 / 7.0) * m_n(0.0, lambda).unwrap() + (1.0 / 7.0) * m_n(1.0, lambda).unwrap();
        assert!((got.ln_expected_m.exp() - want).abs() < 1e-12);
        let tiny = conditional_chi_square_bound(&DiscretePrior::orthogonal(2, 1).unwrap(), 0.01).unwrap();
        assert!(tiny.ln_expected_m <= 0.01_f64 * 0.5 + 1e-12);
    }

    #[test]
    fn rate_supremum_cases() {
        let o = DiscretePrior::orthogonal(100, 1).unwrap();
        assert!(rate_supremum(&o, &crate::tensor::default_t_grid()).unwrap() < 1e-12);
        let zero_rate: Vec<RatePoint> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| RatePoint { t, tail: 1.0, ln_tail: 0.0, rate: 0.0, bound: 0.0, margin: 0.0 })
            .collect();
        assert_eq!(rate_supremum_from_rates(&zero_rate), 0.5);
    }
}
