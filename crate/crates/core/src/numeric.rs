//! Small numerical kernels shared by the estimators: stable reductions,
//! standard-normal tail functions in log space, and adaptive quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// ln(sqrt(2π))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Pairwise (tree) summation. The reduction order depends only on the length
/// of the slice, so results are bitwise reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, standard_error: f64::NAN, n };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Self { mean, standard_error: 0.0, n };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Self { mean, standard_error: (var / n as f64).sqrt(), n }
    }
}

/// Pooled standard error of a sum or difference of independent estimates.
pub fn pooled_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    m + pairwise_sum(&s).ln()
}

/// ln(e^a + e^b)
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let r = k.min(n - k);
    if r <= 4096 {
        // exact terms, so the error grows only with r
        let terms: Vec<f64> = (0..r).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).collect();
        pairwise_sum(&terms)
    } else {
        libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x)
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x)
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

// Mills ratio (1 − Φ(x)) / φ(x) by backward evaluation of its continued fraction.
fn mills_ratio(x: f64) -> f64 {
    let mut t = x;
    for n in (1..=80).rev() {
        t = x + n as f64 / t;
    }
    1.0 / t
}

/// ln(1 − Φ(x)), accurate far into the upper tail.
pub fn ln_norm_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 8.0 {
        norm_sf(x).ln()
    } else {
        ln_norm_pdf(x) + mills_ratio(x).ln()
    }
}

/// ln Φ(x)
pub fn ln_norm_cdf(x: f64) -> f64 {
    ln_norm_sf(-x)
}

/// ln(Φ(b) − Φ(a)) for a ≤ b, without cancellation in either tail.
pub fn ln_norm_interval(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if b <= 0.0 {
        let lb = ln_norm_cdf(b);
        let la = ln_norm_cdf(a);
        lb + ln_one_minus_exp(la - lb)
    } else if a >= 0.0 {
        let la = ln_norm_sf(a);
        let lb = ln_norm_sf(b);
        la + ln_one_minus_exp(lb - la)
    } else {
        (-(norm_cdf(a) + norm_sf(b))).ln_1p()
    }
}

/// ln(1 − e^x) for x ≤ 0.
pub fn ln_one_minus_exp(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WEIGHTS_K[7];
    let mut gauss = fc * GK_WEIGHTS_G[3];
    for (i, &x) in GK_NODES[..7].iter().enumerate() {
        let pair = f(c - h * x) + f(c + h * x);
        kronrod += GK_WEIGHTS_K[i] * pair;
        if i % 2 == 1 {
            gauss += GK_WEIGHTS_G[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over a finite interval.
/// Subintervals are bisected until the local error estimate meets its share of
/// `abs_tol`; exceeding `max_depth` bisections is reported as a failure.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_depth: u32,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "quadrature bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: (f64, f64),
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let (value, err) = whole;
        if err <= tol || (b - a).abs() < 1e-15 * (a.abs() + b.abs()) {
            return Ok(value);
        }
        if depth == 0 {
            return Err(Error::NumericalFailure(format!(
                "adaptive quadrature exceeded depth limit on [{a}, {b}] (error estimate {err:e})"
            )));
        }
        let m = 0.5 * (a + b);
        let left = gauss_kronrod_15(f, a, m);
        let right = gauss_kronrod_15(f, m, b);
        Ok(recurse(f, a, m, left, 0.5 * tol, depth - 1)?
            + recurse(f, m, b, right, 0.5 * tol, depth - 1)?)
    }
    let whole = gauss_kronrod_15(&f, a, b);
    recurse(&f, a, b, whole, abs_tol, max_depth)
}

/// Golden-section search for the maximiser of a unimodal function on [a, b].
pub fn argmax_unimodal<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn log_sum_exp_handles_large_arguments() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn mills_ratio_branch_agrees_with_erfc_at_the_switch() {
        for &x in &[8.0, 8.5, 10.0, 20.0, 30.0] {
            let direct = norm_sf(x).ln();
            let cf = ln_norm_pdf(x) + mills_ratio(x).ln();
            assert!((direct - cf).abs() < 1e-10 * direct.abs(), "x={x}: {direct} vs {cf}");
        }
        // far beyond erfc's range: leading asymptotics −x²/2 − ln(x√(2π))
        let x = 100.0;
        let asym = -0.5 * x * x - (x * (2.0 * PI).sqrt()).ln() - 1.0 / (x * x);
        assert!((ln_norm_sf(x) - asym).abs() < 1e-6);
    }

    #[test]
    fn interval_probability_is_stable_in_both_tails() {
        let p = ln_norm_interval(-1.0, 1.0).exp();
        assert!((p - 0.682_689_492_137_085_9).abs() < 1e-14);
        let far = ln_norm_interval(40.0, 41.0);
        assert!((far - ln_norm_sf(40.0)).abs() < 1e-9);
        let far_left = ln_norm_interval(-41.0, -40.0);
        assert!((far - far_left).abs() < 1e-12);
        assert_eq!(ln_norm_interval(1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn quadrature_integrates_gaussian_density() {
        let v = integrate_adaptive(norm_pdf, -2.0, 2.0, 1e-13, 40).unwrap();
        assert!((v - (2.0 * norm_cdf(2.0) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn quadrature_reports_depth_exhaustion() {
        let f = |x: f64| if x > 0.3 { 1.0 } else { 0.0 };
        assert!(integrate_adaptive(f, 0.0, 1.0, 1e-300, 3).is_err());
    }

    #[test]
    fn ln_binomial_matches_small_exact_values() {
        assert_eq!(ln_binomial(4, 2), 6f64.ln());
        assert!((ln_binomial(100, 10) - 17_310_309_456_440f64.ln()).abs() < 1e-13);
        assert_eq!(ln_binomial(5, 0), 0.0);
        assert_eq!(ln_binomial(3, 4), f64::NEG_INFINITY);
        let big = ln_binomial(20_000, 10_000);
        let sum: f64 = (0..10_000u64).map(|i| ((20_000 - i) as f64 / (i + 1) as f64).ln()).sum();
        assert!((big - sum).abs() < 1e-8 * sum);
    }

    #[test]
    fn mean_estimate_of_constant_has_zero_error() {
        let m = MeanEstimate::from_samples(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.standard_error, 0.0);
    }
}
