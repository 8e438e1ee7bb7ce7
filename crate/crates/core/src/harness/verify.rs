//! Fixed-seed invariant suite run by `aonlab verify`.

use std::collections::HashMap;

use rand::SeedableRng;

use crate::channel::{Backend, Caps, ChannelInstance};
use crate::divergence::{chi_square_exact, kl_from_table, kl_lower_bound, mutual_information_from_table, KlEstimator};
use crate::error::Result;
use crate::estimator::{mmse_monte_carlo, posterior_weights};
use crate::numeric::pairwise_sum;
use crate::prior::{max_projection_moment, DiscretePrior, OverlapAtom, OverlapPmf};
use crate::rng::{StreamKey, StreamRng};
use crate::secondmoment::{ln_case3_bound, ln_m_n, omega_probability, tilted_margins, C_FROZEN};
use crate::tensor::{default_t_grid, lifted_overlap_pmf, rate_function, tensor_overlap};
use crate::trial::{map_trials, with_threads, TrialTable};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Adds this much to the diagonal of the Gram matrix under test.
    pub inject_fault: bool,
}

const FAULT: f64 = 1e-3;

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Runs every check; an `Err` means a check could not be evaluated at all.
pub fn run_verify(opts: VerifyOptions) -> Result<Vec<CheckResult>> {
    let key = |name: &str| StreamKey::named(opts.seed, name);
    let caps = Caps::default();
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for prior in [
        DiscretePrior::bernoulli(6, 2, 1)?,
        DiscretePrior::bernoulli(6, 2, 2)?,
        DiscretePrior::bernoulli(6, 3, 3)?,
        DiscretePrior::bernoulli_rademacher(5, 2, 2)?,
        DiscretePrior::bernoulli_rademacher(5, 2, 3)?,
    ] {
        worst = worst.max(enumerated_pmf(&prior)?.total_variation(&lifted_overlap_pmf(&prior)));
    }
    out.push(check("overlap pmf matches pair enumeration", worst <= 1e-12, format!("max TV {worst:.2e}")));

    let mut inst = ChannelInstance::with_backend(DiscretePrior::bernoulli(6, 2, 2)?, 4.0, Backend::Gram, &caps)?;
    if opts.inject_fault {
        inst.perturb_gram_diagonal(FAULT);
    }
    let g = inst.gram().expect("gram backend");
    let (mut entry_err, mut factor_err) = (0.0f64, 0.0f64);
    let llt = &g.factor * g.factor.transpose();
    for i in 0..g.support.len() {
        for j in 0..g.support.len() {
            let want = tensor_overlap(&g.support[i], &g.support[j], g.order)?;
            entry_err = entry_err.max((g.gram[(i, j)] - want).abs());
            let jitter = if i == j { g.jitter } else { 0.0 };
            factor_err = factor_err.max((llt[(i, j)] - g.gram[(i, j)] - jitter).abs());
        }
    }
    out.push(check("gram entries equal tensor overlaps", entry_err <= 1e-12, format!("max error {entry_err:.2e}")));
    out.push(check("cholesky factor reproduces gram", factor_err <= 1e-10, format!("max error {factor_err:.2e}")));

    let mut rng = StreamRng::seed_from_u64(opts.seed);
    let mut sum_err = 0.0f64;
    for _ in 0..20 {
        let w = posterior_weights(&inst.sample_projections(&mut rng)?);
        sum_err = sum_err.max((pairwise_sum(&w) - 1.0).abs());
    }
    out.push(check("posterior weights are normalized", sum_err <= 1e-12, format!("max |Σw − 1| {sum_err:.2e}")));

    let o8 = ChannelInstance::new(DiscretePrior::orthogonal(8, 1)?, 0.0, &caps)?;
    let m0 = mmse_monte_carlo(&o8, 200, key("verify-mmse0"))?.mean;
    out.push(check("zero-SNR MMSE is 1 − |E X|²", (m0 - 7.0 / 8.0).abs() <= 1e-12, format!("{m0:.15}")));

    let o16 = DiscretePrior::orthogonal(16, 1)?;
    let log_m = o16.log_cardinality();
    let inst16 = ChannelInstance::new(o16, 0.0, &caps)?;
    let lambdas = [2.0 * log_m, 4.0 * log_m];
    let table = TrialTable::run(&inst16, &lambdas, 4000, key("verify-o16"), false)?;
    let mi = mutual_information_from_table(&table, 0);
    out.push(check(
        "I + KL − λ/2 within 3 pooled SE",
        mi.holds(3.0),
        format!("residual {:.4} / SE {:.4}", mi.residual, mi.pooled_se),
    ));
    let kl = kl_from_table(&table, 1, KlEstimator::Mean);
    let lb = kl_lower_bound(lambdas[1], log_m)?;
    out.push(check(
        "KL ≥ λ/2 − ln M − 3σ",
        kl.mean >= lb - 3.0 * kl.standard_error,
        format!("KL {:.4} vs {:.4}", kl.mean, lb),
    ));

    let chi = chi_square_exact(&DiscretePrior::orthogonal(16, 1)?, 3.0)?.value()?;
    let want = (3f64.exp() - 1.0) / 16.0;
    out.push(check("χ² closed form for orthogonal prior", (chi - want).abs() <= 1e-12 * want, format!("{chi:.12}")));

    let rates = rate_function(&DiscretePrior::orthogonal(1000, 1)?, &default_t_grid())?;
    let rate_err = rates[1..].iter().map(|r| (r.margin - (1.0 - 2.0 * r.t / (1.0 + r.t))).abs()).fold(0.0, f64::max);
    out.push(check("orthogonal rate function is 1", rate_err <= 1e-12, format!("max error {rate_err:.2e}")));

    let b = DiscretePrior::bernoulli(50, 4, 2)?;
    let (base, lifted) = (b.base_overlap_pmf(), lifted_overlap_pmf(&b));
    let dominated = default_t_grid().iter().all(|&t| lifted.tail(t) <= base.tail(t.sqrt()) + 1e-15);
    out.push(check("lifted tail ≤ base tail at √t", dominated, String::new()));

    let (mut tilt_ok, mut case3_ok, mut mono_ok) = (true, true, true);
    for lambda in [1.0, 16.0, 100.0, 1000.0] {
        let mut prev = f64::NEG_INFINITY;
        for i in -10..=10 {
            let rho = f64::from(i) / 10.0;
            let lm = ln_m_n(rho, lambda)?;
            tilt_ok &= lm <= lambda * rho + 1e-9;
            case3_ok &= lm <= ln_case3_bound(rho, lambda)? + 1e-9;
            if rho >= 0.0 {
                mono_ok &= lm >= prev - 1e-9;
                prev = lm;
            }
        }
    }
    out.push(check("m_N ≤ e^{λρ}", tilt_ok, String::new()));
    out.push(check("m_N ≤ sum-constraint bound", case3_ok, String::new()));
    out.push(check("m_N nondecreasing on [0, 1]", mono_ok, String::new()));

    let omegas: Vec<f64> = (1..=40).map(|i| omega_probability(f64::from(i) * 2.5)).collect::<Result<_>>()?;
    let omega_ok = omegas.windows(2).all(|w| w[0] < w[1]) && omega_probability(16.0)? > 0.95;
    out.push(check("P[Ω] increasing, > 0.95 at λ = 16", omega_ok, String::new()));

    let rho = [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0];
    let (mut neg_ok, mut worst_scaled) = (true, f64::NEG_INFINITY);
    for lambda in [1e2, 1e3, 1e4] {
        for r in tilted_margins(&rho, lambda)? {
            if r.rho <= 0.0 {
                neg_ok &= r.margin <= 0.0;
            }
            worst_scaled = worst_scaled.max(r.scaled_margin);
        }
    }
    out.push(check("margin ≤ 0 for ρ ≤ 0", neg_ok, String::new()));
    out.push(check(
        "scaled margin ≤ frozen constant",
        worst_scaled <= C_FROZEN,
        format!("{worst_scaled:.4} ≤ {C_FROZEN}"),
    ));

    let draw = |threads| {
        with_threads(threads, || {
            map_trials(200, key("verify-workers"), |r| inst16.with_lambda(5.0)?.trial(&[5.0], r, true))
        })
    };
    let same = draw(1)?? == draw(4)??;
    out.push(check("trials independent of worker count", same, String::new()));

    let mp = max_projection_moment(&DiscretePrior::orthogonal(100, 1)?, 2000, key("verify-maxproj"), &caps)?;
    let ratio = mp.estimate.mean / mp.log_m;
    out.push(check("E max⟨x, Z⟩² ≤ 4 ln M", ratio <= 4.0, format!("ratio {ratio:.3}")));

    Ok(out)
}

/// Law of ⟨x_i, x_j⟩^d over all ordered pairs of the enumerated support.
pub fn enumerated_pmf(prior: &DiscretePrior) -> Result<OverlapPmf> {
    let support = prior.enumerate_support(1 << 16)?;
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for a in &support {
        for b in &support {
            let v = tensor_overlap(a, b, prior.order())? + 0.0;
            *counts.entry(v.to_bits()).or_default() += 1;
        }
    }
    let total = (support.len() * support.len()) as f64;
    let atoms = counts
        .into_iter()
        .map(|(bits, c)| {
            let prob = c as f64 / total;
            OverlapAtom { value: f64::from_bits(bits), prob, ln_prob: prob.ln() }
        })
        .collect();
    OverlapPmf::from_atoms(atoms)
}

/// Formats the pass/fail table printed by the CLI.
pub fn render(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let pad = width - r.name.chars().count();
        s.push_str(&format!(
            "{}  {}{}  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            " ".repeat(pad),
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {failed} failed\n", results.len()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_fault_is_caught() {
        let ok = run_verify(VerifyOptions::default()).unwrap();
        assert!(ok.iter().all(|r| r.passed), "{}", render(&ok));
        let bad = run_verify(VerifyOptions { seed: 0, inject_fault: true }).unwrap();
        let failed: Vec<_> = bad.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        assert!(failed.contains(&"gram entries equal tensor overlaps"), "{failed:?}");
    }
}
