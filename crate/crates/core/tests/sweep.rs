use aonlab_core::harness::{run_sweep, Settings, SweepConfig};

fn config(settings: Settings) -> SweepConfig {
    SweepConfig::from_settings(settings).unwrap()
}

#[test]
fn kl_rows_respect_lower_bound_and_convexity() {
    let c = config(Settings {
        m: Some(64),
        beta_grid: Some("0:2.5:0.25".into()),
        trials: Some(4000),
        seed: Some(21),
        ..Settings::default()
    });
    let rows = run_sweep(&c).unwrap();
    let log_m = 64f64.ln();
    for r in &rows {
        assert!(r.kl_hat >= 0.5 * r.lambda - log_m - 3.0 * r.kl_se, "β={}: {} < {}", r.beta, r.kl_hat, 0.5 * r.lambda - log_m);
        assert!(r.mmse_hat >= -3.0 * r.mmse_se && r.mmse_hat <= 1.0 + 3.0 * r.mmse_se);
    }
    for w in rows.windows(3) {
        let second = w[0].kl_hat - 2.0 * w[1].kl_hat + w[2].kl_hat;
        let se = (w[0].kl_se.powi(2) + 4.0 * w[1].kl_se.powi(2) + w[2].kl_se.powi(2)).sqrt();
        assert!(second >= -3.0 * se, "β={}: {second} ({se})", w[1].beta);
    }
    assert_eq!(rows[0].kl_hat, 0.0);
    assert!((rows[0].mmse_hat - 63.0 / 64.0).abs() < 1e-12);
}

#[test]
fn orthogonal_mmse_drops_across_transition() {
    let c = config(Settings {
        m: Some(4096),
        beta_grid: Some("0.25,4".into()),
        trials: Some(2000),
        seed: Some(2),
        ..Settings::default()
    });
    let rows = run_sweep(&c).unwrap();
    assert!(rows[0].mmse_hat - rows[1].mmse_hat >= 0.6, "{} {}", rows[0].mmse_hat, rows[1].mmse_hat);
}

#[test]
fn sparse_zero_snr_row() {
    let c = config(Settings {
        prior: Some(aonlab_core::harness::PriorName::Bernoulli),
        p: Some(10),
        k: Some(3),
        d: Some(2),
        beta_grid: Some("0,1".into()),
        trials: Some(500),
        ..Settings::default()
    });
    let rows = run_sweep(&c).unwrap();
    // E[x⊗x] has diagonal k/p·(1/k) and off-diagonal k(k−1)/(p(p−1))·(1/k).
    let (p, k) = (10.0, 3.0);
    let diag = 1.0 / p;
    let off = (k - 1.0) / (p * (p - 1.0));
    let mean_sq = p * diag * diag + p * (p - 1.0) * off * off;
    assert_eq!(rows[0].kl_hat, 0.0);
    assert!((rows[0].mmse_hat - (1.0 - mean_sq)).abs() < 1e-12, "{} vs {}", rows[0].mmse_hat, 1.0 - mean_sq);
}
