//! Experiment orchestration behind the `aonlab` binary: configuration,
//! sweeps, reports and CSV output.

mod config;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use config::{parse_grid, PriorName, Settings, SweepConfig, THREADS_ENV};

use crate::channel::ChannelInstance;
use crate::divergence::{immse_curve_check, kl_from_table, ImmseRow, KlEstimator};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::secondmoment::{conditional_chi_square_bound, tilted_margins, rate_supremum, C_FROZEN};
use crate::tensor::{rate_function, RatePoint};
use crate::trial::{with_threads, TrialTable};

/// One row of a CSV table.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRecord {
    pub beta: f64,
    pub lambda: f64,
    pub mmse_hat: f64,
    pub mmse_se: f64,
    pub kl_hat: f64,
    pub kl_se: f64,
    /// kl_hat / λ_N with λ_N = 2 ln M
    pub kl_normalized: f64,
    /// ½(β − 1)₊
    pub prop1_target: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl CsvRecord for SweepRecord {
    const HEADER: &'static [&'static str] = &[
        "beta", "lambda", "mmse_hat", "mmse_se", "kl_hat", "kl_se", "kl_normalized", "prop1_target", "n_trials", "seed",
    ];
    fn fields(&self) -> Vec<String> {
        vec![
            real(self.beta),
            real(self.lambda),
            real(self.mmse_hat),
            real(self.mmse_se),
            real(self.kl_hat),
            real(self.kl_se),
            real(self.kl_normalized),
            real(self.prop1_target),
            self.n_trials.to_string(),
            self.seed.to_string(),
        ]
    }
}

impl CsvRecord for RatePoint {
    const HEADER: &'static [&'static str] = &["t", "tail", "rate_hat", "bound", "margin"];
    fn fields(&self) -> Vec<String> {
        vec![real(self.t), real(self.tail), real(self.rate), real(self.bound), real(self.margin)]
    }
}

impl CsvRecord for ImmseRow {
    const HEADER: &'static [&'static str] = &[
        "beta", "lambda", "kl_normalized", "kl_normalized_se", "mmse", "mmse_se", "derivative", "target", "residual",
        "prop1_target",
    ];
    fn fields(&self) -> Vec<String> {
        vec![
            real(self.beta),
            real(self.lambda),
            real(self.kl_normalized),
            real(self.kl_normalized_se),
            real(self.mmse),
            real(self.mmse_se),
            opt_real(self.derivative),
            real(self.target),
            opt_real(self.residual),
            real(self.prop1_target),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondMomentRecord {
    pub lambda: f64,
    pub rho: f64,
    pub ln_m_n: f64,
    pub margin: f64,
    pub scaled_margin: f64,
    pub c_frozen: f64,
    /// Per-λ columns, repeated on every ρ row.
    pub omega_probability: f64,
    pub chi2_normalized: f64,
    pub chi2_normalized_corrected: f64,
    pub rate_supremum: f64,
}

impl CsvRecord for SecondMomentRecord {
    const HEADER: &'static [&'static str] = &[
        "lambda",
        "rho",
        "ln_m_n",
        "margin",
        "scaled_margin",
        "c_frozen",
        "omega_probability",
        "chi2_normalized",
        "chi2_normalized_corrected",
        "rate_supremum",
    ];
    fn fields(&self) -> Vec<String> {
        vec![
            real(self.lambda),
            real(self.rho),
            real(self.ln_m_n),
            real(self.margin),
            real(self.scaled_margin),
            real(self.c_frozen),
            real(self.omega_probability),
            real(self.chi2_normalized),
            real(self.chi2_normalized_corrected),
            real(self.rate_supremum),
        ]
    }
}

/// Comma-separated with a header row and LF line endings.
pub fn write_csv<W: Write, R: CsvRecord>(mut w: W, rows: &[R]) -> Result<()> {
    writeln!(w, "{}", R::HEADER.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.fields().join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<R: CsvRecord>(rows: &[R]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `rows` to the configured output (stdout when unset). A file output
/// gets a `<out>.meta` key-value sidecar with the effective configuration.
pub fn emit<R: CsvRecord>(config: &SweepConfig, subcommand: &str, rows: &[R]) -> Result<()> {
    match &config.out {
        None => write_csv(std::io::stdout().lock(), rows),
        Some(path) => {
            write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), rows)?;
            let timestamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let mut meta = std::io::BufWriter::new(std::fs::File::create(sidecar_path(path))?);
            writeln!(meta, "subcommand = {subcommand}")?;
            writeln!(meta, "version = {}", env!("CARGO_PKG_VERSION"))?;
            writeln!(meta, "timestamp = {timestamp}")?;
            writeln!(meta, "rows = {}", rows.len())?;
            for (k, v) in config.describe() {
                writeln!(meta, "{k} = {v}")?;
            }
            meta.flush()?;
            Ok(())
        }
    }
}

fn in_pool<T: Send>(config: &SweepConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    with_threads(config.threads, f)?
}

fn instance(config: &SweepConfig) -> Result<ChannelInstance> {
    ChannelInstance::new(config.prior, 0.0, &config.caps)
}

/// One record per β, all from the same trials (common random numbers).
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    let inst = instance(config)?;
    let lambda_n = 2.0 * inst.log_cardinality();
    let lambdas: Vec<f64> = config.beta_grid.iter().map(|b| b * lambda_n).collect();
    let key = StreamKey::named(config.master_seed, "sweep");
    let table = in_pool(config, || TrialTable::run(&inst, &lambdas, config.n_trials, key, true))?;
    Ok(config
        .beta_grid
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            let mmse = table.mean(i, |o| o.sq_error());
            let kl = kl_from_table(&table, i, KlEstimator::ControlVariate);
            SweepRecord {
                beta,
                lambda: lambdas[i],
                mmse_hat: mmse.mean,
                mmse_se: mmse.standard_error,
                kl_hat: kl.mean,
                kl_se: kl.standard_error,
                kl_normalized: kl.mean / lambda_n,
                prop1_target: 0.5 * (beta - 1.0).max(0.0),
                n_trials: config.n_trials,
                seed: config.master_seed,
            }
        })
        .collect())
}

pub fn run_overlap_report(config: &SweepConfig) -> Result<Vec<RatePoint>> {
    rate_function(&config.prior, &config.t_grid)
}

pub fn run_second_moment_report(config: &SweepConfig) -> Result<Vec<SecondMomentRecord>> {
    let rhs = rate_supremum(&config.prior, &config.t_grid)?;
    in_pool(config, || {
        use rayon::prelude::*;
        let per_lambda = config
            .lambda_grid
            .par_iter()
            .map(|&lambda| {
                let chi = conditional_chi_square_bound(&config.prior, lambda)?;
                let rows = tilted_margins(&config.rho_grid, lambda)?;
                Ok(rows
                    .into_iter()
                    .map(|r| SecondMomentRecord {
                        lambda,
                        rho: r.rho,
                        ln_m_n: r.normalized_log_m * lambda,
                        margin: r.margin,
                        scaled_margin: r.scaled_margin,
                        c_frozen: C_FROZEN,
                        omega_probability: chi.omega_probability,
                        chi2_normalized: chi.normalized,
                        chi2_normalized_corrected: chi.normalized_corrected,
                        rate_supremum: rhs,
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_lambda.into_iter().flatten().collect())
    })
}

pub fn run_immse_check(config: &SweepConfig) -> Result<Vec<ImmseRow>> {
    let inst = instance(config)?;
    let key = StreamKey::named(config.master_seed, "immse-check");
    in_pool(config, || {
        immse_curve_check(&inst, &config.beta_grid, config.n_trials, key, KlEstimator::ControlVariate)
    })
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepConfig {
        SweepConfig::from_settings(Settings {
            m: Some(16),
            beta_grid: Some("0:2:0.5".into()),
            trials: Some(300),
            seed: Some(11),
            ..Settings::default()
        })
        .unwrap()
    }

    #[test]
    fn sweep_zero_row_and_shape() {
        let rows = run_sweep(&small()).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].kl_hat, 0.0);
        assert!((rows[0].mmse_hat - 15.0 / 16.0).abs() < 1e-12);
        for r in &rows {
            assert!(r.mmse_hat >= -3.0 * r.mmse_se && r.mmse_hat <= 1.0 + 3.0 * r.mmse_se);
            assert!(r.kl_normalized.is_finite());
        }
        let csv = csv_string(&rows);
        assert!(csv.starts_with("beta,lambda,mmse_hat,mmse_se,kl_hat,kl_se,kl_normalized,prop1_target,n_trials,seed\n"));
        assert_eq!(csv.lines().count(), 6);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn sweep_is_independent_of_threads() {
        let mut c = small();
        c.threads = 1;
        let a = csv_string(&run_sweep(&c).unwrap());
        c.threads = 5;
        assert_eq!(a, csv_string(&run_sweep(&c).unwrap()));
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 2.5e-300, 123456.789, -7.0] {
            assert_eq!(real(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn second_moment_report_columns() {
        let mut c = small();
        c.lambda_grid = vec![100.0, 1000.0];
        let rows = run_second_moment_report(&c).unwrap();
        assert_eq!(rows.len(), 2 * c.rho_grid.len());
        assert!(rows.iter().all(|r| r.rate_supremum.abs() < 1e-12));
        assert!(rows.iter().filter(|r| r.rho <= 0.0).all(|r| r.margin <= 0.0));
        assert!(rows.iter().all(|r| r.scaled_margin <= C_FROZEN));
    }

    #[test]
    fn overlap_report_orthogonal() {
        let rows = run_overlap_report(&small()).unwrap();
        assert_eq!(rows.len(), 101);
        for r in &rows[1..] {
            assert!((r.margin - (1.0 - 2.0 * r.t / (1.0 + r.t))).abs() < 1e-12);
        }
        assert_eq!(rows[0].bound, 0.0);
    }

    #[test]
    fn sidecar_written_next_to_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.out = Some(dir.path().join("o.csv"));
        emit(&c, "overlap", &run_overlap_report(&c).unwrap()).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("o.csv.meta")).unwrap();
        assert!(meta.contains("seed = 11\n") && meta.contains("subcommand = overlap\n"));
    }
}
