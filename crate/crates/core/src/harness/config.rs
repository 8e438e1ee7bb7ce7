use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::Caps;
use crate::error::{Error, Result};
use crate::prior::DiscretePrior;

pub const THREADS_ENV: &str = "AONLAB_THREADS";

#[derive(clap::ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PriorName {
    Orthogonal,
    Bernoulli,
    BernoulliRademacher,
}

impl PriorName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Orthogonal => "orthogonal",
            Self::Bernoulli => "bernoulli",
            Self::BernoulliRademacher => "bernoulli-rademacher",
        }
    }
}

/// Every setting is optional so that command-line flags, the config file and
/// the defaults can be layered. Config-file keys are the long flag names.
#[derive(clap::Args, Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    #[arg(long, value_enum)]
    pub prior: Option<PriorName>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub d: Option<u32>,
    /// a:b:step or a comma-separated list
    #[arg(long, allow_hyphen_values = true)]
    pub beta_grid: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to AONLAB_THREADS, then to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho_grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_grid: Option<String>,
    #[arg(long)]
    pub gram_cap: Option<usize>,
    #[arg(long)]
    pub ambient_cap: Option<usize>,
    #[arg(long)]
    pub table_cap: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        Settings {
            prior: self.prior.or(lower.prior),
            p: self.p.or(lower.p),
            k: self.k.or(lower.k),
            m: self.m.or(lower.m),
            d: self.d.or(lower.d),
            beta_grid: self.beta_grid.or(lower.beta_grid),
            trials: self.trials.or(lower.trials),
            seed: self.seed.or(lower.seed),
            threads: self.threads.or(lower.threads),
            out: self.out.or(lower.out),
            lambda_grid: self.lambda_grid.or(lower.lambda_grid),
            rho_grid: self.rho_grid.or(lower.rho_grid),
            t_grid: self.t_grid.or(lower.t_grid),
            gram_cap: self.gram_cap.or(lower.gram_cap),
            ambient_cap: self.ambient_cap.or(lower.ambient_cap),
            table_cap: self.table_cap.or(lower.table_cap),
            config: self.config.or(lower.config),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub prior_name: PriorName,
    pub prior: DiscretePrior,
    pub beta_grid: Vec<f64>,
    pub n_trials: usize,
    pub master_seed: u64,
    /// 0 lets rayon pick.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub lambda_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub caps: Caps,
}

impl SweepConfig {
    /// Layers `cli` over the config file it names (if any) over the defaults.
    /// The thread-count environment variable applies only when no flag sets it.
    pub fn resolve(cli: Settings) -> Result<Self> {
        let env_threads = std::env::var(THREADS_ENV).ok();
        Self::resolve_with_env(cli, env_threads.as_deref())
    }

    pub fn resolve_with_env(cli: Settings, env_threads: Option<&str>) -> Result<Self> {
        let file = match &cli.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let env = match (cli.threads, env_threads) {
            (None, Some(v)) => Settings {
                threads: Some(v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a count")))?),
                ..Settings::default()
            },
            _ => Settings::default(),
        };
        Self::from_settings(cli.over(env).over(file))
    }

    pub fn from_settings(s: Settings) -> Result<Self> {
        let prior_name = s.prior.unwrap_or(PriorName::Orthogonal);
        let d = s.d.unwrap_or(1);
        let prior = match prior_name {
            PriorName::Orthogonal => DiscretePrior::orthogonal(s.m.unwrap_or(64), d),
            PriorName::Bernoulli => DiscretePrior::bernoulli(s.p.unwrap_or(100), s.k.unwrap_or(3), d),
            PriorName::BernoulliRademacher => {
                DiscretePrior::bernoulli_rademacher(s.p.unwrap_or(100), s.k.unwrap_or(3), d)
            }
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        let beta_grid = parse_grid(s.beta_grid.as_deref().unwrap_or("0:2:0.25"))?;
        if beta_grid.iter().any(|&b| b < 0.0) || beta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("beta-grid must be nonnegative and strictly increasing".into()));
        }
        let lambda_grid = parse_grid(s.lambda_grid.as_deref().unwrap_or("100,1000,10000"))?;
        if lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("lambda-grid must be positive".into()));
        }
        let rho_grid = parse_grid(s.rho_grid.as_deref().unwrap_or("-1:1:0.25"))?;
        if rho_grid.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return Err(Error::Config("rho-grid must lie in [-1, 1]".into()));
        }
        let t_grid = parse_grid(s.t_grid.as_deref().unwrap_or("0:1:0.01"))?;
        if t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("t-grid must lie in [0, 1]".into()));
        }
        let n_trials = s.trials.unwrap_or(1000);
        if n_trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let defaults = Caps::default();
        let caps = Caps {
            gram_cap: s.gram_cap.unwrap_or(defaults.gram_cap),
            ambient_cap: s.ambient_cap.unwrap_or(defaults.ambient_cap),
            table_cap: s.table_cap.unwrap_or(defaults.table_cap),
        };
        if caps.gram_cap == 0 || caps.ambient_cap == 0 || caps.table_cap == 0 {
            return Err(Error::Config("caps must be positive".into()));
        }
        Ok(Self {
            prior_name,
            prior,
            beta_grid,
            n_trials,
            master_seed: s.seed.unwrap_or(0),
            threads: s.threads.unwrap_or(0),
            out: s.out,
            lambda_grid,
            rho_grid,
            t_grid,
            caps,
        })
    }

    /// Key-value lines describing the effective configuration.
    pub fn describe(&self) -> Vec<(String, String)> {
        let grid = |g: &[f64]| g.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        let mut kv = vec![("prior".to_string(), self.prior_name.as_str().to_string())];
        match self.prior.kind() {
            crate::prior::PriorKind::Orthogonal { m } => kv.push(("m".into(), m.to_string())),
            crate::prior::PriorKind::Bernoulli { p, k } | crate::prior::PriorKind::BernoulliRademacher { p, k } => {
                kv.push(("p".into(), p.to_string()));
                kv.push(("k".into(), k.to_string()));
            }
        }
        kv.extend([
            ("d".into(), self.prior.order().to_string()),
            ("beta-grid".into(), grid(&self.beta_grid)),
            ("trials".into(), self.n_trials.to_string()),
            ("seed".into(), self.master_seed.to_string()),
            ("threads".into(), self.threads.to_string()),
            ("lambda-grid".into(), grid(&self.lambda_grid)),
            ("rho-grid".into(), grid(&self.rho_grid)),
            ("t-grid".into(), grid(&self.t_grid)),
            ("gram-cap".into(), self.caps.gram_cap.to_string()),
            ("ambient-cap".into(), self.caps.ambient_cap.to_string()),
            ("table-cap".into(), self.caps.table_cap.to_string()),
        ]);
        kv
    }
}

/// Parses `a:b:step` (inclusive of b up to rounding) or `v1,v2,...`.
/// Range points are computed as (a·(n−i) + b·i)/n so that, e.g., 0:1:0.01
/// yields exactly i/100.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        let v: f64 = s.trim().parse().map_err(|_| Error::Config(format!("not a number: {s:?} in grid {text:?}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("grid values must be finite: {text:?}")))
        }
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(Error::Config(format!("range {text:?} needs step > 0 and a ≤ b")));
            }
            let steps = (b - a) / step;
            let n = steps.round();
            if (steps - n).abs() > 1e-9 * steps.max(1.0) || n > 1e7 {
                return Err(Error::Config(format!("range {text:?} is not a whole number of steps")));
            }
            let n = n as u64;
            if n == 0 {
                return Ok(vec![a]);
            }
            let nf = n as f64;
            Ok((0..=n).map(|i| (a * (nf - i as f64) + b * i as f64) / nf).collect())
        }
        [_] => text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>>>().and_then(|v| {
            if v.is_empty() {
                Err(Error::Config("empty grid".into()))
            } else {
                Ok(v)
            }
        }),
        _ => Err(Error::Config(format!("grid {text:?} must be a:b:step or a comma list"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let t = parse_grid("0:1:0.01").unwrap();
        assert_eq!(t, crate::tensor::default_t_grid());
        assert_eq!(parse_grid("1e2, 1e3").unwrap(), vec![100.0, 1000.0]);
        assert_eq!(parse_grid("2:2:0.5").unwrap(), vec![2.0]);
        assert_eq!(parse_grid("0:3:0.25").unwrap().len(), 13);
        for bad in ["0:1:0.3", "1:0:0.1", "a,b", "0:1", "", "0:1:0"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn precedence_cli_env_file_default() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut file, b"prior = \"bernoulli\"\np = 20\nk = 2\nd = 2\ntrials = 7\nthreads = 3\nseed = 5\n").unwrap();
        let cli = Settings { trials: Some(9), config: Some(file.path().to_path_buf()), ..Settings::default() };
        let c = SweepConfig::resolve_with_env(cli.clone(), None).unwrap();
        assert_eq!(c.prior, DiscretePrior::bernoulli(20, 2, 2).unwrap());
        assert_eq!((c.n_trials, c.threads, c.master_seed), (9, 3, 5));
        assert_eq!(c.beta_grid.len(), 9);
        let c = SweepConfig::resolve_with_env(cli.clone(), Some("6")).unwrap();
        assert_eq!(c.threads, 6);
        let c = SweepConfig::resolve_with_env(Settings { threads: Some(2), ..cli }, Some("6")).unwrap();
        assert_eq!(c.threads, 2);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(Settings::from_toml("trails = 3"), Err(Error::Config(_))));
        assert!(matches!(Settings::from_toml("trials = "), Err(Error::Config(_))));
        assert!(matches!(Settings::from_toml("prior = \"gaussian\""), Err(Error::Config(_))));
        let s = Settings { beta_grid: Some("1,0.5".into()), ..Settings::default() };
        assert!(matches!(SweepConfig::from_settings(s), Err(Error::Config(_))));
        let s = Settings { prior: Some(PriorName::Bernoulli), p: Some(3), k: Some(5), ..Settings::default() };
        assert!(matches!(SweepConfig::from_settings(s), Err(Error::Config(_))));
        assert!(SweepConfig::resolve_with_env(Settings::default(), Some("many")).is_err());
    }
}
