//! Experiment configuration: TOML-backed with per-experiment defaults
//! and command-line overrides layered on top.

use std::path::{Path, PathBuf};

use gpssm::hyper::HyperOptConfig;
use gpssm::matcher::MatcherKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Scalar system with the kink-shaped transition mean.
    Kink,
    /// Scalar ODE with two time-varying coefficients learned as
    /// functions of time.
    Tvparam,
    /// Two-state linear system with one exogenous-input latent function.
    Custom,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "kink" => Ok(Self::Kink),
            "tvparam" => Ok(Self::Tvparam),
            "custom" => Ok(Self::Custom),
            other => Err(format!(
                "unknown experiment '{other}', expected kink, tvparam, or custom"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Kink => "kink",
            Self::Tvparam => "tvparam",
            Self::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherChoice {
    Ekf,
    Ukf,
    Adf,
}

impl MatcherChoice {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "ekf" => Ok(Self::Ekf),
            "ukf" => Ok(Self::Ukf),
            "adf" => Ok(Self::Adf),
            other => Err(format!(
                "unknown matcher '{other}', expected ekf, ukf, or adf"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ekf => "ekf",
            Self::Ukf => "ukf",
            Self::Adf => "adf",
        }
    }

    pub fn kind(self) -> MatcherKind {
        match self {
            Self::Ekf => MatcherKind::Ekf,
            Self::Ukf => MatcherKind::Ukf,
            Self::Adf => MatcherKind::Adf,
        }
    }
}

impl std::str::FromStr for MatcherChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::parse(s)
    }
}

/// Unscented-transform settings shared by the UKF backend and the
/// propagation stage of the ADF backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfBlock {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for UkfBlock {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinkBlock {
    /// Process noise variance on the latent state.
    pub sigma_p2: f64,
    /// Initial RBF signal variance.
    pub init_sigma2: f64,
    /// Initial RBF length scale.
    pub init_lengthscale: f64,
}

impl Default for KinkBlock {
    fn default() -> Self {
        // The transition map swings over several units, so the signal
        // prior starts wide; a unit prior makes the filter overconfident
        // in unexplored regions under heavy measurement noise.
        Self {
            sigma_p2: 0.05,
            init_sigma2: 4.0,
            init_lengthscale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvparamBlock {
    /// Process noise variance on the integrated state.
    pub sigma_p2: f64,
    /// Square-wave excitation amplitude.
    pub excitation_amplitude: f64,
    /// Square-wave excitation period in seconds.
    pub excitation_period: f64,
    /// Adds the fixed cosine feature component to each coefficient's
    /// kernel.
    pub basis: bool,
}

impl Default for TvparamBlock {
    fn default() -> Self {
        Self {
            sigma_p2: 1e-4,
            excitation_amplitude: 4.0,
            excitation_period: 1.5,
            basis: false,
        }
    }
}

/// One experiment run request: which system, which moment matcher,
/// which noise levels, and the schedule knobs of the learner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub matcher: MatcherChoice,
    /// Measurement noise levels, one full run per level. Variance for
    /// kink and custom, standard deviation for tvparam.
    pub noise_levels: Vec<f64>,
    pub seeds: u64,
    /// First seed value; seeds are `seed_base..seed_base + seeds`.
    pub seed_base: u64,
    pub budget: usize,
    pub eps_tol: f64,
    /// Redundancy-prune threshold relative to `eps_tol`.
    pub rho: f64,
    /// Number of measurements per run.
    pub horizon: usize,
    pub dt: f64,
    pub hyperopt: HyperOptConfig,
    pub ukf: UkfBlock,
    pub kink: KinkBlock,
    pub tvparam: TvparamBlock,
    pub out_dir: Option<PathBuf>,
}

/// File-shaped mirror of [`ExperimentConfig`]: every field optional so
/// absent keys fall back to the experiment's defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    matcher: Option<MatcherChoice>,
    noise_levels: Option<Vec<f64>>,
    seeds: Option<u64>,
    seed_base: Option<u64>,
    budget: Option<usize>,
    eps_tol: Option<f64>,
    rho: Option<f64>,
    horizon: Option<usize>,
    dt: Option<f64>,
    hyperopt: Option<HyperOptConfig>,
    ukf: Option<UkfBlock>,
    kink: Option<KinkBlock>,
    tvparam: Option<TvparamBlock>,
    out_dir: Option<PathBuf>,
}

impl RawConfig {
    fn merged(self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(self.experiment);
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        take!(matcher);
        take!(noise_levels);
        take!(seeds);
        take!(seed_base);
        take!(budget);
        take!(eps_tol);
        take!(rho);
        take!(horizon);
        take!(dt);
        take!(hyperopt);
        take!(ukf);
        take!(kink);
        take!(tvparam);
        if self.out_dir.is_some() {
            cfg.out_dir = self.out_dir;
        }
        cfg
    }
}

impl ExperimentConfig {
    /// Baseline configuration for one experiment kind.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment,
            matcher: MatcherChoice::Adf,
            noise_levels: Vec::new(),
            seeds: 5,
            seed_base: 0,
            budget: 15,
            eps_tol: 1e-2,
            rho: 0.1,
            horizon: 600,
            dt: 0.05,
            hyperopt: HyperOptConfig::default(),
            ukf: UkfBlock::default(),
            kink: KinkBlock::default(),
            tvparam: TvparamBlock::default(),
            out_dir: None,
        };
        match experiment {
            ExperimentKind::Kink => {
                cfg.noise_levels = vec![0.008];
                cfg.hyperopt.enabled = true;
            }
            ExperimentKind::Tvparam => {
                cfg.noise_levels = vec![0.05];
                cfg.horizon = 700;
                cfg.budget = 50;
                cfg.hyperopt.enabled = true;
                cfg.hyperopt.step_size = 1.5e-2;
            }
            ExperimentKind::Custom => {
                cfg.noise_levels = vec![0.01];
                cfg.horizon = 300;
                cfg.budget = 30;
            }
        }
        cfg
    }

    /// Parses a TOML file, rejecting unknown keys. Absent keys keep
    /// the experiment's default values, so a file naming only the
    /// experiment behaves exactly like running without a file.
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let cfg = raw.merged();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.horizon < 2 {
            anyhow::bail!("horizon must be at least 2, got {}", self.horizon);
        }
        if self.seeds == 0 {
            anyhow::bail!("need at least one seed");
        }
        if !(self.dt > 0.0) {
            anyhow::bail!("dt must be positive, got {}", self.dt);
        }
        if !(self.eps_tol > 0.0) {
            anyhow::bail!("eps_tol must be positive, got {}", self.eps_tol);
        }
        if self.budget == 0 {
            anyhow::bail!("budget must be at least 1");
        }
        if !(self.rho > 0.0) {
            anyhow::bail!("rho must be positive, got {}", self.rho);
        }
        if self.noise_levels.iter().any(|n| !(*n > 0.0)) {
            anyhow::bail!("noise levels must be positive");
        }
        if self.hyperopt.enabled {
            gpssm::hyper::HyperOptConfig::validate(&self.hyperopt)
                .map_err(|e| anyhow::anyhow!("hyperopt: {e}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "experiment = \"kink\"\nbanana = 3\n";
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("banana"), "{err}");
    }

    #[test]
    fn minimal_file_gets_experiment_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"kink\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::Kink));
        assert_eq!(cfg.noise_levels, vec![0.008]);
        assert_eq!(cfg.budget, 15);
        assert_eq!(cfg.horizon, 600);
        assert!(cfg.hyperopt.enabled);

        let tv = ExperimentConfig::from_toml_str("experiment = \"tvparam\"\n").unwrap();
        assert_eq!(tv, ExperimentConfig::defaults(ExperimentKind::Tvparam));
        assert_eq!(tv.horizon, 700);
        assert_eq!(tv.budget, 50);
    }

    #[test]
    fn nested_blocks_accept_partial_overrides() {
        let text = r#"
experiment = "tvparam"
[hyperopt]
enabled = true
step_size = 0.05
[tvparam]
basis = true
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(cfg.hyperopt.enabled);
        assert_eq!(cfg.hyperopt.step_size, 0.05);
        assert_eq!(cfg.hyperopt.steps_per_update, 1);
        assert!(cfg.tvparam.basis);
        assert_eq!(cfg.tvparam.excitation_period, 1.5);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "experiment = \"kink\"\nhorizon = 1\n",
            "experiment = \"kink\"\nseeds = 0\n",
            "experiment = \"kink\"\nnoise_levels = [0.0]\n",
            "experiment = \"kink\"\ndt = 0.0\n",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
