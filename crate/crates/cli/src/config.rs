//! Run configuration read from a TOML file.

use std::path::Path;

use adaptrunc::ccv::{CcvPrior, ScalePrior};
use adaptrunc::smc::{Discrepancy, SmcConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dpm,
    Pym,
    Nrmii,
    Lmm,
    Ts,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dpm => "dpm",
            Self::Pym => "pym",
            Self::Nrmii => "nrmii",
            Self::Lmm => "lmm",
            Self::Ts => "ts",
        }
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, Self::Dpm | Self::Pym | Self::Nrmii)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationKind {
    Rsb,
    Sb,
    Fk,
    Cpp,
}

impl TruncationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rsb => "rsb",
            Self::Sb => "sb",
            Self::Fk => "fk",
            Self::Cpp => "cpp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    OneAtom,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscrepancyKind {
    Ess,
    Predictive,
}

/// A scale prior written as `{ family = "folded_t", nu = 1.0, a = 0.01 }` or
/// `{ family = "inverse_gamma", shape = 3.0, scale = 2.0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleSpec {
    FoldedT { nu: f64, a: f64 },
    InverseGamma { shape: f64, scale: f64 },
}

impl ScaleSpec {
    pub fn to_prior(self) -> CliResult<ScalePrior> {
        let prior = match self {
            Self::FoldedT { nu, a } => ScalePrior::folded_t(nu, a),
            Self::InverseGamma { shape, scale } => ScalePrior::inverse_gamma(shape, scale),
        };
        prior.map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Known total mass; omitted means an Exp(1) prior (mixtures) or 1 (nrmii).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_scale: Option<ScaleSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gam_scale: Option<ScaleSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend_scale: Option<ScaleSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1_var: Option<f64>,
}

impl PriorConfig {
    fn mixture_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        for (name, set) in [
            ("mass", self.mass.is_some()),
            ("discount", self.discount.is_some()),
            ("mu0", self.mu0.is_some()),
            ("sigma2", self.sigma2.is_some()),
            ("alpha", self.alpha.is_some()),
            ("beta", self.beta.is_some()),
            ("fixed_variance", self.fixed_variance.is_some()),
        ] {
            if set {
                keys.push(name);
            }
        }
        keys
    }

    fn semiparametric_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        for (name, set) in [
            ("eps_scale", self.eps_scale.is_some()),
            ("gam_scale", self.gam_scale.is_some()),
            ("trend_scale", self.trend_scale.is_some()),
            ("beta_precision", self.beta_precision.is_some()),
            ("alpha1_var", self.alpha1_var.is_some()),
        ] {
            if set {
                keys.push(name);
            }
        }
        keys
    }

    pub fn block_prior(spec: Option<ScaleSpec>, default: ScaleSpec) -> CliResult<CcvPrior> {
        let prior = CcvPrior::new(spec.unwrap_or(default).to_prior()?);
        prior.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(prior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 201, lo: None, hi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoldConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub batches: usize,
    /// Fixed truncation; defaults to `initial_atoms`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
}

impl Default for GoldConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            batches: 20,
            atoms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GewekeConfig {
    pub samples: usize,
    pub thin: usize,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self { samples: 2500, thin: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub truncation: TruncationKind,
    /// CSV path, or `galaxy` / `nile` for the bundled data sets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    pub out: String,
    pub seed: u64,
    pub particles: usize,
    pub epsilon: f64,
    pub m_stop: usize,
    pub n_rejuv: usize,
    pub resample_threshold: f64,
    pub max_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_atoms: usize,
    /// Expected number of jumps above the first CPP level.
    pub initial_expected_atoms: f64,
    pub scheme: SchemeKind,
    pub xi: f64,
    pub discrepancy: DiscrepancyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_star: Option<f64>,
    pub snapshot: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub prior: PriorConfig,
    pub grid: GridConfig,
    pub gold: GoldConfig,
    pub geweke: GewekeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let smc = SmcConfig::default();
        Self {
            model: ModelKind::Dpm,
            truncation: TruncationKind::Rsb,
            data: None,
            out: "out".into(),
            seed: smc.seed,
            particles: smc.particles,
            epsilon: smc.epsilon,
            m_stop: smc.m_stop,
            n_rejuv: smc.n_rejuv,
            resample_threshold: smc.resample_threshold,
            max_iters: smc.max_iters,
            burn_in: smc.burn_in,
            thin: smc.thin,
            initial_atoms: 10,
            initial_expected_atoms: 10.0,
            scheme: SchemeKind::OneAtom,
            xi: 0.5,
            discrepancy: DiscrepancyKind::Ess,
            y_star: None,
            snapshot: false,
            threads: None,
            prior: PriorConfig::default(),
            grid: GridConfig::default(),
            gold: GoldConfig::default(),
            geweke: GewekeConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub epsilon: Option<f64>,
    pub threads: Option<usize>,
    pub snapshot: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(particles) = overrides.particles {
            self.particles = particles;
        }
        if let Some(epsilon) = overrides.epsilon {
            self.epsilon = epsilon;
        }
        if let Some(threads) = overrides.threads {
            self.threads = Some(threads);
        }
        self.snapshot |= overrides.snapshot;
    }

    pub fn smc_config(&self) -> CliResult<SmcConfig> {
        let discrepancy = match self.discrepancy {
            DiscrepancyKind::Ess => Discrepancy::Ess,
            DiscrepancyKind::Predictive => Discrepancy::Predictive {
                y_star: self
                    .y_star
                    .ok_or_else(|| CliError::Config("discrepancy = \"predictive\" needs y_star".into()))?,
            },
        };
        let config = SmcConfig {
            particles: self.particles,
            epsilon: self.epsilon,
            m_stop: self.m_stop,
            resample_threshold: self.resample_threshold,
            n_rejuv: self.n_rejuv,
            max_iters: self.max_iters,
            seed: self.seed,
            burn_in: self.burn_in,
            thin: self.thin,
            discrepancy,
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let allowed: &[TruncationKind] = match self.model {
            ModelKind::Dpm => &[TruncationKind::Rsb, TruncationKind::Sb, TruncationKind::Fk],
            ModelKind::Pym => &[TruncationKind::Rsb, TruncationKind::Sb],
            ModelKind::Nrmii => &[TruncationKind::Cpp],
            ModelKind::Lmm | ModelKind::Ts => &[TruncationKind::Rsb],
        };
        if !allowed.contains(&self.truncation) {
            let names: Vec<&str> = allowed.iter().map(|t| t.name()).collect();
            return bad(format!(
                "truncation \"{}\" cannot be used with model \"{}\" (allowed: {})",
                self.truncation.name(),
                self.model.name(),
                names.join(", ")
            ));
        }
        self.smc_config()?;
        if self.y_star.is_some() && self.discrepancy == DiscrepancyKind::Ess {
            return bad("y_star is only used with discrepancy = \"predictive\"".into());
        }
        if self.discrepancy == DiscrepancyKind::Predictive && !self.model.is_mixture() {
            return bad(format!(
                "the predictive discrepancy needs a mixture model, not \"{}\"",
                self.model.name()
            ));
        }
        if self.initial_atoms == 0 {
            return bad("initial_atoms must be at least 1".into());
        }
        if !(self.initial_expected_atoms > 0.0 && self.initial_expected_atoms.is_finite()) {
            return bad(format!("initial_expected_atoms must be positive, got {}", self.initial_expected_atoms));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return bad(format!("xi must be positive, got {}", self.xi));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.model == ModelKind::Lmm && self.data.is_none() {
            return bad("model \"lmm\" needs a data path (grouped CSV with subject, age, height, group)".into());
        }

        let prior = &self.prior;
        if self.model.is_mixture() {
            if let Some(key) = prior.semiparametric_keys().first() {
                return bad(format!("prior.{key} does not apply to model \"{}\"", self.model.name()));
            }
        } else if let Some(key) = prior.mixture_keys().first() {
            return bad(format!("prior.{key} does not apply to model \"{}\"", self.model.name()));
        }
        if prior.discount.is_some() && self.model != ModelKind::Pym {
            return bad("prior.discount applies only to model \"pym\"".into());
        }
        if let Some(d) = prior.discount {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("prior.discount must lie in [0, 1), got {d}"));
            }
        }
        if self.model == ModelKind::Nrmii && prior.fixed_variance.is_some() {
            return bad("prior.fixed_variance is not available for model \"nrmii\"".into());
        }
        for (name, value) in [
            ("mass", prior.mass),
            ("sigma2", prior.sigma2),
            ("alpha", prior.alpha),
            ("beta", prior.beta),
            ("fixed_variance", prior.fixed_variance),
            ("beta_precision", prior.beta_precision),
            ("alpha1_var", prior.alpha1_var),
        ] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("prior.{name} must be positive, got {v}"));
                }
            }
        }
        let centring = [prior.mu0, prior.sigma2, prior.alpha, prior.beta];
        let given = centring.iter().filter(|v| v.is_some()).count();
        if given != 0 && given != 4 {
            return bad("prior.mu0, sigma2, alpha and beta must be given together".into());
        }
        if self.model != ModelKind::Lmm && (prior.gam_scale.is_some() || prior.beta_precision.is_some()) {
            return bad("prior.gam_scale and prior.beta_precision apply only to model \"lmm\"".into());
        }
        if self.model != ModelKind::Ts && (prior.trend_scale.is_some() || prior.alpha1_var.is_some()) {
            return bad("prior.trend_scale and prior.alpha1_var apply only to model \"ts\"".into());
        }
        for spec in [prior.eps_scale, prior.gam_scale, prior.trend_scale].into_iter().flatten() {
            spec.to_prior()?;
        }

        if self.grid.points < 2 {
            return bad(format!("grid.points must be at least 2, got {}", self.grid.points));
        }
        if let (Some(lo), Some(hi)) = (self.grid.lo, self.grid.hi) {
            if !(lo < hi) {
                return bad(format!("grid.lo ({lo}) must be below grid.hi ({hi})"));
            }
        }
        if self.gold.iterations == 0 || self.gold.batches < 2 || self.gold.batches > self.gold.iterations {
            return bad("gold needs iterations >= batches >= 2".into());
        }
        if self.gold.atoms == Some(0) {
            return bad("gold.atoms must be at least 1".into());
        }
        if self.geweke.samples < 2 || self.geweke.thin == 0 {
            return bad("geweke needs samples >= 2 and thin >= 1".into());
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    RunConfig::from_toml(&text)
}
