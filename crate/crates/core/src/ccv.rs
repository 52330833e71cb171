//! Mean-constrained normal mixtures under an RSB-truncated Dirichlet prior:
//! `ε = ε̃ - E[ε̃]` with `ε̃ ~ Σ p_j N(μ_j, aσ²)` and `μ_j ~ N(0, (1-a)σ²)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::adaptive_mh::{mh_step, AdaptiveScale, Transform};
use crate::error::{Error, Result};
use crate::numeric::{normal_log_pdf, uniform_open};
use crate::random_measures::{rsb_weights, sample_beta};

/// `p(x) ∝ (1 + x/A)^{-(ν+1)/2}` on `x > 0`. Proper only for `ν > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldedTPrior {
    pub nu: f64,
    pub a: f64,
}

impl FoldedTPrior {
    pub fn new(nu: f64, a: f64) -> Result<Self> {
        if !(nu > 0.0) || !(a > 0.0) || !nu.is_finite() || !a.is_finite() {
            return Err(Error::Config(format!("folded-t parameters must be positive, got nu={nu}, A={a}")));
        }
        Ok(Self { nu, a })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        -0.5 * (self.nu + 1.0) * (x / self.a).ln_1p()
    }

    pub fn is_proper(&self) -> bool {
        self.nu > 1.0
    }
}

/// Prior on a positive scale parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalePrior {
    FoldedT(FoldedTPrior),
    /// `x^{-shape-1} exp(-scale/x)`
    InverseGamma { shape: f64, scale: f64 },
}

impl ScalePrior {
    pub fn folded_t(nu: f64, a: f64) -> Result<Self> {
        Ok(ScalePrior::FoldedT(FoldedTPrior::new(nu, a)?))
    }

    pub fn inverse_gamma(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0) || !(scale > 0.0) {
            return Err(Error::Config(format!(
                "inverse-gamma parameters must be positive, got shape={shape}, scale={scale}"
            )));
        }
        Ok(ScalePrior::InverseGamma { shape, scale })
    }

    /// Unnormalised log density.
    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            ScalePrior::FoldedT(ft) => ft.log_density(x),
            ScalePrior::InverseGamma { shape, scale } => {
                if !(x > 0.0) {
                    return f64::NEG_INFINITY;
                }
                -(shape + 1.0) * x.ln() - scale / x
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            ScalePrior::FoldedT(ft) => {
                if !ft.is_proper() {
                    return Err(Error::Domain(format!("folded-t prior with nu={} is improper", ft.nu)));
                }
                // Lomax with tail index (ν-1)/2
                let tail = 0.5 * (ft.nu - 1.0);
                Ok(ft.a * (uniform_open(rng).powf(-1.0 / tail) - 1.0))
            }
            ScalePrior::InverseGamma { shape, scale } => {
                let g = Gamma::new(*shape, 1.0 / scale).map_err(|e| Error::Domain(e.to_string()))?;
                Ok(1.0 / g.sample(rng))
            }
        }
    }
}

/// Hyperpriors of one mean-constrained block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcvPrior {
    /// `a ~ Be(smooth.0, smooth.1)`
    pub smooth: (f64, f64),
    pub scale: ScalePrior,
    /// `M ~ Ga(mass_shape, mass_rate)`
    pub mass_shape: f64,
    pub mass_rate: f64,
}

impl CcvPrior {
    pub fn new(scale: ScalePrior) -> Self {
        Self {
            smooth: (1.0, 19.0),
            scale,
            mass_shape: 1.0,
            mass_rate: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a0, b0) = self.smooth;
        if !(a0 > 0.0) || !(b0 > 0.0) || !(self.mass_shape > 0.0) || !(self.mass_rate > 0.0) {
            return Err(Error::Config("block hyperparameters must be positive".into()));
        }
        Ok(())
    }

    pub fn smooth_log_density(&self, a: f64) -> f64 {
        if !(a > 0.0 && a < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.smooth.0 - 1.0) * a.ln() + (self.smooth.1 - 1.0) * (-a).ln_1p()
    }

    pub fn mass_log_density(&self, m: f64) -> f64 {
        if !(m > 0.0) {
            return f64::NEG_INFINITY;
        }
        (self.mass_shape - 1.0) * m.ln() - self.mass_rate * m
    }

    pub fn sample_mass<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.mass_shape, 1.0 / self.mass_rate)
            .expect("validated")
            .sample(rng)
    }

    pub fn sample_smooth<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_beta(self.smooth.0, self.smooth.1, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcvBlock {
    pub sticks: Vec<f64>,
    pub means: Vec<f64>,
    pub a: f64,
    pub var: f64,
    pub mass: f64,
    pub stick_scales: Vec<AdaptiveScale>,
    pub mean_scales: Vec<AdaptiveScale>,
    pub a_scale: AdaptiveScale,
    pub var_scale: AdaptiveScale,
}

impl CcvBlock {
    pub fn new(sticks: Vec<f64>, means: Vec<f64>, a: f64, var: f64, mass: f64) -> Result<Self> {
        if sticks.len() != means.len() || sticks.is_empty() {
            return Err(Error::Domain("sticks and means must be non-empty and of equal length".into()));
        }
        if !(a > 0.0 && a < 1.0) || !(var > 0.0) || !(mass > 0.0) {
            return Err(Error::Domain(format!("invalid block parameters a={a}, var={var}, M={mass}")));
        }
        let n = sticks.len();
        Ok(Self {
            sticks,
            means,
            a,
            var,
            mass,
            stick_scales: vec![AdaptiveScale::default(); n],
            mean_scales: vec![AdaptiveScale::default(); n],
            a_scale: AdaptiveScale::default(),
            var_scale: AdaptiveScale::default(),
        })
    }

    /// Draws `n` sticks and means given `a`, `σ²` and `M`.
    pub fn from_hyper<R: Rng + ?Sized>(n: usize, a: f64, var: f64, mass: f64, rng: &mut R) -> Result<Self> {
        let sticks = (0..n).map(|_| sample_beta(1.0, mass, rng)).collect();
        let sd = ((1.0 - a) * var).sqrt();
        let means = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect();
        Self::new(sticks, means, a, var, mass)
    }

    pub fn sample_prior<R: Rng + ?Sized>(n: usize, prior: &CcvPrior, rng: &mut R) -> Result<Self> {
        let a = prior.sample_smooth(rng);
        let var = prior.scale.sample(rng)?;
        let mass = prior.sample_mass(rng);
        Self::from_hyper(n, a, var, mass, rng)
    }

    pub fn len(&self) -> usize {
        self.sticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sticks.is_empty()
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        rsb_weights(&self.sticks)
    }

    pub fn kernel_var(&self) -> f64 {
        self.a * self.var
    }

    /// Atom means shifted by `-Σ p_j μ_j`.
    pub fn centred_means(&self, weights: &[f64]) -> Vec<f64> {
        let centre: f64 = weights.iter().zip(&self.means).map(|(p, m)| p * m).sum();
        self.means.iter().map(|m| m - centre).collect()
    }

    /// Density of the mean-constrained variable.
    pub fn density(&self, x: f64) -> Result<f64> {
        let w = self.weights()?;
        let c = self.centred_means(&w);
        let v = self.kernel_var();
        Ok(w.iter().zip(&c).map(|(p, m)| p * normal_log_pdf(x, *m, v).exp()).sum())
    }

    /// `Σ_j N(μ_j | 0, (1-a)σ²)` in logs.
    pub fn means_log_prior(&self, a: f64, var: f64) -> f64 {
        let v = (1.0 - a) * var;
        self.means.iter().map(|m| normal_log_pdf(*m, 0.0, v)).sum()
    }

    /// Appends one stick and one mean drawn from their priors.
    pub fn extend<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.sticks.push(sample_beta(1.0, self.mass, rng));
        let z: f64 = StandardNormal.sample(rng);
        self.means.push(((1.0 - self.a) * self.var).sqrt() * z);
        self.stick_scales.push(AdaptiveScale::default());
        self.mean_scales.push(AdaptiveScale::default());
    }

    /// `(1 - Π_old) / (1 - Π_old + V_new Π_old)` for the last stick.
    pub fn retain_probability(&self) -> f64 {
        let n = self.sticks.len();
        let old: f64 = self.sticks[..n - 1].iter().map(|v| (-v).ln_1p()).sum::<f64>().exp();
        let raw_new = self.sticks[n - 1] * old;
        let kept = 1.0 - old;
        if kept + raw_new <= 0.0 {
            return 1.0;
        }
        kept / (kept + raw_new)
    }

    /// Target of `μ_j`: `log f + ln N(μ_j | 0, (1-a)σ²)`.
    pub fn mean_log_target<F: Fn(&CcvBlock) -> f64>(&self, j: usize, m: f64, log_f: &F) -> f64 {
        let mut trial = self.clone();
        trial.means[j] = m;
        log_f(&trial) + normal_log_pdf(m, 0.0, (1.0 - self.a) * self.var)
    }

    /// Target of `V_j`: `log f + (M-1) ln(1-V_j) + Σ_l n_l ln p_l`.
    pub fn stick_log_target<F: Fn(&CcvBlock) -> f64>(&self, j: usize, v: f64, log_f: &F, counts: &[usize]) -> f64 {
        if !(v > 0.0 && v < 1.0) {
            return f64::NEG_INFINITY;
        }
        let mut trial = self.clone();
        trial.sticks[j] = v;
        let alloc = allocation_log_prior(&trial.sticks, counts);
        log_f(&trial) + (self.mass - 1.0) * (-v).ln_1p() + alloc
    }

    pub fn update_means<F, R>(&mut self, log_f: &F, rng: &mut R) -> Result<()>
    where
        F: Fn(&CcvBlock) -> f64,
        R: Rng + ?Sized,
    {
        for j in 0..self.len() {
            let mut scale = self.mean_scales[j];
            let out = mh_step(self.means[j], |m| self.mean_log_target(j, m, log_f), Transform::Identity, &mut scale, rng)?;
            self.means[j] = out.value;
            self.mean_scales[j] = scale;
        }
        Ok(())
    }

    pub fn update_sticks<F, R>(&mut self, log_f: &F, counts: &[usize], rng: &mut R) -> Result<()>
    where
        F: Fn(&CcvBlock) -> f64,
        R: Rng + ?Sized,
    {
        for j in 0..self.len() {
            let mut scale = self.stick_scales[j];
            let out = mh_step(
                self.sticks[j],
                |v| self.stick_log_target(j, v, log_f, counts),
                Transform::Logit,
                &mut scale,
                rng,
            )?;
            self.sticks[j] = out.value;
            self.stick_scales[j] = scale;
        }
        Ok(())
    }

    /// `M ~ Ga(shape + N, rate - Σ ln(1 - V_j))`.
    pub fn update_mass<R: Rng + ?Sized>(&mut self, prior: &CcvPrior, rng: &mut R) -> Result<()> {
        let (shape, rate) = self.mass_conditional(prior);
        self.mass = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Numeric(format!("mass conditional: {e}")))?
            .sample(rng);
        Ok(())
    }

    pub fn mass_conditional(&self, prior: &CcvPrior) -> (f64, f64) {
        let log_rest: f64 = self.sticks.iter().map(|v| (-v).ln_1p()).sum();
        (prior.mass_shape + self.len() as f64, prior.mass_rate - log_rest)
    }

    /// Target of `a`: `log f + Σ_j ln N(μ_j | 0, (1-a)σ²) + ln Be(a)`.
    pub fn a_log_target<F: Fn(&CcvBlock) -> f64>(&self, a: f64, log_f: &F, prior: &CcvPrior) -> f64 {
        if !(a > 0.0 && a < 1.0) {
            return f64::NEG_INFINITY;
        }
        let mut trial = self.clone();
        trial.a = a;
        log_f(&trial) + trial.means_log_prior(a, self.var) + prior.smooth_log_density(a)
    }

    /// Target of `σ²`: `log f + Σ_j ln N(μ_j | 0, (1-a)σ²) + ln p(σ²)`.
    pub fn var_log_target<F: Fn(&CcvBlock) -> f64>(&self, var: f64, log_f: &F, prior: &CcvPrior) -> f64 {
        if !(var > 0.0) {
            return f64::NEG_INFINITY;
        }
        let mut trial = self.clone();
        trial.var = var;
        log_f(&trial) + trial.means_log_prior(self.a, var) + prior.scale.log_density(var)
    }

    pub fn update_a<F, R>(&mut self, log_f: &F, prior: &CcvPrior, rng: &mut R) -> Result<()>
    where
        F: Fn(&CcvBlock) -> f64,
        R: Rng + ?Sized,
    {
        let mut scale = self.a_scale;
        let out = mh_step(self.a, |a| self.a_log_target(a, log_f, prior), Transform::Logit, &mut scale, rng)?;
        self.a = out.value;
        self.a_scale = scale;
        Ok(())
    }

    pub fn update_var<F, R>(&mut self, log_f: &F, prior: &CcvPrior, rng: &mut R) -> Result<()>
    where
        F: Fn(&CcvBlock) -> f64,
        R: Rng + ?Sized,
    {
        let mut scale = self.var_scale;
        let out = mh_step(self.var, |v| self.var_log_target(v, log_f, prior), Transform::Log, &mut scale, rng)?;
        self.var = out.value;
        self.var_scale = scale;
        Ok(())
    }
}

/// `Σ_j n_j ln p_j` under RSB weights; `-∞` if the weights are undefined.
pub fn allocation_log_prior(sticks: &[f64], counts: &[usize]) -> f64 {
    if counts.iter().all(|&c| c == 0) {
        return 0.0;
    }
    match rsb_weights(sticks) {
        Ok(w) => counts
            .iter()
            .zip(&w)
            .filter(|(c, _)| **c > 0)
            .map(|(c, p)| *c as f64 * p.ln())
            .sum(),
        Err(_) => f64::NEG_INFINITY,
    }
}
