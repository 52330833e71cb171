//! Nonparametric time series `y_t = α_t + ε_t`: a random-walk trend with
//! DP-mixture increments (Pólya urn) plus a stationary first-order process
//! whose transition is a ratio of bivariate normal mixtures.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::adaptive_mh::{mh_step, AdaptiveScale, Transform};
use crate::ccv::{CcvBlock, CcvPrior, ScalePrior};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, normal_log_pdf, sample_log_categorical, weighted_quantile, LN_2PI};
use crate::smc::{ParticleSystem, SmcModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TsData {
    y: Vec<f64>,
}

impl TsData {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() < 3 {
            return Err(Error::Data(format!("series needs at least 3 observations, got {}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("series contains a non-finite value".into()));
        }
        Ok(Self { y })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsPriors {
    pub eps: CcvPrior,
    /// `a_α`, `σ²_α` and `M_α` of the increment mixture
    pub trend: CcvPrior,
    /// `α_1 ~ N(0, σ²_0)`
    pub alpha1_var: f64,
}

impl Default for TsPriors {
    fn default() -> Self {
        Self {
            eps: CcvPrior::new(ScalePrior::folded_t(1.0, 1.0).expect("valid")),
            trend: CcvPrior::new(ScalePrior::folded_t(1.0, 0.01).expect("valid")),
            alpha1_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsConfig {
    pub initial_atoms: usize,
}

impl Default for TsConfig {
    fn default() -> Self {
        Self { initial_atoms: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsState {
    pub alpha: Vec<f64>,
    pub alpha_scales: Vec<AdaptiveScale>,
    pub eps: CcvBlock,
    pub rho: Vec<f64>,
    pub rho_scales: Vec<AdaptiveScale>,
    /// cluster of `ν_t = α_t - α_{t-1}` for `t = 2..T` (entry `t - 2`)
    pub s_alpha: Vec<usize>,
    pub mu_alpha: Vec<f64>,
    pub a_alpha: f64,
    pub var_alpha: f64,
    pub mass_alpha: f64,
    pub a_alpha_scale: AdaptiveScale,
    pub var_alpha_scale: AdaptiveScale,
    pub mass_alpha_scale: AdaptiveScale,
}

impl TsState {
    pub fn truncation(&self) -> usize {
        self.eps.len()
    }

    pub fn clusters(&self) -> usize {
        self.mu_alpha.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut c = vec![0; self.mu_alpha.len()];
        for &s in &self.s_alpha {
            c[s] += 1;
        }
        c
    }

    pub fn increments(&self) -> Vec<f64> {
        self.alpha.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Sum over `t` of `(ν_t - μ_{s_t})²`.
    pub fn increment_sum_squares(&self) -> f64 {
        self.increments()
            .iter()
            .zip(&self.s_alpha)
            .map(|(d, &s)| (d - self.mu_alpha[s]).powi(2))
            .sum()
    }
}

/// Per-block quantities shared by every evaluation of the stationary part.
struct Kernel {
    log_w: Vec<f64>,
    centred: Vec<f64>,
    var: f64,
}

impl Kernel {
    fn new(block: &CcvBlock) -> Option<Self> {
        let w = block.weights().ok()?;
        let centred = block.centred_means(&w);
        Some(Self {
            log_w: w.iter().map(|p| p.ln()).collect(),
            centred,
            var: block.kernel_var(),
        })
    }

    /// `ln Σ_j p_j N(e | m_j, A)`.
    fn log_marginal(&self, e: f64) -> f64 {
        let terms: Vec<f64> = self
            .log_w
            .iter()
            .zip(&self.centred)
            .map(|(lw, m)| lw - 0.5 * (e - m).powi(2) / self.var)
            .collect();
        log_sum_exp(&terms) - 0.5 * (LN_2PI + self.var.ln())
    }

    /// `ln Σ_j p_j N₂((prev, cur) | (m_j, m_j), A [[1, ρ_j], [ρ_j, 1]])`.
    fn log_joint(&self, rho: &[f64], prev: f64, cur: f64) -> f64 {
        let terms: Vec<f64> = self
            .log_w
            .iter()
            .zip(&self.centred)
            .zip(rho)
            .map(|((lw, m), r)| {
                let (b1, b0) = (cur - m, prev - m);
                let one_m = 1.0 - r * r;
                lw - 0.5 * one_m.ln() - 0.5 * (b1 * b1 + b0 * b0 - 2.0 * r * b1 * b0) / (self.var * one_m)
            })
            .collect();
        log_sum_exp(&terms) - LN_2PI - self.var.ln()
    }
}

/// `p(ε_t | ε_{t-1})`.
pub fn transition_density(block: &CcvBlock, rho: &[f64], prev: f64, cur: f64) -> Result<f64> {
    let k = Kernel::new(block).ok_or_else(|| Error::Domain("undefined mixture weights".into()))?;
    Ok((k.log_joint(rho, prev, cur) - k.log_marginal(prev)).exp())
}

/// Stationary density `Σ p_j N(μ_j - μ̄, aσ²)`.
pub fn stationary_density(block: &CcvBlock, x: f64) -> Result<f64> {
    block.density(x)
}

#[derive(Debug, Clone)]
pub struct TsModel {
    pub data: TsData,
    pub priors: TsPriors,
    pub config: TsConfig,
}

impl TsModel {
    pub fn new(data: TsData, priors: TsPriors, config: TsConfig) -> Result<Self> {
        priors.eps.validate()?;
        priors.trend.validate()?;
        if !(priors.alpha1_var > 0.0) {
            return Err(Error::Config("initial trend variance must be positive".into()));
        }
        if config.initial_atoms == 0 {
            return Err(Error::Config("initial truncation must be at least 1".into()));
        }
        Ok(Self { data, priors, config })
    }

    pub fn check_state(&self, state: &TsState) -> Result<()> {
        let t = self.data.len();
        if state.alpha.len() != t || state.s_alpha.len() != t - 1 || state.alpha_scales.len() != t {
            return Err(Error::Domain("trend dimensions do not match the series".into()));
        }
        if state.rho.len() != state.eps.len() || state.rho_scales.len() != state.eps.len() {
            return Err(Error::Domain("one correlation per atom required".into()));
        }
        if state.rho.iter().any(|r| !(*r > -1.0 && *r < 1.0)) {
            return Err(Error::Domain("correlation outside (-1, 1)".into()));
        }
        let sizes = state.cluster_sizes();
        if sizes.iter().any(|&c| c == 0) || state.s_alpha.iter().any(|&s| s >= state.mu_alpha.len()) {
            return Err(Error::Domain("trend clusters are not compact".into()));
        }
        Ok(())
    }

    /// Log-likelihood of `y` given the trend, with the stationary mixture
    /// allocations summed out; `-∞` if the weights are undefined.
    pub fn log_f(&self, alpha: &[f64], eps: &CcvBlock, rho: &[f64]) -> f64 {
        let Some(k) = Kernel::new(eps) else {
            return f64::NEG_INFINITY;
        };
        let e: Vec<f64> = self.data.y.iter().zip(alpha).map(|(y, a)| y - a).collect();
        let mut total = k.log_marginal(e[0]);
        for t in 1..e.len() {
            total += k.log_joint(rho, e[t - 1], e[t]) - k.log_marginal(e[t - 1]);
        }
        total
    }

    pub fn collapsed_log_lik(&self, state: &TsState) -> Result<f64> {
        let v = self.log_f(&state.alpha, &state.eps, &state.rho);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("collapsed log-likelihood is {v}")));
        }
        Ok(v)
    }

    /// Terms of `log f` that involve `α_t` (0-based `t`).
    fn local_log_f(&self, k: &Kernel, rho: &[f64], alpha: &[f64], t: usize, value: f64) -> f64 {
        let y = &self.data.y;
        let n = y.len();
        let e = |s: usize| if s == t { y[s] - value } else { y[s] - alpha[s] };
        let mut total = 0.0;
        if t >= 1 {
            total += k.log_joint(rho, e(t - 1), e(t)) - k.log_marginal(e(t - 1));
        }
        if t + 1 < n {
            total += k.log_joint(rho, e(t), e(t + 1)) - k.log_marginal(e(t));
        }
        if t == 0 {
            total += k.log_marginal(e(0));
        }
        total
    }

    /// Terms of the trend prior that involve `α_t`.
    fn local_trend(&self, state: &TsState, t: usize, value: f64) -> f64 {
        let v = state.a_alpha * state.var_alpha;
        let n = state.alpha.len();
        let mut total = 0.0;
        if t == 0 {
            total += normal_log_pdf(value, 0.0, self.priors.alpha1_var);
        } else {
            let d = value - state.alpha[t - 1] - state.mu_alpha[state.s_alpha[t - 1]];
            total -= 0.5 * d * d / v;
        }
        if t + 1 < n {
            let d = state.alpha[t + 1] - value - state.mu_alpha[state.s_alpha[t]];
            total -= 0.5 * d * d / v;
        }
        total
    }

    /// Full-conditional log target of `α_t` up to a constant.
    pub fn alpha_log_target(&self, state: &TsState, t: usize, value: f64) -> Result<f64> {
        let k = Kernel::new(&state.eps).ok_or_else(|| Error::Domain("undefined mixture weights".into()))?;
        Ok(self.local_log_f(&k, &state.rho, &state.alpha, t, value) + self.local_trend(state, t, value))
    }

    /// Target of `ρ_j` under its uniform prior.
    pub fn rho_log_target(&self, alpha: &[f64], eps: &CcvBlock, rho: &[f64], j: usize, r: f64) -> f64 {
        if !(r > -1.0 && r < 1.0) {
            return f64::NEG_INFINITY;
        }
        let mut trial = rho.to_vec();
        trial[j] = r;
        self.log_f(alpha, eps, &trial)
    }

    pub fn update_stationary<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) -> Result<()> {
        let TsState { alpha, eps, rho, rho_scales, .. } = state;
        {
            let log_f = |b: &CcvBlock| self.log_f(alpha, b, rho);
            eps.update_means(&log_f, rng)?;
            eps.update_sticks(&log_f, &[], rng)?;
        }
        for j in 0..rho.len() {
            let mut scale = rho_scales[j];
            let base = rho.clone();
            let target = |r: f64| self.rho_log_target(alpha, eps, &base, j, r);
            let out = mh_step(rho[j], target, Transform::FisherRho, &mut scale, rng)?;
            rho[j] = out.value;
            rho_scales[j] = scale;
        }
        let log_f = |b: &CcvBlock| self.log_f(alpha, b, rho);
        eps.update_mass(&self.priors.eps, rng)?;
        eps.update_a(&log_f, &self.priors.eps, rng)?;
        eps.update_var(&log_f, &self.priors.eps, rng)
    }

    pub fn update_alpha<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) -> Result<()> {
        let k = Kernel::new(&state.eps).ok_or_else(|| Error::Domain("undefined mixture weights".into()))?;
        for t in 0..state.alpha.len() {
            let mut scale = state.alpha_scales[t];
            let target = |v: f64| self.local_log_f(&k, &state.rho, &state.alpha, t, v) + self.local_trend(state, t, v);
            let out = mh_step(state.alpha[t], target, Transform::Identity, &mut scale, rng)?;
            state.alpha[t] = out.value;
            state.alpha_scales[t] = scale;
        }
        Ok(())
    }

    /// Log-weights of the Pólya-urn options for increment `idx` given the
    /// other allocations: existing clusters in order, then a new one.
    pub fn urn_log_weights(state: &TsState, sizes: &[usize], delta: f64) -> Vec<f64> {
        let (a, v) = (state.a_alpha, state.var_alpha);
        let mut out: Vec<f64> = sizes
            .iter()
            .zip(&state.mu_alpha)
            .map(|(&n, m)| {
                if n == 0 {
                    f64::NEG_INFINITY
                } else {
                    (n as f64).ln() - 0.5 * a.ln() - 0.5 * (delta - m).powi(2) / (a * v)
                }
            })
            .collect();
        out.push(state.mass_alpha.ln() - 0.5 * delta * delta / v);
        out
    }

    pub fn update_allocations<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) -> Result<()> {
        let mut sizes = state.cluster_sizes();
        for idx in 0..state.s_alpha.len() {
            let delta = state.alpha[idx + 1] - state.alpha[idx];
            let c = state.s_alpha[idx];
            sizes[c] -= 1;
            if sizes[c] == 0 {
                let last = sizes.len() - 1;
                sizes.swap_remove(c);
                state.mu_alpha.swap_remove(c);
                for s in state.s_alpha.iter_mut() {
                    if *s == last {
                        *s = c;
                    }
                }
            }
            let lw = Self::urn_log_weights(state, &sizes, delta);
            let choice = sample_log_categorical(&lw, rng)?;
            if choice == sizes.len() {
                let (a, v) = (state.a_alpha, state.var_alpha);
                let z: f64 = StandardNormal.sample(rng);
                state.mu_alpha.push(delta * (1.0 - a) + (a * (1.0 - a) * v).sqrt() * z);
                sizes.push(1);
            } else {
                sizes[choice] += 1;
            }
            state.s_alpha[idx] = choice;
        }
        Ok(())
    }

    /// `(mean, var)` of the conjugate update of `μ^α_j`.
    pub fn mu_alpha_conditional(state: &TsState, j: usize) -> (f64, f64) {
        let a = state.a_alpha;
        let (mut n, mut sum) = (0.0, 0.0);
        for (d, &s) in state.increments().iter().zip(&state.s_alpha) {
            if s == j {
                n += 1.0;
                sum += d;
            }
        }
        let denom = n / a + 1.0 / (1.0 - a);
        (sum / a / denom, state.var_alpha / denom)
    }

    pub fn update_mu_alpha<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) {
        for j in 0..state.mu_alpha.len() {
            let (m, v) = Self::mu_alpha_conditional(state, j);
            let z: f64 = StandardNormal.sample(rng);
            state.mu_alpha[j] = m + v.sqrt() * z;
        }
    }

    pub fn a_alpha_log_target(&self, state: &TsState, a: f64) -> f64 {
        if !(a > 0.0 && a < 1.0) {
            return f64::NEG_INFINITY;
        }
        let v = state.var_alpha;
        let m = state.s_alpha.len() as f64;
        let ss = state.increment_sum_squares();
        let mu2: f64 = state.mu_alpha.iter().map(|m| m * m).sum();
        let k = state.clusters() as f64;
        -0.5 * m * a.ln() - 0.5 * k * (-a).ln_1p() - 0.5 * ss / (a * v) - 0.5 * mu2 / ((1.0 - a) * v)
            + self.priors.trend.smooth_log_density(a)
    }

    pub fn var_alpha_log_target(&self, state: &TsState, v: f64) -> f64 {
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        let a = state.a_alpha;
        let m = state.s_alpha.len() as f64;
        let ss = state.increment_sum_squares();
        let mu2: f64 = state.mu_alpha.iter().map(|m| m * m).sum();
        let k = state.clusters() as f64;
        -0.5 * (m + k) * v.ln() - 0.5 * ss / (a * v) - 0.5 * mu2 / ((1.0 - a) * v)
            + self.priors.trend.scale.log_density(v)
    }

    /// `ln Γ(M) - ln Γ(M + T - 1) + K ln M + ln p(M)`.
    pub fn mass_alpha_log_target(&self, state: &TsState, mass: f64) -> f64 {
        if !(mass > 0.0) {
            return f64::NEG_INFINITY;
        }
        let m = state.s_alpha.len() as f64;
        ln_gamma(mass) - ln_gamma(mass + m) + state.clusters() as f64 * mass.ln()
            + self.priors.trend.mass_log_density(mass)
    }

    pub fn update_trend_hyper<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) -> Result<()> {
        let mut scale = state.a_alpha_scale;
        let out = mh_step(state.a_alpha, |a| self.a_alpha_log_target(state, a), Transform::Logit, &mut scale, rng)?;
        state.a_alpha = out.value;
        state.a_alpha_scale = scale;

        let mut scale = state.var_alpha_scale;
        let out = mh_step(state.var_alpha, |v| self.var_alpha_log_target(state, v), Transform::Log, &mut scale, rng)?;
        state.var_alpha = out.value;
        state.var_alpha_scale = scale;

        let mut scale = state.mass_alpha_scale;
        let out = mh_step(state.mass_alpha, |m| self.mass_alpha_log_target(state, m), Transform::Log, &mut scale, rng)?;
        state.mass_alpha = out.value;
        state.mass_alpha_scale = scale;
        Ok(())
    }

    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) -> Result<()> {
        self.update_stationary(state, rng)?;
        self.update_alpha(state, rng)?;
        self.update_allocations(state, rng)?;
        self.update_mu_alpha(state, rng);
        self.update_trend_hyper(state, rng)
    }

    /// Appends `V ~ Be(1, M_ε)`, `μ ~ N(0, (1-a_ε)σ²_ε)`, `ρ ~ U(-1, 1)`.
    pub fn extend_state<R: Rng + ?Sized>(&self, state: &mut TsState, rng: &mut R) {
        state.eps.extend(rng);
        state.rho.push(rng.random_range(-1.0..1.0));
        state.rho_scales.push(AdaptiveScale::default());
    }

    fn assemble(alpha: Vec<f64>, eps: CcvBlock, rho: Vec<f64>, s_alpha: Vec<usize>, mu_alpha: Vec<f64>, a_alpha: f64, var_alpha: f64, mass_alpha: f64) -> TsState {
        TsState {
            alpha_scales: vec![AdaptiveScale::default(); alpha.len()],
            rho_scales: vec![AdaptiveScale::default(); rho.len()],
            alpha,
            eps,
            rho,
            s_alpha,
            mu_alpha,
            a_alpha,
            var_alpha,
            mass_alpha,
            a_alpha_scale: AdaptiveScale::default(),
            var_alpha_scale: AdaptiveScale::default(),
            mass_alpha_scale: AdaptiveScale::default(),
        }
    }

    /// A joint draw of every parameter from the prior, the trend increments
    /// through the Pólya urn.
    pub fn prior_state<R: Rng + ?Sized>(&self, n_atoms: usize, rng: &mut R) -> Result<TsState> {
        let eps = CcvBlock::sample_prior(n_atoms, &self.priors.eps, rng)?;
        let rho = (0..n_atoms).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tp = &self.priors.trend;
        let a = tp.sample_smooth(rng);
        let v = tp.scale.sample(rng)?;
        let mass = tp.sample_mass(rng);
        let t = self.data.len();
        let mut alpha = Vec::with_capacity(t);
        let z: f64 = StandardNormal.sample(rng);
        alpha.push(self.priors.alpha1_var.sqrt() * z);
        let (mut s_alpha, mut mu_alpha, mut sizes) = (Vec::new(), Vec::new(), Vec::<usize>::new());
        for i in 0..t - 1 {
            let u = rng.random::<f64>() * (i as f64 + mass);
            let mut acc = 0.0;
            let mut choice = sizes.len();
            for (j, &n) in sizes.iter().enumerate() {
                acc += n as f64;
                if u < acc {
                    choice = j;
                    break;
                }
            }
            if choice == sizes.len() {
                let z: f64 = StandardNormal.sample(rng);
                mu_alpha.push(((1.0 - a) * v).sqrt() * z);
                sizes.push(0);
            }
            sizes[choice] += 1;
            s_alpha.push(choice);
            let z: f64 = StandardNormal.sample(rng);
            let next = alpha[i] + mu_alpha[choice] + (a * v).sqrt() * z;
            alpha.push(next);
        }
        Ok(Self::assemble(alpha, eps, rho, s_alpha, mu_alpha, a, v, mass))
    }

    /// A data-informed starting point for the initial MCMC chain.
    pub fn starting_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TsState> {
        let y = &self.data.y;
        let t = y.len();
        let half = 5usize;
        let alpha: Vec<f64> = (0..t)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(t);
                y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let resid: Vec<f64> = y.iter().zip(&alpha).map(|(a, b)| a - b).collect();
        let var_eps = sample_var(&resid).max(1e-3);
        let inc: Vec<f64> = alpha.windows(2).map(|w| w[1] - w[0]).collect();
        let a_alpha = 0.05;
        let var_alpha = (sample_var(&inc) / a_alpha).max(1e-4);
        let mean_inc = inc.iter().sum::<f64>() / inc.len() as f64;
        let n = self.config.initial_atoms;
        let eps = CcvBlock::from_hyper(n, 0.5, 2.0 * var_eps, 1.0, rng)?;
        Ok(Self::assemble(alpha, eps, vec![0.0; n], vec![0; t - 1], vec![mean_inc], a_alpha, var_alpha, 1.0))
    }

    /// A series drawn from the model given every parameter.
    pub fn simulate_series<R: Rng + ?Sized>(&self, state: &TsState, rng: &mut R) -> Result<TsData> {
        let w = state.eps.weights()?;
        let m = state.eps.centred_means(&w);
        let var = state.eps.kernel_var();
        let log_w: Vec<f64> = w.iter().map(|p| p.ln()).collect();
        let mut e = Vec::with_capacity(state.alpha.len());
        let j = sample_log_categorical(&log_w, rng)?;
        let z: f64 = StandardNormal.sample(rng);
        e.push(m[j] + var.sqrt() * z);
        for t in 1..state.alpha.len() {
            let prev = e[t - 1];
            let lw: Vec<f64> = log_w.iter().zip(&m).map(|(l, mj)| l - 0.5 * (prev - mj).powi(2) / var).collect();
            let j = sample_log_categorical(&lw, rng)?;
            let r = state.rho[j];
            let z: f64 = StandardNormal.sample(rng);
            e.push(m[j] + r * (prev - m[j]) + (var * (1.0 - r * r)).sqrt() * z);
        }
        TsData::new(state.alpha.iter().zip(&e).map(|(a, x)| a + x).collect())
    }
}

fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 1.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

impl SmcModel for TsModel {
    type State = TsState;

    fn initial_state(&self, rng: &mut dyn RngCore) -> Result<TsState> {
        self.starting_state(rng)
    }

    fn mcmc_sweep(&self, state: &mut TsState, rng: &mut dyn RngCore) -> Result<()> {
        self.sweep(state, rng)
    }

    fn extend(&self, state: &mut TsState, rng: &mut dyn RngCore) -> Result<f64> {
        self.extend_state(state, rng);
        Ok(0.0)
    }

    fn log_likelihood(&self, state: &TsState) -> f64 {
        self.collapsed_log_lik(state).unwrap_or(f64::NEG_INFINITY)
    }

    fn truncation_size(&self, state: &TsState) -> usize {
        state.truncation()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsSummary {
    pub alpha_q025: Vec<f64>,
    pub alpha_median: Vec<f64>,
    pub alpha_q975: Vec<f64>,
    /// posterior predictive density of a new trend increment
    pub nu_density: Vec<f64>,
    pub eps_density: Vec<f64>,
    /// `transition[i][j] = p(ε_t = grid[j] | ε_{t-1} = grid[i])`
    pub transition: Vec<Vec<f64>>,
}

/// Predictive density of the next increment from the urn.
pub fn increment_density(state: &TsState, x: f64) -> f64 {
    let m = state.s_alpha.len() as f64;
    let denom = m + state.mass_alpha;
    let kv = state.a_alpha * state.var_alpha;
    let mut total = state.mass_alpha / denom * normal_log_pdf(x, 0.0, state.var_alpha).exp();
    for (n, mu) in state.cluster_sizes().iter().zip(&state.mu_alpha) {
        total += *n as f64 / denom * normal_log_pdf(x, *mu, kv).exp();
    }
    total
}

pub fn ts_summaries(system: &ParticleSystem<TsState>, nu_grid: &[f64], eps_grid: &[f64]) -> Result<TsSummary> {
    let weights = system.normalized_weights()?;
    let t = system.particles.first().map_or(0, |p| p.state.alpha.len());
    let mut alpha_q025 = Vec::with_capacity(t);
    let mut alpha_median = Vec::with_capacity(t);
    let mut alpha_q975 = Vec::with_capacity(t);
    for i in 0..t {
        let values: Vec<f64> = system.particles.iter().map(|p| p.state.alpha[i]).collect();
        alpha_q025.push(weighted_quantile(&values, &weights, 0.025)?);
        alpha_median.push(weighted_quantile(&values, &weights, 0.5)?);
        alpha_q975.push(weighted_quantile(&values, &weights, 0.975)?);
    }
    let mut nu_density = vec![0.0; nu_grid.len()];
    let mut eps_density = vec![0.0; eps_grid.len()];
    let mut transition = vec![vec![0.0; eps_grid.len()]; eps_grid.len()];
    for (p, w) in system.particles.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let s = &p.state;
        for (o, &x) in nu_density.iter_mut().zip(nu_grid) {
            *o += w * increment_density(s, x);
        }
        for (o, &x) in eps_density.iter_mut().zip(eps_grid) {
            *o += w * stationary_density(&s.eps, x)?;
        }
        let k = Kernel::new(&s.eps).ok_or_else(|| Error::Domain("undefined mixture weights".into()))?;
        for (row, &prev) in transition.iter_mut().zip(eps_grid) {
            let lm = k.log_marginal(prev);
            for (o, &cur) in row.iter_mut().zip(eps_grid) {
                *o += w * (k.log_joint(&s.rho, prev, cur) - lm).exp();
            }
        }
    }
    Ok(TsSummary {
        alpha_q025,
        alpha_median,
        alpha_q975,
        nu_density,
        eps_density,
        transition,
    })
}
