//! Adaptive random-walk Metropolis-Hastings with per-parameter log-variance
//! adaptation (Atchadé-Rosenthal style, diminishing step `i^{-c}`).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::softplus;

/// Adaptation state of one scalar parameter's random-walk proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveScale {
    pub log_var: f64,
    pub iteration: u64,
    pub decay: f64,
    pub target: f64,
    pub clamp: f64,
}

impl Default for AdaptiveScale {
    fn default() -> Self {
        Self {
            log_var: 0.0,
            iteration: 1,
            decay: 0.55,
            target: 0.3,
            clamp: 50.0,
        }
    }
}

impl AdaptiveScale {
    pub fn new(decay: f64, target: f64) -> Result<Self> {
        if !(decay > 0.5 && decay <= 1.0) {
            return Err(Error::Config(format!("adaptation exponent must lie in (0.5, 1], got {decay}")));
        }
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::Config(format!("target acceptance must lie in (0, 1), got {target}")));
        }
        Ok(Self { decay, target, ..Self::default() })
    }

    pub fn with_log_var(mut self, log_var: f64) -> Self {
        self.log_var = log_var.clamp(-self.clamp, self.clamp);
        self
    }

    pub fn proposal_sd(&self) -> f64 {
        (0.5 * self.log_var).exp()
    }

    /// `log σ² ← ρ(log σ² + i^{-c}(α_i - α̂))`, `i ← i + 1`.
    pub fn adapt_step(&mut self, accept_prob: f64) {
        let gain = (self.iteration as f64).powf(-self.decay);
        let updated = self.log_var + gain * (accept_prob - self.target);
        self.log_var = updated.clamp(-self.clamp, self.clamp);
        self.iteration += 1;
    }
}

/// Reparametrisation in which the random walk operates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// positive parameters, `u = ln x`
    Log,
    /// parameters in (0, 1), `u = ln x - ln(1 - x)`
    Logit,
    /// correlations in (-1, 1), `u = ln(1 + ρ) - ln(1 - ρ)`
    FisherRho,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => x.ln() - (-x).ln_1p(),
            Transform::FisherRho => x.ln_1p() - (-x).ln_1p(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
            Transform::FisherRho => (0.5 * u).tanh(),
        }
    }

    /// `ln |dx/du|` at `u`.
    pub fn log_jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
            Transform::Logit => -softplus(-u) - softplus(u),
            // dρ/du = (1 - ρ²)/2 = 2 e^u / (1 + e^u)²
            Transform::FisherRho => std::f64::consts::LN_2 + u - 2.0 * softplus(u),
        }
    }

    pub fn in_domain(self, x: f64) -> bool {
        match self {
            Transform::Identity => x.is_finite(),
            Transform::Log => x > 0.0 && x.is_finite(),
            Transform::Logit => x > 0.0 && x < 1.0,
            Transform::FisherRho => x > -1.0 && x < 1.0,
        }
    }
}

/// Result of one Metropolis-Hastings update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub value: f64,
    pub accept_prob: f64,
    pub accepted: bool,
}

/// One adaptive random-walk update of a scalar parameter.
///
/// The walk runs on `transform.forward(current)` with standard deviation
/// `exp(log_var / 2)`; the acceptance ratio includes the Jacobian of the
/// transform, and the proposal scale is adapted with the realised acceptance
/// probability.
pub fn mh_step<F, R>(
    current: f64,
    log_density: F,
    transform: Transform,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<MhOutcome>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    if !transform.in_domain(current) {
        return Err(Error::Domain(format!("{current} outside the domain of {transform:?}")));
    }
    let current_log = log_density(current);
    if !current_log.is_finite() {
        return Err(Error::Domain(format!(
            "log density at the current value {current} is {current_log}"
        )));
    }
    let u = transform.forward(current);
    let z: f64 = StandardNormal.sample(rng);
    let u_new = u + scale.proposal_sd() * z;
    let proposal = transform.inverse(u_new);
    let accept_prob = if transform.in_domain(proposal) {
        let proposal_log = log_density(proposal);
        let log_ratio = proposal_log + transform.log_jacobian(u_new) - current_log - transform.log_jacobian(u);
        if log_ratio.is_nan() {
            0.0
        } else {
            log_ratio.min(0.0).exp()
        }
    } else {
        0.0
    };
    let accepted = rng.random::<f64>() < accept_prob;
    scale.adapt_step(accept_prob);
    Ok(MhOutcome {
        value: if accepted { proposal } else { current },
        accept_prob,
        accepted,
    })
}
