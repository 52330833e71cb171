//! The adaptive-truncation SMC sampler.
//!
//! Particles are initialised from one MCMC chain targeting the first truncated
//! posterior. Each iteration then extends every particle's truncation by one
//! block drawn from its conditional prior, reweights by the likelihood ratio,
//! records the ESS, and resamples plus rejuvenates when the ESS falls below
//! `b·S`. The run stops once the discrepancy between consecutive truncated
//! posteriors stays below `δ` for `m_stop` consecutive iterations.

use log::warn;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::stream_seed;

const PHASE_INIT: u64 = 1;
const PHASE_EXTEND: u64 = 2;
const PHASE_RESAMPLE: u64 = 3;
const PHASE_REJUVENATE: u64 = 4;

/// The contract a truncated model offers to the SMC engine.
pub trait SmcModel: Sync {
    type State: Clone + Send + Sync;

    /// Starting point of the chain that samples the first truncated posterior.
    fn initial_state(&self, rng: &mut dyn RngCore) -> Result<Self::State>;

    /// One full MCMC sweep targeting the posterior at the state's current
    /// truncation.
    fn mcmc_sweep(&self, state: &mut Self::State, rng: &mut dyn RngCore) -> Result<()>;

    /// Draws the next truncation block from its conditional prior.
    ///
    /// Returns an additive log-weight correction for proposals that are not
    /// exactly the conditional prior (zero for most models).
    fn extend(&self, state: &mut Self::State, rng: &mut dyn RngCore) -> Result<f64>;

    /// Log-likelihood of the data under the state's current truncation, in
    /// the form whose ratio gives the incremental weight.
    fn log_likelihood(&self, state: &Self::State) -> f64;

    /// Number of atoms currently represented by the state.
    fn truncation_size(&self, state: &Self::State) -> usize;

    /// Posterior predictive density of a new observation at `y`.
    fn predictive_density(&self, _state: &Self::State, _y: f64) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Particle<S> {
    pub state: S,
    pub log_weight: f64,
    /// Log-likelihood at the last reweighting.
    pub log_likelihood: f64,
    /// Log-weight correction returned by the last extension.
    pub pending_correction: f64,
}

impl<S> Particle<S> {
    pub fn new(state: S, log_likelihood: f64) -> Self {
        Self {
            state,
            log_weight: 0.0,
            log_likelihood,
            pending_correction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSystem<S> {
    pub particles: Vec<Particle<S>>,
    /// Truncation index, starting at 1.
    pub k: usize,
    pub ess_trace: Vec<f64>,
    pub seed: u64,
}

impl<S: Clone + Send + Sync> ParticleSystem<S> {
    pub fn from_states<M: SmcModel<State = S>>(model: &M, states: Vec<S>, seed: u64) -> Self {
        let particles: Vec<Particle<S>> = states
            .into_par_iter()
            .map(|s| {
                let ll = model.log_likelihood(&s);
                Particle::new(s, ll)
            })
            .collect();
        let size = particles.len() as f64;
        Self {
            particles,
            k: 1,
            ess_trace: vec![size],
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    /// Weights scaled so the largest equals one.
    pub fn relative_weights(&self) -> Result<Vec<f64>> {
        relative_weights(&self.log_weights())
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let w = self.relative_weights()?;
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    pub fn ess(&self) -> Result<f64> {
        ess_from_log_weights(&self.log_weights())
    }
}

fn relative_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateSystem("all particle weights are zero".into()));
    }
    if max == f64::INFINITY {
        return Err(Error::DegenerateSystem("infinite particle weight".into()));
    }
    Ok(log_weights.iter().map(|w| (w - max).exp()).collect())
}

/// `(Σw)² / Σw²` for non-negative weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain("weights must be finite and non-negative".into()));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateSystem("all particle weights are zero".into()));
    }
    let (sum, sum_sq) = weights.iter().fold((0.0, 0.0), |(s, q), w| {
        let x = w / max;
        (s + x, q + x * x)
    });
    Ok(sum * sum / sum_sq)
}

/// ESS from log-weights, after subtracting the maximum.
pub fn ess_from_log_weights(log_weights: &[f64]) -> Result<f64> {
    ess(&relative_weights(log_weights)?)
}

/// Systematic resampling indices for a given offset `u ∈ [0, 1/S)`.
///
/// Index `i` is selected once for every ladder point `u + j/S` that falls in
/// its slot of the normalised cumulative weights.
pub fn systematic_indices(weights: &[f64], u: f64) -> Result<Vec<usize>> {
    let count = weights.len();
    if count == 0 {
        return Err(Error::Domain("no weights to resample".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateSystem("weights cannot be normalised".into()));
    }
    let step = 1.0 / count as f64;
    let mut indices = Vec::with_capacity(count);
    let mut cumulative = weights[0] / total;
    let mut i = 0;
    for j in 0..count {
        let point = u + j as f64 * step;
        while point >= cumulative && i + 1 < count {
            i += 1;
            cumulative += weights[i] / total;
        }
        // skip zero-weight slots reached only through rounding
        while weights[i] == 0.0 && i + 1 < count {
            i += 1;
            cumulative += weights[i] / total;
        }
        indices.push(i);
    }
    Ok(indices)
}

/// Systematic resampling with a single uniform offset.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let u = rng.random::<f64>() / weights.len().max(1) as f64;
    systematic_indices(weights, u)
}

/// Self-normalised importance estimate `Σ w f / Σ w`.
pub fn estimate<S, F>(system: &ParticleSystem<S>, f: F) -> Result<f64>
where
    S: Clone + Send + Sync,
    F: Fn(&S) -> f64,
{
    let w = system.relative_weights()?;
    let total: f64 = w.iter().sum();
    Ok(system
        .particles
        .iter()
        .zip(&w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, w)| w * f(&p.state))
        .sum::<f64>()
        / total)
}

/// Weighted posterior-mean predictive density at `y_star`.
pub fn predictive_at<M: SmcModel>(model: &M, system: &ParticleSystem<M::State>, y_star: f64) -> Result<f64> {
    let values: Option<Vec<f64>> = system
        .particles
        .iter()
        .map(|p| model.predictive_density(&p.state, y_star))
        .collect();
    let values = values.ok_or_else(|| Error::Config("model does not provide a predictive density".into()))?;
    let w = system.relative_weights()?;
    let total: f64 = w.iter().sum();
    Ok(values.iter().zip(&w).filter(|(_, w)| **w > 0.0).map(|(v, w)| v * w).sum::<f64>() / total)
}

/// `|p_{k+1}(y*) - p_k(y*)|` between two particle systems.
pub fn predictive_discrepancy<M: SmcModel>(
    model: &M,
    system_k: &ParticleSystem<M::State>,
    system_k1: &ParticleSystem<M::State>,
    y_star: f64,
) -> Result<f64> {
    Ok((predictive_at(model, system_k1, y_star)? - predictive_at(model, system_k, y_star)?).abs())
}

/// Which discrepancy between consecutive truncated posteriors drives the
/// stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Discrepancy {
    /// `|ESS_{k+1} - ESS_k|` with threshold `δ = εS`.
    Ess,
    /// `|p_{k+1}(y*) - p_k(y*)|` with threshold `δ = ε`.
    Predictive { y_star: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    pub epsilon: f64,
    pub m_stop: usize,
    pub resample_threshold: f64,
    pub n_rejuv: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    pub discrepancy: Discrepancy,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            epsilon: 1e-3,
            m_stop: 3,
            resample_threshold: 0.7,
            n_rejuv: 3,
            max_iters: 5000,
            seed: 0,
            burn_in: 5000,
            thin: 5,
            discrepancy: Discrepancy::Ess,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config(format!("need at least 2 particles, got {}", self.particles)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.m_stop == 0 {
            return Err(Error::Config("m_stop must be at least 1".into()));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "resample threshold must lie in (0, 1], got {}",
                self.resample_threshold
            )));
        }
        if self.n_rejuv == 0 {
            return Err(Error::Config("n_rejuv must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        match self.discrepancy {
            Discrepancy::Ess => self.epsilon * self.particles as f64,
            Discrepancy::Predictive { .. } => self.epsilon,
        }
    }
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub ess: f64,
    pub discrepancy: f64,
    pub resampled: bool,
    pub mean_atoms: f64,
}

#[derive(Debug, Clone)]
pub struct SmcOutput<S> {
    pub system: ParticleSystem<S>,
    /// Stopping index `R`.
    pub stop_index: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

fn particle_rng(seed: u64, stream: u64, phase: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, phase, index as u64))
}

/// Samples `count` states from the first truncated posterior with one chain:
/// `burn_in` sweeps, then one state every `thin` sweeps.
pub fn initial_states<M: SmcModel>(
    model: &M,
    count: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<Vec<M::State>> {
    let mut rng = particle_rng(seed, 0, PHASE_INIT, 0);
    let mut state = model.initial_state(&mut rng)?;
    for _ in 0..burn_in {
        model.mcmc_sweep(&mut state, &mut rng)?;
    }
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..thin.max(1) {
            model.mcmc_sweep(&mut state, &mut rng)?;
        }
        states.push(state.clone());
    }
    Ok(states)
}

pub fn initialize<M: SmcModel>(model: &M, config: &SmcConfig) -> Result<ParticleSystem<M::State>> {
    config.validate()?;
    let states = initial_states(model, config.particles, config.burn_in, config.thin, config.seed)?;
    Ok(ParticleSystem::from_states(model, states, config.seed))
}

/// Step 1: extends every particle by one truncation block. Weights are
/// untouched; any proposal correction is held until [`reweight`].
pub fn extend<M: SmcModel>(system: &mut ParticleSystem<M::State>, model: &M, stream: u64) -> Result<()> {
    let seed = system.seed;
    system
        .particles
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(j, p)| {
            let mut rng = particle_rng(seed, stream, PHASE_EXTEND, j);
            p.pending_correction += model.extend(&mut p.state, &mut rng)?;
            Ok::<(), Error>(())
        })?;
    system.k += 1;
    Ok(())
}

/// Step 2: `log w += log L_{k+1} - log L_k (+ correction)`.
///
/// A particle whose likelihood is not finite gets weight zero.
pub fn reweight<M: SmcModel>(system: &mut ParticleSystem<M::State>, model: &M) {
    let flagged: usize = system
        .particles
        .par_iter_mut()
        .map(|p| {
            let ll = model.log_likelihood(&p.state);
            let increment = ll - p.log_likelihood + p.pending_correction;
            p.pending_correction = 0.0;
            p.log_likelihood = ll;
            if increment.is_finite() && p.log_weight.is_finite() {
                p.log_weight += increment;
                0
            } else {
                p.log_weight = f64::NEG_INFINITY;
                1
            }
        })
        .sum();
    if flagged > 0 {
        warn!("{flagged} particle(s) had a non-finite likelihood and were given zero weight");
    }
}

/// Steps 4(a)-(b): systematic resampling followed by a weight reset.
pub fn resample<S: Clone + Send + Sync, R: Rng + ?Sized>(system: &mut ParticleSystem<S>, rng: &mut R) -> Result<()> {
    let weights = system.relative_weights()?;
    let indices = systematic_resample(&weights, rng)?;
    let mut next: Vec<Particle<S>> = indices.iter().map(|&i| system.particles[i].clone()).collect();
    for p in &mut next {
        p.log_weight = 0.0;
    }
    system.particles = next;
    Ok(())
}

/// Step 4(c) with explicit per-particle seeds.
pub fn rejuvenate_with_seeds<M: SmcModel>(
    system: &mut ParticleSystem<M::State>,
    model: &M,
    sweeps: usize,
    seeds: &[u64],
) -> Result<()> {
    if seeds.len() != system.len() {
        return Err(Error::Domain("one seed per particle is required".into()));
    }
    if sweeps == 0 {
        return Ok(());
    }
    system
        .particles
        .par_iter_mut()
        .zip(seeds.par_iter())
        .try_for_each(|(p, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..sweeps {
                model.mcmc_sweep(&mut p.state, &mut rng)?;
            }
            p.log_likelihood = model.log_likelihood(&p.state);
            Ok::<(), Error>(())
        })
}

/// Step 4(c): `sweeps` MCMC sweeps per particle on streams derived from the
/// system seed.
pub fn rejuvenate<M: SmcModel>(system: &mut ParticleSystem<M::State>, model: &M, sweeps: usize, stream: u64) -> Result<()> {
    let seeds: Vec<u64> = (0..system.len())
        .map(|j| stream_seed(system.seed, stream, PHASE_REJUVENATE, j as u64))
        .collect();
    rejuvenate_with_seeds(system, model, sweeps, &seeds)
}

fn mean_atoms<M: SmcModel>(model: &M, system: &ParticleSystem<M::State>) -> f64 {
    let total: usize = system.particles.iter().map(|p| model.truncation_size(&p.state)).sum();
    total as f64 / system.len() as f64
}

/// Runs the adaptive truncation loop from an already initialised system.
pub fn run_from<M: SmcModel>(
    model: &M,
    mut system: ParticleSystem<M::State>,
    config: &SmcConfig,
) -> Result<SmcOutput<M::State>> {
    config.validate()?;
    let size = system.len() as f64;
    let delta = config.threshold();
    let mut baseline_ess = system.ess()?;
    let mut baseline_pred = match config.discrepancy {
        Discrepancy::Predictive { y_star } => predictive_at(model, &system, y_star)?,
        Discrepancy::Ess => 0.0,
    };
    let mut trace = Vec::new();
    let mut below = 0usize;

    for iteration in 1..=config.max_iters {
        let stream = iteration as u64;
        extend(&mut system, model, stream)?;
        reweight(&mut system, model);
        let ess = system.ess()?;
        system.ess_trace.push(ess);
        if system.len() > 2 && ess < 2.0 {
            return Err(Error::DegenerateSystem(format!(
                "ESS collapsed to {ess:.3} at iteration {iteration} (truncation index {})",
                system.k
            )));
        }

        let mut resampled = false;
        if ess < config.resample_threshold * size {
            let mut rng = particle_rng(system.seed, stream, PHASE_RESAMPLE, 0);
            resample(&mut system, &mut rng)?;
            rejuvenate(&mut system, model, config.n_rejuv, stream)?;
            resampled = true;
        }

        let discrepancy = match config.discrepancy {
            Discrepancy::Ess => (ess - baseline_ess).abs(),
            Discrepancy::Predictive { y_star } => {
                let p = predictive_at(model, &system, y_star)?;
                let d = (p - baseline_pred).abs();
                baseline_pred = p;
                d
            }
        };
        // after a resample the weights are equal, so the next comparison
        // starts from ESS = S
        baseline_ess = if resampled { size } else { ess };

        trace.push(TraceRow {
            iteration,
            ess,
            discrepancy,
            resampled,
            mean_atoms: mean_atoms(model, &system),
        });

        if discrepancy < delta {
            below += 1;
        } else {
            below = 0;
        }
        if below >= config.m_stop {
            return Ok(SmcOutput {
                system,
                stop_index: iteration,
                converged: true,
                trace,
            });
        }
    }
    warn!(
        "adaptive truncation did not settle within {} iterations; result is truncated",
        config.max_iters
    );
    Ok(SmcOutput {
        system,
        stop_index: config.max_iters,
        converged: false,
        trace,
    })
}

/// Initialises from the first truncated posterior and runs to the stopping
/// rule.
pub fn run<M: SmcModel>(model: &M, config: &SmcConfig) -> Result<SmcOutput<M::State>> {
    let system = initialize(model, config)?;
    run_from(model, system, config)
}
