//! Normalised random measure mixtures under the compound-Poisson truncation.
//!
//! The state keeps every jump above the current level `L_k` together with a
//! normal atom, the allocations and the latent `v` that decouples the
//! normalisation.

use log::warn;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma};

use crate::adaptive_mh::{mh_step, AdaptiveScale, Transform};
use crate::dpm::{mu_conditional, Atom, NormalMixtureHyper};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, normal_log_pdf, sample_log_categorical};
use crate::random_measures::{cpp_sample, level_for_expected_atoms, next_level, poisson_count, LevelScheme, LevyDensity};
use crate::smc::SmcModel;

#[derive(Debug, Clone, PartialEq)]
pub struct NrmiiConfig {
    pub scheme: LevelScheme,
    /// `ζ(L_1)`, the expected number of jumps above the first level.
    pub initial_expected_atoms: f64,
}

impl Default for NrmiiConfig {
    fn default() -> Self {
        Self {
            scheme: LevelScheme::OneAtom,
            initial_expected_atoms: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CppState {
    pub jumps: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub alloc: Vec<usize>,
    pub v: f64,
    pub level: f64,
    /// Level index, starting at 1.
    pub k: usize,
    pub jump_scale: AdaptiveScale,
}

impl CppState {
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.jumps.len()];
        for &s in &self.alloc {
            counts[s] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct NrmiiModel<L: LevyDensity> {
    pub data: Vec<f64>,
    pub hyper: NormalMixtureHyper,
    pub levy: L,
    pub config: NrmiiConfig,
    pub first_level: f64,
}

impl<L: LevyDensity> NrmiiModel<L> {
    pub fn new(data: Vec<f64>, hyper: NormalMixtureHyper, levy: L, config: NrmiiConfig) -> Result<Self> {
        if data.is_empty() || data.iter().any(|y| !y.is_finite()) {
            return Err(Error::Data("observations must be finite and non-empty".into()));
        }
        if !(config.initial_expected_atoms > 0.0) {
            return Err(Error::Config("expected initial atoms must be positive".into()));
        }
        if let LevelScheme::Geometric { xi } = config.scheme {
            if !(xi > 0.0) {
                return Err(Error::Config(format!("geometric level step must be positive, got {xi}")));
            }
        }
        let first_level = level_for_expected_atoms(&levy, config.initial_expected_atoms)?;
        Ok(Self { data, hyper, levy, config, first_level })
    }

    /// `p(s_i = j) ∝ J_j N(y_i | μ_j, σ_j²)`.
    pub fn update_allocations<R: Rng + ?Sized>(&self, state: &mut CppState, rng: &mut R) -> Result<()> {
        let log_j: Vec<f64> = state.jumps.iter().map(|j| j.ln()).collect();
        let mut buffer = vec![0.0; log_j.len()];
        for (i, &y) in self.data.iter().enumerate() {
            for (j, atom) in state.atoms.iter().enumerate() {
                buffer[j] = log_j[j] + normal_log_pdf(y, atom.mean, atom.var);
            }
            state.alloc[i] = sample_log_categorical(&buffer, rng)?;
        }
        Ok(())
    }

    /// `v ~ Ga(n, ΣJ)`.
    pub fn update_v<R: Rng + ?Sized>(&self, state: &mut CppState, rng: &mut R) -> Result<()> {
        let total: f64 = state.jumps.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("no jumps above the level".into()));
        }
        let shape = self.data.len() as f64;
        state.v = Gamma::new(shape, 1.0 / total).expect("positive").sample(rng);
        Ok(())
    }

    /// Occupied jumps from `η(J) J^{m_j} e^{-vJ}` on `(L_k, ∞)`, exactly when
    /// the Lévy family allows it and by adaptive MH on `log J` otherwise.
    pub fn update_occupied_jumps<R: Rng + ?Sized>(&self, state: &mut CppState, rng: &mut R) -> Result<()> {
        let counts = state.counts();
        let level = state.level;
        let v = state.v;
        for (j, &m) in counts.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let mut rng_dyn = RngAdapter(rng);
            if let Some(x) = self.levy.sample_occupied(m, v, level, &mut rng_dyn) {
                state.jumps[j] = x;
                continue;
            }
            warn!("occupied-jump conditional has negligible mass above the level; falling back to MH");
            let target = |x: f64| {
                if !(x > level) {
                    return f64::NEG_INFINITY;
                }
                self.levy.density(x).ln() + m as f64 * x.ln() - v * x
            };
            let out = mh_step(state.jumps[j], target, Transform::Log, &mut state.jump_scale, rng)?;
            state.jumps[j] = out.value;
        }
        Ok(())
    }

    /// Conjugate two-block update of every occupied atom.
    pub fn update_atoms<R: Rng + ?Sized>(&self, state: &mut CppState, rng: &mut R) {
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); state.jumps.len()];
        for (&s, &y) in state.alloc.iter().zip(&self.data) {
            members[s].push(y);
        }
        for (atom, ys) in state.atoms.iter_mut().zip(&members) {
            if ys.is_empty() {
                continue;
            }
            let ss: f64 = ys.iter().map(|y| (y - atom.mean).powi(2)).sum();
            let shape = self.hyper.alpha + 0.5 * ys.len() as f64;
            let rate = self.hyper.beta + 0.5 * ss;
            atom.var = 1.0 / Gamma::new(shape, 1.0 / rate).expect("positive").sample(rng);
            let (mean, var) = mu_conditional(&self.hyper, atom.var, ys);
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            atom.mean = mean + var.sqrt() * z;
        }
    }

    /// Discards the unoccupied jumps and redraws them from the Poisson process
    /// with intensity `e^{-vx} η(x)` on `(L_k, ∞)` by thinning.
    pub fn update_unoccupied_jumps<R: Rng + ?Sized>(&self, state: &mut CppState, rng: &mut R) -> Result<()> {
        let counts = state.counts();
        let mut relabel = vec![usize::MAX; counts.len()];
        let mut jumps = Vec::new();
        let mut atoms = Vec::new();
        for (j, &m) in counts.iter().enumerate() {
            if m > 0 {
                relabel[j] = jumps.len();
                jumps.push(state.jumps[j]);
                atoms.push(state.atoms[j]);
            }
        }
        for s in &mut state.alloc {
            *s = relabel[*s];
        }
        let fresh = self.tilted_tail_jumps(state.level, state.v, rng)?;
        for x in fresh {
            jumps.push(x);
            atoms.push(self.hyper.sample_atom(rng));
        }
        state.jumps = jumps;
        state.atoms = atoms;
        Ok(())
    }

    fn tilted_tail_jumps<R: Rng + ?Sized>(&self, level: f64, v: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut rng_dyn = RngAdapter(rng);
        let proposals = cpp_sample(&self.levy, level, &mut rng_dyn)?;
        Ok(proposals
            .into_iter()
            .filter(|&x| rng_dyn.0.random::<f64>() < (-v * x).exp())
            .collect())
    }

    /// New jumps on `(L_next, L_current)` from intensity `η(x) e^{-vx}`, with
    /// marks from the centring measure.
    pub fn transition<R: Rng + ?Sized>(&self, state: &mut CppState, next: f64, rng: &mut R) -> Result<()> {
        if !(next <= state.level) {
            return Err(Error::Domain(format!("next level {next} exceeds the current level {}", state.level)));
        }
        if next < state.level {
            let mass = self.levy.tail_mass(next) - self.levy.tail_mass(state.level);
            let count = poisson_count(mass.max(0.0), rng)?;
            for _ in 0..count {
                let mut rng_dyn = RngAdapter(&mut *rng);
                let x = self.levy.sample_band(next, state.level, &mut rng_dyn)?;
                if rng.random::<f64>() < (-state.v * x).exp() {
                    state.jumps.push(x);
                    state.atoms.push(self.hyper.sample_atom(rng));
                }
            }
        }
        state.level = next;
        state.k += 1;
        Ok(())
    }

    /// `-∫_{lo}^{hi} η(x)(1 - e^{-vx}) dx`, the log-weight correction for
    /// proposing band jumps from the tilted intensity.
    pub fn band_correction(&self, lo: f64, hi: f64, v: f64) -> f64 {
        let plain = self.levy.tail_mass(lo) - self.levy.tail_mass(hi);
        let tilted = self.levy.tilted_tail_mass(lo, v) - self.levy.tilted_tail_mass(hi, v);
        -(plain - tilted)
    }

    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut CppState, rng: &mut R) -> Result<()> {
        self.update_occupied_jumps(state, rng)?;
        self.update_atoms(state, rng);
        self.update_unoccupied_jumps(state, rng)?;
        self.update_allocations(state, rng)?;
        self.update_v(state, rng)
    }

    pub fn prior_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CppState> {
        let mut jumps = Vec::new();
        for _ in 0..1000 {
            let mut rng_dyn = RngAdapter(&mut *rng);
            jumps = cpp_sample(&self.levy, self.first_level, &mut rng_dyn)?;
            if !jumps.is_empty() {
                break;
            }
        }
        if jumps.is_empty() {
            return Err(Error::Degenerate("no jumps above the first level".into()));
        }
        let atoms = jumps.iter().map(|_| self.hyper.sample_atom(rng)).collect();
        let mut state = CppState {
            jumps,
            atoms,
            alloc: vec![0; self.data.len()],
            v: 1.0,
            level: self.first_level,
            k: 1,
            jump_scale: AdaptiveScale::default(),
        };
        self.update_allocations(&mut state, rng)?;
        self.update_v(&mut state, rng)?;
        Ok(state)
    }

    /// `Σ_i log Σ_j J_j N(y_i | μ_j, σ_j²)`, the allocation-marginal form of
    /// the augmented likelihood.
    pub fn log_lik(&self, state: &CppState) -> f64 {
        let log_j: Vec<f64> = state.jumps.iter().map(|j| j.ln()).collect();
        let mut buffer = vec![0.0; log_j.len()];
        self.data
            .iter()
            .map(|&y| {
                for (j, atom) in state.atoms.iter().enumerate() {
                    buffer[j] = log_j[j] + normal_log_pdf(y, atom.mean, atom.var);
                }
                log_sum_exp(&buffer)
            })
            .sum()
    }

    pub fn density(&self, state: &CppState, y: f64) -> f64 {
        let total: f64 = state.jumps.iter().sum();
        state
            .jumps
            .iter()
            .zip(&state.atoms)
            .map(|(j, a)| j / total * normal_log_pdf(y, a.mean, a.var).exp())
            .sum()
    }
}

/// Lets a generic `Rng` be passed where `&mut dyn RngCore` is expected.
struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

impl<L: LevyDensity> SmcModel for NrmiiModel<L> {
    type State = CppState;

    fn initial_state(&self, rng: &mut dyn RngCore) -> Result<CppState> {
        self.prior_state(rng)
    }

    fn mcmc_sweep(&self, state: &mut CppState, rng: &mut dyn RngCore) -> Result<()> {
        self.sweep(state, rng)
    }

    fn extend(&self, state: &mut CppState, rng: &mut dyn RngCore) -> Result<f64> {
        let current = state.level;
        let next = next_level(&self.levy, self.config.scheme, current)?;
        let correction = self.band_correction(next, current, state.v);
        self.transition(state, next, rng)?;
        Ok(correction)
    }

    fn log_likelihood(&self, state: &CppState) -> f64 {
        self.log_lik(state)
    }

    fn truncation_size(&self, state: &CppState) -> usize {
        state.jumps.len()
    }

    fn predictive_density(&self, state: &CppState, y: f64) -> Option<f64> {
        Some(self.density(state, y))
    }
}
