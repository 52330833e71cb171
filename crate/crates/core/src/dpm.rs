//! Infinite normal mixtures under Dirichlet and Pitman-Yor priors, truncated
//! by renormalised stick-breaking (RSB), plain stick-breaking (SB) or
//! Ferguson-Klass jumps of a Gamma process (FK).

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, Geometric, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::adaptive_mh::{mh_step, AdaptiveScale, Transform};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, normal_log_pdf, sample_log_categorical, trapezoid};
use crate::random_measures::{
    beta_log_pdf, exp_integral_e1, fk_extend, fk_jumps, rsb_weights, sample_beta, sb_weights, BetaStickParams,
    GammaProcess, LevyDensity, StickKind,
};
use crate::smc::{ParticleSystem, SmcModel};

/// Centring measure `N(μ | μ0, σ²) Ga(σ_j^{-2} | α, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMixtureHyper {
    pub mu0: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalMixtureHyper {
    pub fn new(mu0: f64, sigma2: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !mu0.is_finite() || !(sigma2 > 0.0) || !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::Config(format!(
                "invalid centring measure (mu0={mu0}, sigma2={sigma2}, alpha={alpha}, beta={beta})"
            )));
        }
        Ok(Self { mu0, sigma2, alpha, beta })
    }

    /// `μ0 = ȳ`, `σ² = 10`, `α = 3`, `β = 0.1(α - 1)s²`.
    pub fn from_data(data: &[f64]) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Data("need at least two observations".into()));
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let alpha = 3.0;
        Self::new(mean, 10.0, alpha, 0.1 * (alpha - 1.0) * var)
    }

    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> Atom {
        let precision = Gamma::new(self.alpha, 1.0 / self.beta).expect("validated").sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        Atom {
            mean: self.mu0 + self.sigma2.sqrt() * z,
            var: 1.0 / precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Rsb,
    Sb,
    Fk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpmConfig {
    pub truncation: Truncation,
    pub kind: StickKind,
    /// `None` gives `M` an Exp(1) prior.
    pub mass: Option<f64>,
    /// Pitman-Yor discount; `None` gives it a U(0, 1) prior.
    pub discount: Option<f64>,
    pub initial_atoms: usize,
    /// Known common kernel variance; atoms then carry only a mean.
    pub fixed_variance: Option<f64>,
}

impl Default for DpmConfig {
    fn default() -> Self {
        Self {
            truncation: Truncation::Rsb,
            kind: StickKind::DirichletProcess,
            mass: None,
            discount: None,
            initial_atoms: 10,
            fixed_variance: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureState {
    /// Stick fractions; under SB the last entry is 1. Empty under FK.
    pub sticks: Vec<f64>,
    /// Ferguson-Klass jumps, strictly decreasing. Empty unless FK.
    pub jumps: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub alloc: Vec<usize>,
    /// Geometric augmentation of the RSB normaliser.
    pub z: Vec<u64>,
    pub mass: f64,
    pub discount: f64,
    pub mass_scale: AdaptiveScale,
    pub discount_scale: AdaptiveScale,
    pub jump_scales: Vec<AdaptiveScale>,
}

impl MixtureState {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.atoms.len()];
        for &s in &self.alloc {
            counts[s] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct DpmModel {
    pub data: Vec<f64>,
    pub hyper: NormalMixtureHyper,
    pub config: DpmConfig,
}

impl DpmModel {
    pub fn new(data: Vec<f64>, hyper: NormalMixtureHyper, config: DpmConfig) -> Result<Self> {
        if data.iter().any(|y| !y.is_finite()) {
            return Err(Error::Data("observations must be finite".into()));
        }
        if config.initial_atoms == 0 {
            return Err(Error::Config("initial truncation needs at least one atom".into()));
        }
        if let Some(m) = config.mass {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("mass must be positive, got {m}")));
            }
        }
        if let Some(a) = config.discount {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::Config(format!("discount must lie in [0, 1), got {a}")));
            }
        }
        if let Some(v) = config.fixed_variance {
            if !(v > 0.0) {
                return Err(Error::Config(format!("fixed variance must be positive, got {v}")));
            }
        }
        if config.truncation == Truncation::Fk && config.kind != StickKind::DirichletProcess {
            return Err(Error::Config("the FK truncation is available for the Dirichlet process only".into()));
        }
        Ok(Self { data, hyper, config })
    }

    pub fn stick_params(&self, state: &MixtureState) -> BetaStickParams {
        BetaStickParams {
            kind: self.config.kind,
            mass: state.mass,
            discount: match self.config.kind {
                StickKind::DirichletProcess => 0.0,
                StickKind::PoissonDirichlet => state.discount,
            },
        }
    }

    pub fn weights(&self, state: &MixtureState) -> Result<Vec<f64>> {
        match self.config.truncation {
            Truncation::Rsb => rsb_weights(&state.sticks),
            Truncation::Sb => sb_weights(&state.sticks),
            Truncation::Fk => {
                let total: f64 = state.jumps.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::Degenerate("jumps sum to zero".into()));
                }
                Ok(state.jumps.iter().map(|j| j / total).collect())
            }
        }
    }

    fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> Atom {
        let mut atom = self.hyper.sample_atom(rng);
        if let Some(v) = self.config.fixed_variance {
            atom.var = v;
        }
        atom
    }

    /// Draws a state of the first truncation from the prior, with allocations
    /// drawn from their full conditional.
    pub fn prior_state<R: Rng + ?Sized>(&self, n_atoms: usize, rng: &mut R) -> Result<MixtureState> {
        let mass = self.config.mass.unwrap_or(1.0);
        let discount = match self.config.kind {
            StickKind::DirichletProcess => 0.0,
            StickKind::PoissonDirichlet => self.config.discount.unwrap_or(0.2),
        };
        let params = BetaStickParams::new(self.config.kind, mass, discount)?;
        let atoms: Vec<Atom> = (0..n_atoms).map(|_| self.sample_atom(rng)).collect();
        let (sticks, jumps) = match self.config.truncation {
            Truncation::Rsb => ((1..=n_atoms).map(|j| params.sample_stick(j, rng)).collect(), Vec::new()),
            Truncation::Sb => {
                let mut v: Vec<f64> = (1..n_atoms).map(|j| params.sample_stick(j, rng)).collect();
                v.push(1.0);
                (v, Vec::new())
            }
            Truncation::Fk => {
                let levy = GammaProcess::new(mass)?;
                let mut t = 0.0;
                let arrivals: Vec<f64> = (0..n_atoms)
                    .map(|_| {
                        let e: f64 = rand_distr::Exp1.sample(rng);
                        t += e.max(f64::MIN_POSITIVE);
                        t
                    })
                    .collect();
                (Vec::new(), fk_jumps(&levy, &arrivals)?)
            }
        };
        let mut state = MixtureState {
            sticks,
            jump_scales: vec![AdaptiveScale::default().with_log_var(-2.0); jumps.len()],
            jumps,
            atoms,
            alloc: vec![0; self.data.len()],
            z: vec![0; self.data.len()],
            mass,
            discount,
            mass_scale: AdaptiveScale::default(),
            discount_scale: AdaptiveScale::default(),
        };
        self.update_s(&mut state, rng)?;
        Ok(state)
    }

    /// `p(s_i = j) ∝ p_j N(y_i | μ_j, σ_j²)`.
    pub fn update_s<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) -> Result<()> {
        let log_p: Vec<f64> = self.weights(state)?.iter().map(|p| p.ln()).collect();
        let mut buffer = vec![0.0; log_p.len()];
        for (i, &y) in self.data.iter().enumerate() {
            for (j, atom) in state.atoms.iter().enumerate() {
                buffer[j] = log_p[j] + normal_log_pdf(y, atom.mean, atom.var);
            }
            state.alloc[i] = sample_log_categorical(&buffer, rng)?;
        }
        Ok(())
    }

    /// `z_i ~ Geometric(1 - Π(1 - V_j))` on {0, 1, ...}.
    pub fn update_z<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) -> Result<()> {
        let success = -state.sticks.iter().map(|v| (-v).ln_1p()).sum::<f64>().exp_m1();
        if !(success > 0.0) {
            return Err(Error::Degenerate("RSB normaliser vanished".into()));
        }
        if success >= 1.0 {
            state.z.iter_mut().for_each(|z| *z = 0);
            return Ok(());
        }
        let geometric = Geometric::new(success).map_err(|e| Error::Numeric(format!("geometric: {e}")))?;
        for z in &mut state.z {
            *z = geometric.sample(rng);
        }
        Ok(())
    }

    /// `V_j ~ Be(a_j + n_j, b_j + n_{>j} [+ Σz])`; under SB only the free
    /// sticks move.
    pub fn update_v<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) {
        let params = self.stick_params(state);
        let counts = state.counts();
        let extra = match self.config.truncation {
            Truncation::Rsb => state.z.iter().sum::<u64>() as f64,
            _ => 0.0,
        };
        let free = match self.config.truncation {
            Truncation::Rsb => state.sticks.len(),
            Truncation::Sb => state.sticks.len() - 1,
            Truncation::Fk => 0,
        };
        let mut above: usize = counts.iter().sum();
        for j in 0..free {
            above -= counts[j];
            state.sticks[j] = sample_beta(
                params.a(j + 1) + counts[j] as f64,
                params.b(j + 1) + above as f64 + extra,
                rng,
            );
        }
    }

    /// Two-block Gibbs update of every atom: `σ_j^{-2} | μ_j` then `μ_j | σ_j²`.
    pub fn update_theta<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) {
        let k = state.atoms.len();
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
        for (&s, &y) in state.alloc.iter().zip(&self.data) {
            members[s].push(y);
        }
        for (atom, ys) in state.atoms.iter_mut().zip(&members) {
            if ys.is_empty() {
                *atom = self.sample_atom(rng);
                continue;
            }
            if self.config.fixed_variance.is_none() {
                let ss: f64 = ys.iter().map(|y| (y - atom.mean).powi(2)).sum();
                let shape = self.hyper.alpha + 0.5 * ys.len() as f64;
                let rate = self.hyper.beta + 0.5 * ss;
                let precision = Gamma::new(shape, 1.0 / rate).expect("positive").sample(rng);
                atom.var = 1.0 / precision;
            }
            let (mean, var) = mu_conditional(&self.hyper, atom.var, ys);
            let z: f64 = StandardNormal.sample(rng);
            atom.mean = mean + var.sqrt() * z;
        }
    }

    /// DP mass with an Exp(1) prior: `Gamma(1 + N_free, 1 - Σ ln(1 - V_j))`.
    pub fn update_mass<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) {
        let (shape, rate) = mass_conditional(&state.sticks, self.config.truncation == Truncation::Sb);
        state.mass = Gamma::new(shape, 1.0 / rate).expect("positive").sample(rng);
    }

    /// Adaptive MH on `logit(a)` and `log M` targeting `Π Be(V_j | 1 - a, M + a j)`
    /// with U(0, 1) and Exp(1) priors.
    pub fn update_py<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) -> Result<()> {
        let free = self.free_sticks(state).to_vec();
        if self.config.discount.is_none() {
            let mass = state.mass;
            let out = mh_step(
                state.discount,
                |a| py_stick_log_lik(&free, a, mass),
                Transform::Logit,
                &mut state.discount_scale,
                rng,
            )?;
            state.discount = out.value;
        }
        if self.config.mass.is_none() {
            let a = state.discount;
            let out = mh_step(
                state.mass,
                |m| py_stick_log_lik(&free, a, m) - m,
                Transform::Log,
                &mut state.mass_scale,
                rng,
            )?;
            state.mass = out.value;
        }
        Ok(())
    }

    fn free_sticks<'a>(&self, state: &'a MixtureState) -> &'a [f64] {
        match self.config.truncation {
            Truncation::Sb => &state.sticks[..state.sticks.len() - 1],
            _ => &state.sticks,
        }
    }

    /// FK jumps by adaptive MH on `log J_j` keeping `J_1 > ... > J_N`, then
    /// `M ~ Gamma(1 + N, 1 + E1(J_N))` when the mass is unknown.
    pub fn update_jumps<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) -> Result<()> {
        let counts = state.counts();
        let n = self.data.len() as f64;
        let count = state.jumps.len();
        for j in 0..count {
            let upper = if j == 0 { f64::INFINITY } else { state.jumps[j - 1] };
            let lower = if j + 1 < count { state.jumps[j + 1] } else { 0.0 };
            let rest: f64 = state.jumps.iter().enumerate().filter(|(l, _)| *l != j).map(|(_, x)| x).sum();
            let mass = state.mass;
            let last = j + 1 == count;
            let m_j = counts[j] as f64;
            let target = |x: f64| {
                if !(x > lower && x < upper) {
                    return f64::NEG_INFINITY;
                }
                let mut value = (mass / x).ln() - x + m_j * x.ln() - n * (rest + x).ln();
                if last {
                    value -= mass * exp_integral_e1(x);
                }
                value
            };
            let out = mh_step(state.jumps[j], target, Transform::Log, &mut state.jump_scales[j], rng)?;
            state.jumps[j] = out.value;
        }
        if self.config.mass.is_none() {
            self.update_mass_fixed_arrivals(state, &counts, rng)?;
            let last = *state.jumps.last().expect("at least one jump");
            let shape = 1.0 + count as f64;
            let rate = 1.0 + exp_integral_e1(last);
            state.mass = Gamma::new(shape, 1.0 / rate).expect("positive").sample(rng);
        }
        Ok(())
    }

    /// MH on `log M` holding the arrival times `t_j = M E1(J_j)` fixed, so
    /// the jumps rescale with the mass.
    fn update_mass_fixed_arrivals<R: Rng + ?Sized>(
        &self,
        state: &mut MixtureState,
        counts: &[usize],
        rng: &mut R,
    ) -> Result<()> {
        let arrivals: Vec<f64> = state.jumps.iter().map(|&j| state.mass * exp_integral_e1(j)).collect();
        let n = self.data.len() as f64;
        let jumps_for = |mass: f64| -> Option<Vec<f64>> {
            let levy = GammaProcess::new(mass).ok()?;
            arrivals.iter().map(|&t| levy.inverse_tail_mass(t).ok()).collect()
        };
        let target = |mass: f64| -> f64 {
            let Some(jumps) = jumps_for(mass) else {
                return f64::NEG_INFINITY;
            };
            if jumps.windows(2).any(|w| !(w[0] > w[1])) {
                return f64::NEG_INFINITY;
            }
            let total: f64 = jumps.iter().sum();
            let fit: f64 = jumps.iter().zip(counts).map(|(j, &c)| c as f64 * j.ln()).sum();
            fit - n * total.ln() - mass
        };
        let out = mh_step(state.mass, target, Transform::Log, &mut state.mass_scale, rng)?;
        if out.accepted {
            state.jumps = jumps_for(out.value).ok_or_else(|| Error::Numeric("jump rescaling failed".into()))?;
            state.mass = out.value;
        }
        Ok(())
    }

    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) -> Result<()> {
        self.update_s(state, rng)?;
        match self.config.truncation {
            Truncation::Rsb | Truncation::Sb => {
                if self.config.truncation == Truncation::Rsb {
                    self.update_z(state, rng)?;
                }
                self.update_v(state, rng);
                self.update_theta(state, rng);
                match self.config.kind {
                    StickKind::DirichletProcess => {
                        if self.config.mass.is_none() {
                            self.update_mass(state, rng);
                        }
                    }
                    StickKind::PoissonDirichlet => self.update_py(state, rng)?,
                }
            }
            Truncation::Fk => {
                self.update_theta(state, rng);
                self.update_jumps(state, rng)?;
            }
        }
        Ok(())
    }

    /// Appends one atom drawn from the conditional prior of the next block.
    pub fn extend_state<R: Rng + ?Sized>(&self, state: &mut MixtureState, rng: &mut R) -> Result<()> {
        let params = self.stick_params(state);
        match self.config.truncation {
            Truncation::Rsb => {
                let j = state.sticks.len() + 1;
                state.sticks.push(params.sample_stick(j, rng));
            }
            Truncation::Sb => {
                let j = state.sticks.len();
                *state.sticks.last_mut().expect("non-empty") = params.sample_stick(j, rng);
                state.sticks.push(1.0);
            }
            Truncation::Fk => {
                let levy = GammaProcess::new(state.mass)?;
                let last = *state.jumps.last().expect("non-empty");
                state.jumps.push(fk_extend(&levy, last, rng)?);
                state.jump_scales.push(AdaptiveScale::default().with_log_var(-2.0));
            }
        }
        state.atoms.push(self.sample_atom(rng));
        Ok(())
    }

    /// `Σ_i log Σ_j p_j N(y_i | μ_j, σ_j²)`.
    pub fn log_lik(&self, state: &MixtureState) -> f64 {
        let Ok(weights) = self.weights(state) else {
            return f64::NAN;
        };
        let log_p: Vec<f64> = weights.iter().map(|p| p.ln()).collect();
        let mut buffer = vec![0.0; log_p.len()];
        self.data
            .iter()
            .map(|&y| {
                for (j, atom) in state.atoms.iter().enumerate() {
                    buffer[j] = log_p[j] + normal_log_pdf(y, atom.mean, atom.var);
                }
                log_sum_exp(&buffer)
            })
            .sum()
    }

    pub fn density(&self, state: &MixtureState, y: f64) -> f64 {
        let Ok(weights) = self.weights(state) else {
            return f64::NAN;
        };
        weights
            .iter()
            .zip(&state.atoms)
            .map(|(p, a)| p * normal_log_pdf(y, a.mean, a.var).exp())
            .sum()
    }
}

/// Conditional of `μ_j` given `σ_j²` and the cluster's members.
pub fn mu_conditional(hyper: &NormalMixtureHyper, var: f64, members: &[f64]) -> (f64, f64) {
    let precision = 1.0 / hyper.sigma2 + members.len() as f64 / var;
    let sum: f64 = members.iter().sum();
    let mean = (hyper.mu0 / hyper.sigma2 + sum / var) / precision;
    (mean, 1.0 / precision)
}

/// Shape and rate of the Gamma conditional of the DP mass under an Exp(1)
/// prior; with `sb` the forced last stick is excluded.
pub fn mass_conditional(sticks: &[f64], sb: bool) -> (f64, f64) {
    let free = if sb { &sticks[..sticks.len().saturating_sub(1)] } else { sticks };
    let log_rest: f64 = free.iter().map(|v| (-v).ln_1p()).sum();
    (1.0 + free.len() as f64, 1.0 - log_rest)
}

/// `Σ_j ln Be(V_j | 1 - a, M + a j)` (j is 1-based).
pub fn py_stick_log_lik(sticks: &[f64], discount: f64, mass: f64) -> f64 {
    if !(0.0..1.0).contains(&discount) || !(mass > 0.0) {
        return f64::NEG_INFINITY;
    }
    sticks
        .iter()
        .enumerate()
        .map(|(j, &v)| beta_log_pdf(v, 1.0 - discount, mass + discount * (j + 1) as f64))
        .sum()
}

/// Log-density of the Gamma(shape, rate) distribution.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

impl SmcModel for DpmModel {
    type State = MixtureState;

    fn initial_state(&self, rng: &mut dyn RngCore) -> Result<MixtureState> {
        self.prior_state(self.config.initial_atoms, rng)
    }

    fn mcmc_sweep(&self, state: &mut MixtureState, rng: &mut dyn RngCore) -> Result<()> {
        self.sweep(state, rng)
    }

    fn extend(&self, state: &mut MixtureState, rng: &mut dyn RngCore) -> Result<f64> {
        self.extend_state(state, rng)?;
        Ok(0.0)
    }

    fn log_likelihood(&self, state: &MixtureState) -> f64 {
        self.log_lik(state)
    }

    fn truncation_size(&self, state: &MixtureState) -> usize {
        state.atoms.len()
    }

    fn predictive_density(&self, state: &MixtureState, y: f64) -> Option<f64> {
        Some(self.density(state, y))
    }
}

/// Weighted posterior-mean density on a grid.
pub fn predictive_density<M: SmcModel>(model: &M, system: &ParticleSystem<M::State>, grid: &[f64]) -> Result<Vec<f64>> {
    let weights = system.normalized_weights()?;
    let mut out = vec![0.0; grid.len()];
    for (p, w) in system.particles.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(grid) {
            let d = model
                .predictive_density(&p.state, x)
                .ok_or_else(|| Error::Config("model does not provide a predictive density".into()))?;
            *o += w * d;
        }
    }
    Ok(out)
}

/// Mean over runs of `∫ (f_i - f_ref)² dx` by the trapezoid rule.
pub fn mise(runs: &[Vec<f64>], reference: &[f64], grid: &[f64]) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::Domain("no runs supplied".into()));
    }
    if reference.len() != grid.len() || runs.iter().any(|r| r.len() != grid.len()) {
        return Err(Error::Domain("density vectors must match the grid length".into()));
    }
    let total: f64 = runs
        .iter()
        .map(|run| {
            let sq: Vec<f64> = run.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).collect();
            trapezoid(grid, &sq)
        })
        .sum();
    Ok(total / runs.len() as f64)
}
