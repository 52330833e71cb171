//! Semiparametric linear mixed model `y_it = X_it β + γ_i + ε_it` with
//! mean-constrained DP mixtures for the errors and the random intercepts.
//! The random effects are integrated out of the likelihood.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::ccv::{CcvBlock, CcvPrior, ScalePrior};
use crate::error::{Error, Result};
use crate::numeric::{normal_log_pdf, sample_log_categorical, weighted_kde, weighted_quantile, LN_2PI};
use crate::smc::{ParticleSystem, SmcModel};

/// Rectangular panel: `n` subjects observed `t` times, `p` fixed-effect
/// regressors, random intercept only.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmData {
    n: usize,
    t: usize,
    p: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    pub regressors: Vec<String>,
}

impl LmmData {
    /// `y[i][t]` and `x[i][t][k]`.
    pub fn new(y: Vec<Vec<f64>>, x: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = y.len();
        if x.len() != n {
            return Err(Error::Data(format!("{n} response rows but {} regressor rows", x.len())));
        }
        let t = y.first().map_or(0, Vec::len);
        let p = x.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if n > 0 && (t == 0 || p == 0) {
            return Err(Error::Data("panel needs at least one period and one regressor".into()));
        }
        let mut flat_y = Vec::with_capacity(n * t);
        let mut flat_x = Vec::with_capacity(n * t * p);
        for (i, (yi, xi)) in y.iter().zip(&x).enumerate() {
            if yi.len() != t || xi.len() != t {
                return Err(Error::Data(format!("subject {i} does not have {t} observations")));
            }
            for (v, row) in yi.iter().zip(xi) {
                if row.len() != p {
                    return Err(Error::Data(format!("subject {i} has a regressor row of length {}", row.len())));
                }
                if !v.is_finite() || row.iter().any(|r| !r.is_finite()) {
                    return Err(Error::Data(format!("subject {i} has a non-finite value")));
                }
                flat_y.push(*v);
                flat_x.extend_from_slice(row);
            }
        }
        Ok(Self {
            n,
            t,
            p,
            y: flat_y,
            x: flat_x,
            regressors: (0..p).map(|k| format!("x{k}")).collect(),
        })
    }

    pub fn subjects(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.t
    }

    pub fn regressor_count(&self) -> usize {
        self.p
    }

    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.t + t]
    }

    pub fn x_row(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.t + t) * self.p;
        &self.x[start..start + self.p]
    }

    /// Same design, new responses.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::Data("response vector does not match the panel".into()));
        }
        Ok(Self { y, ..self.clone() })
    }

    /// `y - Xβ`, flattened subject-major.
    pub fn residuals(&self, beta: &[f64]) -> Vec<f64> {
        self.y
            .iter()
            .zip(self.x.chunks(self.p.max(1)))
            .map(|(y, row)| y - row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
            .collect()
    }
}

/// Reads a grouped panel with columns `subject, age, height, group`.
///
/// Regressors are one dummy per group (sorted by label) followed by age;
/// the response is height. Rows of a subject keep their file order.
pub fn parse_grouped_csv(text: &str) -> Result<LmmData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let (c_subject, c_age, c_height, c_group) = (column("subject")?, column("age")?, column("height")?, column("group")?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut groups: BTreeMap<String, String> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
        let field = |c: usize| record.get(c).unwrap_or("").to_string();
        let number = |c: usize| {
            field(c)
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {}: '{}' is not a number", line + 2, field(c))))
        };
        let subject = field(c_subject);
        let group = field(c_group);
        if let Some(g) = groups.get(&subject) {
            if *g != group {
                return Err(Error::Data(format!("subject {subject} appears in groups {g} and {group}")));
            }
        } else {
            groups.insert(subject.clone(), group);
            order.push(subject.clone());
        }
        rows.entry(subject).or_default().push((number(c_age)?, number(c_height)?));
    }
    if order.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    let labels: Vec<String> = {
        let mut l: Vec<String> = groups.values().cloned().collect();
        l.sort();
        l.dedup();
        l
    };
    let mut y = Vec::with_capacity(order.len());
    let mut x = Vec::with_capacity(order.len());
    for subject in &order {
        let g = labels.iter().position(|l| *l == groups[subject]).expect("label collected");
        let obs = &rows[subject];
        y.push(obs.iter().map(|(_, h)| *h).collect());
        x.push(
            obs.iter()
                .map(|(age, _)| {
                    let mut row = vec![0.0; labels.len() + 1];
                    row[g] = 1.0;
                    row[labels.len()] = *age;
                    row
                })
                .collect(),
        );
    }
    let mut data = LmmData::new(y, x)?;
    data.regressors = labels.iter().map(|l| format!("group_{l}")).chain(std::iter::once("age".to_string())).collect();
    Ok(data)
}

pub fn load_grouped_csv<P: AsRef<Path>>(path: P) -> Result<LmmData> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_grouped_csv(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmPriors {
    pub eps: CcvPrior,
    pub gam: CcvPrior,
    /// prior precision of each coefficient, `β ~ N(0, I/τ)`
    pub beta_precision: f64,
}

impl Default for LmmPriors {
    fn default() -> Self {
        Self {
            eps: CcvPrior::new(ScalePrior::folded_t(1.0, 0.01).expect("valid")),
            gam: CcvPrior::new(ScalePrior::folded_t(1.0, 1.0).expect("valid")),
            beta_precision: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmConfig {
    pub initial_atoms: usize,
}

impl Default for LmmConfig {
    fn default() -> Self {
        Self { initial_atoms: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmState {
    pub beta: Vec<f64>,
    pub eps: CcvBlock,
    pub gam: CcvBlock,
    /// subject-major, `n·T` entries
    pub s_eps: Vec<usize>,
    pub s_gam: Vec<usize>,
}

impl LmmState {
    pub fn truncation(&self) -> usize {
        self.eps.len()
    }

    pub fn eps_counts(&self) -> Vec<usize> {
        counts(&self.s_eps, self.eps.len())
    }

    pub fn gam_counts(&self) -> Vec<usize> {
        counts(&self.s_gam, self.gam.len())
    }
}

fn counts(alloc: &[usize], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for &s in alloc {
        c[s] += 1;
    }
    c
}

#[derive(Debug, Clone)]
pub struct LmmModel {
    pub data: LmmData,
    pub priors: LmmPriors,
    pub config: LmmConfig,
}

impl LmmModel {
    pub fn new(data: LmmData, priors: LmmPriors, config: LmmConfig) -> Result<Self> {
        priors.eps.validate()?;
        priors.gam.validate()?;
        if !(priors.beta_precision > 0.0) {
            return Err(Error::Config("coefficient prior precision must be positive".into()));
        }
        if config.initial_atoms == 0 {
            return Err(Error::Config("initial truncation must be at least 1".into()));
        }
        Ok(Self { data, priors, config })
    }

    pub fn check_state(&self, state: &LmmState) -> Result<()> {
        let n = state.eps.len();
        if state.gam.len() != n {
            return Err(Error::Domain("blocks have different truncations".into()));
        }
        if state.beta.len() != self.data.p
            || state.s_eps.len() != self.data.n * self.data.t
            || state.s_gam.len() != self.data.n
        {
            return Err(Error::Domain("state dimensions do not match the data".into()));
        }
        if state.s_eps.iter().chain(&state.s_gam).any(|&s| s >= n) {
            return Err(Error::Domain("allocation outside the truncation".into()));
        }
        Ok(())
    }

    /// Log of the likelihood with the random effects integrated out, given
    /// the residuals `y - Xβ`; `-∞` if the weights are undefined.
    pub fn log_f_from_residuals(
        &self,
        resid: &[f64],
        eps: &CcvBlock,
        gam: &CcvBlock,
        s_eps: &[usize],
        s_gam: &[usize],
    ) -> f64 {
        let (Ok(we), Ok(wg)) = (eps.weights(), gam.weights()) else {
            return f64::NEG_INFINITY;
        };
        let me = eps.centred_means(&we);
        let mg = gam.centred_means(&wg);
        let ae = eps.kernel_var();
        let ag = gam.kernel_var();
        let (n, t) = (self.data.n, self.data.t);
        let d = t as f64 / ae + 1.0 / ag;
        let mut quad = 0.0;
        for i in 0..n {
            let dg = mg[s_gam[i]];
            let mut c = dg / ag;
            let mut ss = dg * dg / ag;
            for k in 0..t {
                let idx = i * t + k;
                let de = resid[idx] - me[s_eps[idx]];
                c += de / ae;
                ss += de * de / ae;
            }
            quad += ss - c * c / d;
        }
        let (nf, tf) = (n as f64, t as f64);
        -0.5 * quad - 0.5 * nf * ag.ln() - 0.5 * nf * tf * ae.ln() - 0.5 * nf * d.ln() - 0.5 * nf * tf * LN_2PI
    }

    pub fn collapsed_log_lik(&self, state: &LmmState) -> Result<f64> {
        let resid = self.data.residuals(&state.beta);
        let v = self.log_f_from_residuals(&resid, &state.eps, &state.gam, &state.s_eps, &state.s_gam);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("collapsed log-likelihood is {v}")));
        }
        Ok(v)
    }

    pub fn update_eps_block<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) -> Result<()> {
        let resid = self.data.residuals(&state.beta);
        let counts = state.eps_counts();
        let LmmState { eps, gam, s_eps, s_gam, .. } = state;
        let log_f = |b: &CcvBlock| self.log_f_from_residuals(&resid, b, gam, s_eps, s_gam);
        eps.update_means(&log_f, rng)?;
        eps.update_sticks(&log_f, &counts, rng)?;
        eps.update_mass(&self.priors.eps, rng)?;
        eps.update_a(&log_f, &self.priors.eps, rng)?;
        eps.update_var(&log_f, &self.priors.eps, rng)
    }

    pub fn update_gam_block<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) -> Result<()> {
        let resid = self.data.residuals(&state.beta);
        let counts = state.gam_counts();
        let LmmState { eps, gam, s_eps, s_gam, .. } = state;
        let log_f = |b: &CcvBlock| self.log_f_from_residuals(&resid, eps, b, s_eps, s_gam);
        gam.update_means(&log_f, rng)?;
        gam.update_sticks(&log_f, &counts, rng)?;
        gam.update_mass(&self.priors.gam, rng)?;
        gam.update_a(&log_f, &self.priors.gam, rng)?;
        gam.update_var(&log_f, &self.priors.gam, rng)
    }

    /// Log-probabilities of `s^ε_it = j` for every `j`.
    pub fn s_eps_log_probs(&self, state: &LmmState, resid: &[f64], i: usize, k: usize) -> Result<Vec<f64>> {
        let we = state.eps.weights()?;
        let wg = state.gam.weights()?;
        let me = state.eps.centred_means(&we);
        let mg = state.gam.centred_means(&wg);
        let (ae, ag) = (state.eps.kernel_var(), state.gam.kernel_var());
        let t = self.data.t;
        let d = t as f64 / ae + 1.0 / ag;
        let mut c_rest = mg[state.s_gam[i]] / ag;
        for l in (0..t).filter(|&l| l != k) {
            let idx = i * t + l;
            c_rest += (resid[idx] - me[state.s_eps[idx]]) / ae;
        }
        let r = resid[i * t + k];
        Ok(we
            .iter()
            .zip(&me)
            .map(|(p, m)| {
                let e = r - m;
                let c = c_rest + e / ae;
                p.ln() - 0.5 * (e * e / ae - c * c / d)
            })
            .collect())
    }

    /// Log-probabilities of `s^γ_i = j` for every `j`.
    pub fn s_gam_log_probs(&self, state: &LmmState, resid: &[f64], i: usize) -> Result<Vec<f64>> {
        let we = state.eps.weights()?;
        let wg = state.gam.weights()?;
        let me = state.eps.centred_means(&we);
        let mg = state.gam.centred_means(&wg);
        let (ae, ag) = (state.eps.kernel_var(), state.gam.kernel_var());
        let t = self.data.t;
        let d = t as f64 / ae + 1.0 / ag;
        let c_eps: f64 = (0..t).map(|l| (resid[i * t + l] - me[state.s_eps[i * t + l]]) / ae).sum();
        Ok(wg
            .iter()
            .zip(&mg)
            .map(|(p, m)| {
                let c = c_eps + m / ag;
                p.ln() - 0.5 * (m * m / ag - c * c / d)
            })
            .collect())
    }

    pub fn update_s_eps<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) -> Result<()> {
        let resid = self.data.residuals(&state.beta);
        for i in 0..self.data.n {
            for k in 0..self.data.t {
                let lp = self.s_eps_log_probs(state, &resid, i, k)?;
                state.s_eps[i * self.data.t + k] = sample_log_categorical(&lp, rng)?;
            }
        }
        Ok(())
    }

    pub fn update_s_gam<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) -> Result<()> {
        let resid = self.data.residuals(&state.beta);
        for i in 0..self.data.n {
            let lp = self.s_gam_log_probs(state, &resid, i)?;
            state.s_gam[i] = sample_log_categorical(&lp, rng)?;
        }
        Ok(())
    }

    /// Draws the random effects `γ_i ~ N(c_i/d, 1/d)`.
    pub fn sample_random_effects<R: Rng + ?Sized>(&self, state: &LmmState, rng: &mut R) -> Result<Vec<f64>> {
        let resid = self.data.residuals(&state.beta);
        let (mean, var) = self.random_effect_moments(state, &resid)?;
        Ok(mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + var.sqrt() * z
            })
            .collect())
    }

    /// `(c_i/d for each i, 1/d)`.
    pub fn random_effect_moments(&self, state: &LmmState, resid: &[f64]) -> Result<(Vec<f64>, f64)> {
        let we = state.eps.weights()?;
        let wg = state.gam.weights()?;
        let me = state.eps.centred_means(&we);
        let mg = state.gam.centred_means(&wg);
        let (ae, ag) = (state.eps.kernel_var(), state.gam.kernel_var());
        let t = self.data.t;
        let d = t as f64 / ae + 1.0 / ag;
        let means = (0..self.data.n)
            .map(|i| {
                let c = mg[state.s_gam[i]] / ag
                    + (0..t).map(|l| (resid[i * t + l] - me[state.s_eps[i * t + l]]) / ae).sum::<f64>();
                c / d
            })
            .collect();
        Ok((means, 1.0 / d))
    }

    /// Mean and covariance of `β` given the random effects.
    pub fn beta_conditional(&self, state: &LmmState, gamma: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let we = state.eps.weights()?;
        let me = state.eps.centred_means(&we);
        let ae = state.eps.kernel_var();
        let (n, t, p) = (self.data.n, self.data.t, self.data.p);
        let mut prec = DMatrix::<f64>::identity(p, p) * self.priors.beta_precision;
        let mut rhs = DVector::<f64>::zeros(p);
        for i in 0..n {
            for k in 0..t {
                let x = self.data.x_row(i, k);
                let z = self.data.y(i, k) - gamma[i] - me[state.s_eps[i * t + k]];
                for a in 0..p {
                    rhs[a] += x[a] * z / ae;
                    for b in 0..p {
                        prec[(a, b)] += x[a] * x[b] / ae;
                    }
                }
            }
        }
        let cov = prec
            .cholesky()
            .ok_or_else(|| Error::Numeric("coefficient precision is not positive definite".into()))?
            .inverse();
        let mean = &cov * rhs;
        Ok((mean, cov))
    }

    pub fn update_beta<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) -> Result<()> {
        let gamma = self.sample_random_effects(state, rng)?;
        let (mean, cov) = self.beta_conditional(state, &gamma)?;
        state.beta = sample_mvn(&mean, &cov, rng)?;
        Ok(())
    }

    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) -> Result<()> {
        self.update_eps_block(state, rng)?;
        self.update_gam_block(state, rng)?;
        self.update_s_eps(state, rng)?;
        self.update_s_gam(state, rng)?;
        self.update_beta(state, rng)
    }

    /// Adds one atom to each block and moves each allocation to it with
    /// probability `1 - r`.
    pub fn extend_state<R: Rng + ?Sized>(&self, state: &mut LmmState, rng: &mut R) {
        for (block, alloc) in [(&mut state.eps, &mut state.s_eps), (&mut state.gam, &mut state.s_gam)] {
            block.extend(rng);
            let r = block.retain_probability();
            let new = block.len() - 1;
            for s in alloc.iter_mut() {
                if rng.random::<f64>() >= r {
                    *s = new;
                }
            }
        }
    }

    /// A joint draw of all parameters and allocations from the prior.
    pub fn prior_state<R: Rng + ?Sized>(&self, n_atoms: usize, rng: &mut R) -> Result<LmmState> {
        let eps = CcvBlock::sample_prior(n_atoms, &self.priors.eps, rng)?;
        let gam = CcvBlock::sample_prior(n_atoms, &self.priors.gam, rng)?;
        let sd = self.priors.beta_precision.powf(-0.5);
        let beta = (0..self.data.p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect();
        let le: Vec<f64> = eps.weights()?.iter().map(|p| p.ln()).collect();
        let lg: Vec<f64> = gam.weights()?.iter().map(|p| p.ln()).collect();
        let s_eps = (0..self.data.n * self.data.t)
            .map(|_| sample_log_categorical(&le, rng))
            .collect::<Result<_>>()?;
        let s_gam = (0..self.data.n)
            .map(|_| sample_log_categorical(&lg, rng))
            .collect::<Result<_>>()?;
        Ok(LmmState { beta, eps, gam, s_eps, s_gam })
    }

    /// A data-informed starting point for the initial MCMC chain.
    pub fn starting_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LmmState> {
        let (n, t, p) = (self.data.n, self.data.t, self.data.p);
        let mut xtx = DMatrix::<f64>::identity(p, p) * 1e-8;
        let mut xty = DVector::<f64>::zeros(p);
        for i in 0..n {
            for k in 0..t {
                let x = self.data.x_row(i, k);
                for a in 0..p {
                    xty[a] += x[a] * self.data.y(i, k);
                    for b in 0..p {
                        xtx[(a, b)] += x[a] * x[b];
                    }
                }
            }
        }
        let beta: Vec<f64> = xtx
            .cholesky()
            .ok_or_else(|| Error::Numeric("design matrix is rank deficient".into()))?
            .solve(&xty)
            .iter()
            .copied()
            .collect();
        let resid = self.data.residuals(&beta);
        let subject_means: Vec<f64> = resid.chunks(t).map(|c| c.iter().sum::<f64>() / t as f64).collect();
        let var_gam = variance(&subject_means).max(1e-3);
        let within: Vec<f64> = resid
            .chunks(t)
            .zip(&subject_means)
            .flat_map(|(c, m)| c.iter().map(move |r| r - m))
            .collect();
        let var_eps = variance(&within).max(1e-6);
        let n_atoms = self.config.initial_atoms;
        let eps = CcvBlock::from_hyper(n_atoms, 0.5, var_eps, 1.0, rng)?;
        let gam = CcvBlock::from_hyper(n_atoms, 0.5, var_gam, 1.0, rng)?;
        let s_eps = (0..n * t).map(|_| rng.random_range(0..n_atoms)).collect();
        let s_gam = (0..n).map(|_| rng.random_range(0..n_atoms)).collect();
        Ok(LmmState { beta, eps, gam, s_eps, s_gam })
    }

    /// Responses drawn from the model given every parameter and allocation.
    pub fn simulate_responses<R: Rng + ?Sized>(&self, state: &LmmState, rng: &mut R) -> Result<LmmData> {
        let we = state.eps.weights()?;
        let wg = state.gam.weights()?;
        let me = state.eps.centred_means(&we);
        let mg = state.gam.centred_means(&wg);
        let (se, sg) = (state.eps.kernel_var().sqrt(), state.gam.kernel_var().sqrt());
        let t = self.data.t;
        let mut y = Vec::with_capacity(self.data.n * t);
        for i in 0..self.data.n {
            let z: f64 = StandardNormal.sample(rng);
            let gamma = mg[state.s_gam[i]] + sg * z;
            for k in 0..t {
                let xb: f64 = self.data.x_row(i, k).iter().zip(&state.beta).map(|(x, b)| x * b).sum();
                let z: f64 = StandardNormal.sample(rng);
                y.push(xb + gamma + me[state.s_eps[i * t + k]] + se * z);
            }
        }
        self.data.with_responses(y)
    }
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 1.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?
        .l();
    let z = DVector::<f64>::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    Ok((mean + l * z).iter().copied().collect())
}

impl SmcModel for LmmModel {
    type State = LmmState;

    fn initial_state(&self, rng: &mut dyn RngCore) -> Result<LmmState> {
        self.starting_state(rng)
    }

    fn mcmc_sweep(&self, state: &mut LmmState, rng: &mut dyn RngCore) -> Result<()> {
        self.sweep(state, rng)
    }

    fn extend(&self, state: &mut LmmState, rng: &mut dyn RngCore) -> Result<f64> {
        self.extend_state(state, rng);
        Ok(0.0)
    }

    fn log_likelihood(&self, state: &LmmState) -> f64 {
        self.collapsed_log_lik(state).unwrap_or(f64::NEG_INFINITY)
    }

    fn truncation_size(&self, state: &LmmState) -> usize {
        state.truncation()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl MarginalSummary {
    pub fn from_weighted(values: &[f64], weights: &[f64], grid_points: usize) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        let mean = values.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
        let sd = (values.iter().zip(weights).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total).sqrt();
        let q025 = weighted_quantile(values, weights, 0.025)?;
        let q975 = weighted_quantile(values, weights, 0.975)?;
        let spread = if sd > 0.0 { 4.0 * sd } else { 1e-6 * mean.abs().max(1.0) };
        let grid = crate::numeric::linspace(mean - spread, mean + spread, grid_points.max(2));
        let density = weighted_kde(values, weights, &grid)?;
        Ok(Self {
            mean,
            sd,
            q025,
            median: weighted_quantile(values, weights, 0.5)?,
            q975,
            grid,
            density,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmSummary {
    pub f_eps: Vec<f64>,
    pub f_gam: Vec<f64>,
    pub beta: Vec<MarginalSummary>,
}

/// Posterior-mean error and random-effect densities, and coefficient
/// marginals.
pub fn lmm_summaries(system: &ParticleSystem<LmmState>, grid_eps: &[f64], grid_gam: &[f64]) -> Result<LmmSummary> {
    let weights = system.normalized_weights()?;
    let mut f_eps = vec![0.0; grid_eps.len()];
    let mut f_gam = vec![0.0; grid_gam.len()];
    for (particle, w) in system.particles.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for (out, grid, block) in [
            (&mut f_eps, grid_eps, &particle.state.eps),
            (&mut f_gam, grid_gam, &particle.state.gam),
        ] {
            let p = block.weights()?;
            let m = block.centred_means(&p);
            let v = block.kernel_var();
            for (o, &x) in out.iter_mut().zip(grid) {
                *o += w * p.iter().zip(&m).map(|(pj, mj)| pj * normal_log_pdf(x, *mj, v).exp()).sum::<f64>();
            }
        }
    }
    let p = system.particles.first().map_or(0, |q| q.state.beta.len());
    let beta = (0..p)
        .map(|k| {
            let values: Vec<f64> = system.particles.iter().map(|q| q.state.beta[k]).collect();
            MarginalSummary::from_weighted(&values, &weights, 200)
        })
        .collect::<Result<_>>()?;
    Ok(LmmSummary { f_eps, f_gam, beta })
}
