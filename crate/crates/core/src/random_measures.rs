//! Constructions and truncations of discrete random probability measures.
//!
//! Stick-breaking weights (plain and renormalised), Ferguson-Klass jumps
//! obtained by inverting the tail mass of a Lévy density, compound-Poisson
//! jump sampling above a level, and level schedules for the compound-Poisson
//! truncation. Only the Gamma-process Lévy density is bundled.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::numeric::{integrate, integrate_to_infinity, uniform_open};

/// Which stick-breaking process generates the Beta parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StickKind {
    DirichletProcess,
    PoissonDirichlet,
}

/// Parameters of `V_j ~ Be(a_j, b_j)` for the Dirichlet and Pitman-Yor
/// (Poisson-Dirichlet) processes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaStickParams {
    pub kind: StickKind,
    pub mass: f64,
    pub discount: f64,
}

impl BetaStickParams {
    pub fn dirichlet(mass: f64) -> Result<Self> {
        Self::new(StickKind::DirichletProcess, mass, 0.0)
    }

    pub fn pitman_yor(mass: f64, discount: f64) -> Result<Self> {
        Self::new(StickKind::PoissonDirichlet, mass, discount)
    }

    pub fn new(kind: StickKind, mass: f64, discount: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Domain(format!("discount must lie in [0, 1), got {discount}")));
        }
        if kind == StickKind::DirichletProcess && discount != 0.0 {
            return Err(Error::Domain("Dirichlet process has no discount".into()));
        }
        Ok(Self { kind, mass, discount })
    }

    /// First Beta parameter of stick `j` (1-based).
    pub fn a(&self, _j: usize) -> f64 {
        match self.kind {
            StickKind::DirichletProcess => 1.0,
            StickKind::PoissonDirichlet => 1.0 - self.discount,
        }
    }

    /// Second Beta parameter of stick `j` (1-based).
    pub fn b(&self, j: usize) -> f64 {
        match self.kind {
            StickKind::DirichletProcess => self.mass,
            StickKind::PoissonDirichlet => self.mass + self.discount * j as f64,
        }
    }

    pub fn sample_stick<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> f64 {
        sample_beta(self.a(j), self.b(j), rng)
    }
}

/// Beta draw through two Gamma variates, kept strictly inside (0, 1).
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let x = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let y = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
    let v = if x + y > 0.0 {
        x / (x + y)
    } else if a >= b {
        1.0
    } else {
        0.0
    };
    crate::numeric::clamp_unit(v)
}

pub fn beta_log_pdf(v: f64, a: f64, b: f64) -> f64 {
    if !(v > 0.0 && v < 1.0) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * v.ln() + (b - 1.0) * (-v).ln_1p() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

/// Weights of the stick-breaking truncation with the last stick forced to 1.
pub fn sb_weights(sticks: &[f64]) -> Result<Vec<f64>> {
    let n = sticks.len();
    if n == 0 {
        return Err(Error::Domain("at least one stick is required".into()));
    }
    if let Some(v) = sticks.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::Domain(format!("stick {v} outside (0, 1]")));
    }
    if sticks[n - 1] != 1.0 {
        return Err(Error::Domain("last stick of an SB truncation must equal 1".into()));
    }
    let mut remaining = 1.0;
    let mut weights = Vec::with_capacity(n);
    for &v in sticks {
        weights.push(v * remaining);
        remaining *= 1.0 - v;
    }
    Ok(weights)
}

/// Weights of the renormalised stick-breaking truncation,
/// `p_j = V_j Π_{l<j}(1 - V_l) / (1 - Π_l (1 - V_l))`.
pub fn rsb_weights(sticks: &[f64]) -> Result<Vec<f64>> {
    if sticks.is_empty() {
        return Err(Error::Domain("at least one stick is required".into()));
    }
    if let Some(v) = sticks.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::Domain(format!("stick {v} outside [0, 1]")));
    }
    let mut log_remaining: f64 = 0.0;
    let mut raw = Vec::with_capacity(sticks.len());
    for &v in sticks {
        raw.push(v * log_remaining.exp());
        log_remaining += (-v).ln_1p();
    }
    let normaliser = -log_remaining.exp_m1();
    if normaliser <= 0.0 || !normaliser.is_finite() {
        return Err(Error::Degenerate("all sticks are zero, RSB normaliser vanishes".into()));
    }
    Ok(raw.into_iter().map(|p| p / normaliser).collect())
}

/// `1 - Π_j (1 - V_j)`, the RSB normaliser, computed in log space.
pub fn rsb_normaliser(sticks: &[f64]) -> f64 {
    let log_remaining: f64 = sticks.iter().map(|v| (-v).ln_1p()).sum();
    -log_remaining.exp_m1()
}

/// A finite random probability measure `Σ p_j δ_{θ_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMeasure<A> {
    weights: Vec<f64>,
    atoms: Vec<A>,
}

impl<A> TruncatedMeasure<A> {
    pub fn new(weights: Vec<f64>, atoms: Vec<A>) -> Result<Self> {
        if weights.is_empty() || weights.len() != atoms.len() {
            return Err(Error::Domain(format!(
                "need matching non-empty weights and atoms ({} vs {})",
                weights.len(),
                atoms.len()
            )));
        }
        if weights.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Domain("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights, atoms })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> &[A] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Exponential integral `E1(x) = ∫_x^∞ e^{-y}/y dy`.
///
/// Power series for `x ≤ 1` and a Lentz continued fraction above.
pub fn exp_integral_e1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x >= 740.0 {
        return 0.0;
    }
    if x <= 1.0 {
        const EULER: f64 = 0.577_215_664_901_532_9;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..60 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        return -EULER - x.ln() - sum;
    }
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let delta = c * d;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

/// `E1(x)` by adaptive Gauss-Kronrod quadrature of
/// `e^{-x} ∫_0^∞ exp(-x(e^w - 1)) dw`.
pub fn exp_integral_e1_quadrature(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x >= 740.0 {
        return 0.0;
    }
    let upper = (745.0 / x).ln_1p();
    let tol = 1e-15 * upper.min(1.0);
    (-x).exp() * integrate(|w: f64| (-x * w.exp_m1()).exp(), 0.0, upper, tol, 1e-14)
}

/// Lévy density of a homogeneous completely random measure, described by its
/// density on `(0, ∞)` and tail mass `ζ(x) = ∫_x^∞ η(y) dy`.
pub trait LevyDensity: Send + Sync + std::fmt::Debug {
    fn density(&self, x: f64) -> f64;

    fn tail_mass(&self, x: f64) -> f64;

    /// `ζ(0+)`; infinite for infinite-activity measures.
    fn total_mass(&self) -> f64 {
        f64::INFINITY
    }

    /// `∫_x^∞ η(y) e^{-tilt·y} dy`.
    fn tilted_tail_mass(&self, x: f64, tilt: f64) -> f64 {
        integrate_to_infinity(|y| self.density(y) * (-tilt * y).exp(), x, 1e-12)
    }

    /// Solves `ζ(x) = t` by bracketing in `ln x` with Newton steps kept inside
    /// the bracket.
    fn inverse_tail_mass(&self, t: f64) -> Result<f64> {
        invert_tail_mass(self, t)
    }

    /// One jump from the density `η(x)/ζ(level)` on `(level, ∞)`.
    fn sample_tail(&self, level: f64, rng: &mut dyn RngCore) -> Result<f64> {
        let mass = self.tail_mass(level);
        let u = uniform_open(rng);
        self.inverse_tail_mass(u * mass).map(|x| x.max(level))
    }

    /// One jump from `η` restricted to the band `(lo, hi)`.
    fn sample_band(&self, lo: f64, hi: f64, rng: &mut dyn RngCore) -> Result<f64> {
        if hi.is_infinite() {
            return self.sample_tail(lo, rng);
        }
        let z_hi = self.tail_mass(hi);
        let z_lo = self.tail_mass(lo);
        let u = uniform_open(rng);
        self.inverse_tail_mass(z_hi + u * (z_lo - z_hi))
            .map(|x| x.clamp(lo, hi))
    }

    /// Exact draw from the density proportional to `η(J) J^count e^{-tilt J}`
    /// on `(level, ∞)`, when the family admits one.
    fn sample_occupied(
        &self,
        _count: usize,
        _tilt: f64,
        _level: f64,
        _rng: &mut dyn RngCore,
    ) -> Option<f64> {
        None
    }
}

fn invert_tail_mass<L: LevyDensity + ?Sized>(levy: &L, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::OutOfRange(format!("tail mass target {t} must be positive and finite")));
    }
    if t >= levy.total_mass() {
        return Err(Error::OutOfRange(format!(
            "arrival {t} exceeds the total mass {} of the Lévy measure",
            levy.total_mass()
        )));
    }
    let f = |u: f64| levy.tail_mass(u.exp()) - t;
    // geometric expansion of the bracket in u = ln x
    let mut lo = 0.0;
    let mut hi = 0.0;
    if f(0.0) > 0.0 {
        let mut step = 1.0;
        loop {
            hi += step;
            if f(hi) <= 0.0 {
                break;
            }
            lo = hi;
            step *= 2.0;
            if hi > 700.0 {
                return Err(Error::Numeric(format!("could not bracket ζ^-1({t}) from above")));
            }
        }
    } else {
        let mut step = 1.0;
        loop {
            lo -= step;
            if f(lo) > 0.0 {
                break;
            }
            hi = lo;
            step *= 2.0;
            if lo < -700.0 {
                return Err(Error::Numeric(format!("could not bracket ζ^-1({t}) from below")));
            }
        }
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let x = u.exp();
        let value = levy.tail_mass(x) - t;
        if value == 0.0 {
            return Ok(x);
        }
        if value > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        // dζ/du = -η(x) x
        let slope = -levy.density(x) * x;
        let newton = if slope < 0.0 && slope.is_finite() { u - value / slope } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo) < 1e-11 || (next - u).abs() < 1e-12 {
            return Ok(next.exp());
        }
        u = next;
    }
    Err(Error::Numeric(format!("tail-mass inversion for t = {t} did not converge")))
}

/// Gamma process: `η(x) = M x^{-1} e^{-x}`, `ζ(x) = M E1(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaProcess {
    pub mass: f64,
}

impl GammaProcess {
    pub fn new(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Domain(format!("Gamma-process mass must be positive, got {mass}")));
        }
        Ok(Self { mass })
    }
}

impl LevyDensity for GammaProcess {
    fn density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.mass * (-x).exp() / x
    }

    fn tail_mass(&self, x: f64) -> f64 {
        self.mass * exp_integral_e1(x)
    }

    fn tilted_tail_mass(&self, x: f64, tilt: f64) -> f64 {
        self.mass * exp_integral_e1((1.0 + tilt) * x)
    }

    fn sample_tail(&self, level: f64, rng: &mut dyn RngCore) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::Domain(format!("level must be positive, got {level}")));
        }
        // Rejection from the envelope x^{-1} on (L, 1) plus e^{-x} on (1, ∞).
        let log_span = if level < 1.0 { -level.ln() } else { 0.0 };
        let exp_mass = if level < 1.0 { (-1.0f64).exp() } else { (-level).exp() / level };
        for _ in 0..100_000 {
            let pick_first = rng.random::<f64>() * (log_span + exp_mass) < log_span;
            if pick_first {
                let x = (level.ln() * (1.0 - rng.random::<f64>())).exp();
                if x > level && rng.random::<f64>() < (-x).exp() {
                    return Ok(x);
                }
            } else {
                let start = level.max(1.0);
                let e: f64 = Exp1.sample(rng);
                let x = start + e;
                if rng.random::<f64>() < start / x {
                    return Ok(x);
                }
            }
        }
        Err(Error::Numeric("Gamma-process tail sampler failed to accept".into()))
    }

    fn sample_band(&self, lo: f64, hi: f64, rng: &mut dyn RngCore) -> Result<f64> {
        if hi.is_infinite() {
            return self.sample_tail(lo, rng);
        }
        if hi - lo <= 2.0 {
            // log-uniform proposal, acceptance e^{-(x - lo)} >= e^{-2}
            let span = (hi / lo).ln();
            for _ in 0..100_000 {
                let x = lo * (span * rng.random::<f64>()).exp();
                if x > lo && x < hi && rng.random::<f64>() < (lo - x).exp() {
                    return Ok(x);
                }
            }
        }
        let z_hi = self.tail_mass(hi);
        let z_lo = self.tail_mass(lo);
        let u = uniform_open(rng);
        self.inverse_tail_mass(z_hi + u * (z_lo - z_hi))
            .map(|x| x.clamp(lo, hi))
    }

    fn sample_occupied(&self, count: usize, tilt: f64, level: f64, rng: &mut dyn RngCore) -> Option<f64> {
        sample_truncated_gamma(count as f64, 1.0 + tilt, level, rng)
    }
}

/// Gamma(shape, rate) restricted to `(level, ∞)`.
///
/// Uses plain rejection when the retained mass is large and inverts the
/// regularised upper incomplete gamma function otherwise. Returns `None` when
/// the retained mass underflows.
pub fn sample_truncated_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, level: f64, rng: &mut R) -> Option<f64> {
    let scaled_level = rate * level;
    let retained = if scaled_level <= 0.0 { 1.0 } else { gamma_ur(shape, scaled_level) };
    if !(retained > 1e-280) {
        return None;
    }
    if retained > 0.25 {
        let gamma = Gamma::new(shape, 1.0 / rate).ok()?;
        loop {
            let x = gamma.sample(rng);
            if x > level {
                return Some(x);
            }
        }
    }
    let target = uniform_open(rng) * retained;
    // solve Q(shape, y) = target for y > scaled_level, Q decreasing in y
    let mut lo = scaled_level;
    let mut hi = scaled_level.max(shape) + 1.0;
    while gamma_ur(shape, hi) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return None;
        }
    }
    let log_norm = ln_gamma(shape);
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let value = gamma_ur(shape, y) - target;
        if value > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let slope = -((shape - 1.0) * y.ln() - y - log_norm).exp();
        let newton = if slope < 0.0 { y - value / slope } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo) <= 1e-12 * hi || (next - y).abs() <= 1e-14 * y {
            y = next;
            break;
        }
        y = next;
    }
    Some((y / rate).max(level * (1.0 + f64::EPSILON)))
}

/// Ferguson-Klass jumps `J_j = ζ^{-1}(t_j)` for increasing arrival times.
pub fn fk_jumps<L: LevyDensity + ?Sized>(levy: &L, arrivals: &[f64]) -> Result<Vec<f64>> {
    if arrivals.first().is_some_and(|t| !(*t > 0.0)) {
        return Err(Error::Domain("arrival times must be positive".into()));
    }
    if arrivals.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("arrival times must be strictly increasing".into()));
    }
    let jumps = arrivals
        .iter()
        .map(|&t| levy.inverse_tail_mass(t))
        .collect::<Result<Vec<_>>>()?;
    if jumps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Numeric("inverted jumps are not strictly decreasing".into()));
    }
    Ok(jumps)
}

/// Next Ferguson-Klass jump after `previous`: the next unit-rate arrival is
/// `ζ(previous) + Exp(1)`.
pub fn fk_extend<L: LevyDensity + ?Sized, R: Rng + ?Sized>(levy: &L, previous: f64, rng: &mut R) -> Result<f64> {
    if !(previous > 0.0) {
        return Err(Error::Domain(format!("previous jump must be positive, got {previous}")));
    }
    let gap: f64 = Exp1.sample(rng);
    let arrival = levy.tail_mass(previous) + gap.max(f64::MIN_POSITIVE);
    let next = levy.inverse_tail_mass(arrival)?;
    if !(next < previous) {
        return Err(Error::Numeric(format!(
            "next FK jump {next} does not decrease from {previous}"
        )));
    }
    Ok(next)
}

/// Jumps of the compound-Poisson approximation above `level`:
/// `K ~ Pn(ζ(level))` i.i.d. jumps with density `η(x)/ζ(level)`, unordered.
pub fn cpp_sample<L: LevyDensity + ?Sized>(levy: &L, level: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    if !(level > 0.0) {
        return Err(Error::Domain(format!("level must be positive, got {level}")));
    }
    let mass = levy.tail_mass(level);
    let count = poisson_count(mass, rng)?;
    (0..count).map(|_| levy.sample_tail(level, rng)).collect()
}

pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::Numeric(format!("Poisson mean {mean} is not finite")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(mean)
        .map_err(|e| Error::Numeric(format!("Poisson({mean}): {e}")))?
        .sample(rng);
    Ok(draw as usize)
}

/// How the compound-Poisson truncation level decreases between iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelScheme {
    /// `L_k = L_{k-1} e^{-ξ}`.
    Geometric { xi: f64 },
    /// `ζ(L_k) = ζ(L_{k-1}) + 1`: one expected new jump per step.
    OneAtom,
}

pub fn next_level<L: LevyDensity + ?Sized>(levy: &L, scheme: LevelScheme, current: f64) -> Result<f64> {
    match scheme {
        LevelScheme::Geometric { xi } => {
            if !(xi > 0.0) {
                return Err(Error::Domain(format!("geometric level step must be positive, got {xi}")));
            }
            Ok(current * (-xi).exp())
        }
        LevelScheme::OneAtom => {
            let next = levy.inverse_tail_mass(levy.tail_mass(current) + 1.0)?;
            if !(next < current) {
                return Err(Error::Numeric("one-atom level schedule failed to decrease".into()));
            }
            Ok(next)
        }
    }
}

/// `L_k` of the level schedule started at `L_1` (`k` is 1-based).
pub fn cpp_level_sequence<L: LevyDensity + ?Sized>(first: f64, scheme: LevelScheme, levy: &L, k: usize) -> Result<f64> {
    if !(first > 0.0) {
        return Err(Error::Domain(format!("first level must be positive, got {first}")));
    }
    if k == 0 {
        return Err(Error::Domain("level index is 1-based".into()));
    }
    match scheme {
        LevelScheme::Geometric { xi } => {
            if !(xi > 0.0) {
                return Err(Error::Domain(format!("geometric level step must be positive, got {xi}")));
            }
            Ok(first * (-(k as f64 - 1.0) * xi).exp())
        }
        LevelScheme::OneAtom => {
            let mut level = first;
            for _ in 1..k {
                level = next_level(levy, scheme, level)?;
            }
            Ok(level)
        }
    }
}

/// Level `L` with `ζ(L) = expected_atoms`.
pub fn level_for_expected_atoms<L: LevyDensity + ?Sized>(levy: &L, expected_atoms: f64) -> Result<f64> {
    levy.inverse_tail_mass(expected_atoms)
}

/// `∫_lo^hi η(x) dx` for finite bands, used by tests and diagnostics.
pub fn band_mass<L: LevyDensity + ?Sized>(levy: &L, lo: f64, hi: f64) -> f64 {
    if hi.is_infinite() {
        levy.tail_mass(lo)
    } else {
        integrate(|x| levy.density(x), lo, hi, 1e-12, 1e-12)
    }
}
