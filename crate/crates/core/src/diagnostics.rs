//! Run diagnostics: stop-rule audit, batch means, long fixed-truncation
//! reference runs, goodness-of-fit statistics and a Geweke joint-distribution
//! harness.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::smc::{SmcModel, TraceRow};

/// Recomputes the stopping index from a trace: the first iteration closing a
/// run of `m_stop` consecutive discrepancies below `delta`.
pub fn audit_stop(trace: &[TraceRow], delta: f64, m_stop: usize) -> Option<usize> {
    let mut below = 0;
    for row in trace {
        if row.discrepancy < delta {
            below += 1;
        } else {
            below = 0;
        }
        if below >= m_stop {
            return Some(row.iteration);
        }
    }
    None
}

/// Mean and batch-means standard error with `batches` equal batches (the
/// tail that does not fill a batch is dropped).
pub fn batch_means(series: &[f64], batches: usize) -> Result<(f64, f64)> {
    if batches < 2 || series.len() < batches {
        return Err(Error::Domain(format!(
            "need at least two batches and one value per batch, got {} values for {batches} batches",
            series.len()
        )));
    }
    let size = series.len() / batches;
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((grand, (var / batches as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldStandard {
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub density_se: Vec<f64>,
    pub iterations: usize,
}

/// Long MCMC run of the model's own kernel at a fixed truncation.
///
/// `probes` maps a state to the scalar summaries to average; the density is
/// averaged on `grid` when the model provides one. Standard errors come from
/// `batches` batch means.
#[allow(clippy::too_many_arguments)]
pub fn gold_standard_run<M, F, R>(
    model: &M,
    mut state: M::State,
    burn_in: usize,
    iters: usize,
    batches: usize,
    probes: F,
    grid: &[f64],
    rng: &mut R,
) -> Result<GoldStandard>
where
    M: SmcModel,
    F: Fn(&M::State) -> Vec<f64>,
    R: rand::RngCore,
{
    for _ in 0..burn_in {
        model.mcmc_sweep(&mut state, rng)?;
    }
    let mut probe_series: Vec<Vec<f64>> = Vec::new();
    let mut density_series: Vec<Vec<f64>> = vec![Vec::with_capacity(iters); grid.len()];
    for it in 0..iters {
        model.mcmc_sweep(&mut state, rng)?;
        let p = probes(&state);
        if it == 0 {
            probe_series = vec![Vec::with_capacity(iters); p.len()];
        }
        for (s, v) in probe_series.iter_mut().zip(p) {
            s.push(v);
        }
        for (s, &x) in density_series.iter_mut().zip(grid) {
            let d = model
                .predictive_density(&state, x)
                .ok_or_else(|| Error::Config("model does not provide a density".into()))?;
            s.push(d);
        }
    }
    let summarise = |series: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<f64>)> {
        let pairs = series.iter().map(|s| batch_means(s, batches)).collect::<Result<Vec<_>>>()?;
        Ok(pairs.into_iter().unzip())
    };
    let (means, std_errors) = summarise(&probe_series)?;
    let (density, density_se) = summarise(&density_series)?;
    Ok(GoldStandard {
        means,
        std_errors,
        grid: grid.to_vec(),
        density,
        density_se,
        iterations: iters,
    })
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, effective_n: f64) -> f64 {
    let s = effective_n.sqrt();
    kolmogorov_tail((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov-Smirnov statistic and p-value against `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    Ok((d, ks_p(d, n)))
}

/// Two-sample Kolmogorov-Smirnov statistic and p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok((d, ks_p(d, na * nb / (na + nb))))
}

/// Pearson chi-square statistic and upper-tail p-value; cells with zero
/// expectation must have zero counts and are skipped.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::Domain("need matching observed and expected cells (at least two)".into()));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (o, e) in observed.iter().zip(expected) {
        if *e > 0.0 {
            stat += (o - e).powi(2) / e;
            cells += 1;
        } else if *o > 0.0 {
            return Ok((f64::INFINITY, 0.0));
        }
    }
    if cells < 2 {
        return Err(Error::Domain("fewer than two cells with positive expectation".into()));
    }
    let dist = ChiSquared::new((cells - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub names: Vec<String>,
    pub ks_statistics: Vec<f64>,
    pub p_values: Vec<f64>,
}

impl GewekeReport {
    pub fn min_p_value(&self) -> f64 {
        self.p_values.iter().copied().fold(1.0, f64::min)
    }
}

/// Successive-conditional simulator against independent prior draws.
///
/// Starting from a joint prior draw `(θ, y)`, alternates an `update` of
/// `θ | y` with a fresh `y | θ`, recording `probes(θ)` every `thin` cycles,
/// and compares each probe's marginal with `samples` independent prior
/// draws by a two-sample KS test.
#[allow(clippy::too_many_arguments)]
pub fn geweke_test<S, D, R, P, U, G, F>(
    names: &[&str],
    prior: P,
    update: U,
    regenerate: G,
    probes: F,
    samples: usize,
    thin: usize,
    rng: &mut R,
) -> Result<GewekeReport>
where
    R: Rng + ?Sized,
    P: Fn(&mut R) -> Result<(S, D)>,
    U: Fn(&mut S, &D, &mut R) -> Result<()>,
    G: Fn(&S, &mut R) -> Result<D>,
    F: Fn(&S) -> Vec<f64>,
{
    let k = names.len();
    let mut marginal: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); k];
    for _ in 0..samples {
        let (s, _) = prior(rng)?;
        for (m, v) in marginal.iter_mut().zip(probes(&s)) {
            m.push(v);
        }
    }
    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); k];
    let (mut state, mut data) = prior(rng)?;
    for _ in 0..samples {
        for _ in 0..thin.max(1) {
            update(&mut state, &data, rng)?;
            data = regenerate(&state, rng)?;
        }
        for (m, v) in successive.iter_mut().zip(probes(&state)) {
            m.push(v);
        }
    }
    let mut ks_statistics = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for (a, b) in marginal.iter().zip(&successive) {
        let (d, p) = ks_two_sample(a, b)?;
        ks_statistics.push(d);
        p_values.push(p);
    }
    Ok(GewekeReport {
        names: names.iter().map(|s| s.to_string()).collect(),
        ks_statistics,
        p_values,
    })
}
