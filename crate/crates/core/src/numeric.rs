//! Small numeric kernels shared by the samplers: adaptive quadrature,
//! log-space arithmetic and categorical draws.

use rand::Rng;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over the finite interval `[a, b]`.
///
/// Subdivides until the Kronrod/Gauss difference on every panel is below its
/// share of `abs_tol` (or `rel_tol` times the panel estimate).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let mut total = 0.0;
    // (lo, hi, tolerance, depth)
    let mut stack = vec![(lo, hi, abs_tol, 0u32)];
    while let Some((l, h, tol, depth)) = stack.pop() {
        let (value, err) = kronrod15(&f, l, h);
        if err <= tol.max(rel_tol * value.abs()) || depth >= 48 || (h - l) <= 1e-15 * l.abs().max(1.0) {
            total += value;
        } else {
            let mid = 0.5 * (l + h);
            stack.push((l, mid, 0.5 * tol, depth + 1));
            stack.push((mid, h, 0.5 * tol, depth + 1));
        }
    }
    sign * total
}

/// Integral of `f` over `[a, ∞)` via the map `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - t;
        let x = a + t / one_minus;
        let v = f(x) / (one_minus * one_minus);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, abs_tol, 1e-12)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    normal_log_pdf(x, mean, var).exp()
}

/// Draws an index with probability proportional to `exp(log_weights[j])`.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(
            "categorical full conditional has no finite mass".into(),
        ));
    }
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (j, w) in log_weights.iter().enumerate() {
        let p = (w - max).exp();
        if u < p {
            return Ok(j);
        }
        u -= p;
    }
    // rounding: fall back to the last index carrying mass
    Ok(log_weights
        .iter()
        .rposition(|w| w.is_finite())
        .expect("at least one finite weight"))
}

pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = rng.random::<f64>();
        if u > 0.0 {
            return u;
        }
    }
}

/// Keeps a stick-breaking fraction strictly inside (0, 1).
pub fn clamp_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Deterministic 64-bit mixing used to derive per-particle RNG streams.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream_seed(master: u64, iteration: u64, phase: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master ^ 0x5DEE_CE66_D1CE_4E5B) ^ iteration) ^ (phase << 32 | 0x1234) ^ splitmix64(index))
}

/// Trapezoid rule on an arbitrary (sorted) grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Quantile of a weighted sample (weights need not be normalised): the
/// smallest value whose cumulative weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Domain("values and weights must be non-empty and of equal length".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Domain("weights must be non-negative with positive sum".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let target = q * total;
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= target && weights[i] > 0.0 {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.iter().rev().find(|&&i| weights[i] > 0.0).expect("positive total")])
}

/// Weighted Gaussian kernel density estimate with Silverman's bandwidth.
pub fn weighted_kde(values: &[f64], weights: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Domain("values and weights must be non-empty and of equal length".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("weights must have positive sum".into()));
    }
    let mean = values.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
    let var = values.iter().zip(weights).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total;
    let ess = total * total / weights.iter().map(|w| w * w).sum::<f64>();
    let sd = var.sqrt().max(1e-12 * mean.abs().max(1.0));
    let h = 1.06 * sd * ess.powf(-0.2);
    Ok(grid
        .iter()
        .map(|&g| values.iter().zip(weights).map(|(x, w)| w * normal_pdf(g, *x, h * h)).sum::<f64>() / total)
        .collect())
}
