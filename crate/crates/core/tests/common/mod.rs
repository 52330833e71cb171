#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        sum += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    sum * h / 3.0
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral by its power series for small arguments and by
/// Simpson quadrature of `∫_0^∞ exp(-x e^w) dw` otherwise.
pub fn e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 2.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        let upper = (60.0 / x).ln().max(1.0) + 1.0;
        simpson(|w| (-x * w.exp()).exp(), 0.0, upper, 20_000)
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Asserts `|estimate - target| < k` standard errors.
pub fn assert_within_se(label: &str, estimate: f64, se: f64, target: f64, k: f64) {
    assert!(
        (estimate - target).abs() < k * se,
        "{label}: estimate {estimate} vs {target}, se {se}"
    );
}

/// Density known up to a constant, tabulated on a fine grid and normalised by
/// the trapezoid rule.
pub struct Tabulated {
    lo: f64,
    step: f64,
    cumulative: Vec<f64>,
    norm: f64,
}

impl Tabulated {
    pub fn new<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> Self {
        let step = (hi - lo) / n as f64;
        let values: Vec<f64> = (0..=n).map(|i| f(lo + step * i as f64)).collect();
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * step * (w[0] + w[1]);
            cumulative.push(acc);
        }
        Self { lo, step, cumulative, norm: acc }
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let pos = (x - self.lo) / self.step;
        if pos <= 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.cumulative.len() {
            return 1.0;
        }
        let frac = pos - i as f64;
        (self.cumulative[i] * (1.0 - frac) + self.cumulative[i + 1] * frac) / self.norm
    }
}
