use adaptrunc::adaptive_mh::AdaptiveScale;
use adaptrunc::ccv::CcvBlock;
use adaptrunc::diagnostics::ks_one_sample;
use adaptrunc::numeric::{linspace, trapezoid};
use adaptrunc::random_measures::rsb_weights;
use adaptrunc::smc::ParticleSystem;
use adaptrunc::ts::{stationary_density, transition_density, ts_summaries, TsConfig, TsData, TsModel, TsPriors, TsState};
use crate::common::{normal_pdf, rng, simpson};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

pub fn model(y: Vec<f64>) -> TsModel {
    TsModel::new(TsData::new(y).unwrap(), TsPriors::default(), TsConfig { initial_atoms: 2 }).unwrap()
}

pub fn state(alpha: Vec<f64>, eps: CcvBlock, rho: Vec<f64>, s_alpha: Vec<usize>, mu_alpha: Vec<f64>) -> TsState {
    TsState {
        alpha_scales: vec![AdaptiveScale::default(); alpha.len()],
        rho_scales: vec![AdaptiveScale::default(); rho.len()],
        alpha,
        eps,
        rho,
        s_alpha,
        mu_alpha,
        a_alpha: 0.3,
        var_alpha: 0.5,
        mass_alpha: 1.4,
        a_alpha_scale: AdaptiveScale::default(),
        var_alpha_scale: AdaptiveScale::default(),
        mass_alpha_scale: AdaptiveScale::default(),
    }
}

pub fn two_atom_block() -> CcvBlock {
    CcvBlock::new(vec![0.45, 0.6], vec![0.8, -0.5], 0.35, 1.3, 1.1).unwrap()
}

pub fn toy() -> (TsModel, TsState) {
    let m = model(vec![0.3, -0.4, 1.1]);
    let s = state(vec![0.1, -0.2, 0.4], two_atom_block(), vec![0.6, -0.3], vec![0, 0], vec![0.2]);
    (m, s)
}

/// Stationary and bivariate-normal mixture densities written out directly.
pub struct Direct {
    w: Vec<f64>,
    m: Vec<f64>,
    var: f64,
    rho: Vec<f64>,
}

impl Direct {
    fn new(block: &CcvBlock, rho: &[f64]) -> Self {
        let w = rsb_weights(&block.sticks).unwrap();
        let centre: f64 = w.iter().zip(&block.means).map(|(p, m)| p * m).sum();
        Self {
            m: block.means.iter().map(|m| m - centre).collect(),
            w,
            var: block.a * block.var,
            rho: rho.to_vec(),
        }
    }

    fn stationary(&self, x: f64) -> f64 {
        self.w.iter().zip(&self.m).map(|(p, m)| p * normal_pdf(x, *m, self.var)).sum()
    }

    fn joint(&self, x0: f64, x1: f64) -> f64 {
        self.w
            .iter()
            .zip(&self.m)
            .zip(&self.rho)
            .map(|((p, m), r)| {
                let (u, v) = (x0 - m, x1 - m);
                let det = self.var * self.var * (1.0 - r * r);
                let q = (u * u + v * v - 2.0 * r * u * v) / (self.var * (1.0 - r * r));
                p * (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
            })
            .sum()
    }

    fn log_f(&self, e: &[f64]) -> f64 {
        let mut f = self.stationary(e[0]);
        for t in 1..e.len() {
            f *= self.joint(e[t - 1], e[t]) / self.stationary(e[t - 1]);
        }
        f.ln()
    }
}

pub fn residuals(m: &TsModel, alpha: &[f64]) -> Vec<f64> {
    m.data.y().iter().zip(alpha).map(|(y, a)| y - a).collect()
}

pub fn collapsed_likelihood_matches_direct_evaluation() {
    let (m, s) = toy();
    let direct = Direct::new(&s.eps, &s.rho).log_f(&residuals(&m, &s.alpha));
    assert!((m.collapsed_log_lik(&s).unwrap() - direct).abs() < 1e-10);
}

pub fn single_uncorrelated_atom_gives_independent_normals() {
    let m = model(vec![0.3, -0.4, 1.1]);
    let block = CcvBlock::new(vec![0.5], vec![0.7], 0.4, 1.5, 1.0).unwrap();
    let s = state(vec![0.0; 3], block, vec![0.0], vec![0, 0], vec![0.0]);
    let direct: f64 = m.data.y().iter().map(|y| normal_pdf(*y, 0.0, 0.6).ln()).sum();
    assert!((m.collapsed_log_lik(&s).unwrap() - direct).abs() < 1e-12);
}

pub fn shifting_series_and_trend_together_leaves_f_unchanged() {
    let (m, s) = toy();
    let base = m.collapsed_log_lik(&s).unwrap();
    let c = -2.3;
    let shifted = model(m.data.y().iter().map(|y| y + c).collect());
    let mut moved = s.clone();
    moved.alpha.iter_mut().for_each(|a| *a += c);
    assert!((shifted.collapsed_log_lik(&moved).unwrap() - base).abs() < 1e-12);
}

pub fn check_differences(label: &str, target: impl Fn(f64) -> f64, oracle: impl Fn(f64) -> f64, points: [f64; 5]) {
    let (t0, o0) = (target(points[0]), oracle(points[0]));
    for x in &points[1..] {
        let diff = (target(*x) - t0) - (oracle(*x) - o0);
        assert!(diff.abs() < 1e-6, "{label} at {x}: off by {diff}");
    }
}

/// `ln N(α_1 | 0, σ²_0) + Σ_t ln N(α_t - α_{t-1} | μ_{s_t}, a σ²)`.
pub fn trend_log_prior(s: &TsState) -> f64 {
    let kv = s.a_alpha * s.var_alpha;
    normal_pdf(s.alpha[0], 0.0, 1.0).ln()
        + s.alpha
            .windows(2)
            .zip(&s.s_alpha)
            .map(|(w, &c)| normal_pdf(w[1] - w[0], s.mu_alpha[c], kv).ln())
            .sum::<f64>()
}

pub fn trend_targets_match_direct_recomputation() {
    let (m, s) = toy();
    for t in 0..3 {
        check_differences(
            &format!("alpha_{t}"),
            |x| m.alpha_log_target(&s, t, x).unwrap(),
            |x| {
                let mut moved = s.clone();
                moved.alpha[t] = x;
                Direct::new(&s.eps, &s.rho).log_f(&residuals(&m, &moved.alpha)) + trend_log_prior(&moved)
            },
            [0.0, -1.2, -0.3, 0.5, 1.4],
        );
    }
}

/// Joint log density of increments and cluster means given `(a, σ²)`, plus
/// the printed priors.
pub fn increment_block_log_density(s: &TsState) -> f64 {
    let (a, v) = (s.a_alpha, s.var_alpha);
    let incr: f64 = s
        .alpha
        .windows(2)
        .zip(&s.s_alpha)
        .map(|(w, &c)| normal_pdf(w[1] - w[0], s.mu_alpha[c], a * v).ln())
        .sum();
    let means: f64 = s.mu_alpha.iter().map(|mu| normal_pdf(*mu, 0.0, (1.0 - a) * v).ln()).sum();
    incr + means + 18.0 * (1.0 - a).ln() - (1.0 + 100.0 * v).ln()
}

pub fn trend_hyperparameter_targets_match_direct_recomputation() {
    let m = model(vec![0.3, -0.4, 1.1, 0.9, -0.2]);
    let s = state(
        vec![0.1, -0.2, 0.4, 0.5, 0.0],
        two_atom_block(),
        vec![0.6, -0.3],
        vec![0, 1, 0, 1],
        vec![0.2, -0.35],
    );
    check_differences(
        "a_alpha",
        |a| m.a_alpha_log_target(&s, a),
        |a| increment_block_log_density(&TsState { a_alpha: a, ..s.clone() }),
        [0.3, 0.05, 0.2, 0.6, 0.9],
    );
    check_differences(
        "var_alpha",
        |v| m.var_alpha_log_target(&s, v),
        |v| increment_block_log_density(&TsState { var_alpha: v, ..s.clone() }),
        [0.5, 0.05, 0.2, 1.5, 4.0],
    );
    // partition probability M^K Γ(M)/Γ(M + m) Π (n_j - 1)! with the e^{-M} prior
    let sizes = [2.0f64, 2.0];
    check_differences(
        "mass_alpha",
        |mass| m.mass_alpha_log_target(&s, mass),
        |mass| {
            2.0 * mass.ln() + ln_gamma(mass) - ln_gamma(mass + 4.0)
                + sizes.iter().map(|n| ln_gamma(*n)).sum::<f64>()
                - mass
        },
        [1.4, 0.1, 0.7, 2.5, 6.0],
    );
}

pub fn stationary_targets_match_direct_recomputation() {
    let (m, s) = toy();
    let e = residuals(&m, &s.alpha);
    let log_f = |b: &CcvBlock| m.log_f(&s.alpha, b, &s.rho);
    check_differences(
        "rho",
        |r| m.rho_log_target(&s.alpha, &s.eps, &s.rho, 1, r),
        |r| Direct::new(&s.eps, &[s.rho[0], r]).log_f(&e),
        [-0.3, -0.9, -0.5, 0.2, 0.8],
    );
    let prior_var = (1.0 - s.eps.a) * s.eps.var;
    check_differences(
        "mean",
        |mu| s.eps.mean_log_target(0, mu, &log_f),
        |mu| {
            let mut b = s.eps.clone();
            b.means[0] = mu;
            Direct::new(&b, &s.rho).log_f(&e) + normal_pdf(mu, 0.0, prior_var).ln()
        },
        [0.8, -1.0, 0.0, 0.4, 1.6],
    );
    check_differences(
        "stick",
        |v| s.eps.stick_log_target(1, v, &log_f, &[]),
        |v| {
            let mut b = s.eps.clone();
            b.sticks[1] = v;
            Direct::new(&b, &s.rho).log_f(&e) + (1.1 - 1.0) * (1.0 - v).ln()
        },
        [0.6, 0.1, 0.3, 0.8, 0.95],
    );
    let prior = m.priors.eps;
    let mean_prior = |a: f64, var: f64| -> f64 {
        s.eps.means.iter().map(|mu| normal_pdf(*mu, 0.0, (1.0 - a) * var).ln()).sum()
    };
    check_differences(
        "a_eps",
        |a| s.eps.a_log_target(a, &log_f, &prior),
        |a| {
            let b = CcvBlock { a, ..s.eps.clone() };
            Direct::new(&b, &s.rho).log_f(&e) + mean_prior(a, b.var) + 18.0 * (1.0 - a).ln()
        },
        [0.35, 0.05, 0.2, 0.6, 0.9],
    );
    check_differences(
        "var_eps",
        |v| s.eps.var_log_target(v, &log_f, &prior),
        |v| {
            let b = CcvBlock { var: v, ..s.eps.clone() };
            Direct::new(&b, &s.rho).log_f(&e) + mean_prior(b.a, v) - (1.0 + v).ln()
        },
        [1.3, 0.2, 0.7, 2.5, 5.0],
    );
}

pub fn cluster_mean_conditional_matches_normalised_target() {
    let m = model(vec![0.3, -0.4, 1.1, 0.9, -0.2]);
    let s = state(vec![0.1, -0.2, 0.4, 0.5, 0.0], two_atom_block(), vec![0.6, -0.3], vec![0, 1, 0, 1], vec![0.2, -0.35]);
    let _ = m;
    let increments: Vec<f64> = s.alpha.windows(2).map(|w| w[1] - w[0]).collect();
    let (a, v) = (s.a_alpha, s.var_alpha);
    let target = |mu: f64| {
        normal_pdf(mu, 0.0, (1.0 - a) * v)
            * increments.iter().zip(&s.s_alpha).filter(|(_, c)| **c == 0).map(|(d, _)| normal_pdf(*d, mu, a * v)).product::<f64>()
    };
    let z = simpson(target, -10.0, 10.0, 20_000);
    let (mean, var) = TsModel::mu_alpha_conditional(&s, 0);
    for x in [-0.5, 0.0, 0.3, 0.6, 1.0] {
        assert!((normal_pdf(x, mean, var) - target(x) / z).abs() < 1e-6);
    }
}

pub fn urn_weights_by_hand() {
    let (_, mut s) = toy();
    s.a_alpha = 0.4;
    s.var_alpha = 2.0;
    s.mass_alpha = 1.5;
    s.mu_alpha = vec![0.3];
    let delta = 0.5;
    let lw = TsModel::urn_log_weights(&s, &[2], delta);
    let existing = 2.0 * normal_pdf(delta, 0.3, 0.8);
    // a new cluster integrates its mean out: N(δ | 0, aσ² + (1-a)σ²)
    let fresh = 1.5 * normal_pdf(delta, 0.0, 2.0);
    let p_new = fresh / (existing + fresh);
    let got = 1.0 / (1.0 + (lw[0] - lw[1]).exp());
    assert!((got - p_new).abs() < 1e-14);
}

pub fn appended_correlations_are_uniform() {
    let (m, s) = toy();
    let mut r = rng(1);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            let mut x = s.clone();
            m.extend_state(&mut x, &mut r);
            assert_eq!(x.truncation(), 3);
            assert_eq!(x.alpha, s.alpha);
            x.rho[2]
        })
        .collect();
    let (d, p) = ks_one_sample(&draws, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0)).unwrap();
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

pub fn transition_kernel_is_normalised_and_leaves_the_mixture_invariant() {
    let block = CcvBlock::new(vec![0.3, 0.5, 0.4], vec![1.1, -0.6, 0.2], 0.3, 1.6, 1.0).unwrap();
    let rho = [0.7, -0.4, 0.2];
    for prev in [-2.0, -0.5, 0.0, 0.8, 2.5] {
        let total = simpson(|cur| transition_density(&block, &rho, prev, cur).unwrap(), -15.0, 15.0, 20_000);
        assert!((total - 1.0).abs() < 1e-6);
    }
    for cur in [-1.5, -0.4, 0.0, 0.9, 2.0] {
        let pushed = simpson(
            |prev| transition_density(&block, &rho, prev, cur).unwrap() * stationary_density(&block, prev).unwrap(),
            -15.0,
            15.0,
            20_000,
        );
        assert!((pushed - stationary_density(&block, cur).unwrap()).abs() < 1e-6);
    }
}

pub fn summaries_have_normalised_slices_and_centred_stationary_density() {
    let m = model(vec![0.3, -0.4, 1.1, 0.9, -0.2]);
    let mut r = rng(2);
    let states: Vec<TsState> = (0..4)
        .map(|i| {
            let eps = CcvBlock::from_hyper(3, 0.3, 1.0, 1.0, &mut r).unwrap();
            state(
                vec![0.1 * i as f64, -0.2, 0.4, 0.5, 0.0],
                eps,
                vec![0.5, -0.2, 0.1],
                vec![0, 1, 0, 1],
                vec![0.2, -0.35],
            )
        })
        .collect();
    let mut system = ParticleSystem::from_states(&m, states.clone(), 0);
    for (i, p) in system.particles.iter_mut().enumerate() {
        p.log_weight = -0.4 * i as f64;
    }
    let grid = linspace(-12.0, 12.0, 1201);
    let summary = ts_summaries(&system, &grid, &grid).unwrap();
    for row in summary.transition.iter().step_by(100) {
        assert!((trapezoid(&grid, row) - 1.0).abs() < 0.01);
    }
    assert!((trapezoid(&grid, &summary.eps_density) - 1.0).abs() < 0.01);
    assert!((trapezoid(&grid, &summary.nu_density) - 1.0).abs() < 0.01);
    for s in &states {
        let mean = simpson(|x| x * stationary_density(&s.eps, x).unwrap(), -15.0, 15.0, 20_000);
        assert!(mean.abs() < 1e-10);
    }

    let single = ParticleSystem::from_states(&m, vec![states[2].clone()], 0);
    let summary = ts_summaries(&single, &grid, &grid).unwrap();
    assert_eq!(summary.alpha_median, states[2].alpha);
    assert_eq!(summary.alpha_q025, states[2].alpha);
    assert_eq!(summary.alpha_q975, states[2].alpha);
}

pub fn sweeps_keep_the_urn_compact() {
    let y: Vec<f64> = (0..12).map(|t| (t as f64 * 0.7).sin()).collect();
    let m = model(y);
    let mut r = rng(3);
    let mut s = m.starting_state(&mut r).unwrap();
    for i in 0..300 {
        m.sweep(&mut s, &mut r).unwrap();
        m.check_state(&s).unwrap();
        let sizes = s.cluster_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 11);
        assert!(sizes.iter().all(|&c| c > 0));
        if i % 100 == 99 {
            m.extend_state(&mut s, &mut r);
        }
    }
}
