use adaptrunc::ccv::{CcvBlock, CcvPrior, ScalePrior};
use adaptrunc::dpm::gamma_log_pdf;
use adaptrunc::lmm::{lmm_summaries, LmmConfig, LmmData, LmmModel, LmmPriors, LmmState};
use adaptrunc::numeric::{linspace, trapezoid};
use adaptrunc::random_measures::rsb_weights;
use adaptrunc::smc::ParticleSystem;
use crate::common::{mean_and_se, normal_pdf, rng, simpson};

pub fn panel() -> LmmData {
    let y = vec![vec![1.2, 0.4, 1.9], vec![-0.3, 0.8, 0.1]];
    let x = vec![
        vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]],
        vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]],
    ];
    LmmData::new(y, x).unwrap()
}

pub fn model(data: LmmData) -> LmmModel {
    LmmModel::new(data, LmmPriors::default(), LmmConfig { initial_atoms: 3 }).unwrap()
}

pub fn toy_state() -> LmmState {
    LmmState {
        beta: vec![0.3, 0.2],
        eps: CcvBlock::new(vec![0.4, 0.3, 0.6], vec![0.5, -0.4, 0.1], 0.3, 0.8, 1.2).unwrap(),
        gam: CcvBlock::new(vec![0.7, 0.2, 0.5], vec![-0.2, 0.9, 0.3], 0.4, 1.5, 0.7).unwrap(),
        s_eps: vec![0, 1, 2, 2, 0, 1],
        s_gam: vec![1, 2],
    }
}

pub fn centred(block: &CcvBlock) -> (Vec<f64>, Vec<f64>) {
    let w = rsb_weights(&block.sticks).unwrap();
    let centre: f64 = w.iter().zip(&block.means).map(|(p, m)| p * m).sum();
    (w, block.means.iter().map(|m| m - centre).collect())
}

/// `log Π_i ∫ Π_t N(y_it | X_it β + γ + μ^ε, a_ε σ²_ε) N(γ | μ^γ, a_γ σ²_γ) dγ`.
pub fn brute_force_log_f(data: &LmmData, state: &LmmState) -> f64 {
    let (_, me) = centred(&state.eps);
    let (_, mg) = centred(&state.gam);
    let (ae, ag) = (state.eps.a * state.eps.var, state.gam.a * state.gam.var);
    let t = data.periods();
    (0..data.subjects())
        .map(|i| {
            let integrand = |g: f64| {
                normal_pdf(g, mg[state.s_gam[i]], ag)
                    * (0..t)
                        .map(|k| {
                            let xb: f64 = data.x_row(i, k).iter().zip(&state.beta).map(|(x, b)| x * b).sum();
                            normal_pdf(data.y(i, k), xb + g + me[state.s_eps[i * t + k]], ae)
                        })
                        .product::<f64>()
            };
            simpson(integrand, -25.0, 25.0, 40_000).ln()
        })
        .sum()
}

pub fn collapsed_likelihood_matches_brute_force_quadrature() {
    let m = model(panel());
    let state = toy_state();
    let direct = brute_force_log_f(&m.data, &state);
    assert!((m.collapsed_log_lik(&state).unwrap() - direct).abs() < 1e-8);
}

pub fn shifting_responses_and_intercept_together_leaves_f_unchanged() {
    let m = model(panel());
    let state = toy_state();
    let base = m.collapsed_log_lik(&state).unwrap();
    let c = 3.7;
    let shifted_y: Vec<f64> = (0..2).flat_map(|i| (0..3).map(move |k| (i, k))).map(|(i, k)| m.data.y(i, k) + c).collect();
    let shifted = model(m.data.with_responses(shifted_y).unwrap());
    let mut moved = state.clone();
    moved.beta[0] += c;
    assert!((shifted.collapsed_log_lik(&moved).unwrap() - base).abs() < 1e-10);
}

pub fn check_differences(label: &str, target: impl Fn(f64) -> f64, oracle: impl Fn(f64) -> f64, points: [f64; 5]) {
    let (t0, o0) = (target(points[0]), oracle(points[0]));
    for x in &points[1..] {
        let diff = (target(*x) - t0) - (oracle(*x) - o0);
        assert!(diff.abs() < 1e-6, "{label} at {x}: off by {diff}");
    }
}

pub fn block_mh_targets_match_direct_recomputation() {
    let m = model(panel());
    let state = toy_state();
    let resid = m.data.residuals(&state.beta);
    let log_f = |b: &CcvBlock| m.log_f_from_residuals(&resid, b, &state.gam, &state.s_eps, &state.s_gam);
    let prior = m.priors.eps;
    let eps = &state.eps;
    let with = |f: &dyn Fn(&mut LmmState)| {
        let mut s = state.clone();
        f(&mut s);
        s
    };
    let mean_prior = |s: &LmmState| {
        let v = (1.0 - s.eps.a) * s.eps.var;
        s.eps.means.iter().map(|mu| normal_pdf(*mu, 0.0, v).ln()).sum::<f64>()
    };

    // a_ε: f_k × Π N(μ_j | 0, (1-a)σ²) × Be(a | 1, 19)
    check_differences(
        "a",
        |a| eps.a_log_target(a, &log_f, &prior),
        |a| {
            let s = with(&|s| s.eps.a = a);
            brute_force_log_f(&m.data, &s) + mean_prior(&s) + 18.0 * (1.0 - a).ln()
        },
        [0.3, 0.05, 0.2, 0.6, 0.9],
    );
    // σ²_ε: f_k × Π N(μ_j | 0, (1-a)σ²) × (1 + σ²/0.01)^{-1}
    check_differences(
        "var",
        |v| eps.var_log_target(v, &log_f, &prior),
        |v| {
            let s = with(&|s| s.eps.var = v);
            brute_force_log_f(&m.data, &s) + mean_prior(&s) - (1.0 + v / 0.01).ln()
        },
        [0.8, 0.1, 0.5, 2.0, 4.0],
    );
    // μ^ε_2: f_k × N(μ | 0, (1-a)σ²)
    check_differences(
        "mean",
        |mu| eps.mean_log_target(1, mu, &log_f),
        |mu| {
            let s = with(&|s| s.eps.means[1] = mu);
            brute_force_log_f(&m.data, &s) + normal_pdf(mu, 0.0, 0.7 * 0.8).ln()
        },
        [-0.4, -1.0, 0.0, 0.7, 1.3],
    );
    // V^ε_1: f_k × Be(V | 1, M) × Π_it p_{s_it}
    let counts = state.eps_counts();
    check_differences(
        "stick",
        |v| eps.stick_log_target(0, v, &log_f, &counts),
        |v| {
            let s = with(&|s| s.eps.sticks[0] = v);
            let w = rsb_weights(&s.eps.sticks).unwrap();
            let alloc: f64 = s.s_eps.iter().map(|&j| w[j].ln()).sum();
            brute_force_log_f(&m.data, &s) + (1.2 - 1.0) * (1.0 - v).ln() + alloc
        },
        [0.4, 0.1, 0.3, 0.7, 0.95],
    );
}

pub fn allocation_conditionals_match_normalised_f() {
    let m = model(panel());
    let state = toy_state();
    let resid = m.data.residuals(&state.beta);
    let normalise = |lp: Vec<f64>| {
        let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = lp.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect::<Vec<_>>()
    };
    let (we, _) = centred(&state.eps);
    let (wg, _) = centred(&state.gam);
    let got = normalise(m.s_eps_log_probs(&state, &resid, 1, 2).unwrap());
    let oracle = normalise(
        (0..3)
            .map(|j| {
                let mut s = state.clone();
                s.s_eps[5] = j;
                we[j].ln() + brute_force_log_f(&m.data, &s)
            })
            .collect(),
    );
    for (a, b) in got.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8);
    }
    let got = normalise(m.s_gam_log_probs(&state, &resid, 0).unwrap());
    let oracle = normalise(
        (0..3)
            .map(|j| {
                let mut s = state.clone();
                s.s_gam[0] = j;
                wg[j].ln() + brute_force_log_f(&m.data, &s)
            })
            .collect(),
    );
    for (a, b) in got.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8);
    }
}

pub fn block_mass_conditional_matches_normalised_target() {
    let block = toy_state().eps;
    let prior = CcvPrior::new(ScalePrior::folded_t(1.0, 1.0).unwrap());
    let target = |mass: f64| {
        if mass <= 0.0 {
            return 0.0;
        }
        block.sticks.iter().map(|v| mass * (1.0 - v).powf(mass - 1.0)).product::<f64>() * (-mass).exp()
    };
    let z = simpson(target, 0.0, 80.0, 200_000);
    let (shape, rate) = block.mass_conditional(&prior);
    for x in [0.3, 1.0, 2.0, 3.5, 6.0] {
        assert!((gamma_log_pdf(x, shape, rate).exp() - target(x) / z).abs() < 1e-6);
    }
}

pub fn coefficient_mean_matches_ridge_formula() {
    // orthonormal columns
    let x = vec![
        vec![vec![0.5, 0.5], vec![0.5, -0.5]],
        vec![vec![0.5, 0.5], vec![0.5, -0.5]],
    ];
    let y = vec![vec![2.0, 1.0], vec![0.5, -1.5]];
    let m = LmmModel::new(LmmData::new(y.clone(), x.clone()).unwrap(), LmmPriors::default(), LmmConfig { initial_atoms: 1 }).unwrap();
    let state = LmmState {
        beta: vec![0.0, 0.0],
        eps: CcvBlock::new(vec![0.5], vec![0.7], 0.4, 2.0, 1.0).unwrap(),
        gam: CcvBlock::new(vec![0.5], vec![-0.3], 0.4, 1.0, 1.0).unwrap(),
        s_eps: vec![0; 4],
        s_gam: vec![0; 2],
    };
    let gamma = [0.25, -0.4];
    let (mean, cov) = m.beta_conditional(&state, &gamma).unwrap();
    let ae = 0.8;
    let shrink = 1.0 / (1.0 + 1e-6 * ae);
    for a in 0..2 {
        let xty: f64 = (0..2).flat_map(|i| (0..2).map(move |k| (i, k))).map(|(i, k)| x[i][k][a] * (y[i][k] - gamma[i])).sum();
        assert!((mean[a] - shrink * xty).abs() < 1e-12);
        assert!((cov[(a, a)] - ae * shrink).abs() < 1e-12);
    }
    assert!(cov[(0, 1)].abs() < 1e-12);
}

pub fn reallocation_frequency_matches_one_minus_r() {
    let m = model(panel());
    let start = toy_state();
    let mut r = rng(1);
    let mut residual = Vec::new();
    for _ in 0..100_000 {
        let mut s = start.clone();
        m.extend_state(&mut s, &mut r);
        assert_eq!(s.truncation(), 4);
        assert_eq!(s.s_eps.len(), 6);
        let retain = s.eps.retain_probability();
        for (old, new) in start.s_eps.iter().zip(&s.s_eps) {
            assert!(*new == *old || *new == 3);
            residual.push((*new == 3) as u8 as f64 - (1.0 - retain));
        }
    }
    let (mean, se) = mean_and_se(&residual);
    crate::common::assert_within_se("moved - (1 - r)", mean, se, 0.0, 3.0);
}

pub fn retain_probability_limits() {
    let tiny = CcvBlock::new(vec![0.3, 0.5, 1e-300], vec![0.0; 3], 0.5, 1.0, 1.0).unwrap();
    assert_eq!(tiny.retain_probability(), 1.0);
    // the new atom's raw weight equals the retained mass
    let half = CcvBlock::new(vec![0.5, 1.0], vec![0.0; 2], 0.5, 1.0, 1.0).unwrap();
    assert!((half.retain_probability() - 0.5).abs() < 1e-15);
}


pub fn summaries_are_centred_and_normalised() {
    let m = model(panel());
    let mut single = toy_state();
    single.eps = CcvBlock::new(vec![0.6], vec![1.3], 0.3, 0.8, 1.0).unwrap();
    single.gam = CcvBlock::new(vec![0.2], vec![-2.0], 0.4, 1.5, 1.0).unwrap();
    single.s_eps = vec![0; 6];
    single.s_gam = vec![0; 2];
    let grid = linspace(-6.0, 6.0, 1201);
    let system = ParticleSystem::from_states(&m, vec![single.clone()], 0);
    let summary = lmm_summaries(&system, &grid, &grid).unwrap();
    for (x, d) in grid.iter().zip(&summary.f_eps) {
        assert!((d - normal_pdf(*x, 0.0, 0.24)).abs() < 1e-12);
    }
    for (x, d) in grid.iter().zip(&summary.f_gam) {
        assert!((d - normal_pdf(*x, 0.0, 0.6)).abs() < 1e-12);
    }

    let mut r = rng(2);
    let states: Vec<LmmState> = (0..5)
        .map(|_| LmmState {
            eps: CcvBlock::from_hyper(4, 0.3, 0.5, 1.0, &mut r).unwrap(),
            gam: CcvBlock::from_hyper(4, 0.4, 0.5, 1.0, &mut r).unwrap(),
            ..single.clone()
        })
        .collect();
    let mut system = ParticleSystem::from_states(&m, states, 0);
    for (i, p) in system.particles.iter_mut().enumerate() {
        p.log_weight = i as f64 * 0.3;
    }
    let summary = lmm_summaries(&system, &grid, &grid).unwrap();
    assert!((trapezoid(&grid, &summary.f_eps) - 1.0).abs() < 0.01);
    assert!((trapezoid(&grid, &summary.f_gam) - 1.0).abs() < 0.01);
    let b = &summary.beta[0];
    assert!(b.q025 <= b.median && b.median <= b.q975);
}
