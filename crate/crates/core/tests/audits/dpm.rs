use adaptrunc::diagnostics::{batch_means, ks_one_sample};
use adaptrunc::dpm::{
    gamma_log_pdf, mass_conditional, mu_conditional, predictive_density, py_stick_log_lik, Atom, DpmConfig,
    DpmModel, MixtureState, NormalMixtureHyper, Truncation,
};
use adaptrunc::numeric::{linspace, trapezoid};
use adaptrunc::random_measures::{BetaStickParams, StickKind};
use adaptrunc::smc::ParticleSystem;
use crate::common::{e1, mean_and_se, normal_pdf, rng, simpson, Tabulated};
use statrs::distribution::{Beta, ContinuousCDF, Gamma};

pub fn model(data: Vec<f64>, config: DpmConfig) -> DpmModel {
    DpmModel::new(data, NormalMixtureHyper::new(0.0, 4.0, 3.0, 1.0).unwrap(), config).unwrap()
}

pub fn state_with(model: &DpmModel, sticks: Vec<f64>, atoms: Vec<Atom>, alloc: Vec<usize>) -> MixtureState {
    let mut state = model.prior_state(atoms.len(), &mut rng(0)).unwrap();
    state.sticks = sticks;
    state.atoms = atoms;
    state.z = vec![0; alloc.len()];
    state.alloc = alloc;
    state.mass = 1.0;
    state
}

pub fn atom(mean: f64, var: f64) -> Atom {
    Atom { mean, var }
}

pub fn allocation_frequencies_match_direct_normalisation() {
    let m = model(vec![0.2], DpmConfig { initial_atoms: 2, ..DpmConfig::default() });
    let mut state = state_with(&m, vec![0.3, 0.6], vec![atom(0.0, 1.0), atom(1.0, 0.5)], vec![0]);
    let w = [0.3 / 0.72, 0.42 / 0.72];
    let a = w[0] * normal_pdf(0.2, 0.0, 1.0);
    let b = w[1] * normal_pdf(0.2, 1.0, 0.5);
    let p1 = a / (a + b);
    let mut r = rng(1);
    let hits: Vec<f64> = (0..100_000)
        .map(|_| {
            m.update_s(&mut state, &mut r).unwrap();
            (state.alloc[0] == 0) as u8 as f64
        })
        .collect();
    let (mean, se) = mean_and_se(&hits);
    crate::common::assert_within_se("P(s = 1)", mean, se, p1, 3.0);
}

pub fn geometric_augmentation_has_the_stated_mean() {
    let m = model(vec![0.0; 4], DpmConfig { initial_atoms: 2, ..DpmConfig::default() });
    let mut state = state_with(&m, vec![0.2, 0.2], vec![atom(0.0, 1.0); 2], vec![0; 4]);
    let pi: f64 = 0.36;
    let mut r = rng(2);
    let mut draws = Vec::new();
    for _ in 0..25_000 {
        m.update_z(&mut state, &mut r).unwrap();
        draws.extend(state.z.iter().map(|z| *z as f64));
    }
    let (mean, se) = mean_and_se(&draws);
    crate::common::assert_within_se("E[z]", mean, se, (1.0 - pi) / pi, 3.0);
}

pub fn stick_conditionals_follow_the_plugged_in_betas() {
    let m = model(vec![0.0; 5], DpmConfig { mass: Some(1.0), initial_atoms: 2, ..DpmConfig::default() });
    let mut state = state_with(&m, vec![0.5, 0.5], vec![atom(0.0, 1.0); 2], vec![0, 0, 1, 1, 1]);
    state.z = vec![1, 0, 0, 0, 0];
    let mut r = rng(3);
    let (mut v1, mut v2) = (Vec::new(), Vec::new());
    for _ in 0..50_000 {
        m.update_v(&mut state, &mut r);
        v1.push(state.sticks[0]);
        v2.push(state.sticks[1]);
    }
    let (b35, b42) = (Beta::new(3.0, 5.0).unwrap(), Beta::new(4.0, 2.0).unwrap());
    let (_, p1) = ks_one_sample(&v1, |x| b35.cdf(x)).unwrap();
    let (_, p2) = ks_one_sample(&v2, |x| b42.cdf(x)).unwrap();
    assert!(p1 > 1e-3 && p2 > 1e-3, "KS p-values {p1}, {p2}");
}

pub fn sb_stick_update_leaves_the_last_stick_at_one() {
    let m = model(vec![0.0; 3], DpmConfig { truncation: Truncation::Sb, mass: Some(1.0), initial_atoms: 3, ..DpmConfig::default() });
    let mut state = state_with(&m, vec![0.5, 0.5, 1.0], vec![atom(0.0, 1.0); 3], vec![0, 1, 2]);
    let mut r = rng(4);
    for _ in 0..100 {
        m.update_v(&mut state, &mut r);
        assert_eq!(state.sticks[2], 1.0);
    }
}

pub fn mean_conditional_matches_normalised_target() {
    let hyper = NormalMixtureHyper::new(0.5, 2.0, 3.0, 1.0).unwrap();
    let (var, ys) = (0.7, [0.3, 1.1]);
    let target = |mu: f64| normal_pdf(mu, 0.5, 2.0) * ys.iter().map(|y| normal_pdf(*y, mu, var)).product::<f64>();
    let z = simpson(target, -15.0, 15.0, 20_000);
    let (mean, cvar) = mu_conditional(&hyper, var, &ys);
    for x in [-0.5, 0.2, 0.6, 0.9, 1.8] {
        assert!((normal_pdf(x, mean, cvar) - target(x) / z).abs() < 1e-6);
    }
}

pub fn atom_update_draws_match_normalised_targets() {
    let m = DpmModel::new(
        vec![0.3, 1.1],
        NormalMixtureHyper::new(0.5, 2.0, 3.0, 1.0).unwrap(),
        DpmConfig { initial_atoms: 1, ..DpmConfig::default() },
    )
    .unwrap();
    let start = state_with(&m, vec![0.5], vec![atom(0.2, 1.0)], vec![0, 0]);
    // precision given μ = 0.2: τ^{α-1} e^{-βτ} Π N(y | 0.2, 1/τ)
    let precision_target = |t: f64| {
        if t <= 0.0 {
            return 0.0;
        }
        t.powf(2.0) * (-t).exp() * [0.3, 1.1].iter().map(|y| normal_pdf(*y, 0.2, 1.0 / t)).product::<f64>()
    };
    let table = Tabulated::new(precision_target, 0.0, 40.0, 400_000);
    let shape = 3.0 + 1.0;
    let rate = 1.0 + 0.5 * ((0.3f64 - 0.2).powi(2) + (1.1f64 - 0.2).powi(2));
    for t in [0.5, 1.5, 2.5, 4.0, 7.0] {
        assert!((gamma_log_pdf(t, shape, rate).exp() - precision_target(t) / table.norm()).abs() < 1e-6);
    }
    let mut r = rng(5);
    let precisions: Vec<f64> = (0..30_000)
        .map(|_| {
            let mut s = start.clone();
            m.update_theta(&mut s, &mut r);
            1.0 / s.atoms[0].var
        })
        .collect();
    let (d, p) = ks_one_sample(&precisions, |t| table.cdf(t)).unwrap();
    assert!(p > 1e-3, "precision draws: KS D = {d}, p = {p}");
}

pub fn mass_conditional_matches_normalised_target() {
    for (sticks, sb) in [(vec![0.3, 0.5, 0.1, 0.7], false), (vec![0.3, 0.5, 0.1, 1.0], true)] {
        let free = if sb { &sticks[..3] } else { &sticks[..] };
        let log_rest: f64 = free.iter().map(|v: &f64| (1.0 - v).ln()).sum();
        let target = |m: f64| {
            if m <= 0.0 {
                return 0.0;
            }
            free.iter().map(|v| m * (1.0 - v).powf(m - 1.0)).product::<f64>() * (-m).exp()
        };
        let z = simpson(target, 0.0, 80.0, 200_000);
        let (shape, rate) = mass_conditional(&sticks, sb);
        assert!((rate - (1.0 - log_rest)).abs() < 1e-14);
        for x in [0.2, 0.8, 1.5, 2.5, 4.0] {
            assert!((gamma_log_pdf(x, shape, rate).exp() - target(x) / z).abs() < 1e-6);
        }
    }
}

pub fn mass_update_draws_from_its_conditional() {
    let m = model(vec![0.0; 2], DpmConfig { initial_atoms: 3, ..DpmConfig::default() });
    let mut state = state_with(&m, vec![0.3, 0.5, 0.1], vec![atom(0.0, 1.0); 3], vec![0, 1]);
    let (shape, rate) = mass_conditional(&state.sticks, false);
    let law = Gamma::new(shape, rate).unwrap();
    let mut r = rng(6);
    let draws: Vec<f64> = (0..30_000)
        .map(|_| {
            m.update_mass(&mut state, &mut r);
            state.mass
        })
        .collect();
    let (d, p) = ks_one_sample(&draws, |x| law.cdf(x)).unwrap();
    assert!(p > 1e-3, "KS D = {d}, p = {p}");
}

pub fn pitman_yor_discount_chain_matches_quadrature_posterior() {
    let params = BetaStickParams::pitman_yor(1.0, 0.3).unwrap();
    let mut r = rng(7);
    let sticks: Vec<f64> = (1..=30).map(|j| params.sample_stick(j, &mut r)).collect();
    let m = model(
        Vec::new(),
        DpmConfig { kind: StickKind::PoissonDirichlet, mass: Some(1.0), initial_atoms: 30, ..DpmConfig::default() },
    );
    let mut state = m.prior_state(30, &mut r).unwrap();
    state.sticks = sticks.clone();
    state.discount = 0.5;
    let posterior = Tabulated::new(
        |a| {
            let v = py_stick_log_lik(&sticks, a, 1.0);
            if v.is_finite() { v.exp() } else { 0.0 }
        },
        0.0,
        1.0,
        200_000,
    );
    let mut draws = Vec::new();
    for i in 0..300_000 {
        m.update_py(&mut state, &mut r).unwrap();
        if i >= 10_000 && i % 25 == 0 {
            draws.push(state.discount);
        }
    }
    let (d, p) = ks_one_sample(&draws, |a| posterior.cdf(a)).unwrap();
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

pub fn fk_chain_without_data_reproduces_the_prior_jumps() {
    let m = model(
        Vec::new(),
        DpmConfig { truncation: Truncation::Fk, mass: Some(1.0), initial_atoms: 3, ..DpmConfig::default() },
    );
    let mut r = rng(8);
    let mut state = m.prior_state(3, &mut r).unwrap();
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for i in 0..400_000 {
        m.sweep(&mut state, &mut r).unwrap();
        assert!(state.jumps.windows(2).all(|w| w[0] > w[1]));
        if i >= 10_000 && i % 40 == 0 {
            first.push(state.jumps[0]);
            last.push(state.jumps[2]);
        }
    }
    // J_j = E1^{-1}(t_j) with t_j a sum of j unit exponentials
    let t3 = Gamma::new(3.0, 1.0).unwrap();
    let (_, p1) = ks_one_sample(&first, |x| (-e1(x)).exp()).unwrap();
    let (_, p3) = ks_one_sample(&last, |x| 1.0 - t3.cdf(e1(x))).unwrap();
    assert!(p1 > 0.01 && p3 > 0.01, "KS p-values {p1}, {p3}");
}

/// Exact posterior of the n = 4, N = 2 mixture with known kernel variance by
/// enumerating the 16 allocations; stick integrals by 2-d quadrature.
pub struct Enumeration {
    p_first: Vec<f64>,
    same_cluster_12: f64,
    mu1: f64,
}

pub fn enumerate(data: &[f64], var: f64, mu0: f64, sigma2: f64, mass: f64, truncation: Truncation) -> Enumeration {
    let beta_pdf = |v: f64| mass * (1.0 - v).powf(mass - 1.0);
    let weights = |v1: f64, v2: f64| match truncation {
        Truncation::Sb => (v1, 1.0 - v1),
        _ => {
            let norm = 1.0 - (1.0 - v1) * (1.0 - v2);
            (v1 / norm, (1.0 - v1) * v2 / norm)
        }
    };
    let stick_integral = |n1: i32, n2: i32| match truncation {
        Truncation::Sb => simpson(|v| { let (a, b) = weights(v, 1.0); a.powi(n1) * b.powi(n2) * beta_pdf(v) }, 0.0, 1.0, 2000),
        _ => simpson(
            |v1| simpson(|v2| { let (a, b) = weights(v1, v2); a.powi(n1) * b.powi(n2) * beta_pdf(v1) * beta_pdf(v2) }, 1e-12, 1.0, 400),
            1e-12,
            1.0,
            400,
        ),
    };
    let group = |ys: &[f64]| -> (f64, f64) {
        let f = |mu: f64| normal_pdf(mu, mu0, sigma2) * ys.iter().map(|y| normal_pdf(*y, mu, var)).product::<f64>();
        let z = simpson(f, -30.0, 30.0, 20_000);
        let m1 = simpson(|mu| mu * f(mu), -30.0, 30.0, 20_000) / z;
        (z, m1)
    };
    let n = data.len();
    let mut total = 0.0;
    let mut p_first = vec![0.0; n];
    let (mut same, mut mu1) = (0.0, 0.0);
    for mask in 0..(1u32 << n) {
        let first: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| data[i]).collect();
        let second: Vec<f64> = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| data[i]).collect();
        let (z1, m1) = group(&first);
        let (z2, _) = group(&second);
        let w = stick_integral(first.len() as i32, second.len() as i32) * z1 * z2;
        total += w;
        for (i, p) in p_first.iter_mut().enumerate() {
            if mask & (1 << i) != 0 {
                *p += w;
            }
        }
        if (mask & 1 != 0) == (mask & 2 != 0) {
            same += w;
        }
        mu1 += w * m1;
    }
    Enumeration {
        p_first: p_first.into_iter().map(|p| p / total).collect(),
        same_cluster_12: same / total,
        mu1: mu1 / total,
    }
}

pub fn check_against_enumeration(truncation: Truncation, seed: u64) {
    let data = vec![-1.2, -0.8, 0.9, 1.5];
    let (var, mu0, sigma2, mass) = (0.5, 0.0, 4.0, 2.0);
    let exact = enumerate(&data, var, mu0, sigma2, mass, truncation);
    let m = DpmModel::new(
        data.clone(),
        NormalMixtureHyper::new(mu0, sigma2, 3.0, 1.0).unwrap(),
        DpmConfig { truncation, mass: Some(mass), fixed_variance: Some(var), initial_atoms: 2, ..DpmConfig::default() },
    )
    .unwrap();
    let mut r = rng(seed);
    let mut state = m.prior_state(2, &mut r).unwrap();
    let sweeps = 100_000;
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(sweeps); 6];
    for _ in 0..sweeps {
        m.sweep(&mut state, &mut r).unwrap();
        for i in 0..4 {
            series[i].push((state.alloc[i] == 0) as u8 as f64);
        }
        series[4].push((state.alloc[0] == state.alloc[1]) as u8 as f64);
        series[5].push(state.atoms[0].mean);
    }
    let targets: Vec<f64> = exact.p_first.iter().copied().chain([exact.same_cluster_12, exact.mu1]).collect();
    for (k, (s, target)) in series.iter().zip(targets).enumerate() {
        let (mean, se) = batch_means(s, 50).unwrap();
        assert!(
            (mean - target).abs() < 3.0 * se,
            "{truncation:?} quantity {k}: Gibbs {mean} vs exact {target} (se {se})"
        );
    }
}

pub fn sb_gibbs_matches_exact_enumeration() {
    check_against_enumeration(Truncation::Sb, 9);
}

pub fn rsb_gibbs_matches_exact_enumeration() {
    check_against_enumeration(Truncation::Rsb, 10);
}

pub fn predictive_density_is_normalised_and_linear() {
    let m = model(vec![0.0], DpmConfig { initial_atoms: 1, ..DpmConfig::default() });
    let grid = linspace(-8.0, 8.0, 801);
    let single = state_with(&m, vec![0.4], vec![atom(0.0, 1.0)], vec![0]);
    let system = ParticleSystem::from_states(&m, vec![single.clone()], 0);
    let density = predictive_density(&m, &system, &grid).unwrap();
    for (x, d) in grid.iter().zip(&density) {
        assert!((d - normal_pdf(*x, 0.0, 1.0)).abs() < 1e-14);
    }
    let other = state_with(&m, vec![0.4], vec![atom(1.5, 0.3)], vec![0]);
    let mut pair = ParticleSystem::from_states(&m, vec![single, other], 0);
    pair.particles[1].log_weight = 3f64.ln();
    let mixed = predictive_density(&m, &pair, &grid).unwrap();
    for (x, d) in grid.iter().zip(&mixed) {
        let hand = 0.25 * normal_pdf(*x, 0.0, 1.0) + 0.75 * normal_pdf(*x, 1.5, 0.3);
        assert!((d - hand).abs() < 1e-14);
    }
    assert!((trapezoid(&grid, &mixed) - 1.0).abs() < 0.01);
}
