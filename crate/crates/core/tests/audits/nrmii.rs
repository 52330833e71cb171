use adaptrunc::adaptive_mh::AdaptiveScale;
use adaptrunc::diagnostics::ks_one_sample;
use adaptrunc::dpm::{Atom, NormalMixtureHyper};
use adaptrunc::nrmii::{CppState, NrmiiConfig, NrmiiModel};
use adaptrunc::random_measures::{GammaProcess, LevelScheme};
use crate::common::{mean_and_se, normal_pdf, rng, simpson, Tabulated};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};

pub fn model(data: Vec<f64>) -> NrmiiModel<GammaProcess> {
    NrmiiModel::new(
        data,
        NormalMixtureHyper::new(0.0, 4.0, 3.0, 1.0).unwrap(),
        GammaProcess::new(1.0).unwrap(),
        NrmiiConfig { scheme: LevelScheme::OneAtom, initial_expected_atoms: 10.0 },
    )
    .unwrap()
}

pub fn state(jumps: Vec<f64>, alloc: Vec<usize>, v: f64, level: f64) -> CppState {
    CppState {
        atoms: jumps.iter().enumerate().map(|(j, _)| Atom { mean: j as f64, var: 1.0 }).collect(),
        jumps,
        alloc,
        v,
        level,
        k: 1,
        jump_scale: AdaptiveScale::default(),
    }
}

/// `∫_lo^hi x^{-1} e^{-(1+v)x} dx` in log coordinates.
pub fn tilted_band(lo: f64, hi: f64, v: f64) -> f64 {
    simpson(|u| (-(1.0 + v) * u.exp()).exp(), lo.ln(), hi.ln(), 20_000)
}

pub fn occupied_jump_conditional_is_a_truncated_gamma() {
    let level = 0.5;
    let target = |x: f64| if x >= level { x.powi(2) * (-2.0 * x).exp() } else { 0.0 };
    let z = simpson(target, level, 60.0, 200_000);
    let gamma = Gamma::new(3.0, 2.0).unwrap();
    let tail = 1.0 - gamma.cdf(level);
    for x in [0.6, 1.0, 1.7, 2.5, 4.0] {
        assert!((gamma.pdf(x) / tail - target(x) / z).abs() < 1e-6);
    }

    let m = model(vec![0.1, 0.2, 0.3]);
    let start = state(vec![1.0, 0.8], vec![0, 0, 0], 1.0, level);
    let table = Tabulated::new(target, level, 40.0, 400_000);
    let mut r = rng(1);
    let draws: Vec<f64> = (0..30_000)
        .map(|_| {
            let mut s = start.clone();
            m.update_occupied_jumps(&mut s, &mut r).unwrap();
            assert_eq!(s.jumps[1], 0.8);
            s.jumps[0]
        })
        .collect();
    assert!(draws.iter().all(|x| *x > level));
    let (d, p) = ks_one_sample(&draws, |x| table.cdf(x)).unwrap();
    assert!(p > 1e-3, "KS D = {d}, p = {p}");
}

pub fn unoccupied_jumps_follow_the_tilted_poisson_process() {
    let m = model(vec![0.0]);
    let start = state(vec![2.0, 0.4, 0.3], vec![0], 1.0, 0.1);
    let expected = tilted_band(0.1, 60.0, 1.0);
    let mut r = rng(2);
    let mut counts = Vec::new();
    let mut sizes = Vec::new();
    for _ in 0..100_000 {
        let mut s = start.clone();
        m.update_unoccupied_jumps(&mut s, &mut r).unwrap();
        assert_eq!(s.jumps[0], 2.0);
        assert!(s.alloc.iter().all(|&a| a == 0));
        counts.push((s.jumps.len() - 1) as f64);
        sizes.extend_from_slice(&s.jumps[1..]);
    }
    let (mean, se) = mean_and_se(&counts);
    crate::common::assert_within_se("unoccupied count", mean, se, expected, 3.0);
    let table = Tabulated::new(|x| (-2.0 * x).exp() / x, 0.1, 40.0, 2_000_000);
    let (d, p) = ks_one_sample(&sizes, |x| table.cdf(x)).unwrap();
    assert!(p > 1e-3, "KS D = {d}, p = {p}");
}

pub fn allocations_match_direct_normalisation() {
    let m = model(vec![0.4]);
    let mut s = state(vec![1.0, 3.0], vec![0], 1.0, 0.1);
    let a = 1.0 * normal_pdf(0.4, 0.0, 1.0);
    let b = 3.0 * normal_pdf(0.4, 1.0, 1.0);
    let mut r = rng(3);
    let hits: Vec<f64> = (0..100_000)
        .map(|_| {
            m.update_allocations(&mut s, &mut r).unwrap();
            (s.alloc[0] == 0) as u8 as f64
        })
        .collect();
    let (mean, se) = mean_and_se(&hits);
    crate::common::assert_within_se("P(s = 1)", mean, se, a / (a + b), 3.0);
}

pub fn latent_v_has_mean_n_over_total_jump() {
    let m = model(vec![0.0; 10]);
    let mut s = state(vec![1.5, 0.6, 0.4], vec![0; 10], 1.0, 0.1);
    let mut r = rng(4);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            m.update_v(&mut s, &mut r).unwrap();
            s.v
        })
        .collect();
    let (mean, se) = mean_and_se(&draws);
    crate::common::assert_within_se("E[v]", mean, se, 4.0, 3.0);
}

pub fn transition_adds_tilted_band_jumps() {
    let m = model(vec![0.0]);
    let start = state(vec![2.0], vec![0], 1.0, 0.1);
    let expected = tilted_band(0.05, 0.1, 1.0);
    let mut r = rng(5);
    let mut counts = Vec::new();
    for _ in 0..100_000 {
        let mut s = start.clone();
        m.transition(&mut s, 0.05, &mut r).unwrap();
        assert_eq!(s.level, 0.05);
        assert!(s.jumps[1..].iter().all(|x| *x > 0.05 && *x < 0.1));
        counts.push((s.jumps.len() - 1) as f64);
    }
    let (mean, se) = mean_and_se(&counts);
    crate::common::assert_within_se("band count", mean, se, expected, 3.0);

    let mut same = start.clone();
    m.transition(&mut same, 0.1, &mut r).unwrap();
    assert_eq!(same.jumps.len(), 1);
}

pub fn integrating_out_v_gives_normalised_jump_ratios() {
    let jumps = [0.7, 1.9];
    let total: f64 = jumps.iter().sum();
    let mut sum = 0.0;
    for s in [[0, 0], [0, 1], [1, 0], [1, 1]] {
        let product: f64 = s.iter().map(|&j| jumps[j]).product();
        // n = 2: ∫ v e^{-v ΣJ} dv / Γ(2)
        let integrated = simpson(|v| v * product * (-v * total).exp(), 0.0, 80.0, 200_000);
        assert!((integrated - product / total.powi(2)).abs() < 1e-10);
        sum += integrated;
    }
    assert!((sum - 1.0).abs() < 1e-10);
}

pub fn sweeps_preserve_state_invariants() {
    let data = vec![-1.0, -0.7, 0.2, 1.4, 1.5, 2.2];
    let m = model(data);
    let mut r = rng(6);
    let mut s = m.prior_state(&mut r).unwrap();
    for i in 0..500 {
        m.sweep(&mut s, &mut r).unwrap();
        assert!(s.v > 0.0);
        assert!(s.jumps.iter().all(|x| *x > s.level));
        assert_eq!(s.jumps.len(), s.atoms.len());
        assert!(s.alloc.iter().all(|&a| a < s.jumps.len()));
        if i % 50 == 49 {
            let next = s.level * 0.8;
            m.transition(&mut s, next, &mut r).unwrap();
        }
    }
}
