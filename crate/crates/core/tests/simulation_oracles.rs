mod common;

use common::*;
use mbtfit::demography::{extinction_vector, survival, DEFAULT_EXTINCTION_MAX_ITER, DEFAULT_EXTINCTION_TOL};
use mbtfit::estimation::survival_weights;
use mbtfit::model::PRESET_NAMES;
use mbtfit::rng::stream;
use mbtfit::simulation::{
    aggregate_rates, encode_life_vector, extinction_frequency, simulate_sample, simulate_trajectories, SimConfig,
    Simulator, TreeCaps,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

// Trees are stopped once 200 children are pending; the chance such a tree
// still dies out is q^200, far below the sampling error.
const CAPS: TreeCaps = TreeCaps {
    max_population: 200,
    max_time: 200.0,
};

#[test]
fn lifetimes_follow_phase_type_law() {
    for name in PRESET_NAMES {
        let model = preset_model(name);
        let sim = Simulator::new(&model).unwrap();
        let mut rng = stream(11, &[1]);
        let mut deaths: Vec<f64> = (0..10_000).map(|_| sim.trajectory(f64::INFINITY, &mut rng).death).collect();
        let d = ks_statistic(&mut deaths, |x| 1.0 - survival(&model, x).unwrap());
        // 1% critical value of the KS statistic
        assert!(d < 1.628 / 100.0, "{name}: KS = {d}");
    }
}

#[test]
fn interval_counts_follow_kernels() {
    for name in PRESET_NAMES {
        let model = preset_model(name);
        let runs = 100_000;
        let c = interval_counts(&model, 1.0, runs, 5);
        let kmax = c.alive.len().max(c.dead.len()) + 5;
        let (pa, pd) = interval_probabilities(&model, 1.0, kmax);
        let mut obs: Vec<usize> = (0..=kmax).map(|k| c.alive.get(k).copied().unwrap_or(0)).collect();
        obs.extend((0..=kmax).map(|k| c.dead.get(k).copied().unwrap_or(0)));
        let p: Vec<f64> = pa.iter().chain(&pd).copied().collect();
        let (stat, df) = chi_square(&obs, &p, runs);
        let pval = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
        assert!(pval > 0.001, "{name}: chi2 = {stat}, df = {df}, p = {pval}");
    }
}

#[test]
fn aggregated_rates_match_curves() {
    let model = preset_model("example1");
    let mut tally = SeTally::default();
    curve_checks(&model, 15.0, 20_000, 3, &mut tally);
    assert!(tally.fraction() >= 0.95, "{:?}", tally.misses);
}

#[test]
fn encoding_is_deterministic() {
    let model = preset_model("example2");
    let cfg = SimConfig::new(200, 25.0, 1.0, 4);
    let trajs = simulate_trajectories(&model, &cfg, 0).unwrap();
    for t in &trajs {
        assert_eq!(encode_life_vector(t, 1.0, 25.0).unwrap(), encode_life_vector(t, 1.0, 25.0).unwrap());
    }
    assert_eq!(simulate_sample(&model, &cfg, 0).unwrap(), simulate_sample(&model, &cfg, 0).unwrap());
}

#[test]
fn survival_weights_match_raw_survivors() {
    let model = preset_model("example1");
    let n = 2000;
    let sample = simulate_sample(&model, &SimConfig::new(n, 15.0, 1.0, 9), 0).unwrap();
    let rates = aggregate_rates(&sample).unwrap();
    let w = survival_weights(&rates).unwrap();
    for (x, wx) in w.iter().enumerate() {
        // vectors long enough to enter class x
        let raw = sample.vectors().iter().filter(|v| v.len() - usize::from(v.died()) > x).count();
        assert!((wx - raw as f64 / n as f64).abs() <= 1.0 / (n as f64).sqrt(), "x = {x}");
    }
}

#[test]
fn birth_death_extinction_is_a_quarter() {
    let est = extinction_frequency(&single_phase(2.0, 0.5), 10_000, &CAPS, 21).unwrap();
    assert!((est.frequency - 0.25).abs() <= 3.0 * (0.25f64 * 0.75 / 1e4).sqrt(), "{est:?}");
}

#[test]
fn no_births_always_extinct() {
    let est = extinction_frequency(&single_phase(0.0, 1.0), 500, &CAPS, 1).unwrap();
    assert_eq!(est.extinct, 500);
}

#[test]
fn example1_tree_extinction_matches_fixed_point() {
    let model = preset_model("example1");
    let q = extinction_vector(&model, DEFAULT_EXTINCTION_TOL, DEFAULT_EXTINCTION_MAX_ITER).unwrap();
    let q0 = model.alpha().dot(&q);
    let trees = 10_000;
    let est = extinction_frequency(&model, trees, &CAPS, 8).unwrap();
    let se = (q0 * (1.0 - q0) / trees as f64).sqrt();
    assert!((est.frequency - q0).abs() <= 3.0 * se, "{} vs {q0}", est.frequency);
}
