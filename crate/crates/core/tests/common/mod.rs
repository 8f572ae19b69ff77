#![allow(dead_code)]

use mbtfit::demography::survival;
use mbtfit::likelihood::count_kernels;
use mbtfit::model::{build_atmmpp, preset, AtmmppParams, TmapModel};
use mbtfit::rng::stream;
use mbtfit::simulation::{aggregate_rates, simulate_sample, SimConfig, Simulator};

pub fn preset_model(name: &str) -> TmapModel {
    build_atmmpp(&preset(name).unwrap().params).unwrap()
}

pub fn single_phase(lambda: f64, mu: f64) -> TmapModel {
    build_atmmpp(&AtmmppParams::new(vec![], vec![mu], vec![lambda]).unwrap()).unwrap()
}

/// Outcome tallies of `runs` lives observed over `[0, l)`: `alive[k]`,
/// `dead[k]` count lives with `k` births that survived / died.
pub struct IntervalCounts {
    pub runs: usize,
    pub alive: Vec<usize>,
    pub dead: Vec<usize>,
}

pub fn interval_counts(model: &TmapModel, l: f64, runs: usize, seed: u64) -> IntervalCounts {
    let sim = Simulator::new(model).unwrap();
    let mut rng = stream(seed, &[99]);
    let mut alive = Vec::new();
    let mut dead = Vec::new();
    for _ in 0..runs {
        let t = sim.trajectory(l, &mut rng);
        let k = t.births.iter().filter(|b| **b < l).count();
        let bucket = if t.death < l { &mut dead } else { &mut alive };
        if bucket.len() <= k {
            bucket.resize(k + 1, 0);
        }
        bucket[k] += 1;
    }
    IntervalCounts { runs, alive, dead }
}

/// Expected `(alive, dead)` probabilities per count from the kernels.
pub fn interval_probabilities(model: &TmapModel, l: f64, max_k: usize) -> (Vec<f64>, Vec<f64>) {
    let kern = count_kernels(model, l, max_k).unwrap();
    let a = model.alpha();
    let ones = nalgebra::DVector::from_element(model.n(), 1.0);
    let alive = (0..=max_k).map(|k| (a.transpose() * kern.alive_with(k) * &ones)[0]).collect();
    let dead = (0..=max_k).map(|k| a.dot(&kern.dead_with(k))).collect();
    (alive, dead)
}

/// Pearson statistic and degrees of freedom after pooling every cell with
/// expectation below 5 into one cell.
pub fn chi_square(observed: &[usize], expected_p: &[f64], runs: usize) -> (f64, usize) {
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (o, p) in observed.iter().zip(expected_p) {
        let e = p * runs as f64;
        if e < 5.0 {
            pool_o += *o as f64;
            pool_e += e;
        } else {
            stat += (*o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e.max(1e-300);
        cells += 1;
    }
    (stat, cells.saturating_sub(1))
}

/// Two-sided KS statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Checks of simulated quantities against formulas, each a 3-SE comparison.
#[derive(Default)]
pub struct SeTally {
    pub passed: usize,
    pub total: usize,
    pub misses: Vec<String>,
}

impl SeTally {
    pub fn check(&mut self, what: impl Into<String>, observed: f64, expected: f64, se: f64) {
        self.total += 1;
        if (observed - expected).abs() <= 3.0 * se + 1e-12 {
            self.passed += 1;
        } else {
            self.misses.push(format!("{}: {observed} vs {expected} (se {se})", what.into()));
        }
    }

    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total.max(1) as f64
    }
}

/// Survival, class rates and single-interval count frequencies of `model`
/// from `runs` simulated lives, compared against the formulas.
pub fn curve_checks(model: &TmapModel, horizon: f64, runs: usize, seed: u64, tally: &mut SeTally) {
    let cfg = SimConfig::new(runs, horizon, 1.0, seed);
    let sample = simulate_sample(model, &cfg, 0).unwrap();
    let rates = aggregate_rates(&sample).unwrap();
    let curves = mbtfit::demography::curves(model, &mbtfit::demography::AgeGrid::classes(rates.len(), 1.0).unwrap()).unwrap();
    let n = runs as f64;
    for (x, row) in rates.rows.iter().enumerate() {
        let entering = row.count.unwrap_or(0.0);
        let s = survival(model, x as f64).unwrap();
        tally.check(format!("S({x})"), entering / n, s, (s * (1.0 - s) / n).sqrt());
        if entering < 50.0 {
            continue;
        }
        if let Some(d) = row.mortality {
            let p = curves.mortality[x];
            tally.check(format!("d({x})"), d, p, (p * (1.0 - p) / entering).sqrt());
        }
        if let (Some(b), Some(se)) = (row.fertility, row.fertility_se) {
            tally.check(format!("b({x})"), b, curves.fertility[x], se);
        }
    }
    let counts = interval_counts(model, 1.0, runs, seed ^ 0x5eed);
    let kmax = counts.alive.len().max(counts.dead.len()) + 5;
    let (pa, pd) = interval_probabilities(model, 1.0, kmax);
    for k in 0..=kmax {
        for (label, obs, p) in [
            ("alive", counts.alive.get(k).copied().unwrap_or(0), pa[k]),
            ("dead", counts.dead.get(k).copied().unwrap_or(0), pd[k]),
        ] {
            if p * n < 5.0 {
                continue;
            }
            tally.check(format!("{label}({k})"), obs as f64 / n, p, (p * (1.0 - p) / n).sqrt());
        }
    }
}
