//! Fitting ATMMPP rates to global rates (weighted least squares) or to
//! individual life vectors (maximum likelihood).
//!
//! Both fits run a multi-start Nelder–Mead search over `log theta`. Start 0
//! is the data-driven recipe; the others multiply it by independent
//! `exp(noise * N(0, 1))` factors.

pub mod nelder_mead;
mod rates;

pub use nelder_mead::{minimize, Minimum, NelderMeadOptions};
pub use rates::{survival_weights, GlobalRates, RateBasis, RateRow};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::demography::{curves_with, AgeGrid, ClassKernel};
use crate::error::{Error, Result};
use crate::likelihood::{CompiledSample, LifeVectorSample, ZERO_LOG_LIKELIHOOD};
use crate::model::{build_atmmpp, AtmmppParams, TmapModel};
use crate::rng::{stream, tag};
use crate::simulation::aggregate_rates;

/// Bounds on `log theta` during the search; keeps every rate positive and
/// the exponentials well scaled.
pub const LOG_THETA_MIN: f64 = -30.0;
pub const LOG_THETA_MAX: f64 = 12.0;

/// Smallest seed value, so that `log` of a zero recipe value is finite.
pub const SEED_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n: usize,
    pub seeds: usize,
    pub noise: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub weighting: Weighting,
}

impl FitConfig {
    pub fn new(n: usize) -> Self {
        FitConfig {
            n,
            seeds: 25,
            noise: 0.25,
            ftol: 1e-10,
            xtol: 1e-8,
            max_iter: 10_000,
            seed: 0,
            weighting: Weighting::Survival,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_seeds(mut self, seeds: usize) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::structural("n must be at least 1"));
        }
        if self.seeds == 0 {
            return Err(Error::structural("need at least one seed"));
        }
        if !(self.ftol > 0.0 && self.xtol > 0.0) || !(self.noise >= 0.0) || self.max_iter == 0 {
            return Err(Error::structural("tolerances, noise and iteration cap must be positive"));
        }
        Ok(())
    }

    fn optimizer(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            ftol: self.ftol,
            xtol: self.xtol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }
}

/// Weights of the least-squares terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Observed survival to the class.
    #[default]
    Survival,
    /// Number of individuals behind each row (survival where unknown).
    Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTrace {
    pub index: usize,
    pub start: Vec<f64>,
    pub converged: bool,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: AtmmppParams,
    /// Least-squares objective, or negative log-likelihood.
    pub objective: f64,
    pub seeds: Vec<SeedTrace>,
    pub best_seed: usize,
    /// The objective did not change around the start: the data carry no
    /// information and the start is returned.
    pub flat: bool,
}

impl FitResult {
    pub fn model(&self) -> Result<TmapModel> {
        build_atmmpp(&self.params)
    }

    /// Log-likelihood for individual fits.
    pub fn log_likelihood(&self) -> f64 {
        -self.objective
    }
}

pub fn to_log(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| t.ln()).collect()
}

pub fn from_log(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.clamp(LOG_THETA_MIN, LOG_THETA_MAX).exp()).collect()
}

/// Least-squares objective over the rows of `rates`, weighted by `weights`
/// (one per row). Rows with a missing value drop that term.
pub fn objective_global(params: &AtmmppParams, rates: &GlobalRates, weights: &[f64]) -> Result<f64> {
    let targets = rates.targets()?;
    GlobalObjective::with_weights(rates, weights)?.eval_targets(params, &targets)
}

/// Prepared least-squares problem.
#[derive(Debug, Clone)]
pub struct GlobalObjective {
    targets: Vec<(Option<f64>, Option<f64>)>,
    weights: Vec<f64>,
    grid: AgeGrid,
}

impl GlobalObjective {
    pub fn new(rates: &GlobalRates, weighting: Weighting) -> Result<Self> {
        let survival = survival_weights(rates)?;
        let weights = match weighting {
            Weighting::Survival => survival,
            Weighting::Counts => rates
                .rows
                .iter()
                .zip(&survival)
                .map(|(r, s)| r.count.unwrap_or(*s))
                .collect(),
        };
        Self::with_weights(rates, &weights)
    }

    pub fn with_weights(rates: &GlobalRates, weights: &[f64]) -> Result<Self> {
        if weights.len() != rates.len() {
            return Err(Error::structural(format!(
                "{} weights for {} rows",
                weights.len(),
                rates.len()
            )));
        }
        Ok(GlobalObjective {
            targets: rates.targets()?,
            weights: weights.to_vec(),
            grid: AgeGrid::classes(rates.len(), rates.class_length)?,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, params: &AtmmppParams) -> Result<f64> {
        self.eval_targets(params, &self.targets)
    }

    fn eval_targets(&self, params: &AtmmppParams, targets: &[(Option<f64>, Option<f64>)]) -> Result<f64> {
        let model = build_atmmpp(params)?;
        let kernel = ClassKernel::new(&model, self.grid.class_length())?;
        let c = curves_with(&model, &kernel, &self.grid)?;
        let mut f = 0.0;
        for (x, ((td, tb), w)) in targets.iter().zip(&self.weights).enumerate() {
            let mut term = 0.0;
            if let Some(d) = td {
                term += (d - c.mortality[x]).powi(2);
            }
            if let Some(b) = tb {
                term += (b - c.fertility[x]).powi(2);
            }
            f += term * w;
        }
        Ok(f)
    }
}

/// Starting rates from data: `gamma_i = n / ((M+1) l)` and
/// `lambda_i`, `mu_i` the average fertility and mortality over the `M + 1`
/// classes, converted to per-year rates for per-class data.
pub fn seed_params(n: usize, rates: &GlobalRates) -> Result<AtmmppParams> {
    if n == 0 {
        return Err(Error::structural("n must be at least 1"));
    }
    let (mut sb, mut sd, mut any) = (0.0, 0.0, false);
    for r in &rates.rows {
        if let Some(b) = r.fertility {
            sb += b;
            any = true;
        }
        if let Some(d) = r.mortality {
            sd += d;
            any = true;
        }
    }
    if !any {
        return Err(Error::structural("no usable rates to seed from"));
    }
    let classes = rates.len() as f64;
    let l = rates.class_length;
    let per_year = match rates.basis {
        RateBasis::PerClass => l,
        RateBasis::PerYear => 1.0,
    };
    let gamma = (n as f64 / (classes * l)).max(SEED_FLOOR);
    let lambda = (sb / classes / per_year).max(SEED_FLOOR);
    let mu = (sd / classes / per_year).max(SEED_FLOOR);
    AtmmppParams::new(vec![gamma; n - 1], vec![mu; n], vec![lambda; n])
}

/// Seed recipe for a life-vector sample, via aggregated rates. An entirely
/// censored sample falls back to unit rates.
pub fn seed_params_from_sample(n: usize, sample: &LifeVectorSample) -> Result<AtmmppParams> {
    match aggregate_rates(sample).and_then(|r| seed_params(n, &r)) {
        Ok(p) => Ok(p),
        Err(Error::Structural(_)) if n > 0 => AtmmppParams::new(vec![1.0; n - 1], vec![1.0; n], vec![1.0; n]),
        Err(e) => Err(e),
    }
}

/// Starting points in `log theta`: the recipe, then jittered copies.
pub fn starts(seed: &AtmmppParams, cfg: &FitConfig) -> Vec<Vec<f64>> {
    let base = to_log(&seed.theta());
    (0..cfg.seeds)
        .map(|i| {
            if i == 0 {
                return base.clone();
            }
            let mut rng = stream(cfg.seed, &[tag::SEEDS, i as u64]);
            base.iter()
                .map(|z| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    z + cfg.noise * e
                })
                .collect()
        })
        .collect()
}

/// Runs every start and keeps the lowest converged value (lowest index on ties).
pub fn multistart<F: FnMut(&[f64]) -> f64>(mut f: F, starts: &[Vec<f64>], cfg: &FitConfig) -> Result<FitResult> {
    let n = cfg.n;
    let opts = cfg.optimizer();
    let mut traces = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, Minimum)> = None;
    let mut flat_all = true;
    for (i, z0) in starts.iter().enumerate() {
        let m = minimize(&mut f, z0, &opts);
        traces.push(SeedTrace {
            index: i,
            start: from_log(z0),
            converged: m.converged,
            value: m.value,
            iterations: m.iterations,
            evaluations: m.evaluations,
        });
        flat_all &= m.flat;
        if m.converged && m.value < f64::MAX && best.as_ref().is_none_or(|(_, b)| m.value < b.value) {
            best = Some((i, m));
        }
    }
    let Some((best_seed, m)) = best else {
        let summary: Vec<String> = traces
            .iter()
            .map(|t| format!("seed {}: value {:e}, converged {}", t.index, t.value, t.converged))
            .collect();
        return Err(Error::Optimization(format!(
            "no start converged to a finite value ({})",
            summary.join("; ")
        )));
    };
    let (x, flat) = if flat_all { (starts[0].clone(), true) } else { (m.x, false) };
    let value = if flat_all { traces[0].value } else { m.value };
    Ok(FitResult {
        params: AtmmppParams::from_theta(n, &from_log(&x))?,
        objective: value,
        seeds: traces,
        best_seed: if flat_all { 0 } else { best_seed },
        flat,
    })
}

/// Weighted least-squares fit to global rates.
pub fn fit_global(rates: &GlobalRates, cfg: &FitConfig) -> Result<FitResult> {
    cfg.check()?;
    let obj = GlobalObjective::new(rates, cfg.weighting)?;
    let seed = seed_params(cfg.n, rates)?;
    let n = cfg.n;
    let f = |z: &[f64]| {
        AtmmppParams::from_theta(n, &from_log(z))
            .and_then(|p| obj.eval(&p))
            .unwrap_or(f64::MAX)
    };
    multistart(f, &starts(&seed, cfg), cfg)
}

/// Negative log-likelihood in `log theta` coordinates; `f64::MAX` where the
/// model cannot produce the sample.
pub fn negative_log_likelihood(sample: &CompiledSample, n: usize, z: &[f64]) -> f64 {
    let ll = AtmmppParams::from_theta(n, &from_log(z))
        .and_then(|p| build_atmmpp(&p))
        .and_then(|m| sample.log_likelihood(&m));
    match ll {
        Ok(v) if v != ZERO_LOG_LIKELIHOOD && v.is_finite() => -v,
        _ => f64::MAX,
    }
}

/// Maximum-likelihood fit to a life-vector sample.
pub fn fit_individual(sample: &LifeVectorSample, cfg: &FitConfig) -> Result<FitResult> {
    cfg.check()?;
    let compiled = CompiledSample::new(sample);
    let seed = seed_params_from_sample(cfg.n, sample)?;
    let n = cfg.n;
    multistart(|z| negative_log_likelihood(&compiled, n, z), &starts(&seed, cfg), cfg)
}
