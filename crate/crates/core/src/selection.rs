//! Choosing the number of phases: AIC, K-fold cross-validation, the MSIL
//! criterion and, when the truth is known, the mean squared error of fitted
//! global curves.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::demography::{curves, AgeGrid};
use crate::error::{Error, Result};
use crate::estimation::{fit_global, fit_individual, survival_weights, FitConfig, FitResult, GlobalRates};
use crate::likelihood::msil::{class_masses, class_of, enumerate_classes, closed_form_class_count, ClassMapping};
use crate::likelihood::{CompiledSample, LifeVectorSample, ZERO_LOG_LIKELIHOOD};
use crate::model::{AtmmppParams, TmapModel};
use crate::rng::{stream, tag};
use crate::simulation::aggregate_rates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Aic,
    Cv,
    Msil,
    Mse,
}

impl Criterion {
    /// CV scores are held-out log-likelihoods (larger is better); the
    /// others are losses.
    pub fn maximizes(self) -> bool {
        matches!(self, Criterion::Cv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsilPartition {
    #[serde(rename = "K")]
    pub max_count: usize,
    #[serde(rename = "M")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsilInfo {
    pub partition: MsilPartition,
    pub classes: usize,
    /// Closed-form cardinality quoted in the literature (report only).
    pub closed_form_cardinality: f64,
    /// Largest `|sum of class masses - 1|` over all fits.
    pub max_mass_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub criterion: Criterion,
    pub n_values: Vec<usize>,
    /// One per entry of `n_values`; `None` where every fit failed.
    pub scores: Vec<Option<f64>>,
    pub per_fold: Option<Vec<Vec<f64>>>,
    pub chosen_n: Option<usize>,
    /// Held-out vectors left out of the MSIL empirical term.
    pub exclusions: usize,
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msil: Option<MsilInfo>,
}

impl SelectionReport {
    fn new(criterion: Criterion, n_values: Vec<usize>, scores: Vec<Option<f64>>) -> Self {
        let chosen_n = choose(&n_values, &scores, criterion.maximizes());
        SelectionReport {
            criterion,
            n_values,
            scores,
            per_fold: None,
            chosen_n,
            exclusions: 0,
            failures: Vec::new(),
            msil: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Optimum of the scores, ties to the smallest `n`.
fn choose(n_values: &[usize], scores: &[Option<f64>], maximize: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&n, s) in n_values.iter().zip(scores) {
        let Some(s) = *s else { continue };
        let better = match best {
            None => true,
            Some((bn, bs)) => {
                if maximize {
                    s > bs || (s == bs && n < bn)
                } else {
                    s < bs || (s == bs && n < bn)
                }
            }
        };
        if better {
            best = Some((n, s));
        }
    }
    best.map(|(n, _)| n)
}

fn check_range(n_values: &[usize]) -> Result<()> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::structural("candidate n values must be nonempty and positive"));
    }
    Ok(())
}

pub fn aic_value(n: usize, log_likelihood: f64) -> f64 {
    2.0 * AtmmppParams::parameter_count(n) as f64 - 2.0 * log_likelihood
}

/// Fits every `n` on the whole sample and scores `2(3n-1) - 2 logL`.
pub fn aic(sample: &LifeVectorSample, n_values: &[usize], cfg: &FitConfig) -> Result<SelectionReport> {
    check_range(n_values)?;
    let mut failures = Vec::new();
    let scores = n_values
        .iter()
        .map(|&n| match fit_individual(sample, &FitConfig { n, ..cfg.clone() }) {
            Ok(fit) => Some(aic_value(n, fit.log_likelihood())),
            Err(e) => {
                failures.push(format!("n={n}: {e}"));
                None
            }
        })
        .collect();
    let mut report = SelectionReport::new(Criterion::Aic, n_values.to_vec(), scores);
    report.failures = failures;
    Ok(report)
}

/// Test-fold indices: a seeded shuffle, then position modulo `k`.
pub fn fold_assignment(len: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > len {
        return Err(Error::structural(format!("need 2 <= folds <= N, got {k} folds for N = {len}")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut stream(seed, &[tag::FOLDS]));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training fits per `(n, fold)`, computed on demand and shared by the CV
/// and MSIL criteria.
pub struct FoldFits<'a> {
    sample: &'a LifeVectorSample,
    folds: Vec<Vec<usize>>,
    cfg: FitConfig,
    fits: BTreeMap<(usize, usize), std::result::Result<FitResult, String>>,
}

impl<'a> FoldFits<'a> {
    pub fn new(sample: &'a LifeVectorSample, k: usize, cfg: &FitConfig) -> Result<Self> {
        Ok(FoldFits {
            sample,
            folds: fold_assignment(sample.len(), k, cfg.seed)?,
            cfg: cfg.clone(),
            fits: BTreeMap::new(),
        })
    }

    /// Uses the given test folds, which must partition the sample indices.
    pub fn with_folds(sample: &'a LifeVectorSample, folds: Vec<Vec<usize>>, cfg: &FitConfig) -> Result<Self> {
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        if folds.len() < 2 || folds.iter().any(Vec::is_empty) || all != (0..sample.len()).collect::<Vec<_>>() {
            return Err(Error::structural("folds must be at least two nonempty sets partitioning the sample"));
        }
        Ok(FoldFits {
            sample,
            folds,
            cfg: cfg.clone(),
            fits: BTreeMap::new(),
        })
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn test_sample(&self, fold: usize) -> Result<LifeVectorSample> {
        self.sample.select(&self.folds[fold])
    }

    /// Fit on everything outside `fold`.
    pub fn fit(&mut self, n: usize, fold: usize) -> std::result::Result<&FitResult, String> {
        if !self.fits.contains_key(&(n, fold)) {
            let train: Vec<usize> = (0..self.folds.len())
                .filter(|&f| f != fold)
                .flat_map(|f| self.folds[f].iter().copied())
                .collect();
            let res = self
                .sample
                .select(&train)
                .and_then(|s| fit_individual(&s, &FitConfig { n, ..self.cfg.clone() }))
                .map_err(|e| format!("n={n}, fold {fold}: {e}"));
            self.fits.insert((n, fold), res);
        }
        self.fits[&(n, fold)].as_ref().map_err(|e| e.clone())
    }
}

fn mean(v: &[f64]) -> f64 {
    (v.iter().sum::<f64>() / v.len() as f64).max(f64::MIN)
}

/// K-fold CV: mean held-out log-likelihood per vector, maximized over `n`.
pub fn cross_validate(
    sample: &LifeVectorSample,
    n_values: &[usize],
    k: usize,
    cfg: &FitConfig,
) -> Result<SelectionReport> {
    check_range(n_values)?;
    let mut fits = FoldFits::new(sample, k, cfg)?;
    cross_validate_with(&mut fits, n_values)
}

pub fn cross_validate_with(fits: &mut FoldFits, n_values: &[usize]) -> Result<SelectionReport> {
    check_range(n_values)?;
    let k = fits.folds().len();
    let tests: Vec<CompiledSample> = (0..k)
        .map(|f| fits.test_sample(f).map(|s| CompiledSample::new(&s)))
        .collect::<Result<_>>()?;
    let mut failures = Vec::new();
    let mut per_fold = Vec::new();
    let mut scores = Vec::new();
    for &n in n_values {
        let mut row = Vec::with_capacity(k);
        for (fold, test) in tests.iter().enumerate() {
            let value = match fits.fit(n, fold) {
                Ok(fit) => {
                    let ll = fit.model().and_then(|m| test.log_likelihood(&m));
                    match ll {
                        Ok(v) if v == ZERO_LOG_LIKELIHOOD => {
                            failures.push(format!("n={n}, fold {fold}: held-out vector with zero probability"));
                            Some(ZERO_LOG_LIKELIHOOD)
                        }
                        Ok(v) => Some(v / test.len() as f64),
                        Err(e) => {
                            failures.push(format!("n={n}, fold {fold}: {e}"));
                            None
                        }
                    }
                }
                Err(e) => {
                    failures.push(e);
                    None
                }
            };
            row.push(value);
        }
        scores.push(row.iter().all(Option::is_some).then(|| mean(&row.iter().flatten().copied().collect::<Vec<_>>())));
        per_fold.push(row.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
    }
    let mut report = SelectionReport::new(Criterion::Cv, n_values.to_vec(), scores);
    report.per_fold = Some(per_fold);
    report.failures = failures;
    Ok(report)
}

/// Cross-validated MSIL over the partition `(K, M)`:
/// `mean_k sum_v f_k(v)^2 - 2 mean_k mean_{v in B_k} f_k(class(v))`.
pub fn msil_select(
    sample: &LifeVectorSample,
    n_values: &[usize],
    k: usize,
    partition: MsilPartition,
    cfg: &FitConfig,
) -> Result<SelectionReport> {
    check_range(n_values)?;
    let mut fits = FoldFits::new(sample, k, cfg)?;
    msil_select_with(&mut fits, n_values, partition)
}

pub fn msil_select_with(fits: &mut FoldFits, n_values: &[usize], partition: MsilPartition) -> Result<SelectionReport> {
    check_range(n_values)?;
    let MsilPartition { max_count, horizon } = partition;
    let classes = enumerate_classes(max_count, horizon)?.classes.len();
    let kf = fits.folds().len();
    let mut exclusions = 0;
    let mut mapped: Vec<Vec<usize>> = Vec::with_capacity(kf);
    for f in 0..kf {
        let test = fits.test_sample(f)?;
        let mut idx = Vec::new();
        for v in test.vectors() {
            match class_of(v, max_count, horizon) {
                ClassMapping::Class(c) => idx.push(c),
                ClassMapping::Excluded => exclusions += 1,
            }
        }
        mapped.push(idx);
    }
    let l = fits.sample.class_length();
    let mut failures = Vec::new();
    let mut per_fold = Vec::new();
    let mut scores = Vec::new();
    let mut max_mass_error: f64 = 0.0;
    for &n in n_values {
        let mut row = Vec::with_capacity(kf);
        for (fold, idx) in mapped.iter().enumerate() {
            let masses = fits
                .fit(n, fold)
                .and_then(|fit| fit.model().and_then(|m| class_masses(&m, l, max_count, horizon)).map_err(|e| e.to_string()));
            match masses {
                Ok(f) => {
                    max_mass_error = max_mass_error.max((f.iter().sum::<f64>() - 1.0).abs());
                    let square: f64 = f.iter().map(|v| v * v).sum();
                    let cross = if idx.is_empty() {
                        0.0
                    } else {
                        idx.iter().map(|&c| f[c]).sum::<f64>() / idx.len() as f64
                    };
                    row.push(Some(square - 2.0 * cross));
                }
                Err(e) => {
                    failures.push(e);
                    row.push(None);
                }
            }
        }
        scores.push(row.iter().all(Option::is_some).then(|| mean(&row.iter().flatten().copied().collect::<Vec<_>>())));
        per_fold.push(row.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
    }
    let mut report = SelectionReport::new(Criterion::Msil, n_values.to_vec(), scores);
    report.per_fold = Some(per_fold);
    report.failures = failures;
    report.exclusions = exclusions;
    report.msil = Some(MsilInfo {
        partition,
        classes,
        closed_form_cardinality: closed_form_class_count(max_count, horizon),
        max_mass_error,
    });
    Ok(report)
}

/// `M = ceil(sum_{x>=1} S_x) + 1` and `K + 1 = ceil(max_{1<=x<=M} b_x)`,
/// with 1-based classes (`b_1` is the first row).
pub fn partition_mk1(rates: &GlobalRates) -> Result<MsilPartition> {
    let s = survival_points(rates)?;
    let horizon = s[1..].iter().sum::<f64>().ceil() as usize + 1;
    partition_from(rates, horizon, |r| r.fertility)
}

/// `M = min{x >= 0 : S_x < p} + 1` and `K + 1 = ceil(max (b_x + se_x))`.
pub fn partition_mk2(rates: &GlobalRates, p: f64) -> Result<MsilPartition> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::structural(format!("covering parameter p must lie in (0, 1), got {p}")));
    }
    let s = survival_points(rates)?;
    let first = s.iter().position(|&v| v < p).unwrap_or(s.len() - 1);
    partition_from(rates, first + 1, |r| r.fertility.map(|b| b + r.fertility_se.unwrap_or(0.0)))
}

/// Observed survival at ages `0, 1, .., rows` (one past the last class).
fn survival_points(rates: &GlobalRates) -> Result<Vec<f64>> {
    let mut s = survival_weights(rates)?;
    let last = *s.last().unwrap_or(&1.0);
    let d_last = rates.targets()?.last().and_then(|t| t.0).unwrap_or(0.0);
    s.push(last * (1.0 - d_last));
    Ok(s)
}

fn partition_from(
    rates: &GlobalRates,
    horizon: usize,
    value: impl Fn(&crate::estimation::RateRow) -> Option<f64>,
) -> Result<MsilPartition> {
    let top = rates
        .rows
        .iter()
        .take(horizon)
        .filter_map(value)
        .fold(0.0f64, f64::max);
    Ok(MsilPartition {
        max_count: (top.ceil() as usize).saturating_sub(1),
        horizon: horizon.max(1),
    })
}

/// MSIL-chosen `n` over a grid of partitions, reusing the fold fits.
pub fn msil_grid(
    sample: &LifeVectorSample,
    n_values: &[usize],
    k: usize,
    horizons: &[usize],
    max_counts: &[usize],
    cfg: &FitConfig,
) -> Result<Vec<SelectionReport>> {
    let mut fits = FoldFits::new(sample, k, cfg)?;
    let mut out = Vec::new();
    for &horizon in horizons {
        for &max_count in max_counts {
            out.push(msil_select_with(&mut fits, n_values, MsilPartition { max_count, horizon })?);
        }
    }
    Ok(out)
}

/// `sum_x ((dbar - dhat)^2 + (bbar - bhat)^2) S(x)` against the true curves.
pub fn curve_loss(truth: &TmapModel, fitted: &TmapModel, grid: &AgeGrid) -> Result<f64> {
    let t = curves(truth, grid)?;
    let f = curves(fitted, grid)?;
    Ok((0..grid.len())
        .map(|x| ((t.mortality[x] - f.mortality[x]).powi(2) + (t.fertility[x] - f.fertility[x]).powi(2)) * t.survival[x])
        .sum())
}

/// Mean curve loss of global fits over generated datasets.
pub fn mse_global<G>(
    truth: &TmapModel,
    n_values: &[usize],
    mut generate: G,
    replicates: usize,
    cfg: &FitConfig,
) -> Result<SelectionReport>
where
    G: FnMut(u64) -> Result<GlobalRates>,
{
    check_range(n_values)?;
    if replicates == 0 {
        return Err(Error::structural("need at least one replicate"));
    }
    let datasets = (0..replicates as u64).map(&mut generate).collect::<Result<Vec<_>>>()?;
    let mut failures = Vec::new();
    let mut per_rep = Vec::new();
    let mut scores = Vec::new();
    for &n in n_values {
        let mut row = Vec::new();
        for (r, data) in datasets.iter().enumerate() {
            let grid = AgeGrid::classes(data.len(), data.class_length)?;
            let loss = fit_global(data, &FitConfig { n, ..cfg.clone() })
                .and_then(|fit| fit.model())
                .and_then(|m| curve_loss(truth, &m, &grid));
            match loss {
                Ok(v) => row.push(v),
                Err(e) => failures.push(format!("n={n}, replicate {r}: {e}")),
            }
        }
        scores.push((!row.is_empty()).then(|| mean(&row)));
        per_rep.push(row);
    }
    let mut report = SelectionReport::new(Criterion::Mse, n_values.to_vec(), scores);
    report.per_fold = Some(per_rep);
    report.failures = failures;
    Ok(report)
}

/// Global rates generator that simulates from `truth` and aggregates.
pub fn simulated_rates<'a>(
    truth: &'a TmapModel,
    sim: &crate::simulation::SimConfig,
) -> impl FnMut(u64) -> Result<GlobalRates> + 'a {
    let sim = sim.clone();
    move |r| crate::simulation::simulate_sample(truth, &sim, r).and_then(|s| aggregate_rates(&s))
}
