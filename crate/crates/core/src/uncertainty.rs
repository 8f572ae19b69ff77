//! Pointwise confidence bands for model outputs: simulation from a known
//! model, bootstrap of a life-vector sample, or the delta method around an
//! individual-data MLE.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{from_log, negative_log_likelihood, to_log};
use crate::likelihood::{CompiledSample, LifeVectorSample};
use crate::model::{build_atmmpp, AtmmppParams, TmapModel};
use crate::rng::{stream, tag};
use crate::simulation::{simulate_sample, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    Resample,
    Bootstrap,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandStyle {
    /// Pointwise mean plus or minus `z` standard deviations.
    #[default]
    MeanSd,
    /// Pointwise empirical quantiles around the median.
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    pub replicates: usize,
    pub level: f64,
    pub style: BandStyle,
    pub seed: u64,
}

impl BandOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BandOptions {
            replicates,
            level: 0.95,
            style: BandStyle::MeanSd,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::structural("need at least two replicates"));
        }
        check_level(self.level)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::structural(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Two-sided standard normal quantile; 1.96 at the default level.
pub fn z_value(level: f64) -> f64 {
    if (level - 0.95).abs() < 1e-15 {
        return 1.96;
    }
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub ages: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub method: BandMethod,
    pub replicates: usize,
    pub failures: usize,
    /// Output at the fit to the original data (bootstrap only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    pub diagnostics: Vec<String>,
}

impl ConfidenceBand {
    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    pub fn mean_width(&self) -> f64 {
        let w = self.widths();
        w.iter().sum::<f64>() / w.len().max(1) as f64
    }
}

fn summarize(
    ages: &[f64],
    outputs: &[Vec<f64>],
    opts: &BandOptions,
    method: BandMethod,
    failures: usize,
) -> Result<ConfidenceBand> {
    if outputs.len() < 2 {
        return Err(Error::Optimization(format!(
            "only {} of {} replicates succeeded",
            outputs.len(),
            opts.replicates
        )));
    }
    let m = ages.len();
    if outputs.iter().any(|o| o.len() != m) {
        return Err(Error::structural("output length does not match the age grid"));
    }
    let b = outputs.len() as f64;
    let mut estimate = Vec::with_capacity(m);
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for x in 0..m {
        let mut col: Vec<f64> = outputs.iter().map(|o| o[x]).collect();
        match opts.style {
            BandStyle::MeanSd => {
                let mean = col.iter().sum::<f64>() / b;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0);
                let half = z_value(opts.level) * var.sqrt();
                estimate.push(mean);
                lower.push(mean - half);
                upper.push(mean + half);
            }
            BandStyle::Quantile => {
                col.sort_by(f64::total_cmp);
                let q = |p: f64| {
                    let h = (col.len() - 1) as f64 * p;
                    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
                    col[lo] + (h - lo as f64) * (col[hi] - col[lo])
                };
                let a = (1.0 - opts.level) / 2.0;
                estimate.push(q(0.5));
                lower.push(q(a));
                upper.push(q(1.0 - a));
            }
        }
    }
    Ok(ConfidenceBand {
        ages: ages.to_vec(),
        estimate,
        lower,
        upper,
        level: opts.level,
        method,
        replicates: opts.replicates,
        failures,
        point: None,
        diagnostics: Vec::new(),
    })
}

fn collect<F>(opts: &BandOptions, mut one: F) -> (Vec<Vec<f64>>, usize, Vec<String>)
where
    F: FnMut(u64) -> Result<Vec<f64>>,
{
    let mut outputs = Vec::new();
    let mut messages = Vec::new();
    for r in 0..opts.replicates as u64 {
        match one(r) {
            Ok(o) => outputs.push(o),
            Err(e) => messages.push(format!("replicate {r}: {e}")),
        }
    }
    let failures = messages.len();
    (outputs, failures, messages)
}

/// Band from `B` datasets simulated from the true model (replicate `r` uses
/// stream `(sim.seed, r)`), each fitted by `fit` and mapped by `output`.
pub fn band_resample<Fit, Out>(
    truth: &TmapModel,
    sim: &SimConfig,
    ages: &[f64],
    mut fit: Fit,
    output: Out,
    opts: &BandOptions,
) -> Result<ConfidenceBand>
where
    Fit: FnMut(&LifeVectorSample) -> Result<TmapModel>,
    Out: Fn(&TmapModel) -> Result<Vec<f64>>,
{
    opts.check()?;
    let sim = SimConfig {
        seed: opts.seed,
        ..sim.clone()
    };
    let (outputs, failures, diagnostics) =
        collect(opts, |r| simulate_sample(truth, &sim, r).and_then(|s| fit(&s)).and_then(|m| output(&m)));
    let mut band = summarize(ages, &outputs, opts, BandMethod::Resample, failures)?;
    band.diagnostics = diagnostics;
    Ok(band)
}

/// Resample of `N` vectors with replacement.
pub fn bootstrap_sample<R: Rng + ?Sized>(sample: &LifeVectorSample, rng: &mut R) -> Result<LifeVectorSample> {
    let n = sample.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    sample.select(&idx)
}

/// Band from `B` bootstrap resamples of the data.
pub fn band_bootstrap<Fit, Out>(
    sample: &LifeVectorSample,
    ages: &[f64],
    mut fit: Fit,
    output: Out,
    opts: &BandOptions,
) -> Result<ConfidenceBand>
where
    Fit: FnMut(&LifeVectorSample) -> Result<TmapModel>,
    Out: Fn(&TmapModel) -> Result<Vec<f64>>,
{
    opts.check()?;
    let (outputs, failures, diagnostics) = collect(opts, |r| {
        let mut rng = stream(opts.seed, &[tag::BOOTSTRAP, r]);
        bootstrap_sample(sample, &mut rng)
            .and_then(|s| fit(&s))
            .and_then(|m| output(&m))
    });
    let mut band = summarize(ages, &outputs, opts, BandMethod::Bootstrap, failures)?;
    band.diagnostics = diagnostics;
    band.point = fit(sample).and_then(|m| output(&m)).ok();
    Ok(band)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedInformation {
    /// Negative Hessian of the log-likelihood in `log theta` coordinates,
    /// after eigenvalue clipping.
    pub information: DMatrix<f64>,
    /// Inverse information mapped to natural coordinates.
    pub covariance: DMatrix<f64>,
    pub clipped: bool,
    pub boundary: bool,
}

fn step(z: f64) -> f64 {
    1e-4 * (1.0 + z.abs())
}

/// Observed information at `theta_hat` by central differences in
/// `log theta`, clipped to be positive definite.
pub fn observed_information(sample: &LifeVectorSample, theta_hat: &AtmmppParams) -> Result<ObservedInformation> {
    let n = theta_hat.n();
    let theta = theta_hat.theta();
    let boundary = theta.iter().any(|t| *t < 1e-6);
    let z = to_log(&theta);
    let compiled = CompiledSample::new(sample);
    // negative log-likelihood, so its Hessian is the information
    let f = |z: &[f64]| negative_log_likelihood(&compiled, n, z);
    let d = z.len();
    let h: Vec<f64> = z.iter().map(|&v| step(v)).collect();
    let f0 = f(&z);
    if f0 == f64::MAX {
        return Err(Error::numeric("the sample has zero likelihood at theta_hat"));
    }
    let mut info = DMatrix::zeros(d, d);
    let mut zz = z.clone();
    let mut eval = |shifts: &[(usize, f64)]| {
        zz.copy_from_slice(&z);
        for &(i, s) in shifts {
            zz[i] += s;
        }
        f(&zz)
    };
    for i in 0..d {
        let fp = eval(&[(i, h[i])]);
        let fm = eval(&[(i, -h[i])]);
        info[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let pp = eval(&[(i, h[i]), (j, h[j])]);
            let pm = eval(&[(i, h[i]), (j, -h[j])]);
            let mp = eval(&[(i, -h[i]), (j, h[j])]);
            let mm = eval(&[(i, -h[i]), (j, -h[j])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            info[(i, j)] = v;
            info[(j, i)] = v;
        }
    }
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite likelihood near theta_hat"));
    }
    let eig = SymmetricEigen::new(info);
    let top = eig.eigenvalues.max().max(0.0);
    let floor = 1e-8 * top.max(f64::MIN_POSITIVE);
    let clipped = eig.eigenvalues.iter().any(|&l| l < floor);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let information = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let inv_z = &eig.eigenvectors * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
    let jac = DMatrix::from_diagonal(&DVector::from_vec(theta));
    let covariance = &jac * inv_z * &jac;
    Ok(ObservedInformation {
        information,
        covariance,
        clipped,
        boundary,
    })
}

/// Delta-method band `g +- z sqrt(grad g J^{-1} grad g^T)` with gradients
/// by central differences in `log theta`.
pub fn band_delta<Out>(
    sample: &LifeVectorSample,
    theta_hat: &AtmmppParams,
    ages: &[f64],
    output: Out,
    level: f64,
) -> Result<ConfidenceBand>
where
    Out: Fn(&TmapModel) -> Result<Vec<f64>>,
{
    check_level(level)?;
    let info = observed_information(sample, theta_hat)?;
    let n = theta_hat.n();
    let z = to_log(&theta_hat.theta());
    let at = |z: &[f64]| AtmmppParams::from_theta(n, &from_log(z)).and_then(|p| build_atmmpp(&p)).and_then(|m| output(&m));
    let estimate = at(&z)?;
    if estimate.len() != ages.len() {
        return Err(Error::structural("output length does not match the age grid"));
    }
    let d = z.len();
    let mut grad = DMatrix::zeros(ages.len(), d);
    for i in 0..d {
        let h = step(z[i]);
        let mut zp = z.clone();
        zp[i] += h;
        let mut zm = z.clone();
        zm[i] -= h;
        let (gp, gm) = (at(&zp)?, at(&zm)?);
        for x in 0..ages.len() {
            grad[(x, i)] = (gp[x] - gm[x]) / (2.0 * h);
        }
    }
    let inv = info
        .information
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numeric("information matrix is singular after clipping"))?;
    let zq = z_value(level);
    let mut lower = Vec::with_capacity(ages.len());
    let mut upper = Vec::with_capacity(ages.len());
    for x in 0..ages.len() {
        let g = grad.row(x);
        let var = (g * &inv * g.transpose())[(0, 0)].max(0.0);
        let half = zq * var.sqrt();
        lower.push(estimate[x] - half);
        upper.push(estimate[x] + half);
    }
    let mut diagnostics = Vec::new();
    if info.clipped {
        diagnostics.push("WARNING: observed information not positive definite; eigenvalues clipped".into());
    }
    if info.boundary {
        diagnostics.push("WARNING: some parameter is at the boundary (< 1e-6); delta method invalid".into());
    }
    Ok(ConfidenceBand {
        ages: ages.to_vec(),
        estimate,
        lower,
        upper,
        level,
        method: BandMethod::Delta,
        replicates: 0,
        failures: 0,
        point: None,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::{curves, AgeGrid};
    use crate::estimation::{fit_individual, FitConfig};

    fn single(lambda: f64, mu: f64) -> TmapModel {
        build_atmmpp(&AtmmppParams::new(vec![], vec![mu], vec![lambda]).unwrap()).unwrap()
    }

    #[test]
    fn z_values() {
        assert_eq!(z_value(0.95), 1.96);
        assert!((z_value(0.9) - 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn identical_fits_give_zero_width() {
        let s = LifeVectorSample::from_entries(vec![vec![1, -1]; 5], 1.0).unwrap();
        let m = single(1.0, 0.5);
        let band = band_bootstrap(&s, &[0.0, 1.0], |_| Ok(m.clone()), |_| Ok(vec![0.3, 0.4]), &BandOptions::new(5, 1))
            .unwrap();
        assert!(band.widths().iter().all(|w| w.abs() < 1e-15));
        assert_eq!(band.estimate, vec![0.3, 0.4]);
    }

    #[test]
    fn quantile_band_orders() {
        let opts = BandOptions {
            style: BandStyle::Quantile,
            ..BandOptions::new(5, 1)
        };
        let outputs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let b = summarize(&[0.0], &outputs, &opts, BandMethod::Bootstrap, 0).unwrap();
        assert_eq!(b.estimate, vec![2.0]);
        assert!(b.lower[0] <= 2.0 && b.upper[0] >= 2.0);
        assert!((b.lower[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_output_delta_band_is_degenerate() {
        let m = single(2.0, 0.5);
        let cfg = SimConfig::new(300, 5.0, 1.0, 2);
        let s = simulate_sample(&m, &cfg, 0).unwrap();
        let fit = fit_individual(&s, &FitConfig::new(1).with_seeds(2)).unwrap();
        let b = band_delta(&s, &fit.params, &[0.0, 1.0], |_| Ok(vec![0.5, 0.5]), 0.95).unwrap();
        assert!(b.widths().iter().all(|w| *w == 0.0));
        let grid = AgeGrid::classes(3, 1.0).unwrap();
        let b = band_delta(&s, &fit.params, grid.ages(), |m| Ok(curves(m, &grid)?.mortality), 0.95).unwrap();
        assert!(b.widths().iter().all(|w| *w > 0.0));
        assert!(b.diagnostics.is_empty(), "{:?}", b.diagnostics);
    }
}
