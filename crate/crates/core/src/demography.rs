//! Model-implied demographic quantities: survival, age-specific mortality and
//! fertility over classes of length `l`, and extinction probabilities of the
//! Markovian binary tree built on a TMAP.
//!
//! With `D = D0 + D1` and `pi_x` the phase distribution at age `x` given
//! survival to `x`:
//!
//! ```text
//! S(x)       = alpha e^{Dx} 1
//! dbar(x, l) = pi_x (I - e^{Dl}) 1
//! bbar(x, l) = pi_x (I - e^{Dl}) (-D)^{-1} D1 1
//! ```
//!
//! Both integrals `(I - e^{Dl})(-D)^{-1} v = int_0^l e^{Du} v du` are read off
//! the exponential of the augmented generator `[[D, v], [0, 0]]`, so no
//! inverse of `D` is ever formed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_exp, MatrixExpOptions};
use crate::model::TmapModel;

pub const SURVIVAL_FLOOR: f64 = 1e-300;
pub const DEFAULT_EXTINCTION_TOL: f64 = 1e-12;
pub const DEFAULT_EXTINCTION_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    ages: Vec<f64>,
    class_length: f64,
}

impl AgeGrid {
    pub fn new(ages: Vec<f64>, class_length: f64) -> Result<Self> {
        if !(class_length > 0.0 && class_length.is_finite()) {
            return Err(Error::structural(format!(
                "class length must be positive, got {class_length}"
            )));
        }
        if ages.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::structural("ages must be finite and nonnegative"));
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::structural("ages must be strictly increasing"));
        }
        Ok(AgeGrid { ages, class_length })
    }

    /// Class starts `0, l, 2l, ..., (count-1) l`.
    pub fn classes(count: usize, class_length: f64) -> Result<Self> {
        Self::new(
            (0..count).map(|i| i as f64 * class_length).collect(),
            class_length,
        )
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn class_length(&self) -> f64 {
        self.class_length
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicCurves {
    pub ages: Vec<f64>,
    pub class_length: f64,
    pub mortality: Vec<f64>,
    pub fertility: Vec<f64>,
    pub survival: Vec<f64>,
}

/// `exp(D l)` together with `int_0^l e^{Du} v_j du` for each column `v_j`.
pub(crate) fn exp_with_integrals(
    d: &DMatrix<f64>,
    columns: &[DVector<f64>],
    l: f64,
) -> Result<(DMatrix<f64>, Vec<DVector<f64>>)> {
    let n = d.nrows();
    let m = n + columns.len();
    let mut aug = DMatrix::zeros(m, m);
    aug.view_mut((0, 0), (n, n)).copy_from(d);
    for (j, v) in columns.iter().enumerate() {
        aug.view_mut((0, n + j), (n, 1)).copy_from(v);
    }
    let e = matrix_exp(&aug, l, &MatrixExpOptions::default())?;
    let top = e.view((0, 0), (n, n)).into_owned();
    let ints = (0..columns.len())
        .map(|j| e.view((0, n + j), (n, 1)).column(0).into_owned())
        .collect();
    Ok((top, ints))
}

/// Per-class kernel shared by every age: one step `e^{Dl}`, and the
/// per-phase death probability and expected births within a class.
#[derive(Debug, Clone)]
pub struct ClassKernel {
    class_length: f64,
    step: DMatrix<f64>,
    death_within: DVector<f64>,
    births_within: DVector<f64>,
}

impl ClassKernel {
    pub fn new(model: &TmapModel, class_length: f64) -> Result<Self> {
        if !(class_length > 0.0 && class_length.is_finite()) {
            return Err(Error::structural(format!(
                "class length must be positive, got {class_length}"
            )));
        }
        model.ensure_valid()?;
        let births = model.d1() * DVector::from_element(model.n(), 1.0);
        let (step, ints) = exp_with_integrals(
            &model.generator(),
            &[model.death().clone(), births],
            class_length,
        )?;
        let mut ints = ints.into_iter();
        Ok(ClassKernel {
            class_length,
            step,
            death_within: ints.next().unwrap(),
            births_within: ints.next().unwrap(),
        })
    }

    pub fn class_length(&self) -> f64 {
        self.class_length
    }

    /// `(dbar, bbar)` for a conditional phase distribution `pi` (sums to 1).
    pub fn rates(&self, pi: &DVector<f64>) -> (f64, f64) {
        let mort = pi.dot(&self.death_within).clamp(0.0, 1.0);
        let fert = pi.dot(&self.births_within).max(0.0);
        (mort, fert)
    }
}

fn unnormalized_phase(model: &TmapModel, x: f64) -> Result<DVector<f64>> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::structural(format!("age must be finite and >= 0, got {x}")));
    }
    model.ensure_valid()?;
    let e = matrix_exp(&model.generator(), x, &MatrixExpOptions::default())?;
    Ok(e.tr_mul(model.alpha()))
}

fn conditional_phase(model: &TmapModel, x: f64) -> Result<DVector<f64>> {
    let a = unnormalized_phase(model, x)?;
    let s = a.sum();
    if !(s >= SURVIVAL_FLOOR) {
        return Err(Error::Underflow { age: x, survival: s });
    }
    Ok(a / s)
}

/// `S(x) = alpha e^{Dx} 1`.
pub fn survival(model: &TmapModel, x: f64) -> Result<f64> {
    Ok(unnormalized_phase(model, x)?.sum().clamp(0.0, 1.0))
}

/// Probability of dying within `(x, x + l]` given alive at `x`.
pub fn mortality_rate(model: &TmapModel, x: f64, l: f64) -> Result<f64> {
    let k = ClassKernel::new(model, l)?;
    Ok(k.rates(&conditional_phase(model, x)?).0)
}

/// Expected births in `[x, x + l)` given alive at `x`.
pub fn fertility_rate(model: &TmapModel, x: f64, l: f64) -> Result<f64> {
    let k = ClassKernel::new(model, l)?;
    Ok(k.rates(&conditional_phase(model, x)?).1)
}

/// Mortality, fertility and survival over a grid, propagating the
/// conditional phase distribution from age to age.
pub fn curves(model: &TmapModel, grid: &AgeGrid) -> Result<DemographicCurves> {
    let kernel = ClassKernel::new(model, grid.class_length())?;
    curves_with(model, &kernel, grid)
}

pub(crate) fn curves_with(
    model: &TmapModel,
    kernel: &ClassKernel,
    grid: &AgeGrid,
) -> Result<DemographicCurves> {
    let d = model.generator();
    let opts = MatrixExpOptions::default();
    let mut out = DemographicCurves {
        ages: grid.ages().to_vec(),
        class_length: grid.class_length(),
        mortality: Vec::with_capacity(grid.len()),
        fertility: Vec::with_capacity(grid.len()),
        survival: Vec::with_capacity(grid.len()),
    };
    let mut pi = model.alpha().clone();
    let mut surv = 1.0;
    let mut prev_age = 0.0;
    let mut cached: Option<(f64, DMatrix<f64>)> = None;
    for &x in grid.ages() {
        let dt = x - prev_age;
        if dt > 0.0 {
            let step = match &cached {
                Some((h, e)) if *h == dt => e,
                _ => {
                    let e = if dt == kernel.class_length() {
                        kernel.step.clone()
                    } else {
                        matrix_exp(&d, dt, &opts)?
                    };
                    cached = Some((dt, e));
                    &cached.as_ref().unwrap().1
                }
            };
            let next = step.tr_mul(&pi);
            let s = next.sum();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Underflow {
                    age: x,
                    survival: surv * s.max(0.0),
                });
            }
            surv *= s;
            pi = next / s;
        }
        prev_age = x;
        let (m, f) = kernel.rates(&pi);
        out.mortality.push(m);
        out.fertility.push(f);
        out.survival.push(surv.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Converts per-year rates of an `l`-year class (`beta_hat` births per year,
/// `mu_hat` yearly death probability) to the quantities comparable with
/// `dbar(x, l)` and `bbar(x, l)`.
pub fn rates_model_equivalents(beta_hat: f64, mu_hat: f64, l: f64) -> Result<(f64, f64)> {
    if !(l >= 1.0 && l.fract() == 0.0) {
        return Err(Error::structural(format!(
            "per-year rate conversion needs an integer class length >= 1, got {l}"
        )));
    }
    if !(0.0..=1.0).contains(&mu_hat) {
        return Err(Error::structural(format!("mu_hat must lie in [0, 1], got {mu_hat}")));
    }
    if !(beta_hat >= 0.0 && beta_hat.is_finite()) {
        return Err(Error::structural(format!("beta_hat must be >= 0, got {beta_hat}")));
    }
    if l == 1.0 {
        return Ok((mu_hat, beta_hat));
    }
    if mu_hat == 0.0 {
        return Ok((0.0, beta_hat * l));
    }
    let target_d = -(l * (-mu_hat).ln_1p()).exp_m1();
    Ok((target_d, beta_hat * target_d / mu_hat))
}

/// Minimal nonnegative solution of
/// `q = (-diag D0)^{-1} [d + offdiag(D0) q + (alpha q) D1 q]`
/// by Newton's iteration from zero, which increases monotonically to the
/// minimal solution (quadratically, or halving the error at criticality,
/// where plain functional iteration stalls). Children start in `alpha`, so
/// newborn family sizes form a single-type Galton–Watson process: when the
/// mean offspring is at most one, `q = 1` exactly and is returned directly
/// (at criticality the root is double and iteration only reaches ~1e-8).
pub fn extinction_vector(model: &TmapModel, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    model.ensure_valid()?;
    if !(tol > 0.0) {
        return Err(Error::structural("extinction tolerance must be positive"));
    }
    let n = model.n();
    if mean_offspring(model).is_ok_and(|m| m <= 1.0) {
        return Ok(DVector::from_element(n, 1.0));
    }
    let d0 = model.d0();
    let d1 = model.d1();
    let alpha = model.alpha();
    let mut q = DVector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let child = alpha.dot(&q);
        let d1q = d1 * &q;
        // G(q) = Phi(q) - q and the Jacobian of Phi
        let mut g = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let out = -d0[(i, i)];
            let mut acc = model.death()[i] + child * d1q[i];
            for j in 0..n {
                if j != i {
                    acc += d0[(i, j)] * q[j];
                    jac[(i, j)] += d0[(i, j)] / out;
                }
                jac[(i, j)] += (d1[(i, j)] * child + d1q[i] * alpha[j]) / out;
            }
            g[i] = acc / out - q[i];
        }
        // G is at rounding level: further steps are noise
        if g.amax() <= 4.0 * f64::EPSILON {
            return Ok(q);
        }
        let step = (DMatrix::identity(n, n) - jac)
            .lu()
            .solve(&g)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .unwrap_or(g);
        let next = (&q + step).map(|v| v.clamp(0.0, 1.0));
        residual = (&next - &q).amax();
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
    Err(Error::Iteration {
        iterations: max_iter,
        residual,
    })
}

/// Residual of the branching fixed point at `q`.
pub fn extinction_residual(model: &TmapModel, q: &DVector<f64>) -> f64 {
    let n = model.n();
    let child = model.alpha().dot(q);
    (0..n)
        .map(|i| {
            let mut acc = model.death()[i];
            for j in 0..n {
                if j != i {
                    acc += model.d0()[(i, j)] * q[j];
                }
                acc += model.d1()[(i, j)] * q[j] * child;
            }
            (acc / -model.d0()[(i, i)] - q[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Extinction probability of a family whose founder is alive at age `x`.
pub fn extinction_by_initial_age(model: &TmapModel, x: f64) -> Result<f64> {
    let q = extinction_vector(model, DEFAULT_EXTINCTION_TOL, DEFAULT_EXTINCTION_MAX_ITER)?;
    extinction_by_initial_age_with(model, &q, x)
}

pub fn extinction_by_initial_age_with(model: &TmapModel, q: &DVector<f64>, x: f64) -> Result<f64> {
    let pi = conditional_phase(model, x)?;
    Ok(pi.dot(q).clamp(0.0, 1.0))
}

/// Extinction probability against founder age over a grid of ages.
pub fn extinction_curve(model: &TmapModel, q: &DVector<f64>, ages: &[f64]) -> Result<Vec<f64>> {
    ages.iter()
        .map(|&x| extinction_by_initial_age_with(model, q, x))
        .collect()
}

/// Mean number of children of a newborn, `alpha (-D)^{-1} D1 1`; the tree is
/// subcritical when this is below one.
pub fn mean_offspring(model: &TmapModel) -> Result<f64> {
    let n = model.n();
    let neg_d = -model.generator();
    let rhs = model.d1() * DVector::from_element(n, 1.0);
    let x = neg_d
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numeric("singular generator: the lifetime is not a.s. finite"))?;
    Ok(model.alpha().dot(&x))
}
