//! Transient Markovian arrival processes (TMAPs) and their acyclic
//! Markov-modulated Poisson subclass (ATMMPP).
//!
//! A TMAP is `(alpha, D0, D1, d)`: `D0` holds hidden phase changes, `D1`
//! births, `d` deaths, and every row of `D0 1 + D1 1 + d` is zero. The ATMMPP
//! starts in phase 1, ages forward through phases at rates `gamma`, and in
//! phase `i` gives birth at rate `lambda[i]` and dies at rate `mu[i]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROBABILITY_SUM_TOL: f64 = 1e-12;
pub const CONSERVATION_TOL: f64 = 1e-10;

/// Rates of the acyclic subclass. Flattened order is
/// `(gamma_1..gamma_{n-1}, mu_1..mu_n, lambda_1..lambda_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmmppParams {
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl AtmmppParams {
    pub fn new(gamma: Vec<f64>, mu: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let p = AtmmppParams { gamma, mu, lambda };
        p.check()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Number of free parameters, `3n - 1`.
    pub fn len(&self) -> usize {
        self.gamma.len() + self.mu.len() + self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameter_count(n: usize) -> usize {
        3 * n - 1
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.len());
        t.extend_from_slice(&self.gamma);
        t.extend_from_slice(&self.mu);
        t.extend_from_slice(&self.lambda);
        t
    }

    pub fn from_theta(n: usize, theta: &[f64]) -> Result<Self> {
        if n == 0 || theta.len() != Self::parameter_count(n) {
            return Err(Error::structural(format!(
                "theta of length {} does not match n = {n} (expected {})",
                theta.len(),
                if n == 0 { 0 } else { Self::parameter_count(n) }
            )));
        }
        let (gamma, rest) = theta.split_at(n - 1);
        let (mu, lambda) = rest.split_at(n);
        Self::new(gamma.to_vec(), mu.to_vec(), lambda.to_vec())
    }

    fn check(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 {
            return Err(Error::structural("ATMMPP needs at least one phase"));
        }
        if self.lambda.len() != n || self.gamma.len() + 1 != n {
            return Err(Error::structural(format!(
                "dimension mismatch: gamma {}, mu {}, lambda {} (need n-1, n, n)",
                self.gamma.len(),
                n,
                self.lambda.len()
            )));
        }
        for (name, vals) in [("mu", &self.mu), ("lambda", &self.lambda)] {
            if let Some(v) = vals.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::structural(format!("{name} entries must be finite and >= 0, got {v}")));
            }
        }
        if let Some(v) = self.gamma.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::structural(format!("gamma entries must be finite and > 0, got {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmapModel {
    alpha: DVector<f64>,
    d0: DMatrix<f64>,
    d1: DMatrix<f64>,
    d: DVector<f64>,
    atmmpp: Option<AtmmppParams>,
}

/// One failed invariant, with the offending value or residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonFinite { what: &'static str },
    AlphaNegative { index: usize, value: f64 },
    AlphaSum { residual: f64 },
    BirthNegative { row: usize, col: usize, value: f64 },
    DeathNegative { index: usize, value: f64 },
    HiddenOffDiagonalNegative { row: usize, col: usize, value: f64 },
    HiddenDiagonalNonNegative { index: usize, value: f64 },
    RowConservation { row: usize, residual: f64 },
}

impl TmapModel {
    /// Assembles a model, checking shapes only. Use [`TmapModel::validate`]
    /// for the rate invariants.
    pub fn from_parts(
        alpha: DVector<f64>,
        d0: DMatrix<f64>,
        d1: DMatrix<f64>,
        d: DVector<f64>,
    ) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::structural("model needs at least one phase"));
        }
        if d0.shape() != (n, n) || d1.shape() != (n, n) || d.len() != n {
            return Err(Error::structural(format!(
                "inconsistent shapes: alpha {n}, D0 {:?}, D1 {:?}, d {}",
                d0.shape(),
                d1.shape(),
                d.len()
            )));
        }
        Ok(TmapModel {
            alpha,
            d0,
            d1,
            d,
            atmmpp: None,
        })
    }

    /// Like [`TmapModel::from_parts`] but rejects models with violations.
    pub fn new(
        alpha: DVector<f64>,
        d0: DMatrix<f64>,
        d1: DMatrix<f64>,
        d: DVector<f64>,
    ) -> Result<Self> {
        let m = Self::from_parts(alpha, d0, d1, d)?;
        m.ensure_valid()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn d0(&self) -> &DMatrix<f64> {
        &self.d0
    }

    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d1
    }

    pub fn death(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn atmmpp(&self) -> Option<&AtmmppParams> {
        self.atmmpp.as_ref()
    }

    /// Phase generator of the lifetime, `D = D0 + D1`.
    pub fn generator(&self) -> DMatrix<f64> {
        &self.d0 + &self.d1
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::structural(format!("invalid model: {v:?}")))
        }
    }
}

/// Acyclic model: start in phase 1, `D1 = diag(lambda)`, `(D0)_{i,i+1} = gamma_i`,
/// `d = mu`, and the diagonal of `D0` closes each row to zero.
pub fn build_atmmpp(params: &AtmmppParams) -> Result<TmapModel> {
    params.check()?;
    let n = params.n();
    let mut alpha = DVector::zeros(n);
    alpha[0] = 1.0;
    let d1 = DMatrix::from_diagonal(&DVector::from_column_slice(&params.lambda));
    let mut d0 = DMatrix::zeros(n, n);
    for i in 0..n {
        let up = if i + 1 < n { params.gamma[i] } else { 0.0 };
        if i + 1 < n {
            d0[(i, i + 1)] = up;
        }
        d0[(i, i)] = -params.lambda[i] - params.mu[i] - up;
    }
    let d = DVector::from_column_slice(&params.mu);
    let mut model = TmapModel::from_parts(alpha, d0, d1, d)?;
    model.atmmpp = Some(params.clone());
    Ok(model)
}

/// Lists every violated invariant. Empty iff the model is a valid TMAP.
pub fn validate(model: &TmapModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.n();
    let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
    for (what, vals) in [
        ("alpha", model.alpha.as_slice()),
        ("D0", model.d0.as_slice()),
        ("D1", model.d1.as_slice()),
        ("d", model.d.as_slice()),
    ] {
        if !finite(vals) {
            out.push(Violation::NonFinite { what });
        }
    }
    if !out.is_empty() {
        return out;
    }
    for (i, &a) in model.alpha.iter().enumerate() {
        if a < 0.0 {
            out.push(Violation::AlphaNegative { index: i, value: a });
        }
    }
    let asum = model.alpha.sum();
    if (asum - 1.0).abs() > PROBABILITY_SUM_TOL {
        out.push(Violation::AlphaSum { residual: asum - 1.0 });
    }
    for i in 0..n {
        for j in 0..n {
            let b = model.d1[(i, j)];
            if b < 0.0 {
                out.push(Violation::BirthNegative { row: i, col: j, value: b });
            }
            let h = model.d0[(i, j)];
            if i != j && h < 0.0 {
                out.push(Violation::HiddenOffDiagonalNegative { row: i, col: j, value: h });
            }
        }
        if model.d0[(i, i)] >= 0.0 {
            out.push(Violation::HiddenDiagonalNonNegative {
                index: i,
                value: model.d0[(i, i)],
            });
        }
        if model.d[i] < 0.0 {
            out.push(Violation::DeathNegative { index: i, value: model.d[i] });
        }
        let residual = model.d0.row(i).sum() + model.d1.row(i).sum() + model.d[i];
        if residual.abs() > CONSERVATION_TOL {
            out.push(Violation::RowConservation { row: i, residual });
        }
    }
    out
}

/// Artificial-example presets: ATMMPP rates plus sample size and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub params: AtmmppParams,
    pub sample_size: usize,
    pub horizon: f64,
}

pub fn preset(name: &str) -> Result<Preset> {
    let (gamma, mu, lambda, sample_size, horizon): (&[f64], &[f64], &[f64], usize, f64) =
        match name {
            "example1" => (&[0.25, 0.25], &[0.2, 0.4, 0.9], &[6.0, 3.0, 2.0], 500, 15.0),
            "example2" => (
                &[0.5, 0.1, 0.1],
                &[0.3, 0.1, 0.2, 0.7],
                &[0.5, 2.0, 0.5, 0.01],
                400,
                25.0,
            ),
            "example3" => (
                &[0.3, 0.3, 0.3],
                &[0.6, 0.1, 0.2, 0.5],
                &[0.2, 3.0, 2.0, 0.1],
                500,
                15.0,
            ),
            other => {
                return Err(Error::structural(format!(
                    "unknown preset '{other}' (expected example1, example2 or example3)"
                )))
            }
        };
    let name = match name {
        "example1" => "example1",
        "example2" => "example2",
        _ => "example3",
    };
    Ok(Preset {
        name,
        params: AtmmppParams::new(gamma.to_vec(), mu.to_vec(), lambda.to_vec())?,
        sample_size,
        horizon,
    })
}

pub const PRESET_NAMES: [&str; 3] = ["example1", "example2", "example3"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ModelJson {
    n: usize,
    alpha: Vec<f64>,
    D0: Vec<Vec<f64>>,
    D1: Vec<Vec<f64>>,
    d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atmmpp: Option<AtmmppParams>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, n: usize, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::structural(format!("{name} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl TmapModel {
    pub fn to_json(&self) -> Result<String> {
        let j = ModelJson {
            n: self.n(),
            alpha: self.alpha.iter().copied().collect(),
            D0: rows(&self.d0),
            D1: rows(&self.d1),
            d: self.d.iter().copied().collect(),
            atmmpp: self.atmmpp.clone(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    /// Parses the model JSON. When an `atmmpp` block is present the matrices
    /// are rebuilt from it and must agree with the stored ones.
    pub fn from_json(text: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(text)?;
        if j.alpha.len() != j.n || j.d.len() != j.n {
            return Err(Error::structural(format!(
                "model JSON: alpha/d lengths do not match n = {}",
                j.n
            )));
        }
        let model = TmapModel::from_parts(
            DVector::from_vec(j.alpha),
            from_rows("D0", j.n, &j.D0)?,
            from_rows("D1", j.n, &j.D1)?,
            DVector::from_vec(j.d),
        )?;
        match j.atmmpp {
            Some(p) => {
                let rebuilt = build_atmmpp(&p)?;
                let gap = (&rebuilt.d0 - &model.d0).amax()
                    + (&rebuilt.d1 - &model.d1).amax()
                    + (&rebuilt.d - &model.d).amax()
                    + (&rebuilt.alpha - &model.alpha).amax();
                if gap > CONSERVATION_TOL {
                    return Err(Error::structural(
                        "model JSON: matrices disagree with the atmmpp block",
                    ));
                }
                Ok(rebuilt)
            }
            None => Ok(model),
        }
    }
}
