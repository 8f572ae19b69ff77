use serde::{Deserialize, Serialize};

use crate::demography::rates_model_equivalents;
use crate::error::{Error, Result};

/// How the rows of a [`GlobalRates`] table are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateBasis {
    /// Death probability and expected births over a whole class; directly
    /// comparable with the model curves at the same class length.
    #[default]
    PerClass,
    /// Yearly death probability and births per year (life-table style);
    /// converted to class equivalents before fitting.
    PerYear,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub fertility: Option<f64>,
    pub mortality: Option<f64>,
    /// Number of individuals behind the row, when known.
    pub count: Option<f64>,
    /// Standard error of `fertility`, when known.
    pub fertility_se: Option<f64>,
}

/// Age-specific fertility and mortality for classes starting at `x l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRates {
    pub class_length: f64,
    pub basis: RateBasis,
    pub rows: Vec<RateRow>,
}

impl GlobalRates {
    pub fn new(class_length: f64, basis: RateBasis, rows: Vec<RateRow>) -> Result<Self> {
        let r = GlobalRates {
            class_length,
            basis,
            rows,
        };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.class_length > 0.0 && self.class_length.is_finite()) {
            return Err(Error::structural(format!(
                "class length must be positive, got {}",
                self.class_length
            )));
        }
        for (x, row) in self.rows.iter().enumerate() {
            if let Some(d) = row.mortality {
                if !(0.0..=1.0).contains(&d) {
                    return Err(Error::structural(format!("mortality {d} at row {x} outside [0, 1]")));
                }
            }
            if let Some(b) = row.fertility {
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(Error::structural(format!("fertility {b} at row {x} must be >= 0")));
                }
            }
        }
        if !self
            .rows
            .iter()
            .any(|r| r.fertility.is_some() || r.mortality.is_some())
        {
            return Err(Error::structural("global rates contain no values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|x| x as f64 * self.class_length).collect()
    }

    /// Per-class `(mortality, fertility)` targets comparable with
    /// `dbar(x, l)` and `bbar(x, l)`. Per-year rows go through the
    /// class-length conversion; a missing partner value is treated as zero
    /// for the conversion only.
    pub fn targets(&self) -> Result<Vec<(Option<f64>, Option<f64>)>> {
        self.check()?;
        let l = self.class_length;
        self.rows
            .iter()
            .map(|row| match self.basis {
                RateBasis::PerClass => Ok((row.mortality, row.fertility)),
                RateBasis::PerYear => {
                    let (d, b) = rates_model_equivalents(
                        row.fertility.unwrap_or(0.0),
                        row.mortality.unwrap_or(0.0),
                        l,
                    )?;
                    Ok((row.mortality.map(|_| d), row.fertility.map(|_| b)))
                }
            })
            .collect()
    }
}

/// Observed survival to each class start, `S_0 = 1`,
/// `S_x = prod_{y<x} (1 - d_y)` over per-class death probabilities; missing
/// mortality counts as zero.
pub fn survival_weights(rates: &GlobalRates) -> Result<Vec<f64>> {
    let targets = rates.targets()?;
    let mut s = 1.0;
    Ok(targets
        .iter()
        .map(|(d, _)| {
            let w = s;
            s *= 1.0 - d.unwrap_or(0.0);
            w
        })
        .collect())
}
