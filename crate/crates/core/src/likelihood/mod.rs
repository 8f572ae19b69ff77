//! Individual life vectors and their likelihood under a TMAP.
//!
//! A life vector lists, class by class, the number of births of one
//! individual. `-2` marks a class entered alive with unknown births; a final
//! `-1` marks death during the preceding class. Probabilities are products of
//! the count kernels along the vector, conditioning on the phase at each
//! class boundary.

mod kernels;
pub mod msil;

pub use kernels::{count_kernels, count_kernels_capped, count_kernels_dense, CountKernels, DEFAULT_KERNEL_CAP};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TmapModel;

pub const DEATH: i32 = -1;
pub const CENSORED: i32 = -2;

/// Log-likelihood reported when some vector has probability zero.
pub const ZERO_LOG_LIKELIHOOD: f64 = f64::MIN;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LifeVector {
    entries: Vec<i32>,
}

impl LifeVector {
    pub fn new(entries: Vec<i32>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::structural("life vector must have at least one entry"));
        }
        if let Some(bad) = entries.iter().find(|e| **e < CENSORED) {
            return Err(Error::structural(format!("invalid life-vector entry {bad}")));
        }
        let deaths = entries.iter().filter(|e| **e == DEATH).count();
        if deaths > 1 || (deaths == 1 && *entries.last().unwrap() != DEATH) {
            return Err(Error::structural(format!(
                "-1 must appear at most once and only as the final entry: {entries:?}"
            )));
        }
        if entries.len() == 1 && entries[0] == DEATH {
            return Err(Error::structural("life vector [-1] has no class to die in"));
        }
        Ok(LifeVector { entries })
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn died(&self) -> bool {
        self.entries.last() == Some(&DEATH)
    }

    /// Largest birth count, or `None` when no class has a count.
    pub fn max_count(&self) -> Option<usize> {
        self.entries.iter().filter(|e| **e >= 0).map(|e| *e as usize).max()
    }

    fn steps(&self) -> Vec<Step> {
        let e = &self.entries;
        let last = e.len() - 1;
        let mut steps = Vec::with_capacity(e.len());
        for (i, &v) in e.iter().enumerate() {
            if v == DEATH {
                break;
            }
            let next_is_death = i < last && e[i + 1] == DEATH;
            let step = match (v, next_is_death, i == last) {
                (CENSORED, true, _) => Step::DeadAfterUnknown,
                (CENSORED, false, true) => Step::EndUnknown,
                (CENSORED, false, false) => Step::Survive,
                (k, true, _) => Step::DeadAfter(k as usize),
                (k, false, true) => Step::EndCount(k as usize),
                (k, false, false) => Step::Count(k as usize),
            };
            steps.push(step);
        }
        steps
    }
}

impl TryFrom<Vec<i32>> for LifeVector {
    type Error = Error;
    fn try_from(v: Vec<i32>) -> Result<Self> {
        LifeVector::new(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    /// `k` births, alive at the end: `P(k)`.
    Count(usize),
    /// Unknown births, alive at the end: `P`.
    Survive,
    /// `k` births then death in the class: `p(k)`.
    DeadAfter(usize),
    /// Unknown births then death: `p`.
    DeadAfterUnknown,
    /// Last class, `k` births, fate unknown: `P(k) 1 + p(k)`.
    EndCount(usize),
    /// Last class entered alive: `1`.
    EndUnknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeVectorSample {
    class_length: f64,
    vectors: Vec<LifeVector>,
}

impl LifeVectorSample {
    pub fn new(vectors: Vec<LifeVector>, class_length: f64) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::structural("life-vector sample is empty"));
        }
        if !(class_length > 0.0 && class_length.is_finite()) {
            return Err(Error::structural(format!(
                "class length must be positive, got {class_length}"
            )));
        }
        Ok(LifeVectorSample {
            class_length,
            vectors,
        })
    }

    pub fn from_entries(entries: Vec<Vec<i32>>, class_length: f64) -> Result<Self> {
        let vectors = entries
            .into_iter()
            .map(LifeVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors, class_length)
    }

    pub fn class_length(&self) -> f64 {
        self.class_length
    }

    pub fn vectors(&self) -> &[LifeVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `K`: the largest birth count in any class of any vector (0 if none).
    pub fn max_count(&self) -> usize {
        self.vectors.iter().filter_map(|v| v.max_count()).max().unwrap_or(0)
    }

    /// Subsample by index, keeping the class length.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.vectors[i].clone()).collect(), self.class_length)
    }
}

fn row_times(row: &[f64], mat: &[f64], out: &mut [f64], n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &r) in row.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let m = &mat[i * n..(i + 1) * n];
        for (o, &x) in out.iter_mut().zip(m) {
            *o += r * x;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-probability of a compiled vector, renormalizing the running row to
/// avoid underflow on long vectors.
fn log_prob_steps(alpha: &[f64], steps: &[Step], k: &CountKernels, work: &mut [Vec<f64>; 2]) -> f64 {
    let n = k.n();
    let [row, tmp] = work;
    row.copy_from_slice(alpha);
    let mut log_scale = 0.0;
    for step in steps {
        match *step {
            Step::Count(c) => row_times(row, k.alive_block(c), tmp, n),
            Step::Survive => row_times(row, k.alive_total_slice(), tmp, n),
            Step::DeadAfter(c) => return finish(dot(row, k.dead_block(c)), log_scale),
            Step::DeadAfterUnknown => return finish(dot(row, k.dead_total_slice()), log_scale),
            Step::EndCount(c) => {
                let blk = k.alive_block(c);
                let dead = k.dead_block(c);
                let v: f64 = (0..n)
                    .map(|i| row[i] * (blk[i * n..(i + 1) * n].iter().sum::<f64>() + dead[i]))
                    .sum();
                return finish(v, log_scale);
            }
            Step::EndUnknown => return finish(row.iter().sum(), log_scale),
        }
        std::mem::swap(row, tmp);
        let s: f64 = row.iter().sum();
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if s < 1e-100 {
            row.iter_mut().for_each(|v| *v /= s);
            log_scale += s.ln();
        }
    }
    // only reached for vectors ending in a non-terminal step, which cannot happen
    finish(row.iter().sum(), log_scale)
}

fn finish(v: f64, log_scale: f64) -> f64 {
    if v > 0.0 {
        v.ln() + log_scale
    } else {
        f64::NEG_INFINITY
    }
}

fn check_kernels(kernels: &CountKernels, model: &TmapModel, class_length: f64, max_count: usize) -> Result<()> {
    if kernels.n() != model.n() {
        return Err(Error::structural("kernels built for a different phase count"));
    }
    if (kernels.class_length() - class_length).abs() > 1e-12 * class_length.max(1.0) {
        return Err(Error::structural(format!(
            "kernels built for class length {} but data use {}",
            kernels.class_length(),
            class_length
        )));
    }
    if kernels.max_count() < max_count {
        return Err(Error::structural(format!(
            "kernels cover counts up to {} but the data need {}",
            kernels.max_count(),
            max_count
        )));
    }
    Ok(())
}

/// `p(v | theta)` with precomputed kernels (`K` at least the largest count in `v`).
pub fn life_vector_probability(model: &TmapModel, v: &LifeVector, kernels: &CountKernels) -> Result<f64> {
    check_kernels(kernels, model, kernels.class_length(), v.max_count().unwrap_or(0))?;
    Ok(log_life_vector_probability_unchecked(model, v, kernels).exp())
}

pub(crate) fn log_life_vector_probability_unchecked(model: &TmapModel, v: &LifeVector, kernels: &CountKernels) -> f64 {
    let n = model.n();
    let mut work = [vec![0.0; n], vec![0.0; n]];
    log_prob_steps(model.alpha().as_slice(), &v.steps(), kernels, &mut work)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLikelihood {
    /// Sum of per-vector log-probabilities, or [`ZERO_LOG_LIKELIHOOD`].
    pub total: f64,
    pub per_vector: Vec<f64>,
    /// Indices of vectors with probability zero under the model.
    pub zero_probability: Vec<usize>,
}

/// Sample log-likelihood with kernels built once at the sample's largest count.
pub fn log_likelihood(model: &TmapModel, sample: &LifeVectorSample) -> Result<LogLikelihood> {
    let kernels = count_kernels(model, sample.class_length(), sample.max_count())?;
    let mut per_vector = Vec::with_capacity(sample.len());
    let mut zero_probability = Vec::new();
    let n = model.n();
    let mut work = [vec![0.0; n], vec![0.0; n]];
    for (i, v) in sample.vectors().iter().enumerate() {
        let lp = log_prob_steps(model.alpha().as_slice(), &v.steps(), &kernels, &mut work);
        if lp == f64::NEG_INFINITY {
            zero_probability.push(i);
        }
        per_vector.push(lp);
    }
    let total = if zero_probability.is_empty() {
        per_vector.iter().sum()
    } else {
        ZERO_LOG_LIKELIHOOD
    };
    Ok(LogLikelihood {
        total,
        per_vector,
        zero_probability,
    })
}

/// A sample reduced to distinct vectors with multiplicities, in a fixed
/// order, for repeated evaluation during optimization.
#[derive(Debug, Clone)]
pub struct CompiledSample {
    class_length: f64,
    max_count: usize,
    len: usize,
    groups: Vec<(Vec<Step>, f64)>,
}

impl CompiledSample {
    pub fn new(sample: &LifeVectorSample) -> Self {
        let mut counts: BTreeMap<&LifeVector, usize> = BTreeMap::new();
        for v in sample.vectors() {
            *counts.entry(v).or_default() += 1;
        }
        CompiledSample {
            class_length: sample.class_length(),
            max_count: sample.max_count(),
            len: sample.len(),
            groups: counts.into_iter().map(|(v, c)| (v.steps(), c as f64)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn class_length(&self) -> f64 {
        self.class_length
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    /// Total log-likelihood, [`ZERO_LOG_LIKELIHOOD`] if any vector is impossible.
    pub fn log_likelihood(&self, model: &TmapModel) -> Result<f64> {
        let kernels = count_kernels(model, self.class_length, self.max_count)?;
        Ok(self.log_likelihood_with(model, &kernels))
    }

    pub fn log_likelihood_with(&self, model: &TmapModel, kernels: &CountKernels) -> f64 {
        let n = model.n();
        let mut work = [vec![0.0; n], vec![0.0; n]];
        let mut total = 0.0;
        for (steps, count) in &self.groups {
            let lp = log_prob_steps(model.alpha().as_slice(), steps, kernels, &mut work);
            if lp == f64::NEG_INFINITY {
                return ZERO_LOG_LIKELIHOOD;
            }
            total += count * lp;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_atmmpp, preset, AtmmppParams};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn example1() -> TmapModel {
        build_atmmpp(&preset("example1").unwrap().params).unwrap()
    }

    fn single(lambda: f64, mu: f64) -> TmapModel {
        build_atmmpp(&AtmmppParams::new(vec![], vec![mu], vec![lambda]).unwrap()).unwrap()
    }

    fn lv(e: &[i32]) -> LifeVector {
        LifeVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn invariants() {
        assert!(LifeVector::new(vec![]).is_err());
        assert!(LifeVector::new(vec![-1]).is_err());
        assert!(LifeVector::new(vec![1, -1, 2]).is_err());
        assert!(LifeVector::new(vec![1, -1, -1]).is_err());
        assert!(LifeVector::new(vec![-3]).is_err());
        assert!(LifeVector::new(vec![-2, -1]).is_ok());
        assert!(LifeVectorSample::from_entries(vec![], 1.0).is_err());
    }

    #[test]
    fn worked_products() {
        let m = example1();
        let k = count_kernels(&m, 1.0, 3).unwrap();
        let a = m.alpha().transpose();
        let one = DVector::from_element(3, 1.0);

        let p1 = life_vector_probability(&m, &lv(&[2, 3, 1, -1]), &k).unwrap();
        let e1 = (&a * k.alive_with(2) * k.alive_with(3) * k.dead_with(1))[0];
        assert_relative_eq!(p1, e1, max_relative = 1e-12);

        let p2 = life_vector_probability(&m, &lv(&[2, -2, 1, -1]), &k).unwrap();
        let e2 = (&a * k.alive_with(2) * k.alive_total() * k.dead_with(1))[0];
        assert_relative_eq!(p2, e2, max_relative = 1e-12);

        let p3 = life_vector_probability(&m, &lv(&[2, 3]), &k).unwrap();
        let e3 = (&a * k.alive_with(2) * (k.alive_with(3) * &one + k.dead_with(3)))[0];
        assert_relative_eq!(p3, e3, max_relative = 1e-12);

        let p4 = life_vector_probability(&m, &lv(&[2, -2]), &k).unwrap();
        let e4 = (&a * k.alive_with(2) * &one)[0];
        assert_relative_eq!(p4, e4, max_relative = 1e-12);

        let p5 = life_vector_probability(&m, &lv(&[-2, -2, -2]), &k).unwrap();
        let pm = k.alive_total();
        let e5 = (&a * &pm * &pm * &one)[0];
        assert_relative_eq!(p5, e5, max_relative = 1e-12);

        let p6 = life_vector_probability(&m, &lv(&[-2, -1]), &k).unwrap();
        assert_relative_eq!(p6, (&a * k.dead_total())[0], max_relative = 1e-12);
    }

    #[test]
    fn kernels_must_cover_counts() {
        let m = example1();
        let k = count_kernels(&m, 1.0, 2).unwrap();
        assert!(life_vector_probability(&m, &lv(&[3, -1]), &k).is_err());
    }

    #[test]
    fn censored_only_sample() {
        let m = example1();
        let s = LifeVectorSample::from_entries(vec![vec![-2]], 1.0).unwrap();
        assert_eq!(log_likelihood(&m, &s).unwrap().total, 0.0);
    }

    #[test]
    fn scalar_death_in_first_class() {
        let m = single(2.0, 0.5);
        let s = LifeVectorSample::from_entries(vec![vec![0, -1]], 1.0).unwrap();
        let ll = log_likelihood(&m, &s).unwrap();
        assert_relative_eq!(ll.total, (0.2 * (1.0 - (-2.5f64).exp())).ln(), max_relative = 1e-12);
        assert_relative_eq!(ll.total, 0.1835830002752202f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn zero_probability_flagged() {
        // no births possible
        let m = single(0.0, 0.5);
        let s = LifeVectorSample::from_entries(vec![vec![0, -1], vec![1, -1]], 1.0).unwrap();
        let ll = log_likelihood(&m, &s).unwrap();
        assert_eq!(ll.total, ZERO_LOG_LIKELIHOOD);
        assert_eq!(ll.zero_probability, vec![1]);
        let c = CompiledSample::new(&s);
        assert_eq!(c.log_likelihood(&m).unwrap(), ZERO_LOG_LIKELIHOOD);
    }

    #[test]
    fn compiled_matches_direct() {
        let m = example1();
        let s = LifeVectorSample::from_entries(
            vec![vec![2, 3, 1, -1], vec![0, -1], vec![0, -1], vec![5, 4, -2, 1], vec![-2, -2]],
            1.0,
        )
        .unwrap();
        let direct = log_likelihood(&m, &s).unwrap().total;
        let compiled = CompiledSample::new(&s).log_likelihood(&m).unwrap();
        assert_relative_eq!(direct, compiled, max_relative = 1e-13);
    }

    #[test]
    fn long_vectors_do_not_underflow() {
        let m = example1();
        let entries: Vec<i32> = std::iter::repeat(1).take(2000).collect();
        let s = LifeVectorSample::from_entries(vec![entries], 0.25).unwrap();
        let ll = log_likelihood(&m, &s).unwrap();
        assert!(ll.total.is_finite() && ll.total < -300.0 * std::f64::consts::LN_10);
    }

    #[test]
    fn censored_suffix_monotone() {
        let m = example1();
        let k = count_kernels(&m, 1.0, 5).unwrap();
        for prefix in [vec![2, 3], vec![5], vec![-2, 1, 0]] {
            let mut a = prefix.clone();
            a.push(-2);
            let mut b = a.clone();
            b.push(-2);
            let pa = life_vector_probability(&m, &lv(&a), &k).unwrap();
            let pb = life_vector_probability(&m, &lv(&b), &k).unwrap();
            assert!(pb <= pa);
            let one = DVector::from_element(3, 1.0);
            let mut row = m.alpha().transpose();
            for &e in &prefix {
                row = if e >= 0 { row * k.alive_with(e as usize) } else { row * k.alive_total() };
            }
            assert_relative_eq!(pa, (&row * &one)[0], max_relative = 1e-12);
            assert_relative_eq!(pb, (&row * k.alive_total() * &one)[0], max_relative = 1e-12);
            let _ = DMatrix::<f64>::zeros(1, 1);
        }
    }
}
