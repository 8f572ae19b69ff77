//! Finite partition of life-vector space used by the MSIL criterion.
//!
//! A class is a sequence over `{0, .., K, K+1}` (`K+1` meaning "more than
//! `K`") that either ends with `-1` after `m < M` classes (death during class
//! `m`) or has full length `M` (alive entering class `M`, any continuation).
//! Classes are enumerated by length, then lexicographically, so every class has
//! a fixed index.

use serde::Serialize;

use super::{count_kernels, log_life_vector_probability_unchecked, CountKernels, LifeVector, CENSORED, DEATH};
use crate::error::{Error, Result};
use crate::model::TmapModel;

/// Largest class set that will be enumerated.
pub const CLASS_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct MsilClassVector {
    entries: Vec<i32>,
    max_count: usize,
    horizon: usize,
}

impl MsilClassVector {
    pub fn new(entries: Vec<i32>, max_count: usize, horizon: usize) -> Result<Self> {
        let tail = max_count as i32 + 1;
        let bad = || Error::structural(format!("malformed class vector {entries:?} for K={max_count}, M={horizon}"));
        if horizon == 0 || entries.is_empty() {
            return Err(bad());
        }
        let (body, died) = match entries.split_last() {
            Some((&DEATH, body)) => (body, true),
            _ => (&entries[..], false),
        };
        let len_ok = if died {
            !body.is_empty() && body.len() < horizon
        } else {
            body.len() == horizon
        };
        if !len_ok || body.iter().any(|&e| !(0..=tail).contains(&e)) {
            return Err(bad());
        }
        Ok(MsilClassVector {
            entries,
            max_count,
            horizon,
        })
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn died(&self) -> bool {
        self.entries.last() == Some(&DEATH)
    }

    /// Positions holding the tail symbol `K+1`.
    pub fn tail_positions(&self) -> Vec<usize> {
        let tail = self.max_count as i32 + 1;
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == tail)
            .map(|(i, _)| i)
            .collect()
    }

    /// Position in the canonical enumeration.
    pub fn index(&self) -> usize {
        let base = self.max_count + 2;
        let body = if self.died() {
            &self.entries[..self.entries.len() - 1]
        } else {
            &self.entries[..]
        };
        let offset: usize = (1..body.len()).map(|j| base.pow(j as u32)).sum();
        offset + body.iter().fold(0usize, |acc, &d| acc * base + d as usize)
    }
}

/// `|class set|` for the canonical partition, `None` on overflow.
pub fn canonical_class_count(max_count: usize, horizon: usize) -> Option<usize> {
    let base = max_count.checked_add(2)?;
    let mut total = 0usize;
    let mut pow = 1usize;
    for _ in 1..=horizon {
        pow = pow.checked_mul(base)?;
        total = total.checked_add(pow)?;
    }
    Some(total)
}

/// The closed-form cardinality `(K+2)((K+2)^{M+1} - 1)/(K+1)` quoted for the
/// class set; reported only, it does not match the enumerated partition.
pub fn closed_form_class_count(max_count: usize, horizon: usize) -> f64 {
    let b = max_count as f64 + 2.0;
    b * (b.powi(horizon as i32 + 1) - 1.0) / (max_count as f64 + 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSet {
    pub max_count: usize,
    pub horizon: usize,
    pub classes: Vec<MsilClassVector>,
    pub closed_form_cardinality: f64,
}

fn check_size(max_count: usize, horizon: usize) -> Result<usize> {
    if horizon == 0 {
        return Err(Error::structural("MSIL horizon M must be at least 1"));
    }
    match canonical_class_count(max_count, horizon) {
        Some(c) if c <= CLASS_CAP => Ok(c),
        other => Err(Error::Capacity {
            what: "MSIL classes",
            requested: other.unwrap_or(usize::MAX),
            cap: CLASS_CAP,
        }),
    }
}

pub fn enumerate_classes(max_count: usize, horizon: usize) -> Result<ClassSet> {
    let size = check_size(max_count, horizon)?;
    let base = max_count + 2;
    let mut classes = Vec::with_capacity(size);
    let mut push_all = |len: usize, died: bool| {
        let count = base.pow(len as u32);
        for code in 0..count {
            let mut digits = vec![0i32; len];
            let mut c = code;
            for d in digits.iter_mut().rev() {
                *d = (c % base) as i32;
                c /= base;
            }
            if died {
                digits.push(DEATH);
            }
            classes.push(MsilClassVector {
                entries: digits,
                max_count,
                horizon,
            });
        }
    };
    for m in 1..horizon {
        push_all(m, true);
    }
    push_all(horizon, false);
    Ok(ClassSet {
        max_count,
        horizon,
        classes,
        closed_form_cardinality: closed_form_class_count(max_count, horizon),
    })
}

/// Class mass by literal inclusion–exclusion: each tail symbol is replaced by
/// `-2` or by each of `0..=K`, with sign `(-1)^{l + #(-2)}`.
pub fn msil_class_mass(model: &TmapModel, class: &MsilClassVector, kernels: &CountKernels) -> Result<f64> {
    if kernels.max_count() < class.max_count() || kernels.n() != model.n() {
        return Err(Error::structural("kernels do not cover the class vector"));
    }
    let tails = class.tail_positions();
    let choices: Vec<i32> = std::iter::once(CENSORED)
        .chain(0..=class.max_count() as i32)
        .collect();
    let total_terms = choices.len().pow(tails.len() as u32);
    let mut entries = class.entries().to_vec();
    let mut sum = 0.0;
    for code in 0..total_terms {
        let mut c = code;
        let mut censored = 0;
        for &pos in &tails {
            let pick = choices[c % choices.len()];
            c /= choices.len();
            if pick == CENSORED {
                censored += 1;
            }
            entries[pos] = pick;
        }
        let v = LifeVector::new(entries.clone())?;
        let p = log_life_vector_probability_unchecked(model, &v, kernels).exp();
        let sign = if (tails.len() + censored) % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * p;
    }
    Ok(sum)
}

/// Masses of every class in canonical order, computed by propagating prefix
/// rows with tail factors `P - sum_k P(k)` etc. (algebraically the same as the
/// inclusion–exclusion sum).
pub fn class_masses(model: &TmapModel, class_length: f64, max_count: usize, horizon: usize) -> Result<Vec<f64>> {
    let size = check_size(max_count, horizon)?;
    let kernels = count_kernels(model, class_length, max_count)?;
    class_masses_with(model, &kernels, max_count, horizon, size)
}

fn class_masses_with(
    model: &TmapModel,
    k: &CountKernels,
    max_count: usize,
    horizon: usize,
    size: usize,
) -> Result<Vec<f64>> {
    let n = model.n();
    let syms = max_count + 2;
    // per-symbol alive matrices, dead vectors, terminal vectors
    let mut alive = vec![vec![0.0; n * n]; syms];
    let mut dead = vec![vec![0.0; n]; syms];
    alive[max_count + 1].copy_from_slice(k.alive_total_slice());
    dead[max_count + 1].copy_from_slice(k.dead_total_slice());
    for c in 0..=max_count {
        alive[c].copy_from_slice(k.alive_block(c));
        dead[c].copy_from_slice(k.dead_block(c));
        for (t, v) in alive[max_count + 1].iter_mut().zip(k.alive_block(c)) {
            *t -= v;
        }
        for (t, v) in dead[max_count + 1].iter_mut().zip(k.dead_block(c)) {
            *t -= v;
        }
    }
    let terminal: Vec<Vec<f64>> = (0..syms)
        .map(|s| {
            (0..n)
                .map(|i| alive[s][i * n..(i + 1) * n].iter().sum::<f64>() + dead[s][i])
                .collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut out = Vec::with_capacity(size);
    let mut rows: Vec<f64> = model.alpha().as_slice().to_vec();
    for m in 1..=horizon {
        let prefixes = rows.len() / n;
        if m == horizon {
            for p in 0..prefixes {
                let r = &rows[p * n..(p + 1) * n];
                out.extend(terminal.iter().map(|t| dot(r, t)));
            }
            break;
        }
        for p in 0..prefixes {
            let r = &rows[p * n..(p + 1) * n];
            out.extend(dead.iter().map(|d| dot(r, d)));
        }
        let mut next = vec![0.0; prefixes * syms * n];
        for p in 0..prefixes {
            let r = &rows[p * n..(p + 1) * n];
            for (s, a) in alive.iter().enumerate() {
                let o = &mut next[(p * syms + s) * n..(p * syms + s + 1) * n];
                for (i, &ri) in r.iter().enumerate() {
                    for (oj, &aij) in o.iter_mut().zip(&a[i * n..(i + 1) * n]) {
                        *oj += ri * aij;
                    }
                }
            }
        }
        rows = next;
    }
    Ok(out)
}

/// Where a life vector falls in the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassMapping {
    Class(usize),
    /// The vector is a union of classes (censored before class `M` ends).
    Excluded,
}

/// Maps an observed vector to its class: counts above `K` collapse to the
/// tail symbol and everything after class `M` is pooled. Vectors with `-2` in
/// the first `M` classes, or that end alive before class `M`, are excluded.
pub fn class_of(v: &LifeVector, max_count: usize, horizon: usize) -> ClassMapping {
    let tail = max_count as i32 + 1;
    let mut body = Vec::with_capacity(horizon);
    for &e in v.entries().iter().take(horizon) {
        match e {
            DEATH => {
                return ClassMapping::Class(
                    MsilClassVector {
                        entries: {
                            body.push(DEATH);
                            body
                        },
                        max_count,
                        horizon,
                    }
                    .index(),
                )
            }
            CENSORED => return ClassMapping::Excluded,
            k => body.push(k.min(tail)),
        }
    }
    if body.len() < horizon {
        return ClassMapping::Excluded;
    }
    ClassMapping::Class(
        MsilClassVector {
            entries: body,
            max_count,
            horizon,
        }
        .index(),
    )
}
