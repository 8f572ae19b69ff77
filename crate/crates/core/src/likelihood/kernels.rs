//! Per-interval birth-count kernels of a TMAP over one class of length `l`:
//!
//! * `P(k)[i][j]`: exactly `k` births and alive in phase `j` at the end, from phase `i`;
//! * `p(k)[i]`: exactly `k` births and dead by the end;
//! * `P = e^{Dl}` and `p = 1 - P 1`, the same summed over `k`.

use nalgebra::{DMatrix, DVector};

use crate::demography::exp_with_integrals;
use crate::error::{Error, Result};
use crate::linalg::{matrix_exp, MatrixExpOptions, SeriesMatrix};
use crate::model::TmapModel;

/// Largest block-generator dimension `n (K + 1)` accepted.
pub const DEFAULT_KERNEL_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct CountKernels {
    n: usize,
    max_count: usize,
    class_length: f64,
    // (K+1) row-major n x n blocks
    alive: Vec<f64>,
    // (K+1) blocks of n
    dead: Vec<f64>,
    alive_total: Vec<f64>,
    dead_total: Vec<f64>,
}

fn check_request(model: &TmapModel, l: f64, max_count: usize, cap: usize) -> Result<()> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::structural(format!("class length must be positive, got {l}")));
    }
    let dim = model.n().saturating_mul(max_count.saturating_add(1));
    if dim > cap {
        return Err(Error::Capacity {
            what: "n(K+1)",
            requested: dim,
            cap,
        });
    }
    model.ensure_valid()
}

/// Kernels up to `max_count` births per class.
///
/// The count generating function `sum_k P(k, t) z^k = exp((D0 + z D1) t)` is
/// evaluated as a matrix power series truncated at `z^K`; death is tracked by
/// an absorbing extra phase so `p(k)` comes from the same exponential.
pub fn count_kernels(model: &TmapModel, l: f64, max_count: usize) -> Result<CountKernels> {
    count_kernels_capped(model, l, max_count, DEFAULT_KERNEL_CAP)
}

pub fn count_kernels_capped(
    model: &TmapModel,
    l: f64,
    max_count: usize,
    cap: usize,
) -> Result<CountKernels> {
    check_request(model, l, max_count, cap)?;
    let n = model.n();
    let m = n + 1;
    let mut g = SeriesMatrix::zeros(m, max_count);
    for i in 0..n {
        for j in 0..n {
            g.set(0, i, j, model.d0()[(i, j)]);
        }
        g.set(0, i, n, model.death()[i]);
    }
    if max_count >= 1 {
        for i in 0..n {
            for j in 0..n {
                g.set(1, i, j, model.d1()[(i, j)]);
            }
        }
    }
    let e = g.exp(l, &MatrixExpOptions::default())?;
    let mut alive = Vec::with_capacity((max_count + 1) * n * n);
    let mut dead = Vec::with_capacity((max_count + 1) * n);
    for k in 0..=max_count {
        for i in 0..n {
            for j in 0..n {
                alive.push(e.get(k, i, j).max(0.0));
            }
        }
        for i in 0..n {
            dead.push(e.get(k, i, n).max(0.0));
        }
    }
    let (total, ints) = exp_with_integrals(&model.generator(), &[model.death().clone()], l)?;
    Ok(CountKernels {
        n,
        max_count,
        class_length: l,
        alive,
        dead,
        alive_total: total.transpose().iter().map(|v| v.max(0.0)).collect(),
        dead_total: ints[0].iter().map(|v| v.max(0.0)).collect(),
    })
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Literal block construction: the `n(K+1)` lower block-bidiagonal generator
/// with `D0` on the diagonal and `k D1` below it, one dense exponential,
/// `(-M)^{-1}` applied by a linear solve, and the `1/k!` rescaling.
pub fn count_kernels_dense(model: &TmapModel, l: f64, max_count: usize) -> Result<CountKernels> {
    check_request(model, l, max_count, DEFAULT_KERNEL_CAP)?;
    let n = model.n();
    let dim = n * (max_count + 1);
    let mut big = DMatrix::zeros(dim, dim);
    for k in 0..=max_count {
        big.view_mut((k * n, k * n), (n, n)).copy_from(model.d0());
        if k >= 1 {
            big.view_mut((k * n, (k - 1) * n), (n, n))
                .copy_from(&(model.d1() * k as f64));
        }
    }
    let opts = MatrixExpOptions::default();
    let e = matrix_exp(&big, l, &opts)?;
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(model.death());
    let neg = -&big;
    let y = neg
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numeric("singular block generator"))?;
    let z = &y - &e * &y;
    let mut alive = Vec::with_capacity((max_count + 1) * n * n);
    let mut dead = Vec::with_capacity((max_count + 1) * n);
    for k in 0..=max_count {
        let f = factorial(k);
        for i in 0..n {
            for j in 0..n {
                alive.push((e[(k * n + i, j)] / f).max(0.0));
            }
        }
        for i in 0..n {
            dead.push((z[k * n + i] / f).max(0.0));
        }
    }
    let d = model.generator();
    let total = matrix_exp(&d, l, &opts)?;
    let absorb = (-&d).lu().solve(model.death()).ok_or_else(|| {
        Error::numeric("singular phase generator D: some phase can never die")
    })?;
    let p = &absorb - &total * &absorb;
    Ok(CountKernels {
        n,
        max_count,
        class_length: l,
        alive,
        dead,
        alive_total: total.transpose().iter().map(|v| v.max(0.0)).collect(),
        dead_total: p.iter().map(|v| v.max(0.0)).collect(),
    })
}

impl CountKernels {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest count `K` with a kernel.
    pub fn max_count(&self) -> usize {
        self.max_count
    }

    pub fn class_length(&self) -> f64 {
        self.class_length
    }

    pub(crate) fn alive_block(&self, k: usize) -> &[f64] {
        let sz = self.n * self.n;
        &self.alive[k * sz..(k + 1) * sz]
    }

    pub(crate) fn dead_block(&self, k: usize) -> &[f64] {
        &self.dead[k * self.n..(k + 1) * self.n]
    }

    pub(crate) fn alive_total_slice(&self) -> &[f64] {
        &self.alive_total
    }

    pub(crate) fn dead_total_slice(&self) -> &[f64] {
        &self.dead_total
    }

    /// `P(k)`.
    pub fn alive_with(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, self.alive_block(k))
    }

    /// `p(k)`.
    pub fn dead_with(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.dead_block(k))
    }

    /// `P = e^{Dl}`.
    pub fn alive_total(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.alive_total)
    }

    /// `p = (I - e^{Dl})(-D)^{-1} d`.
    pub fn dead_total(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.dead_total)
    }

    /// Per starting phase, `1 - sum_{k<=K} [P(k) 1 + p(k)]`: mass of more
    /// than `K` births in one class.
    pub fn tail_deficit(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for k in 0..=self.max_count {
                    s += self.alive_block(k)[i * n..(i + 1) * n].iter().sum::<f64>();
                    s += self.dead_block(k)[i];
                }
                1.0 - s
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_atmmpp, preset, AtmmppParams, PRESET_NAMES};
    use approx::assert_relative_eq;

    fn single(lambda: f64, mu: f64) -> TmapModel {
        build_atmmpp(&AtmmppParams::new(vec![], vec![mu], vec![lambda]).unwrap()).unwrap()
    }

    #[test]
    fn scalar_poisson_kernels() {
        let m = single(2.0, 0.5);
        let k = count_kernels(&m, 1.0, 12).unwrap();
        let mut expected = (-2.5f64).exp();
        for c in 0..=12 {
            assert_relative_eq!(k.alive_with(c)[(0, 0)], expected, max_relative = 1e-12);
            expected *= 2.0 / (c + 1) as f64;
        }
        assert_relative_eq!(k.alive_with(0)[(0, 0)], 0.0820849986238988, max_relative = 1e-12);
        // int_0^1 e^{-2u} 0.5 e^{-0.5u} du = 0.2 (1 - e^{-2.5})
        assert_relative_eq!(k.dead_with(0)[0], 0.2 * (1.0 - (-2.5f64).exp()), max_relative = 1e-12);
        assert_relative_eq!(k.dead_total()[0], 1.0 - (-0.5f64).exp(), max_relative = 1e-12);
    }

    /// Dense exponential of the block generator with an absorbing death phase
    /// in every block; no linear solve involved.
    fn augmented_dense(m: &TmapModel, l: f64, kmax: usize) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        let n = m.n();
        let b = n + 1;
        let dim = b * (kmax + 1);
        let mut big = DMatrix::zeros(dim, dim);
        for k in 0..=kmax {
            big.view_mut((k * b, k * b), (n, n)).copy_from(m.d0());
            big.view_mut((k * b, k * b + n), (n, 1)).copy_from(m.death());
            if k >= 1 {
                big.view_mut((k * b, (k - 1) * b), (n, n)).copy_from(&(m.d1() * k as f64));
            }
        }
        let e = matrix_exp(&big, l, &MatrixExpOptions::default()).unwrap();
        let mut alive = Vec::new();
        let mut dead = Vec::new();
        for k in 0..=kmax {
            let f = factorial(k);
            alive.push(e.view((k * b, 0), (n, n)).into_owned() / f);
            dead.push(e.view((k * b, n), (n, 1)).column(0).into_owned() / f);
        }
        (alive, dead)
    }

    #[test]
    fn series_and_dense_routes_agree() {
        for name in PRESET_NAMES {
            let m = build_atmmpp(&preset(name).unwrap().params).unwrap();
            for l in [0.25, 1.0, 2.5] {
                let a = count_kernels(&m, l, 20).unwrap();
                let b = count_kernels_dense(&m, l, 20).unwrap();
                let (oa, od) = augmented_dense(&m, l, 20);
                for k in 0..=20 {
                    assert!((a.alive_with(k) - &oa[k]).amax() < 1e-13, "{name} l={l} k={k}");
                    assert!((a.dead_with(k) - &od[k]).amax() < 1e-13, "{name} l={l} k={k}");
                    assert!((a.alive_with(k) - b.alive_with(k)).amax() < 1e-12);
                    // the solve route subtracts two O(1) quantities, so it
                    // carries cancellation error of a few ulps times cond(M)
                    assert!((a.dead_with(k) - b.dead_with(k)).amax() < 1e-8, "{name} l={l} k={k}");
                }
                assert!((a.alive_total() - b.alive_total()).amax() < 1e-13);
                assert!((a.dead_total() - b.dead_total()).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn kernels_normalize() {
        for name in PRESET_NAMES {
            let m = build_atmmpp(&preset(name).unwrap().params).unwrap();
            let k = count_kernels(&m, 1.0, 50).unwrap();
            let row = k.alive_total() * DVector::from_element(m.n(), 1.0) + k.dead_total();
            assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-10));
            assert!(k.tail_deficit().iter().all(|d| d.abs() < 1e-8));
            let summed = (0..=50).fold(DMatrix::zeros(m.n(), m.n()), |acc, c| acc + k.alive_with(c));
            assert!((summed - k.alive_total()).amax() < 1e-8);
        }
    }

    #[test]
    fn partial_sums_bounded() {
        let m = build_atmmpp(&preset("example1").unwrap().params).unwrap();
        let k = count_kernels(&m, 1.0, 4).unwrap();
        let summed = (0..=4).fold(DMatrix::zeros(3, 3), |acc, c| acc + k.alive_with(c));
        let total = k.alive_total();
        assert!(summed.iter().zip(total.iter()).all(|(s, t)| *s <= t + 1e-15));
        assert!(k.tail_deficit().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn capacity_cap() {
        let m = single(1.0, 1.0);
        assert!(matches!(
            count_kernels_capped(&m, 1.0, 100, 50),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn dense_route_reports_singular_generator() {
        let m = build_atmmpp(&AtmmppParams::new(vec![0.1], vec![0.3, 0.0], vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(count_kernels_dense(&m, 1.0, 3), Err(Error::Numeric(_))));
        // the series route is still defined
        let k = count_kernels(&m, 1.0, 3).unwrap();
        assert!(k.dead_total()[1] == 0.0);
    }
}
