//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (Higham 2005), over two algebras: dense square matrices, and matrix power
//! series truncated at a fixed degree. The second one carries the per-interval
//! birth-count kernels: the coefficient of `z^k` in `exp((D0 + z D1) t)` is the
//! matrix of probabilities of exactly `k` births in `[0, t)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_ROUNDOFF: f64 = 1.1102230246251565e-16;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm thresholds for degrees 3, 5, 7, 9, 13 at unit roundoff.
const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ExpMethod {
    #[default]
    ScalingSquaring,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixExpOptions {
    pub method: ExpMethod,
    /// Target relative backward error.
    pub tolerance: f64,
}

impl Default for MatrixExpOptions {
    fn default() -> Self {
        MatrixExpOptions {
            method: ExpMethod::ScalingSquaring,
            tolerance: 1e-13,
        }
    }
}

impl MatrixExpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::structural(format!(
                "matrix exponential tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// Degree thresholds relaxed from unit roundoff to the requested tolerance.
    fn thresholds(&self) -> [(usize, f64); 5] {
        let ratio = (self.tolerance / UNIT_ROUNDOFF).max(1.0);
        THETA.map(|(m, theta)| (m, theta * ratio.powf(1.0 / (2 * m + 1) as f64)))
    }
}

/// Operations needed by the Padé scaling-and-squaring driver.
trait ExpAlgebra: Sized + Clone {
    fn identity_like(&self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn axpy(&mut self, alpha: f64, x: &Self);
    fn scale(&mut self, alpha: f64);
    fn norm1(&self) -> f64;
    /// `self^{-1} rhs`
    fn solve(&self, rhs: &Self) -> Result<Self>;
}

fn pade_exp<A: ExpAlgebra>(a: &A, opts: &MatrixExpOptions) -> Result<A> {
    opts.validate()?;
    let norm = a.norm1();
    if !norm.is_finite() {
        return Err(Error::numeric("matrix exponential of non-finite input"));
    }
    let thresholds = opts.thresholds();
    for &(m, theta) in &thresholds[..4] {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return low_degree(a, coeffs);
        }
    }
    let theta13 = thresholds[4].1;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let mut scaled = a.clone();
    scaled.scale(0.5f64.powi(s));
    let mut r = degree13(&scaled)?;
    for _ in 0..s {
        r = r.mul(&r);
    }
    Ok(r)
}

fn low_degree<A: ExpAlgebra>(a: &A, b: &[f64]) -> Result<A> {
    let ident = a.identity_like();
    let a2 = a.mul(a);
    let mut u = ident.clone();
    u.scale(b[1]);
    let mut v = ident;
    v.scale(b[0]);
    let mut power = a2.clone();
    let mut j = 2;
    while j < b.len() {
        v.axpy(b[j], &power);
        u.axpy(b[j + 1], &power);
        j += 2;
        if j < b.len() {
            power = power.mul(&a2);
        }
    }
    let u = a.mul(&u);
    rational(u, v)
}

fn degree13<A: ExpAlgebra>(a: &A) -> Result<A> {
    let b = &PADE13;
    let ident = a.identity_like();
    let a2 = a.mul(a);
    let a4 = a2.mul(&a2);
    let a6 = a4.mul(&a2);

    let mut inner = a6.clone();
    inner.scale(b[13]);
    inner.axpy(b[11], &a4);
    inner.axpy(b[9], &a2);
    let mut u = a6.mul(&inner);
    u.axpy(b[7], &a6);
    u.axpy(b[5], &a4);
    u.axpy(b[3], &a2);
    u.axpy(b[1], &ident);
    let u = a.mul(&u);

    let mut inner = a6.clone();
    inner.scale(b[12]);
    inner.axpy(b[10], &a4);
    inner.axpy(b[8], &a2);
    let mut v = a6.mul(&inner);
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.axpy(b[0], &ident);
    rational(u, v)
}

fn rational<A: ExpAlgebra>(u: A, v: A) -> Result<A> {
    let mut num = v.clone();
    num.axpy(1.0, &u);
    let mut den = v;
    den.axpy(-1.0, &u);
    den.solve(&num)
}

impl ExpAlgebra for DMatrix<f64> {
    fn identity_like(&self) -> Self {
        DMatrix::identity(self.nrows(), self.ncols())
    }

    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        *self += x * alpha;
    }

    fn scale(&mut self, alpha: f64) {
        *self *= alpha;
    }

    fn norm1(&self) -> f64 {
        self.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn solve(&self, rhs: &Self) -> Result<Self> {
        self.clone()
            .lu()
            .solve(rhs)
            .ok_or_else(|| Error::numeric("singular denominator in Padé approximant"))
    }
}

/// `exp(A t)` for a square matrix.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64, opts: &MatrixExpOptions) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::structural(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::structural(format!(
            "matrix exponential time must be finite and nonnegative, got {t}"
        )));
    }
    if t == 0.0 || a.nrows() == 0 {
        return Ok(DMatrix::identity(a.nrows(), a.ncols()));
    }
    pade_exp(&(a * t), opts)
}

/// `exp(A)` with default options.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    matrix_exp(a, 1.0, &MatrixExpOptions::default())
}

/// Square-matrix coefficients `A_0..A_K` of a power series in `z`, with
/// products truncated above `z^K`. Blocks are stored row-major, back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl SeriesMatrix {
    pub fn zeros(dim: usize, order: usize) -> Self {
        SeriesMatrix {
            dim,
            order,
            data: vec![0.0; dim * dim * (order + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let sz = self.dim * self.dim;
        &self.data[k * sz..(k + 1) * sz]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let sz = self.dim * self.dim;
        &mut self.data[k * sz..(k + 1) * sz]
    }

    pub fn get(&self, k: usize, r: usize, c: usize) -> f64 {
        self.data[k * self.dim * self.dim + r * self.dim + c]
    }

    pub fn set(&mut self, k: usize, r: usize, c: usize, v: f64) {
        let d = self.dim;
        self.data[k * d * d + r * d + c] = v;
    }

    pub fn block_matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, self.block(k))
    }

    /// `exp(self * t)` in the truncated algebra.
    pub fn exp(&self, t: f64, opts: &MatrixExpOptions) -> Result<SeriesMatrix> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::structural(format!(
                "series exponential time must be finite and nonnegative, got {t}"
            )));
        }
        if t == 0.0 {
            return Ok(self.identity_like());
        }
        let mut a = self.clone();
        a.scale(t);
        pade_exp(&a, opts)
    }
}

/// `c += a * b` for row-major `m x m` blocks.
#[inline]
fn gemm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize) {
    for i in 0..m {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..m {
            let aip = a[i * m + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

impl ExpAlgebra for SeriesMatrix {
    fn identity_like(&self) -> Self {
        let mut out = SeriesMatrix::zeros(self.dim, self.order);
        for i in 0..self.dim {
            out.set(0, i, i, 1.0);
        }
        out
    }

    fn mul(&self, rhs: &Self) -> Self {
        let m = self.dim;
        let sz = m * m;
        let mut out = SeriesMatrix::zeros(m, self.order);
        for k in 0..=self.order {
            let (_, rest) = out.data.split_at_mut(k * sz);
            let ck = &mut rest[..sz];
            for j in 0..=k {
                gemm_acc(ck, self.block(j), rhs.block(k - j), m);
            }
        }
        out
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
    }

    fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    fn norm1(&self) -> f64 {
        // The block lower-triangular Toeplitz matrix attains its 1-norm on a
        // column of the first block column, which stacks every coefficient.
        let m = self.dim;
        (0..m)
            .map(|c| {
                (0..=self.order)
                    .map(|k| (0..m).map(|r| self.get(k, r, c).abs()).sum::<f64>())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn solve(&self, rhs: &Self) -> Result<Self> {
        let m = self.dim;
        let lu = self.block_matrix(0).lu();
        if !lu.is_invertible() {
            return Err(Error::numeric("singular leading block in series solve"));
        }
        let mut out = SeriesMatrix::zeros(m, self.order);
        let mut work = vec![0.0; m * m];
        for k in 0..=self.order {
            work.copy_from_slice(rhs.block(k));
            for j in 1..=k {
                let mut prod = vec![0.0; m * m];
                gemm_acc(&mut prod, self.block(j), out.block(k - j), m);
                for (w, p) in work.iter_mut().zip(&prod) {
                    *w -= p;
                }
            }
            let b = DMatrix::from_row_slice(m, m, &work);
            let x = lu
                .solve(&b)
                .ok_or_else(|| Error::numeric("singular leading block in series solve"))?;
            let blk = out.block_mut(k);
            for r in 0..m {
                for c in 0..m {
                    blk[r * m + c] = x[(r, c)];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_time_is_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 2.0, -5.0]);
        let e = matrix_exp(&a, 0.0, &MatrixExpOptions::default()).unwrap();
        assert_eq!(e, DMatrix::identity(2, 2));
    }

    #[test]
    fn scalar_exponential() {
        for &(mu, x) in &[(0.5, 2.0), (3.0, 0.01), (1e-3, 40.0), (20.0, 3.0)] {
            let a = DMatrix::from_element(1, 1, -mu);
            let e = matrix_exp(&a, x, &MatrixExpOptions::default()).unwrap();
            assert_relative_eq!(e[(0, 0)], (-mu * x).exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn non_square_rejected() {
        let a = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            matrix_exp(&a, 1.0, &MatrixExpOptions::default()),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn bad_tolerance_rejected() {
        let a = DMatrix::<f64>::identity(2, 2);
        let opts = MatrixExpOptions {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(matrix_exp(&a, 1.0, &opts).is_err());
    }

    #[test]
    fn nilpotent_closed_form() {
        // exp([[0, a], [0, 0]] t) = [[1, a t], [0, 1]]
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 7.0, 0.0, 0.0]);
        let e = matrix_exp(&a, 3.0, &MatrixExpOptions::default()).unwrap();
        assert_relative_eq!(e[(0, 1)], 21.0, max_relative = 1e-14);
        assert_relative_eq!(e[(0, 0)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn series_scalar_poisson() {
        // exp((-r + z lam) t) = e^{-r t} sum_k (lam t)^k / k! z^k
        let (r, lam, t, order) = (2.5, 2.0, 1.3, 12);
        let mut g = SeriesMatrix::zeros(1, order);
        g.set(0, 0, 0, -r);
        g.set(1, 0, 0, lam);
        let e = g.exp(t, &MatrixExpOptions::default()).unwrap();
        let mut term = (-r * t).exp();
        for k in 0..=order {
            assert_relative_eq!(e.get(k, 0, 0), term, max_relative = 1e-12);
            term *= lam * t / (k + 1) as f64;
        }
    }
}
