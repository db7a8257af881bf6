//! Small dense-matrix helpers shared by the simulation modules.

use faer::linalg::matmul::matmul;
use faer::traits::Conjugate;
use faer::{c64, Accum, Mat, MatMut, MatRef, Par};

pub type CMat = Mat<c64>;

pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };

/// `dst = lhs * rhs` on the calling thread.
#[inline]
pub fn mul_into<L, R>(dst: MatMut<'_, c64>, lhs: MatRef<'_, L>, rhs: MatRef<'_, R>)
where
    L: Conjugate<Canonical = c64>,
    R: Conjugate<Canonical = c64>,
{
    matmul(dst, Accum::Replace, lhs, rhs, ONE, Par::Seq);
}

/// `dst += lhs * rhs` on the calling thread.
#[inline]
pub fn mul_add_into<L, R>(dst: MatMut<'_, c64>, lhs: MatRef<'_, L>, rhs: MatRef<'_, R>)
where
    L: Conjugate<Canonical = c64>,
    R: Conjugate<Canonical = c64>,
{
    matmul(dst, Accum::Add, lhs, rhs, ONE, Par::Seq);
}

pub fn mul<L, R>(lhs: MatRef<'_, L>, rhs: MatRef<'_, R>) -> CMat
where
    L: Conjugate<Canonical = c64>,
    R: Conjugate<Canonical = c64>,
{
    let mut out = CMat::zeros(lhs.nrows(), rhs.ncols());
    mul_into(out.as_mut(), lhs, rhs);
    out
}

pub fn max_abs(m: MatRef<'_, c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

/// `max |A_ij - conj(A_ji)|`.
pub fn hermiticity_defect(m: MatRef<'_, c64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Replace `m` by `(m + m†)/2`.
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        let d = m[(j, j)].re;
        m[(j, j)] = c64::new(d, 0.0);
    }
}

pub fn trace(m: MatRef<'_, c64>) -> c64 {
    (0..m.nrows().min(m.ncols())).fold(ZERO, |acc, i| acc + m[(i, i)])
}

/// `factor * m` as a new matrix.
pub fn scaled(m: MatRef<'_, c64>, factor: c64) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * factor)
}

pub fn scale(m: &mut CMat, factor: f64) {
    for j in 0..m.ncols() {
        for x in m.col_as_slice_mut(j) {
            *x *= factor;
        }
    }
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    acc.sqrt()
}

/// Largest elementwise modulus of `a - b`.
pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}
