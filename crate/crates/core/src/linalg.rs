//! Dense linear algebra helpers shared by every stage.
//!
//! Everything here is generic over [`Scalar`], which is implemented for `f64`
//! and [`c64`]. Real symmetric Hamiltonians (the shipped transverse-field and
//! field-ramp paths) keep every generator and flow in real arithmetic, which is
//! roughly four times cheaper than the complex route for the same dimension.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Once;

use faer::traits::ComplexField;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use faer::c64;

pub type CMat = Mat<c64>;
pub type RMat = Mat<f64>;

/// Field element usable by the dense kernels.
pub trait Scalar:
    ComplexField<Real = f64>
    + Copy
    + Default
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const REAL: bool;

    fn from_f64(x: f64) -> Self;
    fn conjugate(self) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn abs_sq(self) -> f64;
    fn to_c64(self) -> c64;
    /// `None` when `z` has an imaginary part the type cannot hold.
    fn from_c64(z: c64) -> Option<Self>;

    fn scale(self, x: f64) -> Self {
        self * Self::from_f64(x)
    }
}

impl Scalar for f64 {
    const REAL: bool = true;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn conjugate(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn abs_sq(self) -> f64 {
        self * self
    }
    fn to_c64(self) -> c64 {
        c64::new(self, 0.0)
    }
    fn from_c64(z: c64) -> Option<Self> {
        (z.im == 0.0).then_some(z.re)
    }
}

impl Scalar for c64 {
    const REAL: bool = false;

    fn from_f64(x: f64) -> Self {
        c64::new(x, 0.0)
    }
    fn conjugate(self) -> Self {
        self.conj()
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn abs_sq(self) -> f64 {
        self.norm_sqr()
    }
    fn to_c64(self) -> c64 {
        self
    }
    fn from_c64(z: c64) -> Option<Self> {
        Some(z)
    }
}

static SEQUENTIAL: Once = Once::new();

/// Pin faer to single-threaded kernels so repeated runs are bit-reproducible.
pub fn ensure_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

pub fn matmul<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    scaled_matmul(T::from_f64(1.0), a, b)
}

pub fn scaled_matmul<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    let mut out = Mat::<T>::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, a, b, alpha, Par::Seq);
    out
}

/// `a† b`
pub fn matmul_adj_lhs<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    let mut out = Mat::<T>::zeros(a.ncols(), b.ncols());
    faer::linalg::matmul::matmul(
        out.as_mut(),
        Accum::Replace,
        a.adjoint(),
        b,
        T::from_f64(1.0),
        Par::Seq,
    );
    out
}

/// `a† b` for a product known to be Hermitian: only the lower triangle is
/// multiplied, the upper one is filled by conjugation.
pub fn hermitian_product<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    use faer::linalg::matmul::triangular::{self, BlockStructure};
    let n = a.ncols();
    let mut out = Mat::<T>::zeros(n, n);
    triangular::matmul(
        out.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        a.adjoint(),
        BlockStructure::Rectangular,
        b,
        BlockStructure::Rectangular,
        T::from_f64(1.0),
        Par::Seq,
    );
    for j in 0..n {
        for i in 0..j {
            out[(i, j)] = out[(j, i)].conjugate();
        }
    }
    out
}

/// `a b†`
///
/// The adjoint is materialized first; faer's kernel is about twice as slow
/// with a transposed right-hand side.
pub fn matmul_adj_rhs<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    let bt = b.adjoint().to_owned();
    matmul(a, bt.as_ref())
}

pub fn adjoint<T: Scalar>(a: MatRef<'_, T>) -> Mat<T> {
    a.adjoint().to_owned()
}

pub fn identity<T: Scalar>(n: usize) -> Mat<T> {
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            T::from_f64(1.0)
        } else {
            T::from_f64(0.0)
        }
    })
}

/// `a + alpha * b`, elementwise.
pub fn add_scaled<T: Scalar>(a: MatRef<'_, T>, alpha: T, b: MatRef<'_, T>) -> Mat<T> {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + alpha * b[(i, j)])
}

pub fn sub<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    add_scaled(a, T::from_f64(-1.0), b)
}

pub fn accumulate<T: Scalar>(acc: &mut Mat<T>, alpha: T, b: MatRef<'_, T>) {
    assert_eq!((acc.nrows(), acc.ncols()), (b.nrows(), b.ncols()));
    for j in 0..acc.ncols() {
        let col = acc.col_as_slice_mut(j);
        for (i, x) in col.iter_mut().enumerate() {
            *x += alpha * b[(i, j)];
        }
    }
}

pub fn scale<T: Scalar>(a: MatRef<'_, T>, alpha: T) -> Mat<T> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| alpha * a[(i, j)])
}

pub fn frobenius<T: Scalar>(a: MatRef<'_, T>) -> f64 {
    a.norm_l2()
}

/// Largest column absolute sum.
pub fn one_norm<T: Scalar>(a: MatRef<'_, T>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs_sq().sqrt()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Operator (spectral) norm: the largest singular value.
pub fn op_norm<T: Scalar>(a: MatRef<'_, T>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    ensure_sequential();
    let sv = a
        .singular_values()
        .map_err(|e| Error::Linalg(format!("{e:?}")))?;
    Ok(sv.first().copied().unwrap_or(0.0))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen<T: Scalar>(h: MatRef<'_, T>) -> Result<(Vec<f64>, Mat<T>)> {
    ensure_sequential();
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("{e:?}")))?;
    let values = (0..h.nrows()).map(|i| evd.S()[i].re()).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn hermitian_eigenvalues<T: Scalar>(h: MatRef<'_, T>) -> Result<Vec<f64>> {
    ensure_sequential();
    h.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("{e:?}")))
}

/// Operator norm of a Hermitian matrix via its spectrum.
pub fn hermitian_op_norm<T: Scalar>(h: MatRef<'_, T>) -> Result<f64> {
    Ok(hermitian_eigenvalues(h)?
        .into_iter()
        .fold(0.0, |m, x| m.max(x.abs())))
}

/// `‖U†U − 1‖` in operator norm.
pub fn unitarity_defect<T: Scalar>(u: MatRef<'_, T>) -> Result<f64> {
    let mut gram = matmul_adj_lhs(u, u);
    for i in 0..gram.nrows() {
        gram[(i, i)] -= T::from_f64(1.0);
    }
    // symmetrize away roundoff so the Hermitian solver sees exact input
    let sym = Mat::from_fn(gram.nrows(), gram.ncols(), |i, j| {
        (gram[(i, j)] + gram[(j, i)].conjugate()).scale(0.5)
    });
    hermitian_op_norm(sym.as_ref())
}

/// `‖H − H†‖` measured in Frobenius norm (an upper bound on the operator norm).
pub fn hermiticity_defect<T: Scalar>(h: MatRef<'_, T>) -> f64 {
    let n = h.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += (h[(i, j)] - h[(j, i)].conjugate()).abs_sq();
        }
    }
    acc.sqrt()
}

/// Frobenius distance of `k` from being skew-Hermitian.
pub fn skew_defect<T: Scalar>(k: MatRef<'_, T>) -> f64 {
    let n = k.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += (k[(i, j)] + k[(j, i)].conjugate()).abs_sq();
        }
    }
    acc.sqrt()
}

/// `exp(h K) · u` for a skew-Hermitian `K`, by Taylor series with scaling.
///
/// The series is summed on the product directly, so each term costs one
/// matrix product and no separate exponential is ever formed.
pub fn exp_skew_apply<T: Scalar>(k: MatRef<'_, T>, h: f64, u: MatRef<'_, T>) -> Mat<T> {
    let norm = h.abs() * one_norm(k);
    let substeps = ((norm / 0.5).ceil() as usize).max(1);
    let tau = h / substeps as f64;
    let mut out = u.to_owned();
    let mut term = u.to_owned();
    let mut next = Mat::<T>::zeros(u.nrows(), u.ncols());
    for _ in 0..substeps {
        term.copy_from(&out);
        let scale = out.norm_l2();
        for order in 1..=48 {
            faer::linalg::matmul::matmul(
                next.as_mut(),
                Accum::Replace,
                k,
                term.as_ref(),
                T::from_f64(tau / order as f64),
                Par::Seq,
            );
            std::mem::swap(&mut term, &mut next);
            out += &term;
            if term.norm_l2() <= 0.5 * f64::EPSILON * scale {
                break;
            }
        }
    }
    out
}

/// `exp(i t H)` for Hermitian `H`, through its eigenbasis.
pub fn expm_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    let (values, vectors) = hermitian_eigen(h.as_ref())?;
    let n = values.len();
    let phased = Mat::from_fn(n, n, |i, j| vectors[(i, j)] * c64::from_polar(1.0, t * values[j]));
    Ok(matmul_adj_rhs(phased.as_ref(), vectors.as_ref()))
}

pub fn to_complex<T: Scalar>(a: MatRef<'_, T>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].to_c64())
}

/// Narrow a complex matrix to `T`; fails if `T` is real and any entry carries
/// an imaginary part.
pub fn from_complex<T: Scalar>(a: MatRef<'_, c64>) -> Result<Mat<T>> {
    let mut out = Mat::<T>::zeros(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[(i, j)] = T::from_c64(a[(i, j)]).ok_or_else(|| {
                Error::structural("complex entry cannot be represented in a real matrix")
            })?;
        }
    }
    Ok(out)
}

pub fn is_real(a: MatRef<'_, c64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].im == 0.0))
}

pub fn kron<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Mat<T> {
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * br, a.ncols() * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Hermitian part of `a`; cleans roundoff before eigensolves.
pub fn hermitian_part<T: Scalar>(a: MatRef<'_, T>) -> Mat<T> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (a[(i, j)] + a[(j, i)].conjugate()).scale(0.5)
    })
}

pub fn random_complex<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    Mat::from_fn(rows, cols, |_, _| {
        c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Random Hermitian matrix normalized to unit operator norm.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = random_complex(dim, dim, rng);
    let h = hermitian_part(g.as_ref());
    let norm = hermitian_op_norm(h.as_ref()).expect("eigensolver on random Hermitian");
    scale(h.as_ref(), c64::new(1.0 / norm.max(f64::MIN_POSITIVE), 0.0))
}

/// Random real symmetric matrix normalized to unit operator norm.
pub fn random_symmetric<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = Mat::from_fn(dim, dim, |_, _| c64::new(rng.sample(StandardNormal), 0.0));
    let h = hermitian_part(g.as_ref());
    let norm = hermitian_op_norm(h.as_ref()).expect("eigensolver on random symmetric");
    scale(h.as_ref(), c64::new(1.0 / norm.max(f64::MIN_POSITIVE), 0.0))
}

/// Random unitary `exp(i π H)` with `H` random Hermitian of unit norm.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let h = random_hermitian(dim, rng);
    expm_hermitian(&h, std::f64::consts::PI).expect("eigensolver on random Hermitian")
}

/// Normalize a state vector in place; returns the original norm.
pub fn normalize<T: Scalar>(v: &mut [T]) -> f64 {
    let norm = v.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = x.scale(1.0 / norm);
        }
    }
    norm
}

pub fn inner<T: Scalar>(a: &[T], b: &[T]) -> c64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_c64().conj() * y.to_c64())
        .sum()
}

pub fn mat_vec<T: Scalar>(m: &Mat<T>, v: &[T]) -> Vec<T> {
    assert_eq!(m.ncols(), v.len());
    let mut out = vec![T::from_f64(0.0); m.nrows()];
    for (j, &x) in v.iter().enumerate() {
        if x.abs_sq() == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(m.col_as_slice(j)) {
            *o += a * x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn taylor_exponential_matches_eigenbasis_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_hermitian(12, &mut rng);
        let k = scale(h.as_ref(), c64::new(0.0, 3.0)); // i * 3 H
        let taylor = exp_skew_apply(k.as_ref(), 1.0, identity::<c64>(12).as_ref());
        let direct = expm_hermitian(&h, 3.0).unwrap();
        let diff = sub(taylor.as_ref(), direct.as_ref());
        assert!(op_norm(diff.as_ref()).unwrap() < 1e-12);
        assert!(unitarity_defect(taylor.as_ref()).unwrap() < 1e-12);
    }

    #[test]
    fn real_skew_exponential_is_orthogonal() {
        let k = Mat::from_fn(4, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let u = exp_skew_apply(k.as_ref(), 2.0, identity::<f64>(4).as_ref());
        assert!(unitarity_defect(u.as_ref()).unwrap() < 1e-13);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let d = Mat::from_fn(3, 3, |i, j| if i == j { [1.0, -4.0, 2.0][i] } else { 0.0 });
        assert!((op_norm(d.as_ref()).unwrap() - 4.0).abs() < 1e-14);
        assert!((hermitian_op_norm(d.as_ref()).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn narrowing_rejects_imaginary_entries() {
        let m = Mat::from_fn(2, 2, |i, _| c64::new(1.0, i as f64));
        assert!(from_complex::<f64>(m.as_ref()).is_err());
        assert!(from_complex::<c64>(m.as_ref()).is_ok());
    }
}
