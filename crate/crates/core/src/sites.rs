//! Tensor-product bookkeeping for operators acting on a subset of sites.
//!
//! Basis states of the full space are indexed with site 0 as the most
//! significant digit (the `kron` ordering), so a full index splits as
//! `base(complement digits) + offset(support digits)`. Every kernel below
//! walks those two tables instead of forming Kronecker products.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::Scalar;

#[derive(Clone, Debug)]
pub struct SiteLayout {
    n_sites: usize,
    local_dim: usize,
    support: Vec<usize>,
    offsets: Vec<usize>,
    bases: Vec<usize>,
}

fn place_values(n_sites: usize, local_dim: usize) -> Vec<usize> {
    (0..n_sites)
        .map(|k| local_dim.pow((n_sites - 1 - k) as u32))
        .collect()
}

fn digit_table(sites: &[usize], place: &[usize], local_dim: usize) -> Vec<usize> {
    let mut table = vec![0usize];
    for &site in sites {
        let mut next = Vec::with_capacity(table.len() * local_dim);
        for &t in &table {
            for d in 0..local_dim {
                next.push(t + d * place[site]);
            }
        }
        table = next;
    }
    table
}

impl SiteLayout {
    /// `support` must be strictly increasing site indices below `n_sites`.
    pub fn new(n_sites: usize, local_dim: usize, support: &[usize]) -> Result<Self> {
        if local_dim < 2 {
            return Err(Error::structural("local dimension must be at least 2"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::structural("support must be strictly increasing"));
        }
        if support.iter().any(|&s| s >= n_sites) {
            return Err(Error::domain("support site outside the lattice"));
        }
        let place = place_values(n_sites, local_dim);
        let complement: Vec<usize> = (0..n_sites).filter(|s| support.binary_search(s).is_err()).collect();
        Ok(Self {
            n_sites,
            local_dim,
            support: support.to_vec(),
            offsets: digit_table(support, &place, local_dim),
            bases: digit_table(&complement, &place, local_dim),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn full_dim(&self) -> usize {
        self.offsets.len() * self.bases.len()
    }

    pub fn support_dim(&self) -> usize {
        self.offsets.len()
    }

    pub fn complement_dim(&self) -> usize {
        self.bases.len()
    }

    /// Offsets of the support digits, in local basis order.
    pub(crate) fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Offsets of the complement digits, in complement basis order.
    pub(crate) fn bases(&self) -> &[usize] {
        &self.bases
    }

    fn check_local<T>(&self, op: &Mat<T>) -> Result<()> {
        let d = self.support_dim();
        if op.nrows() != d || op.ncols() != d {
            return Err(Error::structural(format!(
                "local operator is {}x{}, support needs {d}x{d}",
                op.nrows(),
                op.ncols()
            )));
        }
        Ok(())
    }

    fn check_full<T>(&self, m: &Mat<T>, rows: bool) -> Result<()> {
        let n = self.full_dim();
        let got = if rows { m.nrows() } else { m.ncols() };
        if got != n {
            return Err(Error::structural(format!("expected dimension {n}, got {got}")));
        }
        Ok(())
    }

    /// `op ⊗ 1` on the full space.
    pub fn embed<T: Scalar>(&self, op: &Mat<T>) -> Result<Mat<T>> {
        let n = self.full_dim();
        let mut full = Mat::<T>::zeros(n, n);
        self.embed_add(T::from_f64(1.0), op, &mut full)?;
        Ok(full)
    }

    /// `full += alpha * (op ⊗ 1)`
    pub fn embed_add<T: Scalar>(&self, alpha: T, op: &Mat<T>, full: &mut Mat<T>) -> Result<()> {
        self.check_local(op)?;
        self.check_full(full, true)?;
        self.check_full(full, false)?;
        for (bp, &op_col) in self.offsets.iter().enumerate() {
            for &base in &self.bases {
                let col = full.col_as_slice_mut(base + op_col);
                for (b, &off) in self.offsets.iter().enumerate() {
                    col[base + off] += alpha * op[(b, bp)];
                }
            }
        }
        Ok(())
    }

    /// `(op ⊗ 1) · m`
    pub fn apply_left<T: Scalar>(&self, op: &Mat<T>, m: &Mat<T>) -> Result<Mat<T>> {
        self.check_local(op)?;
        self.check_full(m, true)?;
        let d = self.support_dim();
        let op_rows: Vec<T> = (0..d).flat_map(|b| (0..d).map(move |bp| (b, bp))).map(|(b, bp)| op[(b, bp)]).collect();
        let mut out = Mat::<T>::zeros(m.nrows(), m.ncols());
        let mut gathered = vec![T::from_f64(0.0); d];
        for j in 0..m.ncols() {
            let src = m.col_as_slice(j);
            let dst = out.col_as_slice_mut(j);
            for &base in &self.bases {
                for (g, &off) in gathered.iter_mut().zip(&self.offsets) {
                    *g = src[base + off];
                }
                for (b, &off) in self.offsets.iter().enumerate() {
                    let row = &op_rows[b * d..(b + 1) * d];
                    let mut acc = T::from_f64(0.0);
                    for (&a, &x) in row.iter().zip(&gathered) {
                        acc += a * x;
                    }
                    dst[base + off] = acc;
                }
            }
        }
        Ok(out)
    }

    /// `m · (op ⊗ 1)`
    pub fn apply_right<T: Scalar>(&self, m: &Mat<T>, op: &Mat<T>) -> Result<Mat<T>> {
        self.check_local(op)?;
        self.check_full(m, false)?;
        let rows = m.nrows();
        let mut out = Mat::<T>::zeros(rows, m.ncols());
        for &base in &self.bases {
            for (bp, &off_out) in self.offsets.iter().enumerate() {
                let mut col = vec![T::from_f64(0.0); rows];
                for (b, &off_in) in self.offsets.iter().enumerate() {
                    let w = op[(b, bp)];
                    if w.abs_sq() == 0.0 {
                        continue;
                    }
                    for (c, &x) in col.iter_mut().zip(m.col_as_slice(base + off_in)) {
                        *c += x * w;
                    }
                }
                out.col_as_slice_mut(base + off_out).copy_from_slice(&col);
            }
        }
        Ok(out)
    }

    /// Trace over the complement, leaving an operator on the support.
    pub fn partial_trace<T: Scalar>(&self, m: &Mat<T>) -> Result<Mat<T>> {
        self.check_full(m, true)?;
        self.check_full(m, false)?;
        let d = self.support_dim();
        let mut out = Mat::<T>::zeros(d, d);
        for (bp, &off_c) in self.offsets.iter().enumerate() {
            for &base in &self.bases {
                let col = m.col_as_slice(base + off_c);
                for (b, &off_r) in self.offsets.iter().enumerate() {
                    out[(b, bp)] += col[base + off_r];
                }
            }
        }
        Ok(out)
    }

    /// Normalized partial trace onto the support: the conditional expectation
    /// `Tr_c(m) / d_c`, still as a local operator.
    pub fn reduce<T: Scalar>(&self, m: &Mat<T>) -> Result<Mat<T>> {
        let mut red = self.partial_trace(m)?;
        let inv = T::from_f64(1.0 / self.complement_dim() as f64);
        for j in 0..red.ncols() {
            for x in red.col_as_slice_mut(j) {
                *x *= inv;
            }
        }
        Ok(red)
    }

    /// Reshape a state into the `support × complement` matrix used for Schmidt
    /// decompositions.
    pub fn matricize<T: Scalar>(&self, state: &[T]) -> Result<Mat<T>> {
        if state.len() != self.full_dim() {
            return Err(Error::structural("state length does not match the lattice"));
        }
        Ok(Mat::from_fn(self.support_dim(), self.complement_dim(), |b, c| {
            state[self.bases[c] + self.offsets[b]]
        }))
    }

    /// Inverse of [`SiteLayout::matricize`].
    pub fn vectorize<T: Scalar>(&self, m: &Mat<T>) -> Result<Vec<T>> {
        if m.nrows() != self.support_dim() || m.ncols() != self.complement_dim() {
            return Err(Error::structural("matrix shape does not match the layout"));
        }
        let mut state = vec![T::from_f64(0.0); self.full_dim()];
        for (c, &base) in self.bases.iter().enumerate() {
            for (b, &off) in self.offsets.iter().enumerate() {
                state[base + off] = m[(b, c)];
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, identity, kron, matmul, sub, frobenius};

    fn pauli_z() -> Mat<c64> {
        Mat::from_fn(2, 2, |i, j| if i == j { c64::new(if i == 0 { 1.0 } else { -1.0 }, 0.0) } else { c64::new(0.0, 0.0) })
    }

    fn pauli_y() -> Mat<c64> {
        Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => c64::new(0.0, -1.0),
            (1, 0) => c64::new(0.0, 1.0),
            _ => c64::new(0.0, 0.0),
        })
    }

    #[test]
    fn embedding_matches_kron_ordering() {
        // Y on site 1 of three qubits = 1 ⊗ Y ⊗ 1
        let layout = SiteLayout::new(3, 2, &[1]).unwrap();
        let full = layout.embed(&pauli_y()).unwrap();
        let i2 = identity::<c64>(2);
        let expected = kron(kron(i2.as_ref(), pauli_y().as_ref()).as_ref(), i2.as_ref());
        assert!(frobenius(sub(full.as_ref(), expected.as_ref()).as_ref()) < 1e-15);
    }

    #[test]
    fn non_contiguous_support() {
        let op = kron(pauli_z().as_ref(), pauli_y().as_ref());
        let layout = SiteLayout::new(3, 2, &[0, 2]).unwrap();
        let full = layout.embed(&op).unwrap();
        let i2 = identity::<c64>(2);
        let expected = kron(kron(pauli_z().as_ref(), i2.as_ref()).as_ref(), pauli_y().as_ref());
        assert!(frobenius(sub(full.as_ref(), expected.as_ref()).as_ref()) < 1e-15);
    }

    #[test]
    fn apply_left_right_match_dense_products() {
        let op = kron(pauli_z().as_ref(), pauli_y().as_ref());
        let layout = SiteLayout::new(4, 2, &[1, 3]).unwrap();
        let m = Mat::from_fn(16, 16, |i, j| c64::new((i * 3 + j) as f64 % 7.0, (i + 2 * j) as f64 % 5.0));
        let full = layout.embed(&op).unwrap();
        let left = layout.apply_left(&op, &m).unwrap();
        let right = layout.apply_right(&m, &op).unwrap();
        assert!(frobenius(sub(left.as_ref(), matmul(full.as_ref(), m.as_ref()).as_ref()).as_ref()) < 1e-12);
        assert!(frobenius(sub(right.as_ref(), matmul(m.as_ref(), full.as_ref()).as_ref()).as_ref()) < 1e-12);
    }

    #[test]
    fn partial_trace_of_embedding_scales_by_complement_dimension() {
        let layout = SiteLayout::new(4, 2, &[2]).unwrap();
        let full = layout.embed(&pauli_y()).unwrap();
        let back = layout.partial_trace(&full).unwrap();
        let expected = crate::linalg::scale(pauli_y().as_ref(), c64::new(8.0, 0.0));
        assert!(frobenius(sub(back.as_ref(), expected.as_ref()).as_ref()) < 1e-14);
        let reduced = layout.reduce(&full).unwrap();
        assert!(frobenius(sub(reduced.as_ref(), pauli_y().as_ref()).as_ref()) < 1e-14);
    }

    #[test]
    fn matricize_round_trip() {
        let layout = SiteLayout::new(3, 2, &[0, 2]).unwrap();
        let state: Vec<f64> = (0..8).map(|x| x as f64).collect();
        let m = layout.matricize(&state).unwrap();
        assert_eq!(layout.vectorize(&m).unwrap(), state);
        // index 5 = |101⟩: support digits (1,1) -> row 3, complement digit 0
        assert_eq!(m[(3, 0)], 5.0);
    }

    #[test]
    fn rejects_bad_supports() {
        assert!(SiteLayout::new(3, 2, &[2, 1]).is_err());
        assert!(SiteLayout::new(3, 2, &[3]).is_err());
        assert!(SiteLayout::new(3, 1, &[0]).is_err());
    }
}
