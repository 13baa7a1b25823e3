//! Schmidt spectra across a cut, entropies, rank truncations and the
//! overlap / tail-constraint bookkeeping built on them.
//!
//! Rank thresholds `N^{k|∂A|}` grow past the matrix dimension almost
//! immediately on a desk-size chain; every threshold is clipped at
//! `min(N^|A|, N^|A^c|)` and the clip is reported next to the value.

use faer::linalg::solvers::Svd;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Cut, Region};
use crate::linalg::{self, Scalar};
use crate::sites::SiteLayout;
use crate::table::{sig12, Table};

/// Singular values at or below this count as zero for numerical ranks.
pub const RANK_TOLERANCE: f64 = 1e-10;

const NORM_TOLERANCE: f64 = 1e-8;

/// Decreasing Schmidt probabilities `σ(α)` across a cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    pub coefficients: Vec<f64>,
    pub region: Vec<usize>,
    pub local_dim: usize,
    pub boundary_size: usize,
    /// `min(N^|A|, N^|A^c|)`.
    pub full_rank: usize,
}

impl SchmidtSpectrum {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Number of singular values `√σ` above [`RANK_TOLERANCE`].
    pub fn numerical_rank(&self) -> usize {
        self.coefficients.iter().filter(|&&p| p.max(0.0).sqrt() > RANK_TOLERANCE).count()
    }

    /// `Σ_{α ≤ k} σ(α)`, with `k` clipped at the spectrum length.
    pub fn head_sum(&self, k: usize) -> f64 {
        self.coefficients.iter().take(k).sum()
    }

    /// `Σ_{α > k} σ(α)`, summed from the small end.
    pub fn tail_sum(&self, k: usize) -> f64 {
        self.coefficients.iter().skip(k).rev().sum()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["alpha", "sigma"]);
        for (a, p) in self.coefficients.iter().enumerate() {
            t.push(vec![(a + 1).to_string(), sig12(*p)]);
        }
        t
    }
}

/// Spectrum plus the Schmidt vectors (columns) on each side.
#[derive(Clone, Debug)]
pub struct SchmidtDecomposition<T: Scalar> {
    pub spectrum: SchmidtSpectrum,
    pub left: Mat<T>,
    pub right: Mat<T>,
    /// `√σ(α)`.
    pub singular_values: Vec<f64>,
    layout: SiteLayout,
}

fn check_normalized<T: Scalar>(state: &[T]) -> Result<()> {
    let norm = state.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::domain(format!("state is not normalized: |psi| = {norm}")));
    }
    Ok(())
}

fn layout_for(cut: &Cut, local_dim: usize, len: usize) -> Result<SiteLayout> {
    let layout = SiteLayout::new(cut.lattice().n_sites(), local_dim, cut.region().sites())?;
    if layout.full_dim() != len {
        return Err(Error::structural(format!(
            "state has {len} amplitudes, the cut needs {}",
            layout.full_dim()
        )));
    }
    Ok(layout)
}

fn spectrum_from(values: Vec<f64>, cut: &Cut, local_dim: usize, layout: &SiteLayout) -> SchmidtSpectrum {
    let total: f64 = values.iter().map(|s| s * s).sum();
    SchmidtSpectrum {
        coefficients: values.iter().map(|s| s * s / total).collect(),
        region: cut.region().sites().to_vec(),
        local_dim,
        boundary_size: cut.boundary_size(),
        full_rank: layout.support_dim().min(layout.complement_dim()),
    }
}

/// Schmidt spectrum of `state` across `cut`.
pub fn schmidt<T: Scalar>(state: &[T], cut: &Cut, local_dim: usize) -> Result<SchmidtSpectrum> {
    check_normalized(state)?;
    let layout = layout_for(cut, local_dim, state.len())?;
    let m = layout.matricize(state)?;
    let mut values = m
        .as_ref()
        .singular_values()
        .map_err(|e| Error::Linalg(format!("{e:?}")))?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(spectrum_from(values, cut, local_dim, &layout))
}

/// Full Schmidt decomposition, vectors included.
pub fn schmidt_decomposition<T: Scalar>(state: &[T], cut: &Cut, local_dim: usize) -> Result<SchmidtDecomposition<T>> {
    check_normalized(state)?;
    let layout = layout_for(cut, local_dim, state.len())?;
    let m = layout.matricize(state)?;
    linalg::ensure_sequential();
    let svd = Svd::new_thin(m.as_ref()).map_err(|e| Error::Linalg(format!("{e:?}")))?;
    let k = svd.S().dim();
    let mut order: Vec<usize> = (0..k).collect();
    let raw: Vec<f64> = (0..k).map(|i| svd.S()[i].re()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let left = Mat::from_fn(svd.U().nrows(), k, |i, j| svd.U()[(i, order[j])]);
    let right = Mat::from_fn(svd.V().nrows(), k, |i, j| svd.V()[(i, order[j])]);
    let values: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let spectrum = spectrum_from(values.clone(), cut, local_dim, &layout);
    Ok(SchmidtDecomposition { spectrum, left, right, singular_values: values, layout })
}

impl<T: Scalar> SchmidtDecomposition<T> {
    /// `Σ_{α < k} s_α |u_α⟩|v_α⟩`.
    pub fn partial_state(&self, k: usize) -> Result<Vec<T>> {
        let k = k.min(self.singular_values.len());
        let (rows, cols) = (self.left.nrows(), self.right.nrows());
        let mut m = Mat::<T>::zeros(rows, cols);
        for a in 0..k {
            let s = self.singular_values[a];
            for j in 0..cols {
                let v = self.right[(j, a)].conjugate().scale(s);
                for i in 0..rows {
                    m[(i, j)] += self.left[(i, a)] * v;
                }
            }
        }
        self.layout.vectorize(&m)
    }
}

/// Entanglement entropy `−Σ σ ln σ` in nats, `0 ln 0 = 0`.
pub fn entropy(spec: &SchmidtSpectrum) -> f64 {
    shannon(&spec.coefficients)
}

/// Shannon entropy of a probability vector in nats.
pub fn shannon(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `min(N^{exponent}, cap)` without overflow, plus whether the cap was hit.
pub fn clipped_power(local_dim: usize, exponent: usize, cap: usize) -> (usize, bool) {
    let value = (0..exponent).fold(1usize, |v, _| v.saturating_mul(local_dim));
    (value.min(cap), value > cap)
}

/// Rank kept at width `R`: `N^{R|∂A|}`, clipped at full rank.
pub fn truncation_rank(spec: &SchmidtSpectrum, radius: usize) -> usize {
    clipped_power(spec.local_dim, radius * spec.boundary_size, spec.full_rank).0
}

/// `|ψ_{0,R}⟩` and `c_R`: the top `N^{R|∂A|}` Schmidt terms, renormalized.
///
/// With the SVD phases `⟨ψ|ψ_R⟩ = √c_R` is real and non-negative.
pub fn truncate<T: Scalar>(state: &[T], cut: &Cut, local_dim: usize, radius: usize) -> Result<(Vec<T>, f64)> {
    let dec = schmidt_decomposition(state, cut, local_dim)?;
    let k = truncation_rank(&dec.spectrum, radius);
    if k >= dec.spectrum.len() {
        return Ok((state.to_vec(), 1.0));
    }
    let c = dec.spectrum.head_sum(k);
    let mut out = dec.partial_state(k)?;
    let inv = 1.0 / c.sqrt();
    for x in &mut out {
        *x = x.scale(inv);
    }
    Ok((out, c))
}

/// `|⟨a|b⟩|²`, clamped into `[0, 1]`.
pub fn overlap_p<T: Scalar>(exact: &[T], approx: &[T]) -> Result<f64> {
    check_normalized(exact)?;
    check_normalized(approx)?;
    Ok(linalg::inner(exact, approx).norm_sqr().clamp(0.0, 1.0))
}

/// `f_A(R) = Σ_{α > N^{R|∂A|}} σ(α)` for `R = 0 ..= r_max`, with `f_A(0) := 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub local_dim: usize,
    pub boundary_size: usize,
    /// `f_A(R)` indexed by `R`.
    pub values: Vec<f64>,
    /// Whether `N^{R|∂A|}` was clipped at full rank.
    pub clipped: Vec<bool>,
}

impl DecayProfile {
    pub fn from_spectrum(spec: &SchmidtSpectrum, r_max: usize) -> Self {
        let mut values = vec![1.0];
        let mut clipped = vec![false];
        for r in 1..=r_max {
            let (k, clip) = clipped_power(spec.local_dim, r * spec.boundary_size, spec.full_rank);
            values.push(spec.tail_sum(k).max(0.0));
            clipped.push(clip);
        }
        Self { local_dim: spec.local_dim, boundary_size: spec.boundary_size, values, clipped }
    }

    /// `f_A(R)`; zero past the table.
    pub fn at(&self, r: usize) -> f64 {
        self.values.get(r).copied().unwrap_or(0.0)
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["R", "f_A"]);
        for (r, f) in self.values.iter().enumerate() {
            t.push(vec![r.to_string(), sig12(*f)]);
        }
        t
    }
}

/// Outcome of `Σ_{α ≤ cap} σ_s(α) ≥ P`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub rank_cap: usize,
    pub partial_sum: f64,
    pub probability: f64,
    /// `partial_sum − P`.
    pub margin: f64,
    pub holds: bool,
}

/// Slack on the tail-constraint comparison.
pub const TAIL_SLACK: f64 = 1e-10;

pub fn tail_constraint_check(spec: &SchmidtSpectrum, probability: f64, rank_cap: usize) -> TailCheck {
    let partial_sum = spec.head_sum(rank_cap);
    let margin = partial_sum - probability;
    TailCheck { rank_cap, partial_sum, probability, margin, holds: margin >= -TAIL_SLACK }
}

/// `min(N^{5R|∂A|}, full rank)` and whether it was clipped.
pub fn tail_rank_cap(spec: &SchmidtSpectrum, radius: usize) -> (usize, bool) {
    let (cap, clipped) = clipped_power(spec.local_dim, 5 * radius * spec.boundary_size, spec.full_rank);
    if clipped {
        log::debug!("rank cap N^(5*{radius}*{}) clipped at {}", spec.boundary_size, spec.full_rank);
    }
    (cap, clipped)
}

/// Schmidt ranks before and after a boundary unitary acts, against
/// `k · N^{4R|∂A|}` (clipped) and the `k · D_I²` count with `D_I = N^{|I_A(2R)|}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    pub radius: usize,
    pub input_rank: usize,
    pub output_rank: usize,
    pub bound: usize,
    pub bound_clipped: bool,
    pub inner_collar_bound: usize,
    pub holds: bool,
}

/// Applies `boundary` (local to `support`) to `state` and measures the Schmidt rank.
pub fn schmidt_rank_of_boundary_action<T: Scalar>(
    state: &[T],
    cut: &Cut,
    local_dim: usize,
    boundary: &Mat<T>,
    support: &Region,
    radius: usize,
) -> Result<RankCheck> {
    let collar = cut.boundary_collar(2 * radius);
    if !support.is_subset(&collar) {
        return Err(Error::structural(format!(
            "boundary unitary acts outside the collar of width {}",
            2 * radius
        )));
    }
    let before = schmidt(state, cut, local_dim)?;
    let acted = if support.is_full() {
        linalg::mat_vec(boundary, state)
    } else {
        let layout = SiteLayout::new(cut.lattice().n_sites(), local_dim, support.sites())?;
        let col = Mat::from_fn(state.len(), 1, |i, _| state[i]);
        layout.apply_left(boundary, &col)?.col_as_slice(0).to_vec()
    };
    let mut normalized = acted;
    linalg::normalize(&mut normalized);
    let after = schmidt(&normalized, cut, local_dim)?;
    let input_rank = before.numerical_rank();
    let output_rank = after.numerical_rank();
    let (growth, _) = clipped_power(local_dim, 4 * radius * cut.boundary_size(), before.full_rank);
    let raw = input_rank.saturating_mul(growth);
    let bound = raw.min(before.full_rank);
    let inner = cut.inner_collar(2 * radius).len();
    let (d_i, _) = clipped_power(local_dim, 2 * inner, before.full_rank);
    Ok(RankCheck {
        radius,
        input_rank,
        output_rank,
        bound,
        bound_clipped: raw >= before.full_rank,
        inner_collar_bound: input_rank.saturating_mul(d_i).min(before.full_rank),
        holds: output_rank <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{HamiltonianPath, PathConstants, PathFamily, Profile};
    use crate::lattice::Lattice;
    use crate::linalg::{c64, CMat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_cut(n: usize, a: std::ops::Range<usize>) -> Cut {
        let l = Lattice::chain(n).unwrap();
        Cut::new(l.region(a).unwrap()).unwrap()
    }

    fn tfim_ground(n: usize) -> Vec<f64> {
        let path = HamiltonianPath::new(
            Lattice::chain(n).unwrap(),
            2,
            PathFamily::Tfim { lambda: 0.5 },
            Profile::Linear,
            PathConstants::default(),
        )
        .unwrap();
        path.spectrum::<f64>(1.0).unwrap().ground_state()
    }

    #[test]
    fn product_and_singlet() {
        let cut = chain_cut(2, 0..1);
        let product = vec![0.0, 1.0, 0.0, 0.0];
        let s = schmidt(&product, &cut, 2).unwrap();
        assert!((s.coefficients[0] - 1.0).abs() < 1e-15);
        assert_eq!(entropy(&s), 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let singlet = vec![0.0, h, -h, 0.0];
        let s = schmidt(&singlet, &cut, 2).unwrap();
        assert!((s.coefficients[0] - 0.5).abs() < 1e-15 && (s.coefficients[1] - 0.5).abs() < 1e-15);
        assert!((entropy(&s) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_entropy() {
        for k in [1usize, 3, 7, 64] {
            assert!((shannon(&vec![1.0 / k as f64; k]) - (k as f64).ln()).abs() < 1e-13);
        }
    }

    #[test]
    fn unnormalized_state_rejected() {
        let cut = chain_cut(2, 0..1);
        assert!(matches!(schmidt(&[1.0, 1.0, 0.0, 0.0], &cut, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn tfim_spectrum_matches_reduced_density_oracle() {
        let psi = tfim_ground(8);
        let cut = chain_cut(8, 0..4);
        let spec = schmidt(&psi, &cut, 2).unwrap();
        // oracle: eigenvalues of ρ_A = M M^T built by explicit index arithmetic
        let m = Mat::from_fn(16, 16, |a, b| psi[a * 16 + b]);
        let rho = linalg::matmul_adj_rhs(m.as_ref(), m.as_ref());
        let mut ev = linalg::hermitian_eigenvalues(rho.as_ref()).unwrap();
        ev.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in spec.coefficients.iter().zip(&ev) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((spec.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(spec.coefficients.windows(2).all(|w| w[0] >= w[1]));
        assert!(spec.len() <= 16);
    }

    #[test]
    fn decomposition_reconstructs_state() {
        let psi = tfim_ground(8);
        let cut = chain_cut(8, 0..3);
        let dec = schmidt_decomposition(&psi, &cut, 2).unwrap();
        let back = dec.partial_state(usize::MAX).unwrap();
        let fidelity = linalg::inner(&psi, &back).norm_sqr();
        assert!(1.0 - fidelity < 1e-10);
    }

    #[test]
    fn truncation_overlap_equals_weight() {
        let psi = tfim_ground(8);
        let cut = chain_cut(8, 0..4);
        let (trunc, c1) = truncate(&psi, &cut, 2, 1).unwrap();
        let ov = linalg::inner(&psi, &trunc);
        assert!(ov.im.abs() < 1e-14 && ov.re > 0.0);
        assert!((ov.norm_sqr() - c1).abs() < 1e-10);
        let spec = schmidt(&psi, &cut, 2).unwrap();
        assert!((c1 - spec.head_sum(2)).abs() < 1e-12);
        let (same, c) = truncate(&psi, &cut, 2, 4).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(same, psi);
    }

    #[test]
    fn product_state_is_untouched_by_truncation() {
        let cut = chain_cut(4, 0..2);
        let mut psi = vec![0.0; 16];
        psi[5] = 1.0;
        for r in 0..3 {
            let (t, c) = truncate(&psi, &cut, 2, r).unwrap();
            assert!((c - 1.0).abs() < 1e-15);
            assert!(t.iter().zip(&psi).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn overlap_extremes() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        assert_eq!(overlap_p(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap_p(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn decay_profile_shape() {
        let psi = tfim_ground(10);
        let cut = chain_cut(10, 0..5);
        let spec = schmidt(&psi, &cut, 2).unwrap();
        let prof = DecayProfile::from_spectrum(&spec, 7);
        assert_eq!(prof.at(0), 1.0);
        assert!(prof.is_monotone());
        assert!(prof.values.iter().all(|f| (0.0..=1.0).contains(f)));
        assert_eq!(prof.at(5), 0.0);
        assert!(prof.clipped[6]);
        assert!((prof.at(1) - spec.tail_sum(2)).abs() < 1e-15);
    }

    #[test]
    fn tail_check_edges() {
        let psi = tfim_ground(8);
        let spec = schmidt(&psi, &chain_cut(8, 0..4), 2).unwrap();
        assert!(tail_constraint_check(&spec, 0.0, 1).holds);
        let full = tail_constraint_check(&spec, 1.0, spec.full_rank);
        assert!(full.holds && (full.partial_sum - 1.0).abs() < 1e-12);
        assert_eq!(tail_rank_cap(&spec, 1), (16, true));
    }

    #[test]
    fn clipped_powers() {
        assert_eq!(clipped_power(2, 3, 100), (8, false));
        assert_eq!(clipped_power(2, 7, 100), (100, true));
        assert_eq!(clipped_power(2, 400, 100), (100, true));
        assert_eq!(clipped_power(3, 0, 100), (1, false));
        assert_eq!(clipped_power(2, 5, 32), (32, false));
    }

    #[test]
    fn entropy_invariant_under_local_unitaries() {
        let psi: Vec<c64> = tfim_ground(8).into_iter().map(|x| c64::new(x, 0.0)).collect();
        let cut = chain_cut(8, 0..3);
        let s0 = entropy(&schmidt(&psi, &cut, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let ua = linalg::random_unitary(8, &mut rng);
            let ub = linalg::random_unitary(32, &mut rng);
            let full: CMat = linalg::kron(ua.as_ref(), ub.as_ref());
            let phi = linalg::mat_vec(&full, &psi);
            let s = entropy(&schmidt(&phi, &cut, 2).unwrap());
            assert!((s - s0).abs() < 1e-9);
        }
    }

    #[test]
    fn swap_across_cut_keeps_product_state() {
        let cut = chain_cut(4, 0..2);
        let l = *cut.lattice();
        // |+⟩|0⟩|1⟩|−⟩ style product with distinct factors
        let a = [0.6, 0.8];
        let b = [1.0, 0.0];
        let c = [0.0, 1.0];
        let d = [0.8, -0.6];
        let psi: Vec<f64> = (0..16)
            .map(|i| a[(i >> 3) & 1] * b[(i >> 2) & 1] * c[(i >> 1) & 1] * d[i & 1])
            .collect();
        let swap = Mat::from_fn(4, 4, |i, j| if i == ((j & 1) << 1 | j >> 1) { 1.0 } else { 0.0 });
        let support = l.region([1, 2]).unwrap();
        let check = schmidt_rank_of_boundary_action(&psi, &cut, 2, &swap, &support, 1).unwrap();
        assert_eq!((check.input_rank, check.output_rank), (1, 1));
        assert!(check.holds);
        let identity = linalg::identity::<f64>(4);
        let psi = tfim_ground(4);
        let check = schmidt_rank_of_boundary_action(&psi, &cut, 2, &identity, &support, 1).unwrap();
        assert_eq!(check.input_rank, check.output_rank);
    }

    #[test]
    fn boundary_outside_collar_is_structural() {
        let cut = chain_cut(8, 0..4);
        let far = cut.lattice().region([0]).unwrap();
        let psi = tfim_ground(8);
        let x = linalg::identity::<f64>(2);
        assert!(matches!(
            schmidt_rank_of_boundary_action(&psi, &cut, 2, &x, &far, 1),
            Err(Error::Structural(_))
        ));
    }
}
