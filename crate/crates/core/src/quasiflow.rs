//! Quasi-adiabatic generators: the filter function, exact and filtered
//! generators, per-site localization into ball pieces and region restrictions.
//!
//! Generators are kept in skew form `K = iD` (with `D` the Hermitian
//! generator of `∂_s U = i D U`). For real symmetric paths `K` is a real
//! antisymmetric matrix, so every flow stays in real arithmetic.
//!
//! In the eigenbasis of `H(s)` the filtered generator is
//! `K_nm = ŵ(E_n − E_m) · (∂_s H)_nm`, which for `|E_n − E_m| ≥ γ` reduces to
//! the first-order perturbation-theory transport `(∂_s H)_nm / (E_m − E_n)`.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{diagonalize, HamiltonianPath, SpectralData};
use crate::lattice::{Lattice, Region};
use crate::linalg::{self, c64, CMat, Scalar};
use crate::sites::SiteLayout;

// ---------------------------------------------------------------------------
// special functions and quadrature

/// Sine integral `Si(x) = ∫_0^x sin(t)/t dt`.
pub fn sine_integral(x: f64) -> f64 {
    let t = x.abs();
    let value = if t == 0.0 {
        0.0
    } else if t < 4.0 {
        // alternating series, converges fast for small arguments
        let mut sum = 0.0;
        let mut term = t;
        let mut k = 0;
        loop {
            let contrib = term / (2 * k + 1) as f64;
            sum += contrib;
            if contrib.abs() < 1e-17 * sum.abs() {
                break;
            }
            k += 1;
            term *= -t * t / ((2 * k) as f64 * (2 * k + 1) as f64);
        }
        sum
    } else {
        // continued fraction for E1(i t) (modified Lentz)
        let one = c64::new(1.0, 0.0);
        let mut b = c64::new(1.0, t);
        let mut c = c64::new(1.0 / 1e-300, 0.0);
        let mut d = one / b;
        let mut h = d;
        for i in 2..1000 {
            let a = -(((i - 1) * (i - 1)) as f64);
            b += c64::new(2.0, 0.0);
            d = one / (d * a + b);
            c = b + c64::new(a, 0.0) / c;
            let del = c * d;
            h *= del;
            if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
                break;
            }
        }
        h *= c64::new(t.cos(), -t.sin());
        std::f64::consts::FRAC_PI_2 + h.im
    };
    value.copysign(x)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..m {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = m as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[m - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

// ---------------------------------------------------------------------------
// filter

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum FilterVariant {
    Spectral,
    /// Gauss-Legendre quadrature of the time-domain kernel on `[-T, T]`.
    TimeDomain { cutoff: f64, nodes: usize },
}

#[derive(Clone, Debug)]
pub struct FilterFunction {
    gamma: f64,
    variant: FilterVariant,
    /// Nodes and weights on `[0, T]` for the time-domain variant.
    quadrature: Option<(Vec<f64>, Vec<f64>)>,
}

impl FilterFunction {
    pub fn spectral(gamma: f64) -> Result<Self> {
        Self::new(gamma, FilterVariant::Spectral)
    }

    /// Time-domain variant with the default window `T = 10/γ`.
    pub fn time_domain(gamma: f64, nodes: usize) -> Result<Self> {
        Self::new(gamma, FilterVariant::TimeDomain { cutoff: 10.0 / gamma, nodes })
    }

    pub fn new(gamma: f64, variant: FilterVariant) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::domain(format!("filter gap scale must be positive, got {gamma}")));
        }
        let quadrature = match variant {
            FilterVariant::Spectral => None,
            FilterVariant::TimeDomain { cutoff, nodes } => {
                if !(cutoff > 0.0) || nodes < 2 {
                    return Err(Error::domain("time-domain filter needs T > 0 and at least 2 nodes"));
                }
                let (x, w) = gauss_legendre(nodes);
                let half = 0.5 * cutoff;
                Some((x.iter().map(|x| half * (x + 1.0)).collect(), w.iter().map(|w| half * w).collect()))
            }
        };
        Ok(Self { gamma, variant, quadrature })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn variant(&self) -> &FilterVariant {
        &self.variant
    }

    /// `ŵ(ω)`: `−1/ω` beyond the gap, `−ω/γ²` inside.
    pub fn spectral_profile(&self, omega: f64) -> f64 {
        if omega.abs() >= self.gamma {
            -1.0 / omega
        } else {
            -omega / (self.gamma * self.gamma)
        }
    }

    /// Real odd kernel `w(t)` with `∫ w(t) sin(ωt) dt = −ŵ(ω)`.
    pub fn kernel(&self, t: f64) -> f64 {
        let g = self.gamma;
        let x = g * t;
        let smooth = if x.abs() < 1e-3 {
            x / 3.0 - x * x * x / 30.0
        } else {
            x.sin() / (x * x) - x.cos() / x
        };
        let sign = if t > 0.0 {
            1.0
        } else if t < 0.0 {
            -1.0
        } else {
            0.0
        };
        (smooth + sign * std::f64::consts::FRAC_PI_2 - sine_integral(x)) / std::f64::consts::PI
    }

    /// `ŵ_T(ω) = −∫_{−T}^{T} w(t) sin(ωt) dt` by quadrature; integrand is even.
    pub fn windowed_profile(&self, omega: f64) -> f64 {
        match &self.quadrature {
            None => self.spectral_profile(omega),
            Some((t, w)) => -2.0 * t.iter().zip(w).map(|(&t, &w)| w * self.kernel(t) * (omega * t).sin()).sum::<f64>(),
        }
    }

    /// Coefficient used for the generator: exact profile or its windowed
    /// quadrature, depending on the variant.
    pub fn coefficient(&self, omega: f64) -> f64 {
        self.windowed_profile(omega)
    }

    /// Symmetric quadrature nodes on `[−T, T]` (split at the jump of `w` at 0).
    pub fn symmetric_nodes(&self) -> Option<Vec<(f64, f64)>> {
        self.quadrature.as_ref().map(|(t, w)| {
            t.iter()
                .zip(w)
                .flat_map(|(&t, &w)| [(-t, w), (t, w)])
                .collect()
        })
    }

    fn coefficient_matrix(&self, energies: &[f64]) -> Mat<f64> {
        let n = energies.len();
        Mat::from_fn(n, n, |i, j| self.coefficient(energies[i] - energies[j]))
    }
}

// ---------------------------------------------------------------------------
// decay model

/// `f(r) = exp(−c0 r / ln²(r + e))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub c0: f64,
}

fn decay_abscissa(r: f64) -> f64 {
    r / (r + std::f64::consts::E).ln().powi(2)
}

impl DecayModel {
    pub fn value(&self, r: f64) -> f64 {
        (-self.c0 * decay_abscissa(r)).exp()
    }

    /// `F(s) = Σ_{r ≥ s} f(r)`, summed until the terms stop mattering.
    pub fn tail_sum(&self, s: usize) -> Result<f64> {
        if self.c0 <= 0.0 {
            return Err(Error::domain("tail sum diverges for c0 ≤ 0"));
        }
        let mut sum = 0.0;
        for r in s..s + 10_000_000 {
            let term = self.value(r as f64);
            sum += term;
            if term < 1e-17 * sum {
                return Ok(sum);
            }
        }
        Err(Error::domain(format!("tail sum for c0 = {} did not converge", self.c0)))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Largest `c0` with `‖D(u;r)‖ ≤ 2 J2 f(r − r0)` at every measured radius.
    pub c0: f64,
    /// Least-squares slope of `ln ‖D(u;r)‖` against `(r − r0)/ln²(r − r0 + e)`.
    pub slope: f64,
    pub intercept: f64,
    pub prefactor: f64,
}

impl DecayFit {
    pub fn model(&self) -> DecayModel {
        DecayModel { c0: self.c0 }
    }
}

/// Fit the decay model to measured piece norms `(r, ‖D(u;r)‖)`.
pub fn fit_decay(norms: &[(usize, f64)], r0: usize, j2: f64) -> Result<DecayFit> {
    let prefactor = 2.0 * j2;
    let usable: Vec<(f64, f64)> = norms
        .iter()
        .filter(|&&(r, m)| r >= r0 && m > 0.0)
        .map(|&(r, m)| (decay_abscissa((r - r0) as f64), m))
        .collect();
    if let Some(&(_, m)) = norms.iter().find(|p| p.0 == r0) {
        if m > prefactor * (1.0 + 1e-12) {
            return Err(Error::domain(format!("‖D(u;r0)‖ = {m:.6} exceeds 2 J2 = {prefactor:.6}")));
        }
    }
    let c0 = usable
        .iter()
        .filter(|p| p.0 > 0.0)
        .map(|&(x, m)| -(m / prefactor).ln() / x)
        .fold(f64::INFINITY, f64::min);
    if usable.len() < 2 || !c0.is_finite() {
        return Err(Error::domain("decay fit needs at least two nonzero radii"));
    }
    let n = usable.len() as f64;
    let (sx, sy) = usable.iter().fold((0.0, 0.0), |a, &(x, m)| (a.0 + x, a.1 + m.ln()));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = usable.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|&(x, m)| (x - mx) * (m.ln() - my)).sum();
    let slope = sxy / sxx;
    Ok(DecayFit { c0, slope, intercept: my - slope * mx, prefactor })
}

// ---------------------------------------------------------------------------
// generators

fn check_square<T: Scalar>(spec: &SpectralData<T>, dh: &Mat<T>) -> Result<()> {
    if dh.nrows() != spec.dim() || dh.ncols() != spec.dim() {
        return Err(Error::structural("derivative and spectrum dimensions differ"));
    }
    if spec.is_degenerate() {
        return Err(Error::GapClosed { s: None, gap: spec.gap() });
    }
    Ok(())
}

/// Skew form `K = iD` of the exact ground-state transport generator:
/// `K_n0 = (∂H)_n0 / (E_0 − E_n)`, `K_0n = −conj(K_n0)`, zero elsewhere.
pub fn exact_skew<T: Scalar>(spec: &SpectralData<T>, dh: &Mat<T>) -> Result<Mat<T>> {
    check_square(spec, dh)?;
    let v = spec.eigenvectors.as_ref();
    let v0 = spec.ground_state();
    let g = linalg::mat_vec(&linalg::adjoint(v), &linalg::mat_vec(dh, &v0));
    let e0 = spec.eigenvalues[0];
    let mut coeffs = vec![T::from_f64(0.0); spec.dim()];
    for n in 1..spec.dim() {
        coeffs[n] = g[n].scale(1.0 / (e0 - spec.eigenvalues[n]));
    }
    let x = linalg::mat_vec(&spec.eigenvectors, &coeffs);
    let n = spec.dim();
    Ok(Mat::from_fn(n, n, |i, j| x[i] * v0[j].conjugate() - v0[i] * x[j].conjugate()))
}

/// Hermitian exact generator `D` (with `∂_s U = i D U`).
pub fn exact_generator<T: Scalar>(spec: &SpectralData<T>, dh: &Mat<T>) -> Result<CMat> {
    Ok(skew_to_hermitian(&exact_skew(spec, dh)?))
}

/// `K = V (W ∘ V† ∂H V) V†`, `W_nm = ŵ(E_n − E_m)`.
pub fn filtered_skew<T: Scalar>(spec: &SpectralData<T>, dh: &Mat<T>, filter: &FilterFunction) -> Result<Mat<T>> {
    check_square(spec, dh)?;
    let w = filter.coefficient_matrix(&spec.eigenvalues);
    let v = spec.eigenvectors.as_ref();
    let rotated = linalg::matmul_adj_lhs(v, linalg::matmul(dh.as_ref(), v).as_ref());
    Ok(rotate_back(v, hadamard(&w, rotated)))
}

pub fn filtered_generator<T: Scalar>(spec: &SpectralData<T>, dh: &Mat<T>, filter: &FilterFunction) -> Result<CMat> {
    Ok(skew_to_hermitian(&filtered_skew(spec, dh, filter)?))
}

/// `D = Σ_k w_k w(t_k) τ_{t_k}(∂H)`: the literal time-integral definition
/// evaluated with Heisenberg-evolved operators. Cross-check only.
pub fn time_domain_generator(spec: &SpectralData<c64>, dh: &CMat, filter: &FilterFunction) -> Result<CMat> {
    let nodes = filter
        .symmetric_nodes()
        .ok_or_else(|| Error::domain("time-domain generator needs the time-domain filter variant"))?;
    let n = spec.dim();
    let mut acc = CMat::zeros(n, n);
    for (t, w) in nodes {
        let evolved = crate::hamiltonian::heisenberg(spec, dh, t);
        linalg::accumulate(&mut acc, c64::new(w * filter.kernel(t), 0.0), evolved.as_ref());
    }
    Ok(acc)
}

fn hadamard<T: Scalar>(w: &Mat<f64>, mut m: Mat<T>) -> Mat<T> {
    for j in 0..m.ncols() {
        for (i, x) in m.col_as_slice_mut(j).iter_mut().enumerate() {
            *x = x.scale(w[(i, j)]);
        }
    }
    m
}

fn rotate_back<T: Scalar>(v: faer::MatRef<'_, T>, eig: Mat<T>) -> Mat<T> {
    linalg::matmul_adj_rhs(linalg::matmul(v, eig.as_ref()).as_ref(), v)
}

/// `D = −i K`.
pub fn skew_to_hermitian<T: Scalar>(k: &Mat<T>) -> CMat {
    Mat::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)].to_c64() * c64::new(0.0, -1.0))
}

/// `K = i D`, narrowed to `T` (fails for real `T` if `iD` is not real).
pub fn hermitian_to_skew<T: Scalar>(d: &CMat) -> Result<Mat<T>> {
    let k = Mat::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)] * c64::new(0.0, 1.0));
    linalg::from_complex(k.as_ref())
}

// ---------------------------------------------------------------------------
// localization

/// `Π_B(X) = (Tr_{B^c} X / d_{B^c}) ⊗ 1`, returned as the local operator on `B`.
pub fn reduce_onto<T: Scalar>(x: &Mat<T>, lattice: &Lattice, local_dim: usize, region: &Region) -> Result<Mat<T>> {
    SiteLayout::new(lattice.n_sites(), local_dim, region.sites())?.reduce(x)
}

/// Conditional expectation onto `region`, embedded back into the full space.
pub fn project_onto<T: Scalar>(x: &Mat<T>, lattice: &Lattice, local_dim: usize, region: &Region) -> Result<Mat<T>> {
    if region.is_full() {
        return Ok(x.clone());
    }
    let layout = SiteLayout::new(lattice.n_sites(), local_dim, region.sites())?;
    layout.embed(&layout.reduce(x)?)
}

/// Positions of `inner`'s sites within `host`'s ordered site list.
fn positions_within(inner: &Region, host: &Region) -> Result<Vec<usize>> {
    inner
        .sites()
        .iter()
        .map(|s| {
            host.sites()
                .binary_search(s)
                .map_err(|_| Error::structural(format!("site {s} is not inside the host region")))
        })
        .collect()
}

/// Embed an operator local to `inner` into the local space of `host ⊇ inner`.
pub fn embed_within<T: Scalar>(op: &Mat<T>, inner: &Region, host: &Region, local_dim: usize) -> Result<Mat<T>> {
    SiteLayout::new(host.len(), local_dim, &positions_within(inner, host)?)?.embed(op)
}

fn embed_add_within<T: Scalar>(op: &Mat<T>, inner: &Region, host: &Region, local_dim: usize, acc: &mut Mat<T>) -> Result<()> {
    if inner == host {
        linalg::accumulate(acc, T::from_f64(1.0), op.as_ref());
        return Ok(());
    }
    SiteLayout::new(host.len(), local_dim, &positions_within(inner, host)?)?.embed_add(T::from_f64(1.0), op, acc)
}

/// One localized piece `D(u;r)` in skew form, local to `b_u(r)`.
#[derive(Clone, Debug)]
pub struct Piece<T: Scalar> {
    pub center: usize,
    pub radius: usize,
    pub support: Region,
    pub skew: Mat<T>,
}

impl<T: Scalar> Piece<T> {
    pub fn norm(&self) -> Result<f64> {
        linalg::op_norm(self.skew.as_ref())
    }

    /// The Hermitian piece as a [`crate::hamiltonian::LocalOperator`].
    pub fn to_local_operator(&self, local_dim: usize) -> Result<crate::hamiltonian::LocalOperator> {
        crate::hamiltonian::LocalOperator::new(self.support.clone(), local_dim, skew_to_hermitian(&self.skew))
    }
}

/// Per-site generators `K_u` (filtered images of `∂_s V_u`) at one `s`,
/// with their ball pieces and region restrictions.
///
/// `K_u = Y_u V†` is never formed unless asked for: a partial trace of it onto
/// a ball of dimension `d_B` costs `O(d_B N²)` from the half product
/// `Y_u = V (W ∘ V† ∂V_u V)`, against `O(N³)` for the full product.
#[derive(Clone, Debug)]
pub struct GeneratorDecomposition<T: Scalar> {
    pub s: f64,
    pub gap: f64,
    pub ground_state: Vec<T>,
    lattice: Lattice,
    local_dim: usize,
    r0: usize,
    /// `(u, Y_u)`.
    halves: Vec<(usize, Mat<T>)>,
    /// `V†`.
    right: Mat<T>,
    full: Mat<T>,
}

impl<T: Scalar> GeneratorDecomposition<T> {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn r0(&self) -> usize {
        self.r0
    }

    pub fn centers(&self) -> Vec<usize> {
        self.halves.iter().map(|(u, _)| *u).collect()
    }

    fn half(&self, u: usize) -> Result<&Mat<T>> {
        self.halves
            .iter()
            .find(|(c, _)| *c == u)
            .map(|(_, y)| y)
            .ok_or_else(|| Error::domain(format!("no generator term anchored at site {u}")))
    }

    /// `K_u` on the full space.
    pub fn site_generator(&self, u: usize) -> Result<Mat<T>> {
        Ok(linalg::matmul(self.half(u)?.as_ref(), self.right.as_ref()))
    }

    /// Skew form of the full generator.
    pub fn skew(&self) -> &Mat<T> {
        &self.full
    }

    /// Hermitian full generator `D`.
    pub fn full_generator(&self) -> CMat {
        skew_to_hermitian(&self.full)
    }

    /// `Tr_{B^c}(K_u) / d_{B^c}` as a local operator on `ball`.
    pub fn reduce_site(&self, u: usize, ball: &Region) -> Result<Mat<T>> {
        let y = self.half(u)?;
        if ball.is_full() {
            return self.site_generator(u);
        }
        let layout = SiteLayout::new(self.lattice.n_sites(), self.local_dim, ball.sites())?;
        let (offsets, bases) = (layout.offsets(), layout.bases());
        let (d, n) = (offsets.len(), y.ncols());
        let mut acc = Mat::<T>::zeros(d, d);
        for &base in bases {
            let rows = Mat::from_fn(d, n, |b, k| y[(base + offsets[b], k)]);
            let cols = Mat::from_fn(n, d, |k, b| self.right[(k, base + offsets[b])]);
            faer::linalg::matmul::matmul(acc.as_mut(), faer::Accum::Add, rows.as_ref(), cols.as_ref(), T::from_f64(1.0), faer::Par::Seq);
        }
        let inv = 1.0 / bases.len() as f64;
        Ok(linalg::scale(acc.as_ref(), T::from_f64(inv)))
    }

    /// Smallest radius at which `b_u(r)` is the whole lattice.
    pub fn covering_radius(&self, u: usize) -> Result<usize> {
        let far = (0..self.lattice.n_sites())
            .map(|v| self.lattice.distance(u, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(far.into_iter().max().unwrap_or(0).max(self.r0))
    }

    /// Pieces `D(u;r)` for `r = r0 ..= r_max` (clipped at the covering radius).
    pub fn pieces(&self, u: usize, r_max: usize) -> Result<Vec<Piece<T>>> {
        let top = r_max.min(self.covering_radius(u)?);
        let mut out = Vec::new();
        let mut previous: Option<(Region, Mat<T>)> = None;
        for r in self.r0..=top {
            let ball = self.lattice.ball(u, r)?;
            let reduced = self.reduce_site(u, &ball)?;
            let mut skew = reduced.clone();
            if let Some((prev_ball, prev)) = &previous {
                let lifted = embed_within(prev, prev_ball, &ball, self.local_dim)?;
                linalg::accumulate(&mut skew, T::from_f64(-1.0), lifted.as_ref());
            }
            out.push(Piece { center: u, radius: r, support: ball.clone(), skew });
            previous = Some((ball, reduced));
        }
        Ok(out)
    }

    /// `(r, ‖D(u;r)‖)` up to the covering radius.
    pub fn piece_norms(&self, u: usize) -> Result<Vec<(usize, f64)>> {
        self.pieces(u, usize::MAX)?
            .into_iter()
            .map(|p| Ok((p.radius, p.norm()?)))
            .collect()
    }

    /// `Σ_{u, r ≤ r_max} embed(D(u;r))` in skew form.
    pub fn reconstruct(&self, r_max: usize) -> Result<Mat<T>> {
        let n = self.full.nrows();
        let all = self.lattice.all();
        let mut acc = Mat::<T>::zeros(n, n);
        for u in self.centers() {
            for piece in self.pieces(u, r_max)? {
                embed_add_within(&piece.skew, &piece.support, &all, self.local_dim, &mut acc)?;
            }
        }
        Ok(acc)
    }

    /// Largest ball `b_u(r)`, `r ≥ r0`, inside `z`.
    fn largest_ball_within(&self, u: usize, z: &Region) -> Result<Option<Region>> {
        let mut best = None;
        let mut r = self.r0;
        loop {
            let ball = self.lattice.ball(u, r)?;
            if !ball.is_subset(z) {
                return Ok(best);
            }
            let full = ball.is_full();
            best = Some(ball);
            if full {
                return Ok(best);
            }
            r += 1;
        }
    }

    /// `D(Z)` in skew form as a local operator on `host ⊇ z`.
    ///
    /// The pieces telescope, so the sum over all balls inside `Z` collapses to
    /// `Σ_u Π_{b_u(r*)}(K_u)` with `r*` the largest admissible radius.
    pub fn region_generator_on(&self, z: &Region, host: &Region) -> Result<Mat<T>> {
        if !z.is_subset(host) {
            return Err(Error::structural("region must lie inside its host"));
        }
        if z.is_full() {
            return Ok(self.full.clone());
        }
        let d = self.local_dim.pow(host.len() as u32);
        let contributions: Vec<Option<(Region, Mat<T>)>> = self
            .halves
            .par_iter()
            .map(|(u, _)| {
                let Some(ball) = self.largest_ball_within(*u, z)? else { return Ok(None) };
                Ok(Some((ball.clone(), self.reduce_site(*u, &ball)?)))
            })
            .collect::<Result<_>>()?;
        let mut acc = Mat::<T>::zeros(d, d);
        for (ball, local) in contributions.into_iter().flatten() {
            embed_add_within(&local, &ball, host, self.local_dim, &mut acc)?;
        }
        Ok(acc)
    }

    /// `D(Z)` in skew form on the full space.
    pub fn region_generator(&self, z: &Region) -> Result<Mat<T>> {
        self.region_generator_on(z, &self.lattice.all())
    }

    /// Crossing part of `D(C)`: `D(C) − D(C ∩ A) − D(C ∩ A^c)`, local to `host ⊇ C`.
    pub fn crossing_generator_on(&self, collar: &Region, a: &Region, host: &Region) -> Result<Mat<T>> {
        let mut k = self.region_generator_on(collar, host)?;
        let inside = self.region_generator_on(&collar.intersection(a), host)?;
        let outside = self.region_generator_on(&collar.intersection(&a.complement()), host)?;
        linalg::accumulate(&mut k, T::from_f64(-1.0), inside.as_ref());
        linalg::accumulate(&mut k, T::from_f64(-1.0), outside.as_ref());
        Ok(k)
    }

    pub fn crossing_generator(&self, collar: &Region, a: &Region) -> Result<Mat<T>> {
        self.crossing_generator_on(collar, a, &self.lattice.all())
    }

    /// `ℱ(∂A) = D − D(A) − D(A^c)` in skew form.
    pub fn boundary_remainder(&self, a: &Region) -> Result<Mat<T>> {
        self.crossing_generator(&self.lattice.all(), a)
    }
}

/// Builds [`GeneratorDecomposition`] snapshots along a path.
#[derive(Clone, Debug)]
pub struct GeneratorEngine<'a> {
    path: &'a HamiltonianPath,
    filter: FilterFunction,
}

impl<'a> GeneratorEngine<'a> {
    pub fn new(path: &'a HamiltonianPath, filter: FilterFunction) -> Self {
        Self { path, filter }
    }

    pub fn path(&self) -> &HamiltonianPath {
        self.path
    }

    pub fn filter(&self) -> &FilterFunction {
        &self.filter
    }

    pub fn snapshot<T: Scalar>(&self, s: f64) -> Result<GeneratorDecomposition<T>> {
        let spec = self.path.spectrum::<T>(s)?;
        self.snapshot_from(s, &spec)
    }

    pub fn snapshot_from<T: Scalar>(&self, s: f64, spec: &SpectralData<T>) -> Result<GeneratorDecomposition<T>> {
        let w = self.filter.coefficient_matrix(&spec.eigenvalues);
        let v = spec.eigenvectors.as_ref();
        let terms = self.path.derivative_terms(s)?;
        let halves: Vec<(usize, Mat<T>)> = terms
            .par_iter()
            .map(|term| {
                let local = linalg::from_complex::<T>(term.op.matrix().as_ref())?;
                let dh_v = term.op.layout()?.apply_left(&local, &spec.eigenvectors)?;
                let rotated = linalg::hermitian_product(v, dh_v.as_ref());
                Ok((term.center, linalg::matmul(v, hadamard(&w, rotated).as_ref())))
            })
            .collect::<Result<_>>()?;
        let n = spec.dim();
        let mut sum = Mat::<T>::zeros(n, n);
        for (_, y) in &halves {
            linalg::accumulate(&mut sum, T::from_f64(1.0), y.as_ref());
        }
        let right = linalg::adjoint(v);
        let full = linalg::matmul(sum.as_ref(), right.as_ref());
        Ok(GeneratorDecomposition {
            s,
            gap: spec.gap(),
            ground_state: spec.ground_state(),
            lattice: *self.path.lattice(),
            local_dim: self.path.local_dim(),
            r0: self.path.r0(),
            halves,
            right,
            full,
        })
    }
}

/// Convenience: filtered generator of the whole path at `s` (Hermitian form).
pub fn path_generator(path: &HamiltonianPath, filter: &FilterFunction, s: f64) -> Result<CMat> {
    let spec = diagonalize(path.assemble::<c64>(s)?)?;
    filtered_generator(&spec, &path.derivative::<c64>(s)?, filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{PathConstants, PathFamily, Profile};
    use crate::linalg::{frobenius, op_norm, sub};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tfim(n: usize, lambda: f64) -> HamiltonianPath {
        HamiltonianPath::new(Lattice::chain(n).unwrap(), 2, PathFamily::Tfim { lambda }, Profile::Linear, PathConstants::default()).unwrap()
    }

    #[test]
    fn sine_integral_reference_values() {
        // reference values from mpmath.si
        let cases = [
            (0.5, 0.493_107_418_043_066_7),
            (1.0, 0.946_083_070_367_183),
            (3.9, 1.776_501_360_447_805_5),
            (4.1, 1.738_743_626_491_769),
            (10.0, 1.658_347_594_218_874),
            (50.0, 1.551_617_072_485_935_4),
        ];
        for (x, expected) in cases {
            assert!((sine_integral(x) - expected).abs() < 1e-13, "Si({x}) = {}", sine_integral(x));
            assert!((sine_integral(-x) + expected).abs() < 1e-13);
        }
        assert_eq!(sine_integral(0.0), 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        for deg in 0..14 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
            assert!((q - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn spectral_profile_invariants() {
        let f = FilterFunction::spectral(0.8).unwrap();
        for k in 0..400 {
            let w = -6.0 + 0.03 * k as f64;
            assert_eq!(f.spectral_profile(-w), -f.spectral_profile(w));
            assert!(f.spectral_profile(w).abs() <= 1.0 / 0.8 + 1e-15);
            if w.abs() >= 0.8 {
                assert!((f.spectral_profile(w) * w + 1.0).abs() < 1e-10);
            }
        }
        assert!(FilterFunction::spectral(0.0).is_err());
    }

    #[test]
    fn kernel_is_odd_and_its_sine_transform_converges_to_the_profile() {
        let f = FilterFunction::spectral(1.0).unwrap();
        for t in [0.0005, 0.3, 2.0, 17.0] {
            assert_eq!(f.kernel(-t), -f.kernel(t));
        }
        // the small-argument series and the closed form agree at the switch
        let (a, b) = (f.kernel(0.999e-3), f.kernel(1.001e-3));
        assert!((a - b).abs() < 1e-6);

        let mut previous = f64::INFINITY;
        for cutoff in [10.0, 40.0, 160.0] {
            let tf = FilterFunction::new(1.0, FilterVariant::TimeDomain { cutoff, nodes: (cutoff * 40.0) as usize }).unwrap();
            let err = [0.3, 0.9, 1.5, 3.0, 7.0]
                .iter()
                .map(|&w| (tf.windowed_profile(w) - f.spectral_profile(w)).abs())
                .fold(0.0, f64::max);
            assert!(err < previous, "error {err} did not shrink at T = {cutoff}");
            assert!(err < 0.6 / cutoff, "error {err} too large at T = {cutoff}");
            previous = err;
        }
    }

    #[test]
    fn decay_model_basics() {
        let m = DecayModel { c0: 1.5 };
        assert_eq!(m.value(0.0), 1.0);
        for r in 0..50 {
            assert!(m.value(r as f64 + 1.0) < m.value(r as f64));
        }
        let tail = m.tail_sum(0).unwrap();
        let direct: f64 = (0..200_000).map(|r| m.value(r as f64)).sum();
        assert!((tail - direct).abs() < 1e-10 * direct);
        assert!(DecayModel { c0: 0.0 }.tail_sum(0).is_err());
    }

    #[test]
    fn decay_fit_dominates_its_data() {
        let norms = vec![(1, 0.8), (2, 0.4), (3, 0.1), (4, 0.03)];
        let fit = fit_decay(&norms, 1, 0.5).unwrap();
        let model = fit.model();
        for &(r, m) in &norms {
            assert!(m <= fit.prefactor * model.value((r - 1) as f64) * (1.0 + 1e-12));
        }
        assert!(fit.c0 > 0.0 && fit.slope < 0.0);
        assert!(fit_decay(&[(1, 2.0), (2, 0.1)], 1, 0.5).is_err());
    }

    #[test]
    fn zero_derivative_gives_zero_generators() {
        let path = tfim(4, 0.5);
        let spec = path.spectrum::<f64>(0.5).unwrap();
        let zero = Mat::<f64>::zeros(16, 16);
        let f = FilterFunction::spectral(0.5).unwrap();
        assert_eq!(frobenius(exact_skew(&spec, &zero).unwrap().as_ref()), 0.0);
        assert_eq!(frobenius(filtered_skew(&spec, &zero, &f).unwrap().as_ref()), 0.0);
    }

    #[test]
    fn hamiltonian_as_its_own_derivative_gives_zero() {
        let path = tfim(4, 0.5);
        let h = path.assemble::<f64>(0.5).unwrap();
        let spec = diagonalize(h.clone()).unwrap();
        let f = FilterFunction::spectral(0.5).unwrap();
        assert!(frobenius(exact_skew(&spec, &h).unwrap().as_ref()) < 1e-12);
        assert!(frobenius(filtered_skew(&spec, &h, &f).unwrap().as_ref()) < 1e-12);
    }

    #[test]
    fn filtered_matches_exact_on_the_ground_column() {
        let path = tfim(6, 0.5);
        let spec = path.spectrum::<f64>(0.5).unwrap();
        let dh = path.derivative::<f64>(0.5).unwrap();
        let f = FilterFunction::spectral(0.9).unwrap();
        assert!(spec.gap() >= 0.9);
        let exact = exact_generator(&spec, &dh).unwrap();
        let filtered = filtered_generator(&spec, &dh, &f).unwrap();
        let psi: Vec<c64> = spec.ground_state().iter().map(|x| c64::new(*x, 0.0)).collect();
        let (a, b) = (linalg::mat_vec(&exact, &psi), linalg::mat_vec(&filtered, &psi));
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        assert!(linalg::hermiticity_defect(filtered.as_ref()) < 1e-10);
        assert!(linalg::hermiticity_defect(exact.as_ref()) < 1e-10);
    }

    #[test]
    fn literal_time_integral_matches_the_windowed_coefficients() {
        let path = tfim(4, 0.5);
        let spec = path.spectrum::<c64>(0.7).unwrap();
        let dh = path.derivative::<c64>(0.7).unwrap();
        let f = FilterFunction::time_domain(1.0, 400).unwrap();
        let literal = time_domain_generator(&spec, &dh, &f).unwrap();
        let coeff = filtered_generator(&spec, &dh, &f).unwrap();
        assert!(op_norm(sub(literal.as_ref(), coeff.as_ref()).as_ref()).unwrap() < 1e-10);
        let spectral = filtered_generator(&spec, &dh, &FilterFunction::spectral(1.0).unwrap()).unwrap();
        let rel = op_norm(sub(literal.as_ref(), spectral.as_ref()).as_ref()).unwrap() / op_norm(spectral.as_ref()).unwrap();
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn engine_generator_matches_the_direct_filtered_generator() {
        let path = tfim(6, 0.5);
        let f = FilterFunction::spectral(0.9).unwrap();
        let engine = GeneratorEngine::new(&path, f.clone());
        let snap = engine.snapshot::<f64>(0.4).unwrap();
        let direct = path_generator(&path, &f, 0.4).unwrap();
        assert!(op_norm(sub(snap.full_generator().as_ref(), direct.as_ref()).as_ref()).unwrap() < 1e-10);
        assert!(linalg::skew_defect(snap.skew().as_ref()) < 1e-10);
    }

    #[test]
    fn pieces_telescope_to_the_full_generator() {
        let path = tfim(6, 0.5);
        let snap = GeneratorEngine::new(&path, FilterFunction::spectral(0.9).unwrap()).snapshot::<f64>(0.8).unwrap();
        let rebuilt = snap.reconstruct(usize::MAX).unwrap();
        let norm = op_norm(snap.skew().as_ref()).unwrap();
        assert!(op_norm(sub(rebuilt.as_ref(), snap.skew().as_ref()).as_ref()).unwrap() <= 1e-8 * norm);
        for u in snap.centers() {
            for p in snap.pieces(u, usize::MAX).unwrap() {
                assert!(linalg::skew_defect(p.skew.as_ref()) < 1e-10);
                assert!(p.to_local_operator(2).unwrap().support().is_subset(&path.lattice().ball(u, p.radius).unwrap()));
            }
        }
    }

    #[test]
    fn decoupled_sites_have_no_pieces_beyond_r0() {
        let path = HamiltonianPath::new(
            Lattice::chain(5).unwrap(),
            2,
            PathFamily::FieldRamp { epsilon: 0.3 },
            Profile::Linear,
            PathConstants::default(),
        )
        .unwrap();
        // H(s) = −Σ X_u + s ε Σ Z_u has no couplings at all
        let snap = GeneratorEngine::new(&path, FilterFunction::spectral(1.0).unwrap()).snapshot::<f64>(0.5).unwrap();
        for u in snap.centers() {
            let norms = snap.piece_norms(u).unwrap();
            assert!(norms[0].1 > 1e-3);
            for &(_, m) in &norms[1..] {
                assert!(m < 1e-12);
            }
        }
    }

    #[test]
    fn region_generators() {
        let path = tfim(6, 0.5);
        let snap = GeneratorEngine::new(&path, FilterFunction::spectral(0.9).unwrap()).snapshot::<f64>(1.0).unwrap();
        let l = *path.lattice();
        let full = snap.region_generator(&l.all()).unwrap();
        assert!(frobenius(sub(full.as_ref(), snap.skew().as_ref()).as_ref()) < 1e-12);
        assert_eq!(frobenius(snap.region_generator(&l.empty()).unwrap().as_ref()), 0.0);

        let a = l.region(0..3).unwrap();
        let ka = snap.region_generator(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = SiteLayout::new(6, 2, a.complement().sites()).unwrap();
        for _ in 0..5 {
            let o = linalg::from_complex::<f64>(linalg::random_symmetric(8, &mut rng).as_ref()).unwrap();
            let comm = sub(layout.apply_right(&ka, &o).unwrap().as_ref(), layout.apply_left(&o, &ka).unwrap().as_ref());
            assert!(op_norm(comm.as_ref()).unwrap() < 1e-10);
        }
        // the local version on a host embeds to the same operator
        let host = l.region(0..4).unwrap();
        let local = snap.region_generator_on(&a, &host).unwrap();
        let lifted = SiteLayout::new(6, 2, host.sites()).unwrap().embed(&local).unwrap();
        assert!(frobenius(sub(lifted.as_ref(), ka.as_ref()).as_ref()) < 1e-12);
    }

    #[test]
    fn boundary_remainder_is_the_sum_of_straddling_pieces() {
        let path = tfim(6, 0.5);
        let snap = GeneratorEngine::new(&path, FilterFunction::spectral(0.9).unwrap()).snapshot::<f64>(1.0).unwrap();
        let l = *path.lattice();
        let a = l.region(0..3).unwrap();
        let remainder = snap.boundary_remainder(&a).unwrap();
        let mut straddling = Mat::<f64>::zeros(64, 64);
        for u in snap.centers() {
            for p in snap.pieces(u, usize::MAX).unwrap() {
                if !p.support.is_disjoint(&a) && !p.support.is_subset(&a) {
                    embed_add_within(&p.skew, &p.support, &l.all(), 2, &mut straddling).unwrap();
                }
            }
        }
        assert!(op_norm(sub(remainder.as_ref(), straddling.as_ref()).as_ref()).unwrap() < 1e-10);

    }

    #[test]
    fn crossing_generators_of_growing_collars_converge_to_the_remainder() {
        let path = tfim(8, 0.5);
        let snap = GeneratorEngine::new(&path, FilterFunction::spectral(0.9).unwrap()).snapshot::<f64>(1.0).unwrap();
        let a = path.lattice().region(0..4).unwrap();
        let remainder = snap.boundary_remainder(&a).unwrap();
        let cut = crate::lattice::Cut::new(a.clone()).unwrap();
        let mut previous = f64::INFINITY;
        for r in 1..=3 {
            let cross = snap.crossing_generator(&cut.boundary_collar(r), &a).unwrap();
            let gap = op_norm(sub(remainder.as_ref(), cross.as_ref()).as_ref()).unwrap();
            assert!(gap < previous || gap < 1e-12, "R={r}: {gap} vs {previous}");
            previous = gap;
        }
        assert!(previous < 1e-12);
    }

    #[test]
    fn complex_paths_use_the_complex_route() {
        let path = HamiltonianPath::new(
            Lattice::chain(4).unwrap(),
            2,
            PathFamily::RandomLocal { epsilon: 0.3, seed: 2 },
            Profile::Linear,
            PathConstants::default(),
        )
        .unwrap();
        let engine = GeneratorEngine::new(&path, FilterFunction::spectral(0.8).unwrap());
        assert!(engine.snapshot::<f64>(0.5).is_err());
        let snap = engine.snapshot::<c64>(0.5).unwrap();
        assert!(linalg::skew_defect(snap.skew().as_ref()) < 1e-10);
        let rebuilt = snap.reconstruct(usize::MAX).unwrap();
        assert!(op_norm(sub(rebuilt.as_ref(), snap.skew().as_ref()).as_ref()).unwrap() < 1e-10);
    }
}
