//! Gapped Hamiltonian paths `H(s) = H0 + Σ_u V_u(s)` built from local terms,
//! exact diagonalization, gap tracking and Heisenberg evolution.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Region};
use crate::linalg::{self, c64, CMat, Scalar};
use crate::sites::SiteLayout;

/// Largest Hilbert-space dimension accepted unless overridden.
pub const DEFAULT_DIMENSION_CAP: usize = 1 << 12;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LocalOperator {
    support: Region,
    local_dim: usize,
    matrix: CMat,
    hermitian: bool,
}

impl LocalOperator {
    pub fn new(support: Region, local_dim: usize, matrix: CMat) -> Result<Self> {
        let d = local_dim.pow(support.len() as u32);
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::structural(format!(
                "operator is {}x{} but its support of {} sites needs {d}x{d}",
                matrix.nrows(),
                matrix.ncols(),
                support.len()
            )));
        }
        Ok(Self { support, local_dim, matrix, hermitian: false })
    }

    /// Like [`LocalOperator::new`] but checks `‖M − M†‖ ≤ 1e-12`.
    pub fn hermitian(support: Region, local_dim: usize, matrix: CMat) -> Result<Self> {
        let mut op = Self::new(support, local_dim, matrix)?;
        let defect = linalg::op_norm(linalg::sub(op.matrix.as_ref(), linalg::adjoint(op.matrix.as_ref()).as_ref()).as_ref())?;
        if defect > HERMITIAN_TOL {
            return Err(Error::structural(format!("operator is not Hermitian (defect {defect:.3e})")));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn support(&self) -> &Region {
        &self.support
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_real(&self) -> bool {
        linalg::is_real(self.matrix.as_ref())
    }

    pub fn norm(&self) -> Result<f64> {
        linalg::op_norm(self.matrix.as_ref())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            matrix: linalg::scale(self.matrix.as_ref(), c64::new(alpha, 0.0)),
            ..self.clone()
        }
    }

    pub fn layout(&self) -> Result<SiteLayout> {
        SiteLayout::new(self.support.lattice().n_sites(), self.local_dim, self.support.sites())
    }

    pub fn embed<T: Scalar>(&self) -> Result<Mat<T>> {
        let local = linalg::from_complex::<T>(self.matrix.as_ref())?;
        self.layout()?.embed(&local)
    }
}

/// Tensor embedding with the identity on the complement of the support.
pub fn embed<T: Scalar>(op: &LocalOperator, lattice: &Lattice) -> Result<Mat<T>> {
    if op.support().lattice() != lattice {
        return Err(Error::structural("operator belongs to a different lattice"));
    }
    op.embed()
}

/// `2|+⟩⟨+| − 1`; the Pauli X for qubits.
pub fn field_operator(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| c64::new(2.0 / n as f64 - if i == j { 1.0 } else { 0.0 }, 0.0))
}

/// `diag(1, ..., -1)` spaced uniformly; the Pauli Z for qubits.
pub fn z_operator(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            c64::new(1.0 - 2.0 * i as f64 / (n - 1) as f64, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PathFamily {
    /// `V_u(s) = −g(s) λ Σ_{v fwd of u} Z_u Z_v`
    Tfim { lambda: f64 },
    /// `V_u(s) = g(s) ε Z_u`
    FieldRamp { epsilon: f64 },
    /// `V_u(s) = g(s) ε P_u`, `P_u` a seeded random two-site Hermitian of unit norm.
    RandomLocal { epsilon: f64, seed: u64 },
}

impl PathFamily {
    pub fn from_name(name: &str, lambda: Option<f64>, epsilon: Option<f64>, seed: Option<u64>) -> Result<Self> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("family `{name}` needs `{key}`")))
        };
        match name {
            "tfim" => Ok(Self::Tfim { lambda: need(lambda, "lambda")? }),
            "field-ramp" => Ok(Self::FieldRamp { epsilon: need(epsilon, "epsilon")? }),
            "random-local" => Ok(Self::RandomLocal {
                epsilon: need(epsilon, "epsilon")?,
                seed: seed.unwrap_or(0),
            }),
            other => Err(Error::structural(format!("unknown path family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Tfim { .. } => "tfim",
            Self::FieldRamp { .. } => "field-ramp",
            Self::RandomLocal { .. } => "random-local",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `g(s) = s`
    #[default]
    Linear,
    /// `g(s) = s²`
    Quadratic,
}

impl Profile {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(Self::Linear),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(Error::structural(format!("unknown profile `{other}`"))),
        }
    }

    pub fn value(self, s: f64) -> f64 {
        match self {
            Self::Linear => s,
            Self::Quadratic => s * s,
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Quadratic => 2.0 * s,
        }
    }
}

/// A local term anchored at site `center`; its support lies in `b_center(r0)`.
#[derive(Clone, Debug)]
pub struct Term {
    pub center: usize,
    pub op: LocalOperator,
}

#[derive(Clone, Debug)]
pub struct HamiltonianPath {
    lattice: Lattice,
    local_dim: usize,
    family: PathFamily,
    profile: Profile,
    static_terms: Vec<Term>,
    /// `P_u` with `V_u(s) = g(s) P_u`.
    perturbations: Vec<Term>,
    r0: usize,
    j1: f64,
    j2: f64,
    gap_floor: f64,
    dimension_cap: usize,
}

/// Optional overrides for [`HamiltonianPath::new`].
#[derive(Clone, Debug, Default)]
pub struct PathConstants {
    pub j1: Option<f64>,
    pub j2: Option<f64>,
    pub gap_floor: Option<f64>,
    pub dimension_cap: Option<usize>,
}

impl HamiltonianPath {
    pub fn new(
        lattice: Lattice,
        local_dim: usize,
        family: PathFamily,
        profile: Profile,
        constants: PathConstants,
    ) -> Result<Self> {
        if !(2..=3).contains(&local_dim) {
            return Err(Error::structural(format!("local dimension {local_dim} unsupported (2 or 3)")));
        }
        let cap = constants.dimension_cap.unwrap_or(DEFAULT_DIMENSION_CAP);
        let dim = (local_dim as u128).pow(lattice.n_sites() as u32);
        if dim > cap as u128 {
            return Err(Error::domain(format!("Hilbert dimension {dim} exceeds cap {cap}")));
        }
        let n = local_dim;
        let static_terms = (0..lattice.n_sites())
            .map(|u| {
                let op = LocalOperator::hermitian(lattice.region([u])?, n, linalg::scale(field_operator(n).as_ref(), c64::new(-1.0, 0.0)))?;
                Ok(Term { center: u, op })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut rng = match family {
            PathFamily::RandomLocal { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let z = z_operator(n);
        let mut perturbations = Vec::new();
        for u in 0..lattice.n_sites() {
            let fwd = lattice.forward_neighbors(u);
            let term = match family {
                PathFamily::Tfim { lambda } => {
                    if fwd.is_empty() {
                        continue;
                    }
                    let mut sites = vec![u];
                    sites.extend(&fwd);
                    let support = lattice.region(sites.iter().copied())?;
                    let layout = SiteLayout::new(support.len(), n, &(0..support.len()).collect::<Vec<_>>())?;
                    let mut m = CMat::zeros(layout.full_dim(), layout.full_dim());
                    for &v in &fwd {
                        let iu = support.sites().binary_search(&u).unwrap();
                        let iv = support.sites().binary_search(&v).unwrap();
                        let zz = SiteLayout::new(support.len(), n, &[iu, iv])?.embed(&linalg::kron(z.as_ref(), z.as_ref()))?;
                        linalg::accumulate(&mut m, c64::new(-lambda, 0.0), zz.as_ref());
                    }
                    LocalOperator::hermitian(support, n, m)?
                }
                PathFamily::FieldRamp { epsilon } => {
                    LocalOperator::hermitian(lattice.region([u])?, n, linalg::scale(z.as_ref(), c64::new(epsilon, 0.0)))?
                }
                PathFamily::RandomLocal { epsilon, .. } => {
                    let Some(&v) = fwd.first() else { continue };
                    let p = linalg::random_hermitian(n * n, rng.as_mut().unwrap());
                    LocalOperator::hermitian(lattice.region([u, v])?, n, linalg::scale(p.as_ref(), c64::new(epsilon, 0.0)))?
                }
            };
            perturbations.push(Term { center: u, op: term });
        }

        let mut path = Self {
            lattice,
            local_dim,
            family,
            profile,
            static_terms,
            perturbations,
            r0: 1,
            j1: 0.0,
            j2: 0.0,
            gap_floor: constants.gap_floor.unwrap_or(0.0),
            dimension_cap: cap,
        };
        let measured = path.measure_constants(21)?;
        path.j1 = constants.j1.unwrap_or(measured.j1);
        path.j2 = constants.j2.unwrap_or(measured.j2);
        Ok(path)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn family(&self) -> &PathFamily {
        &self.family
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn r0(&self) -> usize {
        self.r0
    }

    pub fn j1(&self) -> f64 {
        self.j1
    }

    pub fn j2(&self) -> f64 {
        self.j2
    }

    pub fn gap_floor(&self) -> f64 {
        self.gap_floor
    }

    pub fn dimension(&self) -> usize {
        self.local_dim.pow(self.lattice.n_sites() as u32)
    }

    pub fn dimension_cap(&self) -> usize {
        self.dimension_cap
    }

    pub fn static_terms(&self) -> &[Term] {
        &self.static_terms
    }

    pub fn perturbations(&self) -> &[Term] {
        &self.perturbations
    }

    /// True when every term has real matrix elements, so `f64` arithmetic is exact.
    pub fn is_real(&self) -> bool {
        self.static_terms.iter().chain(&self.perturbations).all(|t| t.op.is_real())
    }

    pub fn static_hamiltonian<T: Scalar>(&self) -> Result<Mat<T>> {
        let n = self.dimension();
        let mut h = Mat::<T>::zeros(n, n);
        for t in &self.static_terms {
            let local = linalg::from_complex::<T>(t.op.matrix().as_ref())?;
            t.op.layout()?.embed_add(T::from_f64(1.0), &local, &mut h)?;
        }
        Ok(h)
    }

    /// `Σ_u c·P_u` embedded into the full space.
    fn perturbation_sum<T: Scalar>(&self, c: f64) -> Result<Mat<T>> {
        let n = self.dimension();
        let mut h = Mat::<T>::zeros(n, n);
        if c != 0.0 {
            for t in &self.perturbations {
                let local = linalg::from_complex::<T>(t.op.matrix().as_ref())?;
                t.op.layout()?.embed_add(T::from_f64(c), &local, &mut h)?;
            }
        }
        Ok(h)
    }

    pub fn assemble<T: Scalar>(&self, s: f64) -> Result<Mat<T>> {
        check_parameter(s)?;
        let mut h = self.static_hamiltonian::<T>()?;
        let v = self.perturbation_sum::<T>(self.profile.value(s))?;
        linalg::accumulate(&mut h, T::from_f64(1.0), v.as_ref());
        Ok(h)
    }

    pub fn terms_at(&self, s: f64) -> Vec<Term> {
        let g = self.profile.value(s);
        self.perturbations
            .iter()
            .map(|t| Term { center: t.center, op: t.op.scaled(g) })
            .collect()
    }

    /// Analytic `∂_s V_u(s)` for every term.
    pub fn derivative_terms(&self, s: f64) -> Result<Vec<Term>> {
        check_parameter(s)?;
        let dg = self.profile.derivative(s);
        Ok(self
            .perturbations
            .iter()
            .map(|t| Term { center: t.center, op: t.op.scaled(dg) })
            .collect())
    }

    /// `Σ_u ∂_s V_u(s)` on the full space.
    pub fn derivative<T: Scalar>(&self, s: f64) -> Result<Mat<T>> {
        check_parameter(s)?;
        self.perturbation_sum(self.profile.derivative(s))
    }

    /// Central finite difference of [`HamiltonianPath::assemble`], one-sided
    /// at the ends of `[0, 1]`.
    pub fn derivative_fd<T: Scalar>(&self, s: f64, h: f64) -> Result<Mat<T>> {
        let (lo, hi) = ((s - h).max(0.0), (s + h).min(1.0));
        let diff = linalg::sub(self.assemble::<T>(hi)?.as_ref(), self.assemble::<T>(lo)?.as_ref());
        Ok(linalg::scale(diff.as_ref(), T::from_f64(1.0 / (hi - lo))))
    }

    fn measure_constants(&self, points: usize) -> Result<MeasuredConstants> {
        let mut j1 = 0.0f64;
        let mut j2 = 0.0f64;
        for t in &self.static_terms {
            j1 = j1.max(t.op.norm()?);
        }
        for t in &self.perturbations {
            let p = t.op.norm()?;
            for k in 0..points {
                let s = k as f64 / (points - 1) as f64;
                j1 = j1.max(p * self.profile.value(s).abs());
                j2 = j2.max(p * self.profile.derivative(s).abs());
            }
        }
        Ok(MeasuredConstants { j1, j2 })
    }

    /// Check the structural assumptions on an s-grid of `points` values.
    pub fn validate(&self, points: usize) -> Result<ValidationReport> {
        let points = points.max(2);
        let measured = self.measure_constants(points)?;
        let mut problems = Vec::new();
        let mut max_v0 = 0.0f64;
        for t in self.static_terms.iter().chain(&self.perturbations) {
            let ball = self.lattice.ball(t.center, self.r0)?;
            if !t.op.support().is_subset(&ball) {
                problems.push(format!("term at {} leaves b_u(r0)", t.center));
            }
        }
        for t in self.terms_at(0.0) {
            max_v0 = max_v0.max(t.op.norm()?);
        }
        if max_v0 > 1e-12 {
            problems.push(format!("V_u(0) has norm {max_v0:.3e}"));
        }
        let slack = 1e-12;
        if measured.j1 > self.j1 * (1.0 + slack) + slack {
            problems.push(format!("measured term norm {:.6} exceeds J1 = {}", measured.j1, self.j1));
        }
        if measured.j2 > self.j2 * (1.0 + slack) + slack {
            problems.push(format!("measured derivative norm {:.6} exceeds J2 = {}", measured.j2, self.j2));
        }
        Ok(ValidationReport {
            declared_j1: self.j1,
            declared_j2: self.j2,
            measured_j1: measured.j1,
            measured_j2: measured.j2,
            max_v_at_zero: max_v0,
            problems,
        })
    }

    /// Eigendecomposition at `s`; gap-closure errors carry `s`.
    pub fn spectrum<T: Scalar>(&self, s: f64) -> Result<SpectralData<T>> {
        diagonalize(self.assemble::<T>(s)?).map_err(|e| match e {
            Error::GapClosed { gap, .. } => Error::GapClosed { s: Some(s), gap },
            other => other,
        })
    }
}

struct MeasuredConstants {
    j1: f64,
    j2: f64,
}

fn check_parameter(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("path parameter {s} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub declared_j1: f64,
    pub declared_j2: f64,
    pub measured_j1: f64,
    pub measured_j2: f64,
    pub max_v_at_zero: f64,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SpectralData<T: Scalar> {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat<T>,
    /// Largest absolute eigenvalue.
    pub norm: f64,
}

impl<T: Scalar> SpectralData<T> {
    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn gap(&self) -> f64 {
        self.eigenvalues.get(1).map_or(f64::INFINITY, |e1| e1 - self.eigenvalues[0])
    }

    pub fn is_degenerate(&self) -> bool {
        self.gap() <= DEGENERACY_TOL * self.norm
    }

    pub fn ground_state(&self) -> Vec<T> {
        self.eigenvectors.col_as_slice(0).to_vec()
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max_k ‖H v_k − λ_k v_k‖` against the matrix that was diagonalized.
    pub fn residual(&self, h: &Mat<T>) -> f64 {
        let hv = linalg::matmul(h.as_ref(), self.eigenvectors.as_ref());
        (0..self.dim())
            .map(|k| {
                let col = hv.col_as_slice(k);
                let v = self.eigenvectors.col_as_slice(k);
                col.iter()
                    .zip(v)
                    .map(|(&a, &b)| (a - b.scale(self.eigenvalues[k])).abs_sq())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

const DEGENERACY_TOL: f64 = 1e-8;

pub fn diagonalize<T: Scalar>(h: Mat<T>) -> Result<SpectralData<T>> {
    let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(h.as_ref())?;
    let norm = eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let data = SpectralData { eigenvalues, eigenvectors, norm };
    if data.is_degenerate() {
        return Err(Error::GapClosed { s: None, gap: data.gap() });
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub s: f64,
    pub e0: f64,
    pub e1: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    pub points: Vec<GapPoint>,
    pub min_gap: f64,
    pub argmin_s: f64,
    pub floor: f64,
    pub above_floor: bool,
}

pub fn gap_along_path(path: &HamiltonianPath, s_grid: &[f64]) -> Result<GapScan> {
    if s_grid.is_empty() {
        return Err(Error::domain("empty s-grid"));
    }
    let mut points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let spec: SpectralData<c64> = if path.is_real() {
            let r = path.spectrum::<f64>(s)?;
            SpectralData { eigenvalues: r.eigenvalues, eigenvectors: Mat::zeros(0, 0), norm: r.norm }
        } else {
            path.spectrum::<c64>(s)?
        };
        points.push(GapPoint { s, e0: spec.eigenvalues[0], e1: spec.eigenvalues[1], gap: spec.gap() });
    }
    let (argmin_s, min_gap) = points
        .iter()
        .map(|p| (p.s, p.gap))
        .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    Ok(GapScan { points, min_gap, argmin_s, floor: path.gap_floor(), above_floor: min_gap >= path.gap_floor() })
}

/// `τ_t(O) = e^{iHt} O e^{−iHt}` through the eigenbasis.
pub fn heisenberg(spec: &SpectralData<c64>, o: &CMat, t: f64) -> CMat {
    let v = spec.eigenvectors.as_ref();
    let o_eig = linalg::matmul_adj_lhs(v, linalg::matmul(o.as_ref(), v).as_ref());
    let n = spec.dim();
    let e = &spec.eigenvalues;
    let rotated = Mat::from_fn(n, n, |i, j| o_eig[(i, j)] * c64::from_polar(1.0, t * (e[i] - e[j])));
    linalg::matmul_adj_rhs(linalg::matmul(v, rotated.as_ref()).as_ref(), v)
}
