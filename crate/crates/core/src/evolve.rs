//! Unitary flows `∂_s U = i D_s U` and the boundary decomposition of the flow.
//!
//! Every integrator here uses exponential midpoint steps
//! `U ← exp(h K(s + h/2)) U` with `K = iD`, so a flow is unitary up to the
//! roundoff of the Taylor exponential.
//!
//! For a cut `A : A^c` and a collar width `R` the trajectory engine carries, on
//! one shared `s`-grid:
//!
//! * `U`        the full flow of `K`;
//! * `U_A`, `U_Ac` the flows of `K(A)` and `K(A^c)`, local to each side;
//! * `X_R`      the full flow of `K − K×(∂A(R))`, where `K×(C) = K(C) − K(C∩A) − K(C∩A^c)`;
//! * `U_b`, `Y_R` the flows of `K(∂A(2R))` and `K(∂A(2R)) − K×(∂A(R))`, local to `∂A(2R)`.
//!
//! `W(A) = U† X_R` solves the equation generated by the conjugated boundary
//! term `U† D×(∂A(R)) U`, and `W_b = U_b† Y_R` the one generated by
//! `U_b† D×(∂A(R)) U_b`. The boundary factor is `B = W_b†`.

use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianPath;
use crate::lattice::{Cut, Region};
use crate::linalg::{self, c64, CMat, Scalar};
use crate::quasiflow::{exact_skew, hermitian_to_skew, GeneratorDecomposition, GeneratorEngine};
use crate::sites::SiteLayout;

/// Relative Hermiticity (or skewness) slack allowed for a generator sample.
const GENERATOR_SLACK: f64 = 1e-10;

/// Default number of uniform steps on `[0, 1]`.
pub const DEFAULT_STEPS: usize = 200;

#[derive(Clone, Debug)]
pub struct FlowResult<T: Scalar> {
    pub unitary: Mat<T>,
    pub grid: Vec<f64>,
    /// `‖U†U − 1‖` after each step.
    pub defects: Vec<f64>,
    pub evaluations: usize,
}

impl<T: Scalar> FlowResult<T> {
    pub fn max_defect(&self) -> f64 {
        self.defects.iter().copied().fold(0.0, f64::max)
    }
}

fn check_skew<T: Scalar>(k: &Mat<T>, s: f64) -> Result<()> {
    let defect = linalg::skew_defect(k.as_ref());
    if defect > GENERATOR_SLACK * linalg::frobenius(k.as_ref()).max(1.0) {
        return Err(Error::structural(format!(
            "generator sample at s = {s} is not Hermitian (defect {defect:.3e})"
        )));
    }
    Ok(())
}

fn uniform_grid(s_end: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::domain("a flow needs at least one step"));
    }
    if !s_end.is_finite() {
        return Err(Error::domain("flow endpoint must be finite"));
    }
    Ok((0..=steps).map(|k| s_end * k as f64 / steps as f64).collect())
}

/// Flow of a skew generator `K(s)` from the identity.
pub fn integrate_skew_flow<T, G>(mut gen: G, dim: usize, s_end: f64, steps: usize) -> Result<FlowResult<T>>
where
    T: Scalar,
    G: FnMut(f64) -> Result<Mat<T>>,
{
    let grid = uniform_grid(s_end, steps)?;
    let h = s_end / steps as f64;
    let mut u = linalg::identity::<T>(dim);
    let mut defects = Vec::with_capacity(steps);
    for k in 0..steps {
        let mid = grid[k] + 0.5 * h;
        let gen_k = gen(mid)?;
        if gen_k.nrows() != dim || gen_k.ncols() != dim {
            return Err(Error::structural(format!(
                "generator at s = {mid} is {}x{}, expected {dim}x{dim}",
                gen_k.nrows(),
                gen_k.ncols()
            )));
        }
        check_skew(&gen_k, mid)?;
        u = linalg::exp_skew_apply(gen_k.as_ref(), h, u.as_ref());
        defects.push(linalg::unitarity_defect(u.as_ref())?);
    }
    Ok(FlowResult { unitary: u, grid, defects, evaluations: steps })
}

/// Flow of a Hermitian generator `D(s)`: `∂_s U = i D U`, `U_0 = 1`.
pub fn integrate_flow<G>(mut gen: G, dim: usize, s_end: f64, steps: usize) -> Result<FlowResult<c64>>
where
    G: FnMut(f64) -> Result<CMat>,
{
    integrate_skew_flow(
        |s| {
            let d = gen(s)?;
            let defect = linalg::hermiticity_defect(d.as_ref());
            if defect > GENERATOR_SLACK * linalg::frobenius(d.as_ref()).max(1.0) {
                return Err(Error::structural(format!(
                    "generator sample at s = {s} is not Hermitian (defect {defect:.3e})"
                )));
            }
            hermitian_to_skew::<c64>(&d)
        },
        dim,
        s_end,
        steps,
    )
}

/// Flow of the exact ground-state transport generator along `path`.
pub fn exact_flow<T: Scalar>(path: &HamiltonianPath, s_end: f64, steps: usize) -> Result<FlowResult<T>> {
    integrate_skew_flow(
        |s| {
            let spec = path.spectrum::<T>(s)?;
            exact_skew(&spec, &path.derivative::<T>(s)?)
        },
        path.dimension(),
        s_end,
        steps,
    )
}

/// Flow of the filtered (quasi-adiabatic) generator along the engine's path.
pub fn filtered_flow<T: Scalar>(engine: &GeneratorEngine<'_>, s_end: f64, steps: usize) -> Result<FlowResult<T>> {
    integrate_skew_flow(
        |s| Ok(engine.snapshot::<T>(s)?.skew().clone()),
        engine.path().dimension(),
        s_end,
        steps,
    )
}

/// `|⟨ψ_0(s) | U ψ_0(0)⟩|²`.
pub fn transport_fidelity<T: Scalar>(path: &HamiltonianPath, u: &Mat<T>, s: f64) -> Result<f64> {
    let start = path.spectrum::<T>(0.0)?.ground_state();
    let target = path.spectrum::<T>(s)?.ground_state();
    Ok(linalg::inner(&target, &linalg::mat_vec(u, &start)).norm_sqr())
}

/// `‖a − b‖` in operator norm.
pub fn endpoint_change<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<f64> {
    linalg::op_norm(linalg::sub(a.as_ref(), b.as_ref()).as_ref())
}

// ---------------------------------------------------------------------------
// decomposition

/// One decomposition triple at parameter `s` and collar width `R`.
#[derive(Clone, Debug)]
pub struct DecompositionReport<T: Scalar> {
    pub radius: usize,
    pub s: f64,
    /// `U_s(A)`, local to `A`.
    pub inner: Mat<T>,
    /// `U_s(A^c)`, local to `A^c`.
    pub outer: Mat<T>,
    /// `B = W_b†`, local to `collar`.
    pub boundary: Mat<T>,
    /// `∂A(2R)`.
    pub collar: Region,
    /// `∂A(2R) = Λ`: the decomposition is trivial and `W_b = W(A)`.
    pub collar_covers_lattice: bool,
    /// `‖U(A) ⊗ U(A^c) · B − U‖`.
    pub e_meas: f64,
    /// `‖V(A) − W(A)‖`.
    pub err_vw: f64,
    /// `‖W(A) − W_b‖`.
    pub err_wb: f64,
    /// Largest `‖X†X − 1‖` over every flow feeding this report.
    pub unitarity_defect: f64,
}

impl<T: Scalar> DecompositionReport<T> {
    /// `e_meas ≤ err_vw + err_wb + tol`.
    pub fn triangle_holds(&self, tol: f64) -> bool {
        self.e_meas <= self.err_vw + self.err_wb + tol
    }

    pub fn row(&self) -> ScanRow {
        ScanRow {
            radius: self.radius,
            s: self.s,
            e_meas: self.e_meas,
            err_vw: self.err_vw,
            err_wb: self.err_wb,
            unitarity_defect: self.unitarity_defect,
        }
    }

    /// `(U(A) ⊗ U(A^c)) · B · ψ`.
    pub fn apply(&self, cut: &Cut, local_dim: usize, psi: &[T]) -> Result<Vec<T>> {
        let n = cut.lattice().n_sites();
        let col = Mat::from_fn(psi.len(), 1, |i, _| psi[i]);
        let b = if self.collar_covers_lattice {
            linalg::matmul(self.boundary.as_ref(), col.as_ref())
        } else {
            SiteLayout::new(n, local_dim, self.collar.sites())?.apply_left(&self.boundary, &col)?
        };
        let out = SiteLayout::new(n, local_dim, cut.complement().sites())?.apply_left(&self.outer, &b)?;
        let both = SiteLayout::new(n, local_dim, cut.region().sites())?.apply_left(&self.inner, &out)?;
        Ok(both.col_as_slice(0).to_vec())
    }
}

/// The flows at one recorded grid point.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub s: f64,
    pub flow: Mat<T>,
    pub flow_defect: f64,
    pub reports: Vec<DecompositionReport<T>>,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Scalar> {
    pub cut: Cut,
    pub local_dim: usize,
    pub steps: usize,
    pub checkpoints: Vec<Checkpoint<T>>,
    /// Generator snapshots taken.
    pub evaluations: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn checkpoint(&self, s: f64) -> Option<&Checkpoint<T>> {
        self.checkpoints.iter().find(|c| (c.s - s).abs() < 1e-12)
    }

    pub fn rows(&self) -> Vec<ScanRow> {
        self.checkpoints
            .iter()
            .flat_map(|c| c.reports.iter().map(DecompositionReport::row))
            .collect()
    }

    pub fn max_unitarity_defect(&self) -> f64 {
        self.checkpoints
            .iter()
            .flat_map(|c| std::iter::once(c.flow_defect).chain(c.reports.iter().map(|r| r.unitarity_defect)))
            .fold(0.0, f64::max)
    }
}

struct CollarFlow<T: Scalar> {
    radius: usize,
    band: Region,
    collar: Region,
    covers: bool,
    x: Mat<T>,
    /// `(U_b, Y_R)` when the collar is a proper subset.
    local: Option<(Mat<T>, Mat<T>)>,
}

impl<T: Scalar> CollarFlow<T> {
    fn advance(&mut self, snap: &GeneratorDecomposition<T>, a: &Region, h: f64) -> Result<()> {
        let all = snap.lattice().all();
        let mut kx = snap.skew().clone();
        let cross = snap.crossing_generator_on(&self.band, a, &all)?;
        linalg::accumulate(&mut kx, T::from_f64(-1.0), cross.as_ref());
        self.x = linalg::exp_skew_apply(kx.as_ref(), h, self.x.as_ref());
        if let Some((ub, y)) = &mut self.local {
            let kb = snap.region_generator_on(&self.collar, &self.collar)?;
            let cross = snap.crossing_generator_on(&self.band, a, &self.collar)?;
            let ky = linalg::sub(kb.as_ref(), cross.as_ref());
            *ub = linalg::exp_skew_apply(kb.as_ref(), h, ub.as_ref());
            *y = linalg::exp_skew_apply(ky.as_ref(), h, y.as_ref());
        }
        Ok(())
    }
}

/// Runs the full flow and every decomposition flow over one uniform grid of
/// `steps` steps on `[0, 1]`, recording reports at each checkpoint.
///
/// Checkpoints must sit on the grid; the run stops at the last one.
pub fn run_trajectory<T: Scalar>(
    engine: &GeneratorEngine<'_>,
    cut: &Cut,
    radii: &[usize],
    checkpoints: &[f64],
    steps: usize,
) -> Result<Trajectory<T>> {
    let path = engine.path();
    if cut.lattice() != path.lattice() {
        return Err(Error::structural("cut and path live on different lattices"));
    }
    if radii.contains(&0) {
        return Err(Error::domain("collar widths must be positive"));
    }
    let marks = checkpoint_indices(checkpoints, steps)?;
    let last = marks.iter().copied().max().unwrap_or(0);
    let h = 1.0 / steps as f64;
    let n = path.lattice().n_sites();
    let d = path.local_dim();
    let a = cut.region().clone();
    let ac = cut.complement();

    let mut u = linalg::identity::<T>(path.dimension());
    let mut ua = linalg::identity::<T>(d.pow(a.len() as u32));
    let mut uac = linalg::identity::<T>(d.pow(ac.len() as u32));
    let mut collars = radii
        .iter()
        .map(|&r| {
            let collar = cut.boundary_collar(2 * r);
            let covers = collar.is_full();
            if covers {
                log::warn!("collar of width {} covers the lattice; boundary flow aliases the full flow", 2 * r);
            }
            let dim = d.pow(collar.len() as u32);
            Ok(CollarFlow {
                radius: r,
                band: cut.boundary_collar(r),
                collar,
                covers,
                x: linalg::identity(path.dimension()),
                local: (!covers).then(|| (linalg::identity(dim), linalg::identity(dim))),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut recorded = Vec::new();
    let mut evaluations = 0;
    for k in 0..=last {
        if marks.contains(&k) {
            let s = k as f64 * h;
            recorded.push(record(s, &u, &ua, &uac, &collars, cut, n, d)?);
        }
        if k == last {
            break;
        }
        let mid = (k as f64 + 0.5) * h;
        let snap = engine.snapshot::<T>(mid)?;
        evaluations += 1;
        check_skew(snap.skew(), mid)?;
        let ka = snap.region_generator_on(&a, &a)?;
        let kac = snap.region_generator_on(&ac, &ac)?;
        u = linalg::exp_skew_apply(snap.skew().as_ref(), h, u.as_ref());
        ua = linalg::exp_skew_apply(ka.as_ref(), h, ua.as_ref());
        uac = linalg::exp_skew_apply(kac.as_ref(), h, uac.as_ref());
        collars
            .par_iter_mut()
            .map(|c| c.advance(&snap, &a, h))
            .collect::<Result<Vec<_>>>()?;
        log::debug!("flow step {}/{} at s = {mid:.4}", k + 1, last);
    }
    recorded.sort_by(|x: &Checkpoint<T>, y| x.s.total_cmp(&y.s));
    Ok(Trajectory { cut: cut.clone(), local_dim: d, steps, checkpoints: recorded, evaluations })
}

fn checkpoint_indices(checkpoints: &[f64], steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::domain("a flow needs at least one step"));
    }
    checkpoints
        .iter()
        .map(|&s| {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::domain(format!("checkpoint s = {s} outside [0, 1]")));
            }
            let k = (s * steps as f64).round();
            if (k - s * steps as f64).abs() > 1e-9 {
                return Err(Error::Config(format!("checkpoint s = {s} is not on the {steps}-step grid")));
            }
            Ok(k as usize)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn record<T: Scalar>(
    s: f64,
    u: &Mat<T>,
    ua: &Mat<T>,
    uac: &Mat<T>,
    collars: &[CollarFlow<T>],
    cut: &Cut,
    n: usize,
    d: usize,
) -> Result<Checkpoint<T>> {
    let layout_a = SiteLayout::new(n, d, cut.region().sites())?;
    let layout_ac = SiteLayout::new(n, d, cut.complement().sites())?;
    let product = layout_a.apply_left(ua, &layout_ac.embed(uac)?)?;
    let flow_defect = linalg::unitarity_defect(u.as_ref())?;
    let side_defect = linalg::unitarity_defect(ua.as_ref())?.max(linalg::unitarity_defect(uac.as_ref())?);
    let reports = collars
        .par_iter()
        .map(|c| {
            let (boundary, wb_full, local_defect) = match &c.local {
                None => (linalg::matmul_adj_lhs(c.x.as_ref(), u.as_ref()), None, 0.0),
                Some((ub, y)) => {
                    let layout = SiteLayout::new(n, d, c.collar.sites())?;
                    let wb = linalg::matmul_adj_lhs(ub.as_ref(), y.as_ref());
                    let defect = linalg::unitarity_defect(ub.as_ref())?.max(linalg::unitarity_defect(y.as_ref())?);
                    (linalg::adjoint(wb.as_ref()), Some(layout.embed(&wb)?), defect)
                }
            };
            let b_full = match &c.local {
                None => boundary.clone(),
                Some(_) => SiteLayout::new(n, d, c.collar.sites())?.embed(&boundary)?,
            };
            let e_meas = endpoint_change(&linalg::matmul(product.as_ref(), b_full.as_ref()), u)?;
            let err_vw = endpoint_change(&product, &c.x)?;
            let err_wb = match &wb_full {
                None => 0.0,
                Some(wb) => endpoint_change(&c.x, &linalg::matmul(u.as_ref(), wb.as_ref()))?,
            };
            let defect = flow_defect
                .max(side_defect)
                .max(local_defect)
                .max(linalg::unitarity_defect(c.x.as_ref())?)
                .max(linalg::unitarity_defect(boundary.as_ref())?);
            Ok(DecompositionReport {
                radius: c.radius,
                s,
                inner: ua.clone(),
                outer: uac.clone(),
                boundary,
                collar: c.collar.clone(),
                collar_covers_lattice: c.covers,
                e_meas,
                err_vw,
                err_wb,
                unitarity_defect: defect,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { s, flow: u.clone(), flow_defect, reports })
}

/// Single-point decomposition at `(R, s)` on a `steps`-step grid over `[0, 1]`.
pub fn decompose_flow<T: Scalar>(
    engine: &GeneratorEngine<'_>,
    cut: &Cut,
    radius: usize,
    s: f64,
    steps: usize,
) -> Result<DecompositionReport<T>> {
    let mut traj = run_trajectory::<T>(engine, cut, &[radius], &[s], steps)?;
    traj.checkpoints
        .pop()
        .and_then(|mut c| c.reports.pop())
        .ok_or_else(|| Error::structural("trajectory produced no report"))
}

/// Largest endpoint change between two runs of the same setup (typically at
/// `steps` and `2·steps`), over the full flow, both side flows and every
/// boundary factor at every shared checkpoint.
pub fn max_endpoint_change<T: Scalar>(coarse: &Trajectory<T>, fine: &Trajectory<T>) -> Result<f64> {
    let mut worst = 0.0f64;
    for c in &coarse.checkpoints {
        let f = fine
            .checkpoint(c.s)
            .ok_or_else(|| Error::structural(format!("checkpoint s = {} missing from the finer run", c.s)))?;
        worst = worst.max(endpoint_change(&c.flow, &f.flow)?);
        for (x, y) in c.reports.iter().zip(&f.reports) {
            worst = worst
                .max(endpoint_change(&x.inner, &y.inner)?)
                .max(endpoint_change(&x.outer, &y.outer)?)
                .max(endpoint_change(&x.boundary, &y.boundary)?);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// support certification

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportCertificate {
    pub support: Vec<usize>,
    pub probes: usize,
    /// `max ‖[X, O]‖_F / ‖O‖` over the probes.
    pub worst: f64,
}

impl SupportCertificate {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

fn random_probe<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat<T> {
    Mat::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = if T::REAL { 0.0 } else { StandardNormal.sample(rng) };
        T::from_c64(c64::new(re, im)).expect("probe entry fits the scalar type")
    })
}

/// Random-commutator test that `x` (a full-space matrix) acts only on `support`.
///
/// Real probes suffice for real `x`: a real matrix commuting with every real
/// `O` commutes with every complex one.
pub fn certify_support<T: Scalar, R: Rng + ?Sized>(
    x: &Mat<T>,
    support: &Region,
    local_dim: usize,
    probes: usize,
    rng: &mut R,
) -> Result<SupportCertificate> {
    let outside = support.complement();
    if outside.is_empty() {
        return Ok(SupportCertificate { support: support.sites().to_vec(), probes: 0, worst: 0.0 });
    }
    let layout = SiteLayout::new(support.lattice().n_sites(), local_dim, outside.sites())?;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let o = random_probe::<T, R>(layout.support_dim(), rng);
        let norm = linalg::op_norm(o.as_ref())?;
        let left = layout.apply_left(&o, x)?;
        let right = layout.apply_right(x, &o)?;
        let commutator = linalg::frobenius(linalg::sub(left.as_ref(), right.as_ref()).as_ref());
        worst = worst.max(commutator / norm);
    }
    Ok(SupportCertificate { support: support.sites().to_vec(), probes, worst })
}

/// Certifies `U(A)`, `U(A^c)` and `B` of a report after embedding each into the full space.
pub fn certify_report<T: Scalar, R: Rng + ?Sized>(
    report: &DecompositionReport<T>,
    cut: &Cut,
    local_dim: usize,
    probes: usize,
    rng: &mut R,
) -> Result<Vec<SupportCertificate>> {
    let n = cut.lattice().n_sites();
    let a = cut.region().clone();
    let ac = cut.complement();
    let inner = SiteLayout::new(n, local_dim, a.sites())?.embed(&report.inner)?;
    let outer = SiteLayout::new(n, local_dim, ac.sites())?.embed(&report.outer)?;
    let boundary = if report.collar_covers_lattice {
        report.boundary.clone()
    } else {
        SiteLayout::new(n, local_dim, report.collar.sites())?.embed(&report.boundary)?
    };
    Ok(vec![
        certify_support(&inner, &a, local_dim, probes, rng)?,
        certify_support(&outer, &ac, local_dim, probes, rng)?,
        certify_support(&boundary, &report.collar, local_dim, probes, rng)?,
    ])
}

// ---------------------------------------------------------------------------
// error scans

/// One `(R, s)` row of the decomposition table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    #[serde(rename = "R")]
    pub radius: usize,
    pub s: f64,
    pub e_meas: f64,
    #[serde(rename = "err_VW")]
    pub err_vw: f64,
    #[serde(rename = "err_Wboundary")]
    pub err_wb: f64,
    pub unitarity_defect: f64,
}

/// Least-squares fit `ln e_meas ≈ intercept + slope · R`; descriptive only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanFit {
    pub slope: f64,
    pub intercept: f64,
    /// `exp(intercept) / |∂A|`, the prefactor in `e ≈ c |∂A| exp(slope R)`.
    pub prefactor: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorScan {
    pub s: f64,
    pub rows: Vec<ScanRow>,
    pub strictly_decreasing: bool,
    pub fit: Option<ScanFit>,
    pub note: Option<String>,
}

impl ErrorScan {
    /// Builds the scan from rows at one `s`, sorted by `R`.
    pub fn from_rows(s: f64, mut rows: Vec<ScanRow>, boundary_size: usize) -> Self {
        rows.sort_by_key(|r| r.radius);
        let strictly_decreasing = rows.windows(2).all(|w| w[1].e_meas < w[0].e_meas);
        let usable: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.e_meas > 1e-14)
            .map(|r| (r.radius as f64, r.e_meas.ln()))
            .collect();
        let (fit, note) = if usable.len() < 2 {
            (None, Some(format!("{} usable R value(s); no fit", usable.len())))
        } else {
            let (slope, intercept) = least_squares(&usable);
            let prefactor = intercept.exp() / boundary_size.max(1) as f64;
            (Some(ScanFit { slope, intercept, prefactor, points: usable.len() }), None)
        };
        Self { s, rows, strictly_decreasing, fit, note }
    }
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Decomposition errors over `radii` at a single `s`.
pub fn error_scan<T: Scalar>(
    engine: &GeneratorEngine<'_>,
    cut: &Cut,
    s: f64,
    radii: &[usize],
    steps: usize,
) -> Result<ErrorScan> {
    let traj = run_trajectory::<T>(engine, cut, radii, &[s], steps)?;
    Ok(ErrorScan::from_rows(s, traj.rows(), cut.boundary_size()))
}
