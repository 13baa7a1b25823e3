//! Experiment driver: TOML configuration, staged pipeline, cached artifacts
//! and the run record.
//!
//! Stages run in a fixed order and hand data downstream through JSON
//! envelopes stamped with the config hash:
//!
//! ```text
//! gap-scan -> flow -> decompose-scan -> entropy-report -> bound-report
//! ```
//!
//! The flow stage integrates every flow jointly (full, both sides, and one
//! interaction-picture flow per collar width) and keeps only what later stages
//! need: scalar errors, support certificates, Schmidt ranks, overlaps and the
//! transported ground state. Unitaries are never written to disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::entangle::{
    entropy, overlap_p, schmidt, schmidt_rank_of_boundary_action, tail_constraint_check, tail_rank_cap, truncate,
    DecayProfile, RankCheck, TailCheck,
};
use crate::entbound::{theorem_bound, BoundReport};
use crate::error::{Error, Result};
use crate::evolve::{certify_support, run_trajectory, transport_fidelity, ErrorScan, ScanRow, SupportCertificate};
use crate::hamiltonian::{gap_along_path, GapScan, HamiltonianPath, PathConstants, PathFamily, Profile};
use crate::lattice::{Cut, Lattice};
use crate::linalg::{self, c64, Scalar};
use crate::quasiflow::{FilterFunction, FilterVariant, GeneratorEngine};
use crate::sites::SiteLayout;
use crate::table::{sig12, Table};

// ---------------------------------------------------------------------------
// configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub lattice: LatticeConfig,
    pub cut: CutConfig,
    pub flow: FlowConfig,
    pub filter: FilterConfig,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `tfim`, `field-ramp` or `random-local`.
    pub family: String,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default = "default_local_dim")]
    pub local_dim: usize,
    pub gap_floor: Option<f64>,
    pub dimension_cap: Option<usize>,
    pub j1: Option<f64>,
    pub j2: Option<f64>,
}

fn default_profile() -> String {
    "linear".into()
}

fn default_local_dim() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// `[n]` for a chain, `[rows, cols]` for a grid.
    pub extents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutConfig {
    /// Sites of `A`.
    pub sites: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub s_grid: Vec<f64>,
    pub radii: Vec<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    crate::evolve::DEFAULT_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub gamma: f64,
    /// `spectral` or `time-domain`.
    #[serde(default = "default_variant")]
    pub variant: String,
    pub cutoff: Option<f64>,
    pub nodes: Option<usize>,
}

fn default_variant() -> String {
    "spectral".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Random probes per support certificate.
    pub probes: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { probes: 20, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub unitarity: f64,
    pub support: f64,
    pub triangle: f64,
    pub initial_error: f64,
    pub transport: f64,
    pub overlap: f64,
    pub tail: f64,
    pub dominance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            unitarity: 1e-8,
            support: 1e-8,
            triangle: 1e-10,
            initial_error: 1e-8,
            transport: 1e-6,
            overlap: 1e-9,
            tail: 1e-10,
            dominance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let value = serde_json::to_value(&c).expect("config serializes");
        let digest = Sha256::digest(canonical_json(&value).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::from_extents(&self.lattice.extents).map_err(|e| Error::Config(format!("lattice: {e}")))
    }

    pub fn cut(&self, lattice: &Lattice) -> Result<Cut> {
        let region = lattice.region(self.cut.sites.iter().copied()).map_err(|e| Error::Config(format!("cut: {e}")))?;
        Cut::new(region).map_err(|e| Error::Config(format!("cut: {e}")))
    }

    pub fn filter(&self) -> Result<FilterFunction> {
        let f = &self.filter;
        let variant = match f.variant.as_str() {
            "spectral" => FilterVariant::Spectral,
            "time-domain" => FilterVariant::TimeDomain {
                cutoff: f.cutoff.unwrap_or(10.0 / f.gamma),
                nodes: f.nodes.unwrap_or(64),
            },
            other => return Err(Error::Config(format!("unknown filter variant `{other}`"))),
        };
        FilterFunction::new(f.gamma, variant).map_err(|e| Error::Config(format!("filter: {e}")))
    }

    /// Grid, geometry and cap checks that need no diagonalization.
    pub fn validate(&self) -> Result<()> {
        let lattice = self.lattice()?;
        self.cut(&lattice)?;
        let m = &self.model;
        PathFamily::from_name(&m.family, m.lambda, m.epsilon, m.seed)?;
        Profile::from_name(&m.profile).map_err(|e| Error::Config(e.to_string()))?;
        let cap = m.dimension_cap.unwrap_or(crate::hamiltonian::DEFAULT_DIMENSION_CAP);
        let dim = (m.local_dim as u128).checked_pow(lattice.n_sites() as u32).unwrap_or(u128::MAX);
        if dim > cap as u128 {
            return Err(Error::Config(format!("Hilbert dimension {dim} exceeds the cap {cap}")));
        }
        let fl = &self.flow;
        if fl.steps == 0 {
            return Err(Error::Config("flow.steps must be positive".into()));
        }
        if fl.s_grid.is_empty() {
            return Err(Error::Config("flow.s_grid is empty".into()));
        }
        for &s in &fl.s_grid {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("s = {s} outside [0, 1]")));
            }
            let k = s * fl.steps as f64;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::Config(format!("s = {s} is not on the {}-step grid", fl.steps)));
            }
        }
        if fl.s_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("flow.s_grid must be strictly increasing".into()));
        }
        if fl.radii.contains(&0) || fl.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("flow.radii must be positive and strictly increasing".into()));
        }
        if fl.radii.is_empty() {
            log::warn!("empty R-list: no decomposition, overlap or bound will be computed");
        }
        self.filter()?;
        if self.checks.probes == 0 {
            return Err(Error::Config("checks.probes must be positive".into()));
        }
        Ok(())
    }

    /// Validated configuration with the path, cut and filter built.
    pub fn setup(&self) -> Result<Setup> {
        self.validate()?;
        let lattice = self.lattice()?;
        let m = &self.model;
        let path = HamiltonianPath::new(
            lattice,
            m.local_dim,
            PathFamily::from_name(&m.family, m.lambda, m.epsilon, m.seed)?,
            Profile::from_name(&m.profile)?,
            PathConstants { j1: m.j1, j2: m.j2, gap_floor: m.gap_floor, dimension_cap: m.dimension_cap },
        )?;
        Ok(Setup { cut: self.cut(&lattice)?, filter: self.filter()?, hash: self.hash(), path, config: self.clone() })
    }
}

/// Sorted-key JSON with no whitespace.
fn canonical_json(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<&String, &serde_json::Value> = map.iter().collect();
            let body: Vec<String> = sorted
                .into_iter()
                .map(|(k, v)| format!("{}:{}", serde_json::Value::String(k.clone()), canonical_json(v)))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        serde_json::Value::Array(items) => {
            format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(","))
        }
        other => other.to_string(),
    }
}

pub struct Setup {
    pub config: ExperimentConfig,
    pub path: HamiltonianPath,
    pub cut: Cut,
    pub filter: FilterFunction,
    pub hash: String,
}

// ---------------------------------------------------------------------------
// stages and envelopes

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ValidateConfig,
    GapScan,
    Flow,
    DecomposeScan,
    EntropyReport,
    BoundReport,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::ValidateConfig,
        Stage::GapScan,
        Stage::Flow,
        Stage::DecomposeScan,
        Stage::EntropyReport,
        Stage::BoundReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::ValidateConfig => "validate-config",
            Stage::GapScan => "gap-scan",
            Stage::Flow => "flow",
            Stage::DecomposeScan => "decompose-scan",
            Stage::EntropyReport => "entropy-report",
            Stage::BoundReport => "bound-report",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown stage `{name}`")))
    }

    /// The stage's JSON envelope, if it writes one.
    pub fn envelope(self) -> Option<&'static str> {
        match self {
            Stage::ValidateConfig => None,
            Stage::GapScan => Some("gap_scan.json"),
            Stage::Flow => Some("trajectory.json"),
            Stage::DecomposeScan => Some("decompose.json"),
            Stage::EntropyReport => Some("entropy.json"),
            Stage::BoundReport => Some("bound.json"),
        }
    }

    pub fn tables(self) -> &'static [&'static str] {
        match self {
            Stage::ValidateConfig => &[],
            Stage::GapScan => &["gap_scan.csv"],
            Stage::Flow => &["flow.csv"],
            Stage::DecomposeScan => &["decomposition.csv", "support.csv", "rank.csv", "overlap.csv"],
            Stage::EntropyReport => &["entropy.csv", "spectra.csv", "profile.csv", "tail.csv", "overlap_check.csv"],
            Stage::BoundReport => &["bound.csv"],
        }
    }

    /// Stages whose envelopes this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::ValidateConfig | Stage::GapScan => &[],
            Stage::Flow => &[Stage::GapScan],
            Stage::DecomposeScan => &[Stage::Flow],
            Stage::EntropyReport => &[Stage::Flow, Stage::DecomposeScan],
            Stage::BoundReport => &[Stage::DecomposeScan, Stage::EntropyReport],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope<D> {
    pub stage: Stage,
    pub config_hash: String,
    pub assertions: Vec<Assertion>,
    pub data: D,
}

fn write_envelope<D: Serialize>(out: &Path, stage: Stage, hash: &str, assertions: &[Assertion], data: &D) -> Result<()> {
    let name = stage.envelope().expect("stage writes an envelope");
    let env = Envelope { stage, config_hash: hash.to_string(), assertions: assertions.to_vec(), data };
    fs::write(out.join(name), serde_json::to_string_pretty(&env)?)?;
    Ok(())
}

/// Reads an upstream envelope, failing on absence or a hash mismatch.
pub fn load_envelope<D: DeserializeOwned>(out: &Path, stage: Stage, hash: &str) -> Result<Envelope<D>> {
    let name = stage.envelope().expect("stage writes an envelope");
    let path = out.join(name);
    if !path.exists() {
        return Err(Error::Dependency { stage: stage.name().into(), path: path.display().to_string() });
    }
    let env: Envelope<D> = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if env.config_hash != hash {
        return Err(Error::StaleCache {
            path: path.display().to_string(),
            found: env.config_hash,
            expected: hash.to_string(),
        });
    }
    Ok(env)
}

// ---------------------------------------------------------------------------
// stage payloads

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationData {
    pub config_hash: String,
    pub dimension: usize,
    pub boundary_size: usize,
    pub j1: f64,
    pub j2: f64,
    pub problems: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowData {
    pub steps: usize,
    pub generator_evaluations: usize,
    pub points: Vec<FlowPoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowPoint {
    pub s: f64,
    /// `‖U†U − 1‖` of the full flow.
    pub unitarity_defect: f64,
    /// `|⟨ψ₀(s) | U ψ₀⟩|²` against the re-diagonalized ground state.
    pub transport_fidelity: f64,
    /// `U ψ₀` as `(re, im)` pairs.
    pub transported: Vec<(f64, f64)>,
    pub inner_certificate: SupportCertificate,
    pub outer_certificate: SupportCertificate,
    pub reports: Vec<PointReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointReport {
    pub row: ScanRow,
    pub collar: Vec<usize>,
    pub collar_covers_lattice: bool,
    /// `c_R`, the weight kept by the rank-`N^{R|∂A|}` truncation of `ψ₀`.
    pub truncation_weight: f64,
    /// `P(R) = |⟨U ψ₀ | U(A) ⊗ U(A^c) · B ψ_{0,R}⟩|²`.
    pub overlap: f64,
    pub rank: RankCheck,
    pub boundary_certificate: SupportCertificate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecomposeData {
    pub boundary_size: usize,
    pub scans: Vec<ErrorScan>,
    /// `(s, R, c_R, P)`.
    pub overlaps: Vec<(f64, usize, f64, f64)>,
    pub aliased_radii: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyData {
    pub full_rank: usize,
    pub profile: DecayProfile,
    pub points: Vec<EntropyPoint>,
    pub tails: Vec<TailRow>,
    pub overlap_checks: Vec<OverlapRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub s: f64,
    /// `S(ρ_s(A))` of the re-diagonalized ground state.
    pub entropy: f64,
    /// Same for the transported state `U ψ₀`.
    pub transported_entropy: f64,
    pub schmidt_rank: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailRow {
    pub s: f64,
    #[serde(rename = "R")]
    pub radius: usize,
    pub clipped: bool,
    pub check: TailCheck,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapRow {
    pub s: f64,
    #[serde(rename = "R")]
    pub radius: usize,
    pub overlap: f64,
    pub f_a: f64,
    pub e_meas: f64,
    /// `1 − (f_A(R) + 2 e_meas(R))`.
    pub lower: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundData {
    pub points: Vec<BoundPoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundPoint {
    pub s: f64,
    pub report: Option<BoundReport>,
    /// No tabulated `R` met the 1/2 threshold.
    pub vacuous: bool,
    pub error: Option<String>,
}

// ---------------------------------------------------------------------------
// stage drivers

/// Runs one stage against the artifacts in `out`, returning its assertions.
pub fn run_stage(stage: Stage, setup: &Setup, out: &Path) -> Result<Vec<Assertion>> {
    fs::create_dir_all(out)?;
    match stage {
        Stage::ValidateConfig => validate_stage(setup).map(|(a, _)| a),
        Stage::GapScan => gap_stage(setup, out),
        Stage::Flow => {
            if setup.path.is_real() {
                flow_stage::<f64>(setup, out)
            } else {
                flow_stage::<c64>(setup, out)
            }
        }
        Stage::DecomposeScan => decompose_stage(setup, out),
        Stage::EntropyReport => entropy_stage(setup, out),
        Stage::BoundReport => bound_stage(setup, out),
    }
}

pub fn validate_stage(setup: &Setup) -> Result<(Vec<Assertion>, ValidationData)> {
    let report = setup.path.validate(21)?;
    let data = ValidationData {
        config_hash: setup.hash.clone(),
        dimension: setup.path.dimension(),
        boundary_size: setup.cut.boundary_size(),
        j1: report.declared_j1,
        j2: report.declared_j2,
        problems: report.problems.clone(),
    };
    let a = Assertion::new("path_structure", report.ok(), report.problems.join("; "));
    Ok((vec![a], data))
}

fn gap_stage(setup: &Setup, out: &Path) -> Result<Vec<Assertion>> {
    let scan = gap_along_path(&setup.path, &setup.config.flow.s_grid)?;
    let mut t = Table::new(&["s", "e0", "e1", "gap"]);
    for p in &scan.points {
        t.push(vec![sig12(p.s), sig12(p.e0), sig12(p.e1), sig12(p.gap)]);
    }
    t.write(&out.join("gap_scan.csv"))?;
    let a = vec![Assertion::new(
        "gap_open",
        scan.above_floor,
        format!("min gap {:.6e} at s = {} (floor {})", scan.min_gap, scan.argmin_s, scan.floor),
    )];
    write_envelope(out, Stage::GapScan, &setup.hash, &a, &scan)?;
    Ok(a)
}

fn pairs<T: Scalar>(v: &[T]) -> Vec<(f64, f64)> {
    v.iter().map(|x| (x.re(), x.im())).collect()
}

fn unpair(v: &[(f64, f64)]) -> Vec<c64> {
    v.iter().map(|&(re, im)| c64::new(re, im)).collect()
}

fn certificate_seed(base: u64, point: usize, slot: usize) -> u64 {
    base ^ ((point as u64) << 32) ^ (slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn flow_stage<T: Scalar>(setup: &Setup, out: &Path) -> Result<Vec<Assertion>> {
    let gap: Envelope<GapScan> = load_envelope(out, Stage::GapScan, &setup.hash)?;
    if !gap.data.above_floor {
        return Err(Error::GapClosed { s: Some(gap.data.argmin_s), gap: gap.data.min_gap });
    }
    let cfg = &setup.config;
    let path = &setup.path;
    let cut = &setup.cut;
    let d = path.local_dim();
    let n = path.lattice().n_sites();
    let engine = GeneratorEngine::new(path, setup.filter.clone());
    let ground = path.spectrum::<T>(0.0)?.ground_state();
    let traj = run_trajectory::<T>(&engine, cut, &cfg.flow.radii, &cfg.flow.s_grid, cfg.flow.steps)?;
    let truncated = cfg
        .flow
        .radii
        .iter()
        .map(|&r| truncate(&ground, cut, d, r))
        .collect::<Result<Vec<_>>>()?;
    let probes = cfg.checks.probes;
    let a = cut.region().clone();
    let ac = cut.complement();

    let mut points = Vec::with_capacity(traj.checkpoints.len());
    for (i, cp) in traj.checkpoints.iter().enumerate() {
        let transported = linalg::mat_vec(&cp.flow, &ground);
        let fidelity = transport_fidelity(path, &cp.flow, cp.s)?;
        let (inner_certificate, outer_certificate) = match cp.reports.first() {
            Some(rep) => {
                let inner = SiteLayout::new(n, d, a.sites())?.embed(&rep.inner)?;
                let outer = SiteLayout::new(n, d, ac.sites())?.embed(&rep.outer)?;
                let mut rng = ChaCha8Rng::seed_from_u64(certificate_seed(cfg.checks.seed, i, 0));
                (
                    certify_support(&inner, &a, d, probes, &mut rng)?,
                    certify_support(&outer, &ac, d, probes, &mut rng)?,
                )
            }
            None => {
                let skip = |r: &crate::lattice::Region| SupportCertificate { support: r.sites().to_vec(), probes: 0, worst: 0.0 };
                (skip(&a), skip(&ac))
            }
        };
        let reports = cp
            .reports
            .par_iter()
            .enumerate()
            .map(|(j, rep)| {
                let (psi_r, c_r) = &truncated[j];
                let overlap = overlap_p(&transported, &rep.apply(cut, d, psi_r)?)?;
                let rank = schmidt_rank_of_boundary_action(psi_r, cut, d, &rep.boundary, &rep.collar, rep.radius)?;
                let boundary = if rep.collar_covers_lattice {
                    rep.boundary.clone()
                } else {
                    SiteLayout::new(n, d, rep.collar.sites())?.embed(&rep.boundary)?
                };
                let mut rng = ChaCha8Rng::seed_from_u64(certificate_seed(cfg.checks.seed, i, j + 1));
                let boundary_certificate = certify_support(&boundary, &rep.collar, d, probes, &mut rng)?;
                Ok(PointReport {
                    row: rep.row(),
                    collar: rep.collar.sites().to_vec(),
                    collar_covers_lattice: rep.collar_covers_lattice,
                    truncation_weight: *c_r,
                    overlap,
                    rank,
                    boundary_certificate,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(FlowPoint {
            s: cp.s,
            unitarity_defect: cp.flow_defect,
            transport_fidelity: fidelity,
            transported: pairs(&transported),
            inner_certificate,
            outer_certificate,
            reports,
        });
    }

    let mut t = Table::new(&["s", "unitarity_defect", "transport_fidelity"]);
    for p in &points {
        t.push(vec![sig12(p.s), sig12(p.unitarity_defect), sig12(p.transport_fidelity)]);
    }
    t.write(&out.join("flow.csv"))?;

    let tol = &cfg.tolerances;
    let defect = points
        .iter()
        .flat_map(|p| std::iter::once(p.unitarity_defect).chain(p.reports.iter().map(|r| r.row.unitarity_defect)))
        .fold(0.0f64, f64::max);
    let worst_fidelity = points.iter().map(|p| p.transport_fidelity).fold(1.0f64, f64::min);
    let assertions = vec![
        Assertion::new("unitarity", defect <= tol.unitarity, format!("max defect {defect:.3e}")),
        Assertion::new(
            "transport",
            worst_fidelity >= 1.0 - tol.transport,
            format!("min fidelity 1 - {:.3e}", 1.0 - worst_fidelity),
        ),
    ];
    let data = FlowData { steps: cfg.flow.steps, generator_evaluations: traj.evaluations, points };
    write_envelope(out, Stage::Flow, &setup.hash, &assertions, &data)?;
    Ok(assertions)
}

/// Errors at or below this are roundoff (e.g. a band covering the lattice).
const ROUNDOFF: f64 = 1e-12;

/// `lo < hi`, with two roundoff-level values counted as a tie that passes.
fn rises(lo: f64, hi: f64) -> bool {
    lo < hi || (lo <= ROUNDOFF && hi <= ROUNDOFF)
}

fn decompose_stage(setup: &Setup, out: &Path) -> Result<Vec<Assertion>> {
    let flow: Envelope<FlowData> = load_envelope(out, Stage::Flow, &setup.hash)?;
    let tol = &setup.config.tolerances;
    let b = setup.cut.boundary_size();

    let mut dec = Table::new(&["R", "s", "e_meas", "err_VW", "err_Wboundary", "unitarity_defect"]);
    let mut sup = Table::new(&["s", "R", "unitary", "probes", "worst"]);
    let mut rank = Table::new(&["s", "R", "input_rank", "output_rank", "bound", "bound_clipped", "inner_collar_bound"]);
    let mut ovl = Table::new(&["s", "R", "c_R", "P"]);
    let mut scans = Vec::new();
    let mut overlaps = Vec::new();
    let mut aliased = Vec::new();
    let mut certificates = Vec::new();
    for p in &flow.data.points {
        for (name, c) in [("inner", &p.inner_certificate), ("outer", &p.outer_certificate)] {
            sup.push(vec![sig12(p.s), String::new(), name.into(), c.probes.to_string(), sig12(c.worst)]);
            certificates.push(c.worst);
        }
        for r in &p.reports {
            let row = &r.row;
            dec.push(vec![
                row.radius.to_string(),
                sig12(row.s),
                sig12(row.e_meas),
                sig12(row.err_vw),
                sig12(row.err_wb),
                sig12(row.unitarity_defect),
            ]);
            let c = &r.boundary_certificate;
            sup.push(vec![sig12(p.s), row.radius.to_string(), "boundary".into(), c.probes.to_string(), sig12(c.worst)]);
            certificates.push(c.worst);
            let k = &r.rank;
            rank.push(vec![
                sig12(p.s),
                row.radius.to_string(),
                k.input_rank.to_string(),
                k.output_rank.to_string(),
                k.bound.to_string(),
                k.bound_clipped.to_string(),
                k.inner_collar_bound.to_string(),
            ]);
            ovl.push(vec![sig12(p.s), row.radius.to_string(), sig12(r.truncation_weight), sig12(r.overlap)]);
            overlaps.push((p.s, row.radius, r.truncation_weight, r.overlap));
            if r.collar_covers_lattice && !aliased.contains(&row.radius) {
                aliased.push(row.radius);
            }
        }
        scans.push(ErrorScan::from_rows(p.s, p.reports.iter().map(|r| r.row).collect(), b));
    }
    dec.write(&out.join("decomposition.csv"))?;
    sup.write(&out.join("support.csv"))?;
    rank.write(&out.join("rank.csv"))?;
    ovl.write(&out.join("overlap.csv"))?;

    let rows: Vec<&PointReport> = flow.data.points.iter().flat_map(|p| &p.reports).collect();
    let mut a = Vec::new();
    let triangle_bad = rows.iter().filter(|r| r.row.e_meas > r.row.err_vw + r.row.err_wb + tol.triangle).count();
    a.push(Assertion::new("triangle", triangle_bad == 0, format!("{triangle_bad} of {} rows violate", rows.len())));
    let worst = certificates.iter().copied().fold(0.0f64, f64::max);
    a.push(Assertion::new(
        "support",
        worst <= tol.support,
        format!("{} certificates, worst {worst:.3e}", certificates.len()),
    ));
    let initial = rows.iter().filter(|r| r.row.s == 0.0).map(|r| r.row.e_meas).fold(0.0f64, f64::max);
    a.push(Assertion::new("initial_error", initial <= tol.initial_error, format!("max e_meas at s = 0: {initial:.3e}")));
    let decay_bad: Vec<f64> = scans
        .iter()
        .filter(|sc| sc.s > 0.0 && sc.rows.windows(2).any(|w| !rises(w[1].e_meas, w[0].e_meas)))
        .map(|sc| sc.s)
        .collect();
    a.push(Assertion::new("decay_in_R", decay_bad.is_empty(), format!("not strictly decreasing at s = {decay_bad:?}")));
    let mut growth_bad = Vec::new();
    for &r in &setup.config.flow.radii {
        let series: Vec<f64> = rows.iter().filter(|x| x.row.radius == r && x.row.s > 0.0).map(|x| x.row.e_meas).collect();
        if series.windows(2).any(|w| !rises(w[0], w[1])) {
            growth_bad.push(r);
        }
    }
    a.push(Assertion::new("growth_in_s", growth_bad.is_empty(), format!("not increasing in s for R = {growth_bad:?}")));
    let rank_bad = rows.iter().filter(|r| !r.rank.holds).count();
    a.push(Assertion::new("schmidt_rank", rank_bad == 0, format!("{rank_bad} of {} points exceed the bound", rows.len())));
    if !aliased.is_empty() {
        log::warn!("collars of widths 2R for R = {aliased:?} cover the lattice; the boundary unitary is global there");
    }
    let data = DecomposeData { boundary_size: b, scans, overlaps, aliased_radii: aliased };
    write_envelope(out, Stage::DecomposeScan, &setup.hash, &a, &data)?;
    Ok(a)
}

fn entropy_stage(setup: &Setup, out: &Path) -> Result<Vec<Assertion>> {
    let flow: Envelope<FlowData> = load_envelope(out, Stage::Flow, &setup.hash)?;
    let dec: Envelope<DecomposeData> = load_envelope(out, Stage::DecomposeScan, &setup.hash)?;
    let cfg = &setup.config;
    let tol = &cfg.tolerances;
    let path = &setup.path;
    let cut = &setup.cut;
    let d = path.local_dim();
    let r_max = cfg.flow.radii.last().copied().unwrap_or(0);

    let spectrum_at = |s: f64| -> Result<crate::entangle::SchmidtSpectrum> {
        if path.is_real() {
            schmidt(&path.spectrum::<f64>(s)?.ground_state(), cut, d)
        } else {
            schmidt(&path.spectrum::<c64>(s)?.ground_state(), cut, d)
        }
    };
    let initial = spectrum_at(0.0)?;
    let profile = DecayProfile::from_spectrum(&initial, r_max);
    let spectra = flow
        .data
        .points
        .par_iter()
        .map(|p| {
            let spec = spectrum_at(p.s)?;
            let moved = schmidt(&unpair(&p.transported), cut, d)?;
            Ok((spec, moved))
        })
        .collect::<Result<Vec<_>>>()?;

    let e_meas = |s: f64, r: usize| -> Option<f64> {
        dec.data.scans.iter().find(|sc| sc.s == s)?.rows.iter().find(|x| x.radius == r).map(|x| x.e_meas)
    };
    let mut points = Vec::new();
    let mut tails = Vec::new();
    let mut checks = Vec::new();
    for (p, (spec, moved)) in flow.data.points.iter().zip(&spectra) {
        points.push(EntropyPoint {
            s: p.s,
            entropy: entropy(spec),
            transported_entropy: entropy(moved),
            schmidt_rank: spec.numerical_rank(),
            coefficients: spec.coefficients.clone(),
        });
        for &(s, r, _, overlap) in dec.data.overlaps.iter().filter(|o| o.0 == p.s) {
            let (cap, clipped) = tail_rank_cap(spec, r);
            tails.push(TailRow { s, radius: r, clipped, check: tail_constraint_check(spec, overlap, cap) });
            let e = e_meas(s, r).ok_or_else(|| Error::structural(format!("no e_meas for (s, R) = ({s}, {r})")))?;
            let f_a = profile.at(r);
            let lower = 1.0 - (f_a + 2.0 * e);
            checks.push(OverlapRow { s, radius: r, overlap, f_a, e_meas: e, lower, margin: overlap - lower });
        }
    }

    let mut t = Table::new(&["s", "entropy", "transported_entropy", "schmidt_rank"]);
    for p in &points {
        t.push(vec![sig12(p.s), sig12(p.entropy), sig12(p.transported_entropy), p.schmidt_rank.to_string()]);
    }
    t.write(&out.join("entropy.csv"))?;
    let mut t = Table::new(&["s", "alpha", "sigma"]);
    for p in &points {
        for (k, x) in p.coefficients.iter().enumerate() {
            t.push(vec![sig12(p.s), (k + 1).to_string(), sig12(*x)]);
        }
    }
    t.write(&out.join("spectra.csv"))?;
    profile.table().write(&out.join("profile.csv"))?;
    let mut t = Table::new(&["s", "R", "rank_cap", "clipped", "partial_sum", "P", "margin", "holds"]);
    for r in &tails {
        let c = &r.check;
        t.push(vec![
            sig12(r.s),
            r.radius.to_string(),
            c.rank_cap.to_string(),
            r.clipped.to_string(),
            sig12(c.partial_sum),
            sig12(c.probability),
            sig12(c.margin),
            c.holds.to_string(),
        ]);
    }
    t.write(&out.join("tail.csv"))?;
    let mut t = Table::new(&["s", "R", "P", "f_A", "e_meas", "lower", "margin"]);
    for r in &checks {
        t.push(vec![
            sig12(r.s),
            r.radius.to_string(),
            sig12(r.overlap),
            sig12(r.f_a),
            sig12(r.e_meas),
            sig12(r.lower),
            sig12(r.margin),
        ]);
    }
    t.write(&out.join("overlap_check.csv"))?;

    let min_tail = tails.iter().map(|r| r.check.margin).fold(f64::INFINITY, f64::min);
    let min_overlap = checks.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let spread = points.iter().map(|p| (p.entropy - p.transported_entropy).abs()).fold(0.0f64, f64::max);
    let initial_gap = points.iter().find(|p| p.s == 0.0).map(|p| (p.entropy - entropy(&initial)).abs());
    let a = vec![
        Assertion::new("tail_constraint", min_tail >= -tol.tail, format!("{} points, min margin {min_tail:.3e}", tails.len())),
        Assertion::new(
            "overlap_inequality",
            min_overlap >= -tol.overlap,
            format!("{} points, min margin {min_overlap:.3e}", checks.len()),
        ),
        Assertion::new("profile_monotone", profile.is_monotone(), format!("f_A = {:?}", profile.values)),
        Assertion::new(
            "initial_entropy",
            initial_gap.map_or(true, |g| g <= 1e-10),
            format!("|S(flowed) - S(direct)| at s = 0: {initial_gap:?}; max over s {spread:.3e}"),
        ),
    ];
    let data = EntropyData { full_rank: initial.full_rank, profile, points, tails, overlap_checks: checks };
    write_envelope(out, Stage::EntropyReport, &setup.hash, &a, &data)?;
    Ok(a)
}

fn bound_stage(setup: &Setup, out: &Path) -> Result<Vec<Assertion>> {
    let dec: Envelope<DecomposeData> = load_envelope(out, Stage::DecomposeScan, &setup.hash)?;
    let ent: Envelope<EntropyData> = load_envelope(out, Stage::EntropyReport, &setup.hash)?;
    let tol = &setup.config.tolerances;
    let mut points = Vec::new();
    for p in &ent.data.points {
        let eps: Vec<(usize, f64)> = dec
            .data
            .scans
            .iter()
            .find(|sc| sc.s == p.s)
            .map(|sc| sc.rows.iter().map(|r| (r.radius, r.e_meas)).collect())
            .unwrap_or_default();
        let point = match theorem_bound(&ent.data.profile, &eps, p.entropy, ent.data.full_rank) {
            Ok(report) => BoundPoint { s: p.s, report: Some(report), vacuous: false, error: None },
            Err(Error::NoFeasibleR0) => {
                BoundPoint { s: p.s, report: None, vacuous: true, error: Some(Error::NoFeasibleR0.to_string()) }
            }
            Err(e) => BoundPoint { s: p.s, report: None, vacuous: false, error: Some(e.to_string()) },
        };
        points.push(point);
    }
    let mut t = Table::new(&["s", "R0", "c1", "h1", "bound", "bound_ln_N", "measured_entropy", "margin"]);
    for p in &points {
        if let Some(r) = &p.report {
            t.push(vec![
                sig12(p.s),
                r.r0.to_string(),
                sig12(r.c1),
                sig12(r.h1),
                sig12(r.bound),
                sig12(r.bound_ln_n),
                sig12(r.measured_entropy),
                sig12(r.margin),
            ]);
        }
    }
    t.write(&out.join("bound.csv"))?;

    let errors: Vec<String> = points.iter().filter(|p| !p.vacuous).filter_map(|p| p.error.clone()).collect();
    let reports: Vec<&BoundReport> = points.iter().filter_map(|p| p.report.as_ref()).collect();
    let dominated = reports.iter().all(|r| r.dominates(tol.dominance));
    let min_margin = reports.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let vacuous = points.iter().filter(|p| p.vacuous).count();
    let a = vec![Assertion::new(
        "bound_dominance",
        errors.is_empty() && !reports.is_empty() && dominated,
        if errors.is_empty() {
            format!("{} bounded points, {vacuous} vacuous, min slack {min_margin:.6}", reports.len())
        } else {
            errors.join("; ")
        },
    )];
    write_envelope(out, Stage::BoundReport, &setup.hash, &a, &BoundData { points })?;
    Ok(a)
}

// ---------------------------------------------------------------------------
// full pipeline

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub timings: Vec<StageTiming>,
    /// Emitted tables, relative to the output directory.
    pub tables: Vec<String>,
    pub bounds: Vec<BoundPoint>,
    /// Every stage's assertions, named `<stage>/<check>`.
    pub assertions: Vec<Assertion>,
    pub failure: Option<StageFailure>,
    pub passed: bool,
}

impl RunRecord {
    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }
}

/// Runs every stage in order; a stage error stops the run and is recorded.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path) -> Result<RunRecord> {
    fs::create_dir_all(out)?;
    let mut record = RunRecord {
        config_hash: config.hash(),
        timings: Vec::new(),
        tables: Vec::new(),
        bounds: Vec::new(),
        assertions: Vec::new(),
        failure: None,
        passed: false,
    };
    let clock = Instant::now();
    let setup = match config.setup() {
        Ok(s) => s,
        Err(e) => {
            record.failure = Some(StageFailure { stage: Stage::ValidateConfig, message: e.to_string() });
            fs::write(out.join("run_record.json"), serde_json::to_string_pretty(&record)?)?;
            return Ok(record);
        }
    };
    for stage in Stage::ALL {
        let start = if stage == Stage::ValidateConfig { clock } else { Instant::now() };
        let result = run_stage(stage, &setup, out);
        record.timings.push(StageTiming { stage, seconds: start.elapsed().as_secs_f64() });
        match result {
            Ok(list) => {
                record.assertions.extend(list.into_iter().map(|mut a| {
                    a.name = format!("{}/{}", stage.name(), a.name);
                    a
                }));
                record.tables.extend(stage.tables().iter().map(|t| t.to_string()));
                log::info!("{} done in {:.1} s", stage.name(), record.timings.last().unwrap().seconds);
            }
            Err(e) => {
                log::error!("{} failed: {e}", stage.name());
                record.failure = Some(StageFailure { stage, message: e.to_string() });
                break;
            }
        }
    }
    if record.failure.is_none() {
        let bound: Envelope<BoundData> = load_envelope(out, Stage::BoundReport, &record.config_hash)?;
        record.bounds = bound.data.points;
    }
    record.passed = record.failure.is_none() && record.assertions.iter().all(|a| a.passed);
    fs::write(out.join("run_record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--workers must be positive".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[model]
family = "tfim"
lambda = 0.5

[lattice]
extents = [4]

[cut]
sites = [0, 1]

[flow]
s_grid = [0.0, 0.5, 1.0]
radii = [1]
steps = 20

[filter]
gamma = 0.9
"#;

    #[test]
    fn hash_ignores_field_order_and_output() {
        let a = ExperimentConfig::from_toml(SMALL).unwrap();
        let reordered = r#"
[filter]
gamma = 0.9
[flow]
steps = 20
radii = [1]
s_grid = [0.0, 0.5, 1.0]
[cut]
sites = [0, 1]
[lattice]
extents = [4]
[model]
lambda = 0.5
family = "tfim"
[output]
dir = "elsewhere"
"#;
        let b = ExperimentConfig::from_toml(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.flow.steps = 40;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = ExperimentConfig::from_toml(SMALL).unwrap();
        base.validate().unwrap();
        let mut c = base.clone();
        c.cut.sites = vec![0, 9];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base.clone();
        c.flow.s_grid = vec![0.0, 1.5];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.flow.s_grid = vec![0.033];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.flow.radii = vec![2, 1];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.model.family = "potts".into();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml(&SMALL.replace("gamma", "gama")).is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::from_name(s.name()).unwrap(), s);
        }
        assert!(Stage::from_name("plot").is_err());
    }

    #[test]
    fn small_pipeline_passes() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let rec = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(rec.failure.is_none(), "{:?}", rec.failure);
        for a in &rec.assertions {
            assert!(a.passed, "{}: {}", a.name, a.detail);
        }
        let gap = Table::read(&dir.path().join("gap_scan.csv")).unwrap();
        assert_eq!(gap.rows.len(), 3);
        assert_eq!(rec.bounds.len(), 3);
    }

    #[test]
    fn missing_upstream_is_a_dependency_error() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let setup = cfg.setup().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = run_stage(Stage::BoundReport, &setup, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Dependency { .. }), "{err}");
    }
}
