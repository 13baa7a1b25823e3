//! Entropy bounds from tail constraints on a Schmidt spectrum, the assembled
//! area-law bound, and the majorization utilities behind them.
//!
//! A tail constraint says `Σ_{α > s_n} σ(α) ≤ f(n)` for rank cut points
//! `0 = s_0 < s_1 < …` with `s_{n+1} ≤ r s_n`. The block-uniform distribution
//! `μ(α) = δ(n) / (s_{n+1} − s_n)` on `(s_n, s_{n+1}]`, `δ(n) = f(n) − f(n+1)`,
//! saturates every constraint, and its entropy is at most
//! `ln s_1 + c_1 ln r + h_1` with `c_1 = Σ n δ(n)`, `h_1 = −Σ δ(n) ln δ(n)`.
//!
//! Cut points are `u128` so the geometric cases stay exact far past the
//! truncation point.

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::entangle::{shannon, DecayProfile};
use crate::error::{Error, Result};

/// Tail values below this end the series.
pub const SERIES_CUTOFF: f64 = 1e-15;

/// `|δ(n)|` below this is treated as an exact zero.
const DELTA_FLOOR: f64 = 1e-14;

const SUM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailConstraint {
    /// `s_0 = 0, s_1, …, s_{L+1}`.
    cuts: Vec<u128>,
    /// `f(0) = 1, f(1), …, f(L)`; `f(L+1)` is taken as zero.
    tails: Vec<f64>,
    ratio: f64,
    /// Tail mass dropped when the series was cut (folded into the last block).
    remainder: f64,
}

impl TailConstraint {
    /// `cuts` must have one more entry than `tails`.
    pub fn new(cuts: Vec<u128>, tails: Vec<f64>, ratio: f64) -> Result<Self> {
        Self::with_remainder(cuts, tails, ratio, 0.0)
    }

    fn with_remainder(cuts: Vec<u128>, tails: Vec<f64>, ratio: f64, remainder: f64) -> Result<Self> {
        if tails.is_empty() || cuts.len() != tails.len() + 1 {
            return Err(Error::domain("need f(0..=L) and s_0..=s_{L+1}"));
        }
        if cuts[0] != 0 || cuts[1] < 1 {
            return Err(Error::domain("cut points must start 0, s_1 >= 1"));
        }
        if cuts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("cut points must be strictly increasing"));
        }
        if !(ratio >= 1.0) {
            return Err(Error::domain(format!("ratio cap r = {ratio} must be at least 1")));
        }
        for n in 1..cuts.len() - 1 {
            if cuts[n + 1] as f64 > ratio * cuts[n] as f64 * (1.0 + 1e-12) {
                return Err(Error::domain(format!(
                    "s_{} = {} exceeds r * s_{} = {}",
                    n + 1,
                    cuts[n + 1],
                    n,
                    ratio * cuts[n] as f64
                )));
            }
        }
        if tails[0] != 1.0 {
            return Err(Error::domain("f(0) must be 1"));
        }
        if tails.windows(2).any(|w| !(w[1] < w[0])) || tails.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::domain("tail values must be non-negative and strictly decreasing"));
        }
        Ok(Self { cuts, tails, ratio, remainder })
    }

    /// `s_n = s_1 r^{n-1}`, `f(n)` from `tail`, cut once `f(n) < 1e-15` or at `n_max`.
    pub fn geometric(s1: u128, ratio: u128, tail: impl Fn(usize) -> f64, n_max: usize) -> Result<Self> {
        let mut cuts = vec![0u128, s1];
        let mut tails = vec![1.0];
        let mut remainder = 0.0;
        for n in 1..=n_max {
            let next = cuts[n].checked_mul(ratio);
            let f = tail(n);
            if f < SERIES_CUTOFF || next.is_none() {
                remainder = f.max(0.0);
                break;
            }
            tails.push(f);
            cuts.push(next.expect("checked above"));
            if n == n_max {
                remainder = tail(n + 1).max(0.0);
            }
        }
        if remainder > 0.0 {
            log::debug!("tail series truncated after {} blocks, remainder {remainder:.3e}", tails.len());
        }
        Self::with_remainder(cuts, tails, ratio as f64, remainder)
    }

    pub fn cuts(&self) -> &[u128] {
        &self.cuts
    }

    pub fn tails(&self) -> &[f64] {
        &self.tails
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    pub fn blocks(&self) -> usize {
        self.tails.len()
    }

    /// Total support `s_{L+1}`.
    pub fn support(&self) -> u128 {
        *self.cuts.last().expect("non-empty")
    }

    /// `δ(n) = f(n) − f(n+1)` with the last block absorbing `f(L)`.
    pub fn deltas(&self) -> Vec<f64> {
        let l = self.tails.len();
        (0..l)
            .map(|n| self.tails[n] - self.tails.get(n + 1).copied().unwrap_or(0.0))
            .collect()
    }

    /// Does a decreasing `σ` satisfy every `Σ_{α > s_n} σ(α) ≤ f(n) + tol`?
    pub fn admits(&self, sorted: &[f64], tol: f64) -> bool {
        let len = sorted.len() as u128;
        (1..self.cuts.len()).all(|n| {
            let from = self.cuts[n].min(len) as usize;
            let tail: f64 = sorted[from..].iter().rev().sum();
            tail <= self.tails.get(n).copied().unwrap_or(0.0) + tol
        })
    }
}

/// `μ` stored as per-block widths and masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDistribution {
    pub widths: Vec<u128>,
    pub masses: Vec<f64>,
}

impl BlockDistribution {
    pub fn density(&self, n: usize) -> f64 {
        self.masses[n] / self.widths[n] as f64
    }

    /// `−Σ δ(n) ln(δ(n)/w_n)`.
    pub fn entropy(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.widths)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, w)| -m * (m / *w as f64).ln())
            .sum()
    }

    /// Mass beyond the first `n` blocks.
    pub fn tail_beyond(&self, n: usize) -> f64 {
        self.masses[n.min(self.masses.len())..].iter().rev().sum()
    }

    /// Block densities non-increasing (so `μ` is already in decreasing order).
    pub fn is_sorted(&self) -> bool {
        (1..self.masses.len()).all(|n| self.density(n) <= self.density(n - 1) * (1.0 + 1e-12))
    }

    /// Dense vector, when the support has at most `limit` entries.
    pub fn to_vec(&self, limit: usize) -> Option<Vec<f64>> {
        let total: u128 = self.widths.iter().sum();
        if total > limit as u128 {
            return None;
        }
        Some(
            self.widths
                .iter()
                .enumerate()
                .flat_map(|(n, &w)| std::iter::repeat(self.density(n)).take(w as usize))
                .collect(),
        )
    }
}

pub fn maximizing_distribution(tc: &TailConstraint) -> Result<BlockDistribution> {
    let widths: Vec<u128> = tc.cuts.windows(2).map(|w| w[1] - w[0]).collect();
    if widths.contains(&0) {
        return Err(Error::structural("zero-width block"));
    }
    Ok(BlockDistribution { widths, masses: tc.deltas() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBound {
    pub ln_s1: f64,
    pub ln_r: f64,
    pub c1: f64,
    pub h1: f64,
    /// `ln s_1 + c_1 ln r + h_1`.
    pub bound: f64,
    /// `H(μ)`.
    pub maximizer_entropy: f64,
    pub deltas: Vec<f64>,
    pub remainder: f64,
}

impl EntropyBound {
    pub fn maximizer_within_bound(&self) -> bool {
        self.maximizer_entropy <= self.bound + 1e-12
    }
}

/// `c_1 = Σ n δ(n)` and `h_1 = −Σ δ ln δ`.
pub fn series_constants(deltas: &[f64]) -> (f64, f64) {
    let c1 = deltas.iter().enumerate().map(|(n, d)| n as f64 * d).sum();
    (c1, shannon(deltas))
}

pub fn entropy_bound(tc: &TailConstraint) -> Result<EntropyBound> {
    let deltas = tc.deltas();
    if deltas.iter().any(|d| *d < 0.0) {
        return Err(Error::domain("tail values must be decreasing"));
    }
    let (c1, h1) = series_constants(&deltas);
    let ln_s1 = (tc.cuts[1] as f64).ln();
    let ln_r = tc.ratio.ln();
    let mu = maximizing_distribution(tc)?;
    let out = EntropyBound {
        ln_s1,
        ln_r,
        c1,
        h1,
        bound: ln_s1 + c1 * ln_r + h1,
        maximizer_entropy: mu.entropy(),
        deltas,
        remainder: tc.remainder,
    };
    if !out.maximizer_within_bound() {
        return Err(Error::structural(format!(
            "maximizer entropy {} exceeds the bound {}",
            out.maximizer_entropy, out.bound
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// area-law bound

/// Ingredients and value of `S ≤ 5 (1 + c_1) R_0 |∂A| + h_1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "R0")]
    pub r0: usize,
    pub c1: f64,
    pub h1: f64,
    pub bound: f64,
    pub measured_entropy: f64,
    /// `bound − measured_entropy`.
    pub margin: f64,
    pub boundary_size: usize,
    pub local_dim: usize,
    /// `f(n) = f_A(n R_0) + 2 e(n R_0)`, with `f(0) = 1`.
    pub tails: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Tail mass beyond the tabulated range, folded into the last `δ`.
    pub remainder: f64,
    /// `5 (1 + c_1) R_0 |∂A| ln N + h_1`: the same bound with `s_1 = r = N^{5 R_0 |∂A|}` kept in nats.
    pub bound_ln_n: f64,
    /// `N^{5 R_0 |∂A|}` exceeds the Schmidt rank available across the cut.
    pub rank_exceeds_dimension: bool,
    /// `1 / ln t` for the largest `t` with `δ(n) ≤ t^{-n}` (n ≥ 1), when `t > 1`.
    pub h1_geometric_estimate: Option<f64>,
}

impl BoundReport {
    pub fn dominates(&self, tol: f64) -> bool {
        self.measured_entropy <= self.bound + tol
    }
}

/// Smallest tabulated `R ≥ 1` with `f_A(R) + 2 e(R) ≤ 1/2`.
fn combined_tail(profile: &DecayProfile, errors: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    let mut out: Vec<(usize, f64)> = errors
        .iter()
        .filter(|(r, _)| *r >= 1 && *r < profile.values.len())
        .map(|&(r, e)| (r, profile.at(r) + 2.0 * e))
        .collect();
    out.sort_by_key(|p| p.0);
    out.dedup_by_key(|p| p.0);
    if out.is_empty() {
        return Err(Error::domain("decay profile and error table share no R >= 1"));
    }
    Ok(out)
}

pub fn theorem_bound(
    profile: &DecayProfile,
    errors: &[(usize, f64)],
    measured_entropy: f64,
    full_rank: usize,
) -> Result<BoundReport> {
    let table = combined_tail(profile, errors)?;
    let lookup = |r: usize| table.iter().find(|p| p.0 == r).map(|p| p.1);
    let r0 = table.iter().find(|p| p.1 <= 0.5).map(|p| p.0).ok_or(Error::NoFeasibleR0)?;
    let mut tails = vec![1.0];
    let mut n = 1;
    while let Some(g) = lookup(n * r0) {
        tails.push(g);
        n += 1;
    }
    let last_r = table.last().map(|p| p.0).unwrap_or(r0);
    if (n * r0) <= last_r {
        log::debug!("combined tail has gaps; stopped at R = {}", (n - 1) * r0);
    }
    let remainder = *tails.last().expect("non-empty");
    let mut deltas: Vec<f64> = (0..tails.len())
        .map(|k| tails[k] - tails.get(k + 1).copied().unwrap_or(0.0))
        .collect();
    for d in &mut deltas {
        if d.abs() < DELTA_FLOOR {
            *d = 0.0;
        }
    }
    if deltas.iter().any(|d| *d < 0.0) {
        return Err(Error::domain(format!("combined tail f_A + 2e is not decreasing on the R0 = {r0} grid")));
    }
    let (c1, h1) = series_constants(&deltas);
    let b = profile.boundary_size;
    let scale = 5.0 * (1.0 + c1) * (r0 * b) as f64;
    let bound = scale + h1;
    let (_, exceeds) = crate::entangle::clipped_power(profile.local_dim, 5 * r0 * b, full_rank);
    let t = deltas
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, d)| **d > 0.0)
        .map(|(n, d)| d.powf(-1.0 / n as f64))
        .fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        r0,
        c1,
        h1,
        bound,
        measured_entropy,
        margin: bound - measured_entropy,
        boundary_size: b,
        local_dim: profile.local_dim,
        tails,
        deltas,
        remainder,
        bound_ln_n: scale * (profile.local_dim as f64).ln() + h1,
        rank_exceeds_dimension: exceeds,
        h1_geometric_estimate: (t.is_finite() && t > 1.0).then(|| 1.0 / t.ln()),
    })
}

// ---------------------------------------------------------------------------
// majorization

fn check_distribution(p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE || p.iter().any(|x| *x < -SUM_TOLERANCE) {
        return Err(Error::domain(format!("not a probability vector (sum {total})")));
    }
    Ok(())
}

fn sorted_desc(p: &[f64], len: usize) -> Vec<f64> {
    let mut v = p.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.resize(len, 0.0);
    v
}

/// `p ⪰ q`: every prefix sum of sorted `p` dominates that of sorted `q`.
pub fn majorizes(p: &[f64], q: &[f64]) -> Result<bool> {
    check_distribution(p)?;
    check_distribution(q)?;
    let len = p.len().max(q.len());
    let (ps, qs) = (sorted_desc(p, len), sorted_desc(q, len));
    let (mut a, mut b) = (0.0, 0.0);
    for k in 0..len {
        a += ps[k];
        b += qs[k];
        if a < b - 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `Σ σ p ≥ Σ σ q` for decreasing `σ` and `p ⪰ q` (both taken in decreasing order).
pub fn schur_pairing_check(sigma: &[f64], p: &[f64], q: &[f64]) -> Result<bool> {
    if sigma.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::domain("weights must be in decreasing order"));
    }
    if !majorizes(p, q)? {
        return Err(Error::domain("p does not majorize q"));
    }
    let len = sigma.len().max(p.len()).max(q.len());
    let (ps, qs) = (sorted_desc(p, len), sorted_desc(q, len));
    let dot = |x: &[f64]| sigma.iter().zip(x).map(|(s, v)| s * v).sum::<f64>();
    Ok(dot(&ps) >= dot(&qs) - 1e-12)
}

/// A random `p` and a `q` obtained from it by `transfers` random T-transforms,
/// so that `p ⪰ q` by construction.
pub fn random_majorized_pair<R: Rng + ?Sized>(dim: usize, transfers: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let p = random_simplex(dim, 0.5, rng);
    let mut q = p.clone();
    for _ in 0..transfers {
        let i = rng.gen_range(0..dim);
        let j = rng.gen_range(0..dim);
        let t: f64 = rng.gen();
        let (a, b) = (q[i], q[j]);
        q[i] = t * a + (1.0 - t) * b;
        q[j] = (1.0 - t) * a + t * b;
    }
    (p, q)
}

/// Dirichlet(`alpha`, …) sample.
pub fn random_simplex<R: Rng + ?Sized>(dim: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..dim).map(|_| g.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// A random constraint with total support at most `max_support`.
pub fn random_constraint<R: Rng + ?Sized>(max_support: u128, rng: &mut R) -> TailConstraint {
    loop {
        let ratio = rng.gen_range(2u128..=4);
        let mut cuts = vec![0u128, rng.gen_range(1u128..=3)];
        let mut tails = vec![1.0];
        loop {
            let s = *cuts.last().unwrap();
            let next = rng.gen_range(s + 1..=s * ratio);
            if next > max_support {
                break;
            }
            let f = tails.last().unwrap() * rng.gen_range(0.15..0.85);
            tails.push(f);
            cuts.push(next);
        }
        if let Ok(tc) = TailConstraint::new(cuts, tails, ratio as f64) {
            return tc;
        }
    }
}

/// Rejection sample of a decreasing `σ` admitted by `tc` (support `s_{L+1}`).
///
/// Proposals are sorted Dirichlet draws, half of them pulled toward `μ` so the
/// acceptance rate stays usable on tight constraints.
pub fn sample_admissible<R: Rng + ?Sized>(tc: &TailConstraint, rng: &mut R, max_tries: usize) -> Option<Vec<f64>> {
    let dim = tc.support() as usize;
    let mut mu = maximizing_distribution(tc).ok()?.to_vec(dim)?;
    mu.sort_by(|a, b| b.total_cmp(a));
    for _ in 0..max_tries {
        let alpha = [0.1, 0.5, 1.0, 3.0][rng.gen_range(0..4)];
        let raw = random_simplex(dim, alpha, rng);
        let w: f64 = if rng.gen_bool(0.5) { rng.gen() } else { 0.0 };
        let mut sigma: Vec<f64> = mu.iter().zip(&raw).map(|(m, x)| w * m + (1.0 - w) * x).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        if tc.admits(&sigma, 0.0) {
            return Some(sigma);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// numerical maximizer

/// Result of the interior-point maximization of `H` over the constraint polytope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericalMaximum {
    pub entropy: f64,
    pub sigma: Vec<f64>,
    /// `m / t` at exit: a bound on the optimality gap.
    pub duality_gap: f64,
    pub newton_steps: usize,
}

/// Maximizes the Shannon entropy of a decreasing `σ` on `s_{L+1}` entries
/// subject to `tc`, by a log-barrier Newton method.
///
/// Decreasing vectors are parametrized by `t_k = k (σ_k − σ_{k+1})`, so
/// `σ = B t` with `B_{αk} = 1/k` for `α ≤ k`. The constraints are then linear:
/// `t ≥ 0`, `Σ t = 1`, and `Σ_k t_k (k − s_n)_+ / k ≤ f(n)`. The equality is
/// removed by eliminating the last weight.
pub fn maximize_entropy(tc: &TailConstraint) -> Result<NumericalMaximum> {
    let dim = usize::try_from(tc.support()).ok().filter(|&d| d <= 64).ok_or_else(|| {
        Error::domain("numerical maximization is limited to at most 64 entries")
    })?;
    if dim == 1 {
        return Ok(NumericalMaximum { entropy: 0.0, sigma: vec![1.0], duality_gap: 0.0, newton_steps: 0 });
    }
    let b = Mat::from_fn(dim, dim, |a, k| if a <= k { 1.0 / (k + 1) as f64 } else { 0.0 });
    // rows: -t_k <= 0 (k = 0..dim), then tail rows a_n . t <= f(n)
    let mut rows: Vec<(Vec<f64>, f64)> = (0..dim)
        .map(|k| {
            let mut a = vec![0.0; dim];
            a[k] = -1.0;
            (a, 0.0)
        })
        .collect();
    for n in 1..tc.cuts.len() - 1 {
        let s = tc.cuts[n] as usize;
        let a = (0..dim).map(|k| ((k + 1).saturating_sub(s)) as f64 / (k + 1) as f64).collect();
        rows.push((a, tc.tails[n]));
    }
    // eliminate t_{dim-1} = 1 - Σ_{k<dim-1} t_k: x = t[..dim-1]
    let m = dim - 1;
    let reduced: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|(a, f)| {
            let last = a[m];
            ((0..m).map(|k| a[k] - last).collect(), f - last)
        })
        .collect();

    let mu = maximizing_distribution(tc)?
        .to_vec(dim)
        .ok_or_else(|| Error::structural("maximizer larger than the polytope"))?;
    let t_mu: Vec<f64> = (0..dim)
        .map(|k| (k + 1) as f64 * (mu[k] - mu.get(k + 1).copied().unwrap_or(0.0)))
        .collect();
    // half of μ, the rest on the point mass plus a sliver of every weight
    let eps = 0.25 * tc.tails.last().copied().unwrap_or(1.0).min(1.0);
    let x: Vec<f64> = (0..m)
        .map(|k| 0.5 * t_mu[k] + eps / dim as f64 + if k == 0 { 0.5 - eps } else { 0.0 })
        .collect();
    let mut x = x;

    let slack = |x: &[f64]| -> Vec<f64> {
        reduced.iter().map(|(a, f)| f - a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()).collect()
    };
    let sigma_of = |x: &[f64]| -> Vec<f64> {
        let mut t = x.to_vec();
        t.push(1.0 - x.iter().sum::<f64>());
        (0..dim).map(|a| (a..dim).map(|k| b[(a, k)] * t[k]).sum()).collect()
    };
    if slack(&x).iter().any(|s| *s <= 0.0) {
        return Err(Error::domain("no strictly feasible start; constraint polytope is degenerate"));
    }

    // d σ / d x_k = B e_k − B e_last
    let jac = Mat::from_fn(dim, m, |a, k| b[(a, k)] - b[(a, m)]);
    let n_rows = reduced.len() as f64;
    let mut barrier_t = 1.0;
    let mut steps = 0;
    let objective = |x: &[f64], bt: f64| -> f64 {
        let sl = slack(x);
        if sl.iter().any(|s| *s <= 0.0) {
            return f64::INFINITY;
        }
        let sigma = sigma_of(x);
        if sigma.iter().any(|s| *s <= 0.0) {
            return f64::INFINITY;
        }
        -bt * shannon(&sigma) - sl.iter().map(|s| s.ln()).sum::<f64>()
    };
    while n_rows / barrier_t > 1e-10 {
        for _ in 0..200 {
            let sigma = sigma_of(&x);
            let sl = slack(&x);
            let mut grad = vec![0.0; m];
            let mut hess = Mat::<f64>::zeros(m, m);
            // -t H(σ): gradient t J^T (ln σ + 1), Hessian t J^T diag(1/σ) J
            for a in 0..dim {
                let g = barrier_t * (sigma[a].ln() + 1.0);
                let h = barrier_t / sigma[a];
                for i in 0..m {
                    grad[i] += jac[(a, i)] * g;
                    for j in 0..m {
                        hess[(i, j)] += jac[(a, i)] * h * jac[(a, j)];
                    }
                }
            }
            for ((a, _), s) in reduced.iter().zip(&sl) {
                for i in 0..m {
                    grad[i] += a[i] / s;
                    for j in 0..m {
                        hess[(i, j)] += a[i] * a[j] / (s * s);
                    }
                }
            }
            let rhs = Mat::from_fn(m, 1, |i, _| -grad[i]);
            let dx = hess.partial_piv_lu().solve(&rhs);
            let decrement: f64 = (0..m).map(|i| -grad[i] * dx[(i, 0)]).sum();
            steps += 1;
            if decrement / 2.0 <= 1e-14 {
                break;
            }
            let f0 = objective(&x, barrier_t);
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = (0..m).map(|i| x[i] + step * dx[(i, 0)]).collect();
                if objective(&trial, barrier_t) <= f0 - 0.25 * step * decrement {
                    x = trial;
                    break;
                }
                step *= 0.5;
                if step < 1e-16 {
                    break;
                }
            }
            if step < 1e-16 {
                break;
            }
        }
        barrier_t *= 10.0;
    }
    let sigma = sigma_of(&x);
    Ok(NumericalMaximum { entropy: shannon(&sigma), sigma, duality_gap: n_rows / barrier_t * 10.0, newton_steps: steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometric_example() -> TailConstraint {
        TailConstraint::geometric(2, 4, |n| 0.5f64.powi(n as i32), 200).unwrap()
    }

    #[test]
    fn closed_form_geometric_example() {
        let tc = geometric_example();
        let b = entropy_bound(&tc).unwrap();
        // oracle: direct summation of δ(n) = 2^{-(n+1)} far past the cutoff
        let (mut c1, mut h1) = (0.0, 0.0);
        for n in 0..400 {
            let d = 0.5f64.powi(n + 1);
            c1 += n as f64 * d;
            h1 -= d * d.ln();
        }
        assert!((b.c1 - c1).abs() < 1e-12 && (c1 - 1.0).abs() < 1e-12);
        assert!((b.h1 - h1).abs() < 1e-12 && (h1 - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((b.bound - 5.0 * 2f64.ln()).abs() < 1e-12);
        assert!(b.maximizer_entropy <= b.bound);
    }

    #[test]
    fn block_masses_of_geometric_example() {
        let tc = geometric_example();
        let mu = maximizing_distribution(&tc).unwrap();
        for n in 0..10 {
            assert!((mu.masses[n] - 0.5f64.powi(n as i32 + 1)).abs() < 1e-15);
        }
        assert_eq!(mu.widths[0], 2);
        assert_eq!(mu.widths[1], 6);
        assert!((mu.masses.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // saturation: tail beyond s_n equals f(n)
        for n in 1..tc.blocks() {
            assert!((mu.tail_beyond(n) - tc.tails()[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_block_is_uniform() {
        let tc = TailConstraint::new(vec![0, 5], vec![1.0], 1.0).unwrap();
        let mu = maximizing_distribution(&tc).unwrap();
        assert_eq!(mu.to_vec(10).unwrap(), vec![0.2; 5]);
        let b = entropy_bound(&tc).unwrap();
        assert!((b.maximizer_entropy - 5f64.ln()).abs() < 1e-15);
        assert!((b.bound - 5f64.ln()).abs() < 1e-15);
        // a pure state obeys any constraint
        assert!(tc.admits(&[1.0], 0.0));
    }

    #[test]
    fn invalid_constraints() {
        assert!(TailConstraint::new(vec![0, 2, 4], vec![1.0, 1.0], 2.0).is_err());
        assert!(TailConstraint::new(vec![0, 2, 9], vec![1.0, 0.5], 4.0).is_err());
        assert!(TailConstraint::new(vec![0, 0, 1], vec![1.0, 0.5], 4.0).is_err());
        assert!(TailConstraint::new(vec![0, 2, 4], vec![0.9, 0.5], 2.0).is_err());
    }

    #[test]
    fn theorem_bound_trivial_case() {
        let profile = DecayProfile { local_dim: 2, boundary_size: 1, values: vec![1.0, 0.0, 0.0], clipped: vec![false; 3] };
        let r = theorem_bound(&profile, &[(1, 0.0), (2, 0.0)], 0.0, 32).unwrap();
        assert_eq!(r.r0, 1);
        assert_eq!(r.deltas[0], 1.0);
        assert_eq!((r.c1, r.h1), (0.0, 0.0));
        assert_eq!(r.bound, 5.0);
    }

    #[test]
    fn theorem_bound_geometric_profile() {
        let values: Vec<f64> = (0..=20).map(|r| if r == 0 { 1.0 } else { 0.25f64.powi(r) }).collect();
        let profile = DecayProfile { local_dim: 2, boundary_size: 1, clipped: vec![false; values.len()], values };
        let eps: Vec<(usize, f64)> = (1..=20).map(|r| (r, 0.0)).collect();
        let r = theorem_bound(&profile, &eps, 0.1, 1 << 20).unwrap();
        assert_eq!(r.r0, 1);
        // oracle: δ(0) = 3/4, δ(n) = 4^{-n} − 4^{-(n+1)}, last block absorbs its tail
        let mut d: Vec<f64> = (0..20).map(|n| 0.25f64.powi(n) - 0.25f64.powi(n + 1)).collect();
        d.push(0.25f64.powi(20));
        let c1: f64 = d.iter().enumerate().map(|(n, x)| n as f64 * x).sum();
        let h1: f64 = -d.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((r.c1 - c1).abs() < 1e-13 && (r.h1 - h1).abs() < 1e-13);
        assert!((r.bound - (5.0 * (1.0 + c1) + h1)).abs() < 1e-12);
        assert!(r.dominates(0.0));
    }

    #[test]
    fn infeasible_r0() {
        let profile = DecayProfile { local_dim: 2, boundary_size: 1, values: vec![1.0, 0.4, 0.3], clipped: vec![false; 3] };
        assert!(matches!(theorem_bound(&profile, &[(1, 0.2), (2, 0.2)], 0.0, 32), Err(Error::NoFeasibleR0)));
    }

    #[test]
    fn majorization_examples() {
        assert!(majorizes(&[0.5, 0.3, 0.2], &[0.4, 0.4, 0.2]).unwrap());
        assert!(!majorizes(&[0.4, 0.4, 0.2], &[0.5, 0.3, 0.2]).unwrap());
        let p = [0.1, 0.6, 0.3];
        assert!(majorizes(&p, &p).unwrap());
        assert!(majorizes(&[1.0], &[0.25; 4]).unwrap());
        assert!(majorizes(&[0.2, 0.2, 0.2, 0.2, 0.2], &[0.2; 5]).unwrap());
        assert!(majorizes(&[0.5, 0.5], &[0.9]).is_err());
    }

    #[test]
    fn schur_pairing_examples() {
        let p = [0.5, 0.3, 0.2];
        let q = [0.4, 0.4, 0.2];
        assert!(schur_pairing_check(&[0.6, 0.3, 0.1], &p, &q).unwrap());
        assert!(schur_pairing_check(&[1.0 / 3.0; 3], &p, &q).unwrap());
        assert!(schur_pairing_check(&[0.6, 0.3, 0.1], &p, &p).unwrap());
        assert!(schur_pairing_check(&[0.1, 0.3, 0.6], &p, &q).is_err());
        assert!(schur_pairing_check(&[0.6, 0.3, 0.1], &q, &p).is_err());
    }

    #[test]
    fn t_transforms_produce_majorized_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let dim = rng.gen_range(2..20);
            let (p, q) = random_majorized_pair(dim, 5, &mut rng);
            assert!(majorizes(&p, &q).unwrap());
        }
    }

    #[test]
    fn barrier_matches_sorted_maximizer() {
        // blocks of widths 2, 4, 6 with decreasing densities
        let tc = TailConstraint::new(vec![0, 2, 6, 12], vec![1.0, 0.4, 0.15], 3.0).unwrap();
        let mu = maximizing_distribution(&tc).unwrap();
        assert!(mu.is_sorted());
        let num = maximize_entropy(&tc).unwrap();
        assert!((num.entropy - mu.entropy()).abs() < 1e-6, "{} vs {}", num.entropy, mu.entropy());
        assert!(tc.admits(&num.sigma, 1e-9));
    }

    #[test]
    fn samples_respect_the_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let tc = random_constraint(40, &mut rng);
            let bound = entropy_bound(&tc).unwrap();
            if let Some(sigma) = sample_admissible(&tc, &mut rng, 10_000) {
                assert!(tc.admits(&sigma, 0.0));
                assert!(shannon(&sigma) <= bound.bound);
            }
        }
    }
}
