//! Localization of the filtered generator on TFIM chains.

use qalab_core::hamiltonian::{HamiltonianPath, PathConstants, PathFamily, Profile};
use qalab_core::quasiflow::{fit_decay, FilterFunction, GeneratorDecomposition, GeneratorEngine};
use qalab_core::Lattice;

fn snapshot(lambda: f64, gamma: f64) -> (HamiltonianPath, GeneratorDecomposition<f64>) {
    let path =
        HamiltonianPath::new(Lattice::chain(10).unwrap(), 2, PathFamily::Tfim { lambda }, Profile::Linear, PathConstants::default())
            .unwrap();
    let snap = GeneratorEngine::new(&path, FilterFunction::spectral(gamma).unwrap()).snapshot::<f64>(1.0).unwrap();
    (path, snap)
}

/// Non-increasing beyond r0 + 1, and below 1e-3 of the r0 piece somewhere.
fn decay_violations(snap: &GeneratorDecomposition<f64>) -> Vec<String> {
    let r0 = snap.r0();
    let mut bad = Vec::new();
    for u in snap.centers() {
        let norms = snap.piece_norms(u).unwrap();
        let base = norms.iter().find(|p| p.0 == r0).unwrap().1;
        let tail: Vec<f64> = norms.iter().filter(|p| p.0 > r0).map(|p| p.1).collect();
        if tail.windows(2).any(|w| w[1] > w[0]) {
            bad.push(format!("u = {u}: rises beyond r0 + 1 {tail:?}"));
        }
        let floor = norms.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        if floor >= 1e-3 * base {
            bad.push(format!("u = {u}: smallest piece {:.3e} of the r0 piece", floor / base));
        }
    }
    bad
}

#[test]
fn center_pieces_decay_with_a_positive_fitted_rate() {
    let (path, snap) = snapshot(0.5, 0.9);
    let norms = snap.piece_norms(4).unwrap();
    let r: Vec<usize> = norms.iter().map(|p| p.0).collect();
    assert_eq!(r, [1, 2, 3, 4, 5]);
    assert!(norms.windows(2).all(|w| w[1].1 < w[0].1), "{norms:?}");
    let fixture = [0.249850733400, 0.238822863841, 0.100637945187, 0.039199666605, 0.016646241844];
    for ((_, m), f) in norms.iter().zip(fixture) {
        assert!((m - f).abs() < 1e-10, "{m} vs {f}");
    }

    let fit = fit_decay(&norms, snap.r0(), path.j2()).unwrap();
    // c0 is the tightest rate through the points r > r0: -ln(m / 2J2) ln²(x + e) / x
    let oracle = norms
        .iter()
        .filter(|p| p.0 > 1)
        .map(|&(r, m)| {
            let x = (r - 1) as f64;
            -(m / (2.0 * path.j2())).ln() * (x + std::f64::consts::E).ln().powi(2) / x
        })
        .fold(f64::INFINITY, f64::min);
    assert!((fit.c0 - oracle).abs() < 1e-12);
    assert!((fit.c0 - 2.469764949162).abs() < 1e-9);
    assert!(fit.slope < 0.0);
    let model = fit.model();
    for &(r, m) in &norms {
        assert!(m <= 2.0 * path.j2() * model.value((r - 1) as f64) * (1.0 + 1e-12));
    }
}

#[test]
fn decay_property_on_a_deeply_gapped_chain() {
    let (_, snap) = snapshot(0.2, 1.5);
    let bad = decay_violations(&snap);
    assert!(bad.is_empty(), "{bad:#?}");
}

// Fails: at lambda = 0.5 the pieces level off at 2-8% of the r0 piece
// and wobble once the balls reach the chain ends.
#[test]
fn decay_property_on_the_golden_chain() {
    let (_, snap) = snapshot(0.5, 0.9);
    let bad = decay_violations(&snap);
    assert!(bad.is_empty(), "{bad:#?}");
}
