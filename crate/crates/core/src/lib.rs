//! Desk-scale numerics for gapped Hamiltonian paths: exact diagonalization,
//! quasi-local flow generators, boundary decompositions of the flow, Schmidt
//! spectra and area-law entropy bounds.
//!
//! Every algorithm is generic over [`Scalar`] (`f64` or [`c64`]); real paths
//! run in `f64` throughout.

pub mod entangle;
pub mod entbound;
pub mod error;
pub mod evolve;
pub mod hamiltonian;
pub mod harness;
pub mod lattice;
pub mod linalg;
pub mod quasiflow;
pub mod sites;
pub mod table;

pub use entangle::{DecayProfile, SchmidtSpectrum};
pub use entbound::{BoundReport, EntropyBound, TailConstraint};
pub use error::{Error, Result};
pub use evolve::{DecompositionReport, FlowResult, ScanRow};
pub use hamiltonian::{HamiltonianPath, PathFamily, Profile, SpectralData};
pub use harness::{ExperimentConfig, RunRecord, Stage};
pub use lattice::{Cut, Lattice, Region};
pub use linalg::{c64, CMat, Scalar};
pub use quasiflow::{FilterFunction, GeneratorDecomposition, GeneratorEngine};
pub use sites::SiteLayout;
