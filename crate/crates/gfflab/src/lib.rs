//! Lattice laboratory for vector-valued Gaussian free fields and their
//! exploration geometry: exact Dirichlet/Green solvers, field samplers,
//! labeled random-walk loop soups, cable-edge sign refinements, spin O(N)
//! Monte Carlo in arbitrary conductances, and k-jump cluster analysis.
//!
//! The crate is organized around finite windows of the square lattice
//! ([`lattice::SiteGraph`]). Everything downstream consumes those graphs:
//! [`harmonic`] provides the linear-algebra kernel, [`gff`] the Gaussian
//! samplers, [`loopsoup`] the Poissonian loop ensembles coupled across
//! masses, [`exploration`] the exit-set machinery, [`cable`] the per-edge
//! sign refinement, [`spin`] the O(N) chains, and [`percolation`] the
//! cluster statistics and decay fits. [`experiments`] wires these into the
//! reproducible experiment drivers used by the `expcli` binary.

pub mod cable;
pub mod error;
pub mod experiments;
pub mod exploration;
pub mod gff;
pub mod harmonic;
pub mod lattice;
pub mod loopsoup;
pub mod percolation;
pub mod rngutil;
pub mod spectral;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};
