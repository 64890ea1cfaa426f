//! Collective spectra and open-system dynamics of multilevel emitters
//! coupled through a rectangular waveguide.

pub mod coupling;
pub mod experiments;
pub mod fock;
pub mod linalg;
pub mod liouville;
pub mod sparse;
pub mod spectra;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
