//! Polynomials, rational transfer functions, frequency grids and realizations.

mod grid;
mod norm;
mod poly;
mod roots;
mod statespace;
mod tf;

pub use grid::FrequencyGrid;
pub use norm::{bode_csv, hinf_norm, NormPeak, DEFAULT_REFINE_LEVELS};
pub use poly::Polynomial;
pub use roots::{decays_faster_than, is_hurwitz, roots, routh_count, spectral_abscissa, RouthCount, STABILITY_MARGIN};
pub(crate) use roots::balance_scaling;
pub use statespace::StateSpace;
pub use tf::{Interconnection, TransferFunction, DEN_FLOOR};

/// Shorter alias used throughout the crate.
pub type RationalTF = TransferFunction;
