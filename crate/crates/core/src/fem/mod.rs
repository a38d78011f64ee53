//! Lagrange finite elements: spaces, quadrature, assembly, norms and transfer.

pub mod assembly;
pub mod dofvec;
pub mod norms;
pub mod quadrature;
pub mod space;
pub mod sparse;
pub mod transfer;

pub use assembly::{assemble_b, assemble_b_raw, assemble_n, energy_matrix, load_vector, mass_matrix, stiffness_matrix};
pub use dofvec::DofVector;
pub use norms::{energy_inner, energy_norm, l2_norm, l2_project};
pub use quadrature::{LineRule, QuadratureRule};
pub use space::{Basis, FeSpace};
pub use sparse::CsrMatrix;
pub use transfer::{prolongation, transfer, OverlaySpaces};
