//! Geometric-unitary analysis for finite-dimensional operator spaces.
//!
//! A concrete operator space is a subspace `V` of the d x d complex
//! matrices together with the norms its matrix levels inherit. Around a
//! distinguished norm-one element `u`, the crate computes the witness
//! quantities built from completely contractive maps sending `u` to an
//! identity matrix: the level seminorms `gamma_k`, the unitality constant
//! `n_cb`, their classical (level-1) counterparts, the induced matrix
//! order cones, and the positivity variants for non-unital matrix-ordered
//! spaces. Everything is witnessed: estimates carry the maps and vectors
//! that attain them, so results can be re-verified independently.
//!
//! Module map:
//! - [`cmat`], [`eig`]: dense complex-matrix kernel (Hermitian
//!   eigendecomposition, spectral norm, Kronecker/partial trace, PSD).
//! - [`sdp`]: small dense Hermitian-block semidefinite solver with
//!   infeasibility certificates.
//! - [`space`]: operator-space specifications, matrix levels, minimal
//!   quantization and direct sums.
//! - [`cbmap`]: Choi matrices, complete positivity, cb norms, and the
//!   unital-witness feasibility programs.
//! - [`gamma`]: seesaw estimation of the level seminorms and `n_cb`,
//!   kernel/quotient extraction.
//! - [`banach`]: classical geometric-unitary machinery on normed spaces.
//! - [`ossys`]: matrix order cones and (non-)unital operator-system
//!   checks.
//! - [`mideal`]: complete M-projections and quotient unitality.
//! - [`jsonio`]: serialization schemas ("opspace/1").
//! - [`suite`]: the executable verification suite used by the CLI.

pub mod banach;
pub mod cbmap;
pub mod cmat;
pub mod eig;
pub mod error;
pub mod gamma;
pub mod jsonio;
pub mod mideal;
pub mod ossys;
pub mod sdp;
pub mod space;
pub mod suite;
pub mod util;

pub use cmat::CMat;
pub use error::{OsError, Result};
