//! Symbolic and numerical computation in Nica-Toeplitz algebras of
//! finite-type product systems over lattice-ordered semigroups, with KMS and
//! ground states induced from traces on the coefficient algebra.

pub mod coeff;
pub mod dsl;
pub mod fock;
pub mod kms;
pub mod nt;
pub mod product_system;
pub mod semigroup;
pub mod verify;

pub use num_complex::Complex64;
