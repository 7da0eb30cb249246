//! Experiments on lacunary sequences `(n_k)`: fractional parts `{n_k x}`,
//! two-term Diophantine conditions, discrepancy, and law-of-the-iterated-logarithm
//! statistics under permutations of the sequence.

pub mod numerics;
pub mod sequences;
pub mod diophantine;
pub mod periodic;
pub mod discrepancy;
pub mod permutations;
pub mod lil_lab;
