//! Traces of geodesic cycle integrals of meromorphic modular forms
//! `f_{k,A}`, computed by geodesic quadrature, a hypergeometric lattice sum
//! and an exact formula in Hurwitz class numbers.

pub mod analytic;
pub mod arith;
pub mod bqf;
pub mod fqm;
pub mod selftest;
pub mod special_forms;
