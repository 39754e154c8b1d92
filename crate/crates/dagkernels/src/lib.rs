//! Infinite-width neural kernels on architecture DAGs.
//!
//! The library builds architecture DAGs (MLPs, deep convolutional nets with
//! flatten or global-average-pooling readouts), evaluates their NNGP and NTK
//! kernels by the recursive composition of dual activations, computes the
//! spatial/frequency/learning indices that order the kernels' eigenspaces,
//! estimates eigenvalues by Taylor-jet propagation and Monte Carlo, and runs
//! kernel-regression learnability experiments on products of spheres.
//!
//! Entry points:
//! * [`arch`] — DAG construction and validation.
//! * [`dual`] — dual activation functions and admissibility classes.
//! * [`kernel`] — NNGP/NTK evaluation, kernel matrices, jet derivatives,
//!   eigenvalue estimates.
//! * [`indices`] — exact spatial/frequency/learning indices and eigenspace
//!   dimension counting.
//! * [`harmonics`] — Gegenbauer polynomials, quadrature, zonal harmonics and
//!   the concrete eigenfunction library.
//! * [`regression`] — datasets, kernel ridge regression, residual
//!   decomposition and learning curves.
//! * [`cli`] — the experiment runner behind the `dagkernels` binary.
//!
//! The `examples/` directory contains one runnable example per capability;
//! see the README for the experiment configuration format.

pub mod arch;
pub mod cli;
pub mod config;
pub mod data;
pub mod dual;
pub mod frac;
pub mod harmonics;
pub mod indices;
pub mod jet;
pub mod kernel;
pub mod linalg;
pub mod plot;
pub mod regression;
pub mod report;
pub mod rng;
