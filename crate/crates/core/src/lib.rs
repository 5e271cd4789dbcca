//! Glauber-Kawasaki lattice dynamics with speed change.
//!
//! Exact kinetic Monte Carlo for the generator `N^2 L_K + K L_G` on the
//! discrete torus, homogenization of the microscopic rates into the
//! diffusion polynomial `P`, the reaction term `f` and the interface constant
//! `lambda0`, a master-equation oracle for tiny systems, the discrete
//! reaction-diffusion solver, and sharp-interface read-outs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bg;
pub mod commands;
pub mod config;
pub mod kmc;
pub mod lattice;
pub mod master;
pub mod mcf;
pub mod pde;
pub mod pipeline;
pub mod poly;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod snapshot;
