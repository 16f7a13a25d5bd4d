//! A computational laboratory for planar Ising s-embeddings: exact
//! Kadanoff-Ceva fermion correlators on wired boxes, geometric embeddings
//! driven by propagators, deterministic and stochastic deformation flows of
//! the coupling constants, geometric validation (Unif / Lipschitz /
//! properness), and FK-Ising cluster Monte Carlo for crossing experiments.

pub mod correlators;
pub mod deformation;
pub mod embedding;
pub mod experiments;
pub mod fkmc;
pub mod geometry;
pub mod lattice;
pub mod linalg;
pub mod rng;

pub use lattice::IsingGraph;
