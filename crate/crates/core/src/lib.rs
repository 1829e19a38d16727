//! Finite element discretization of the Dirichlet problem for the fractional
//! p-Laplacian with pure, truncated, tempered or tabulated kernels.
//!
//! The crate builds graded simplicial meshes in one and two dimensions,
//! assembles the nonlocal energy together with its gradient and Hessian using
//! singular quadrature, minimizes it with a damped Newton method, and measures
//! discrete solutions in fractional Sobolev, energy and Besov norms.

pub mod assembly;
pub mod config;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod mesh;
pub mod norms;
pub mod quadrature;
pub mod solver;
pub mod special;

pub use assembly::{AssemblyContext, DiscreteFunction, Forcing};
pub use config::Config;
pub use error::{Error, Result};
pub use kernel::{normalizing_constant, Kernel, KernelFamily};
pub use mesh::{build_graded_mesh_1d, build_mesh_2d, uniform_mesh_1d, DomainSpec, Mesh};
pub use quadrature::QuadParams;
pub use solver::{solve, SolveReport, SolverMethod, SolverParams};
