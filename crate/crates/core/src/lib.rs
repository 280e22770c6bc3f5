//! Inversion-free deformation of grids and simplicial meshes.
//!
//! Vertex positions are parameterized as convex combinations of their
//! neighbors. Updating one independent set of vertices at a time and undoing
//! any step that flips a simplex keeps every intermediate mesh injective.

pub mod coloring;
pub mod complex;
pub mod diffrep;
pub mod energy;
pub mod error;
pub mod imagewarp;
pub mod optim;
pub mod scalar;
pub mod uv;

pub use coloring::{greedy_coloring, grid_parity_coloring, VertexColoring};
pub use complex::{
    apply_boundary, build_grid, BoundaryConstraint, GridTopology, SimplicialComplex, VertexConstraint,
};
pub use diffrep::{DifferentialWeights, WeightMode};
pub use energy::{BarrierSpec, EnergyKind, EnergySpec, Objective};
pub use error::{Error, Result};
pub use optim::{optimize, optimize_toy, OptConfig, OptResult, Parameterization, Schedule, StepReport};
pub use scalar::Real;

pub type Complex = SimplicialComplex<f64>;
pub type Complex32 = SimplicialComplex<f32>;
pub type Weights = DifferentialWeights<f64>;
pub type Weights32 = DifferentialWeights<f32>;
pub type Constraints = BoundaryConstraint<f64>;
