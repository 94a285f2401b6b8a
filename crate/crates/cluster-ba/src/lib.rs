//! Bundle adjustment on lidar point clouds via point-cluster coordinates.
//!
//! Plane and edge features contribute the small eigenvalues of the scatter
//! matrix of their world-frame points as the optimization cost. Instead of
//! enumerating points, each (feature, pose) observation is compressed into a
//! point cluster `(P, v, N)` that is exact under rigid transforms and merging,
//! which makes cost, gradient and Hessian evaluation independent of how many
//! points were scanned.
//!
//! Module tour:
//! - [`geom`]: poses, the `(dphi, dt)` perturbation, rotation exp/log.
//! - [`eig`]: symmetric 3x3 eigendecomposition.
//! - [`cluster`]: the point-cluster coordinate and its noise model.
//! - [`problem`]: features, observations, analytic first/second derivatives.
//! - [`solver`]: damped Newton (LM) iteration with first-pose gauge fixing.
//! - [`uncertainty`]: pose covariance propagated from point noise, NEES.
//! - [`sim`]: synthetic scenes for validation and benchmarks.
//! - [`voxel`]: voxel-grid plane/edge association from raw scans.
//! - [`io`]: plain-text scan/pose/association/report formats.
//! - [`metrics`]: map-quality and trajectory-error metrics.

pub mod cluster;
pub mod eig;
pub mod error;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod problem;
pub mod sim;
pub mod solver;
pub mod uncertainty;
pub mod voxel;

pub use error::{Error, Result};

/// The guide's code blocks compile and run as doc-tests; each module below
/// pulls in one chapter verbatim so the book cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/point-clusters.md")]
    mod point_clusters {}
    #[doc = include_str!("../../../book/src/costs-and-derivatives.md")]
    mod costs_and_derivatives {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/voxel-association.md")]
    mod voxel_association {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
