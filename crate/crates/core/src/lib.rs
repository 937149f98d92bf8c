//! Certification and decomposition of polynomial dynamical networks.
//!
//! The pipeline computes a quadratic Lyapunov function per subsystem, scales
//! it to a certified region-of-attraction estimate, synthesizes a Metzler
//! comparison matrix row by row with sum-of-squares programs, bounds the
//! power flowing along every edge, and finally partitions the network with
//! normalized spectral clustering on the worst-case energy-flow graph.
//! Every certificate can be re-checked against direct simulation.
//!
//! The algebraic layers ([`polyalg`], [`linalg`]) are generic over the
//! scalar type; the optimization layers work in `f64`, which is what the
//! tolerances of the interior-point solver require.

pub mod certify;
pub mod flowgraph;
pub mod linalg;
pub mod netmodel;
pub mod polyalg;
pub mod scenario;
pub mod sdpsos;
pub mod simkit;

mod scalar;

pub use scalar::Scalar;

/// Sparse multivariate polynomial with `f64` coefficients.
pub type Polynomial = polyalg::Poly<f64>;
/// Dense row-major `f64` matrix.
pub type DenseMatrix = linalg::Matrix<f64>;
pub use polyalg::Monomial;

/// Pretty JSON with object keys in sorted order, newline-terminated.
///
/// Artifacts written through this are byte-stable across runs.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> String {
    // serde_json's map type is ordered, so going through `Value` sorts keys
    let v = serde_json::to_value(value).expect("artifact types serialize to JSON");
    let mut s = serde_json::to_string_pretty(&v).expect("JSON values print");
    s.push('\n');
    s
}
