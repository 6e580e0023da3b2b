//! Numeric building blocks: generic scalars, duals, 3-vectors, sparse CSR.

pub mod dense;
pub mod dual;
pub mod hdual;
pub mod scalar;
pub mod sparse;
pub mod vec3;

pub use dual::Dual;
pub use hdual::HDual;
pub use scalar::Scalar;
pub use sparse::CsrPattern;
pub use vec3::V3;
