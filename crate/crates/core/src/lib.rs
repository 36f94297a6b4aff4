//! Discrete Besov-type semi-norms, renormalized local energies, trace
//! inequalities and cutoff jumping kernels on the Sierpinski gasket.

pub mod experiments;
pub mod functions;
pub mod gasket;
pub mod kernels;
pub mod scalar;
pub mod seminorms;

pub use num_rational::BigRational;

/// Exact rational scalar.
pub type Exact = BigRational;
/// Grid function with `f64` values.
pub type GridFunctionF64 = functions::GridFunction<f64>;
/// Grid function with `f32` values.
pub type GridFunctionF32 = functions::GridFunction<f32>;
/// Grid function with exact rational values.
pub type ExactGridFunction = functions::GridFunction<Exact>;
