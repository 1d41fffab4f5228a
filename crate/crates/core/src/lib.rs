//! Exact-arithmetic engine for genus-zero Gromov-Witten structures on toric
//! Deligne-Mumford stacks.
//!
//! The pipeline runs from combinatorial input to closed-form series data:
//!
//! - [`abelian`]: finitely generated abelian groups, Smith normal form,
//!   kernels, cokernels and Gale duality.
//! - [`stackyfan`]: stacky fans, box elements, extensions by lattice points,
//!   Mori cones and effective-degree enumeration.
//! - [`cohomology`]: Chen-Ruan cohomology presented through divisor actions
//!   on inertia sectors.
//! - [`series`]: truncated cohomology-valued Novikov series, hypergeometric
//!   series assembly, asymptotics, mirror maps and quantum products.
//! - [`twist`]: twists by line-bundle data, Euler-class specialization and
//!   quantum periods of complete intersections.
//! - [`birkhoff`]: elimination of positive powers of the loop variable by
//!   derivative corrections.
//!
//! All coefficients are exact rationals; nothing in this crate rounds.

pub mod abelian;
pub mod birkhoff;
pub mod cohomology;
pub mod error;
pub mod poly;
pub mod qmat;
pub mod qnum;
pub mod series;
pub mod stackyfan;
pub mod twist;

pub use error::EngineError;
pub use qnum::{parse_rational, render_rational};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, EngineError>;
