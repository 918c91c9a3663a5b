//! Reparametrization-invariant Lagrangian dynamics.
//!
//! Second-order jets, an expression language for field profiles, symmetric
//! tensor fields, homogeneous Lagrangians and their equations of motion,
//! adaptive integration with gauge projection, the radial S_n reduction,
//! fictitious-force dynamics and a stationary-action cross-check.

// `!(x > 0.0)` is used deliberately so NaN fails validation; failures carry
// their partial trajectories by value.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod checks;
pub mod eom;
pub mod error;
pub mod expr;
pub mod fictitious;
pub mod integrate;
pub mod jets;
pub mod lagrangian;
pub mod oracle;
pub mod snradial;
pub mod tensors;

pub use eom::{Gauge, GaugeChoice, GaugeTarget};
pub use error::{Error, Result};
pub use expr::Expr;
pub use fictitious::{PointSource, SivConfig, Transform};
pub use integrate::{IntegratorConfig, State, Trajectory};
pub use jets::{Jet2, Scalar};
pub use lagrangian::{CanonicalTerm, Lagrangian, LagrangianSpec};
pub use oracle::{DiscretePath, Fixture, Minimized};
pub use snradial::{PhiTerm, RadialState, SnRadialSystem};
pub use tensors::{SymTensor, SymTensorField};
