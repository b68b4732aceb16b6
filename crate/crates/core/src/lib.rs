//! Numerical laboratory for compact group extensions of intermittent
//! interval maps.
//!
//! The base dynamics is the LSV family `f(x) = x(1 + (2x)^gamma)` on
//! `[0, 1/2]`, `2x - 1` on `(1/2, 1]`, extended to `X x G` by a cocycle
//! `h: X -> G` into a compact orthogonal matrix group,
//! `(x, g) -> (f x, g h(x))`. The crate simulates Birkhoff sums of
//! equivariant observables `phi(x, g) = g v(x)`, builds the exact
//! first-return structure on `Y = [1/2, 1]`, discretises the twisted
//! transfer operator of the induced map, and runs the statistical checks
//! that separate normal diffusion from anomalous diffusion: central limit
//! behaviour, suppression of superdiffusion when `v(0)` is orthogonal to
//! the fixed space of `h(0)`, heavy-tail exponents, and Green-Kubo
//! cross-validation of the limiting covariance.
//!
//! Each module maps onto one layer of that pipeline:
//!
//! * [`dynamics`] - the interval map, branch inverses, return times.
//! * [`groups`] - orthogonal groups, cocycles, fixed spaces, Haar sampling.
//! * [`inducing`] - the first-return partition and induced observables.
//! * [`ensemble`] - parallel Monte Carlo over the skew product.
//! * [`stats`] - estimators and hypothesis checks on ensembles.
//! * [`transfer`] - Ulam discretisation of the (twisted) transfer operator.
//! * [`cli`] - configuration, reports, serialization and the run drivers.
//!
//! The `examples/` directory contains one runnable example per capability;
//! `src/main.rs` is a thin command-line front end over [`cli`].

pub mod accum;
pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fitting;
pub mod groups;
pub mod inducing;
pub mod stats;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
