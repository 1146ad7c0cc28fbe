//! Approximate maximum inner product search built on hyperplane LSH, and the
//! value-iteration algorithms for finite linear MDPs that use it to make each
//! value update sublinear in the number of actions.
//!
//! Layering, bottom up:
//!
//! * [`lsh`] answers (c̄, r)-approximate near neighbor queries on the sphere.
//! * [`maxip`] reduces (c, τ)-Max-IP to ANN through asymmetric transforms.
//! * [`matnorm`] reduces maximum matrix-norm search to Max-IP over lifted
//!   outer products.
//! * [`adaptive`] hardens Max-IP indices against adaptively chosen queries.
//! * [`mdp`] generates, validates and exactly solves linear MDPs.
//! * [`lsvi`] and [`ucb`] implement the learning algorithms and their
//!   LSH-backed variants.

pub mod adaptive;
pub mod error;
pub mod linalg;
pub mod lsh;
pub mod lsvi;
pub mod matnorm;
pub mod maxip;
pub mod mdp;
pub mod ucb;

pub use error::{Error, Result};
