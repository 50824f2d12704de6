//! Unsupervised combinatorial optimization with aligned derandomization.
//!
//! Continuous decisions in `[0,1]^n` are read as independent Bernoulli
//! probabilities. A problem supplies a hard objective on `{0,1}^n` and a
//! differentiable surrogate on `[0,1]^n`. The [`derand`] module turns
//! continuous decisions into binary ones (sampling, iterative rounding,
//! greedy rounding) and provides softmax-relaxed versions of the two
//! rounding schemes that can be differentiated end to end with [`diff`].
//! [`misalign`] measures how often surrogate and post-rounding objective
//! disagree on ordering, and [`train`] optimizes decisions on a single
//! instance through the (optionally soft-rounded) surrogate.

pub mod decisions;
pub mod derand;
pub mod diff;
pub mod error;
pub mod misalign;
pub mod problems;
pub mod seed;
pub mod train;

pub use decisions::{threshold, validate_continuous, BinaryDecisions, ContinuousDecisions};
pub use derand::{RoundingOrder, Scheme, SoftConfig};
pub use diff::{Scalar, Tape, Var, VectorJacobian};
pub use error::{Error, Result};
pub use problems::{FacilityProblem, Problem, QuadraticProblem};
pub use seed::SeedStream;
