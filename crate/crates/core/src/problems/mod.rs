//! Concrete problems: a hard objective on `{0,1}^n`, a feasibility
//! predicate, and a surrogate on `[0,1]^n` that agrees with the hard
//! objective on feasible corners.

mod facility;
mod quadratic;

pub use facility::{fl_hard, FacilityInstance, FacilityProblem};
pub use quadratic::{quad_hard, QuadraticInstance, QuadraticProblem};

use crate::decisions::{BinaryDecisions, ContinuousDecisions};
use crate::diff::Scalar;
use crate::error::{Error, Result};

/// The capability every problem provides to the rounding schemes and the
/// trainer.
///
/// Slice-taking methods assume `x.len() == self.dimension()`; the checked
/// wrappers ([`Problem::hard_objective`], [`Problem::surrogate_value`])
/// validate dimensions first.
pub trait Problem: Sync {
    fn dimension(&self) -> usize;

    /// The hard objective on bits of the right length.
    fn hard_value(&self, bits: &[bool]) -> f64;

    fn is_feasible(&self, d: &BinaryDecisions) -> bool;

    fn surrogate<S: Scalar>(&self, x: &[S]) -> S;

    /// `[f̃(x) − f̃(x | x_j := 0), f̃(x) − f̃(x | x_j := 1)]`.
    fn flip_delta<S: Scalar>(&self, x: &[S], j: usize) -> [S; 2] {
        full_flip_delta(self, x, j)
    }

    /// [`Problem::flip_delta`] for every coordinate.
    fn flip_deltas<S: Scalar>(&self, x: &[S]) -> Vec<[S; 2]> {
        (0..x.len()).map(|j| self.flip_delta(x, j)).collect()
    }

    fn hard_objective(&self, d: &BinaryDecisions) -> Result<f64> {
        check_dimension(self.dimension(), d.len())?;
        Ok(self.hard_value(d.bits()))
    }

    fn surrogate_value(&self, x: &ContinuousDecisions) -> Result<f64> {
        check_dimension(self.dimension(), x.len())?;
        Ok(self.surrogate(x.as_slice()))
    }
}

/// Flip deltas by re-evaluating the surrogate from scratch. This is the
/// reference definition that incremental implementations must match.
pub fn full_flip_delta<P: Problem + ?Sized, S: Scalar>(problem: &P, x: &[S], j: usize) -> [S; 2] {
    let base = problem.surrogate(x);
    let mut moved = x.to_vec();
    [0.0, 1.0].map(|b| {
        moved[j] = S::constant(b);
        base - problem.surrogate(&moved)
    })
}

pub(crate) fn check_dimension(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
