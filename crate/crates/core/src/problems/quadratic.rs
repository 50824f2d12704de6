use serde::{Deserialize, Serialize};

use super::{check_dimension, Problem};
use crate::decisions::BinaryDecisions;
use crate::diff::Scalar;
use crate::error::{Error, Result};
use crate::seed::{standard_normal, SeedStream};

/// `f(D) = Σ_ij α_ij d_i d_j` on `{0,1}^n` with no constraints. The
/// surrogate applies the same bilinear form to continuous entries.
///
/// With a nonzero diagonal the surrogate is not the Bernoulli expectation
/// of `f` (`E[d_i²] = p_i`, not `p_i²`); it is exact for zero-diagonal `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    n: usize,
    // row-major n × n
    alpha: Vec<f64>,
}

/// JSON form: `{"alpha": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInstance {
    pub alpha: Vec<Vec<f64>>,
}

impl QuadraticProblem {
    pub fn new(alpha: Vec<Vec<f64>>) -> Result<Self> {
        let n = alpha.len();
        if let Some(row) = alpha.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidInstance(format!("row {row} of alpha has length {}, expected {n}", alpha[row].len())));
        }
        let flat: Vec<f64> = alpha.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("alpha has a non-finite entry".into()));
        }
        Ok(QuadraticProblem { n, alpha: flat })
    }

    /// All `n²` coefficients i.i.d. standard normal, row-major.
    pub fn sample(n: usize, seed: SeedStream) -> Self {
        let mut rng = seed.rng();
        let alpha = (0..n * n).map(|_| standard_normal(&mut rng)).collect();
        QuadraticProblem { n, alpha }
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.alpha[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.alpha.chunks(self.n.max(1)).take(self.n)
    }

    pub fn to_instance(&self) -> QuadraticInstance {
        QuadraticInstance { alpha: self.rows().map(<[f64]>::to_vec).collect() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: QuadraticInstance = serde_json::from_str(text)?;
        Self::new(inst.alpha)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_instance()).expect("serializable")
    }

    /// `Σ_{i≠j} (α_ij + α_ji) x_i`, the coefficient of `x_j` off the diagonal.
    fn cross_coefficient<S: Scalar>(&self, x: &[S], j: usize) -> S {
        let terms: Vec<(S, f64)> = (0..self.n)
            .filter(|&i| i != j)
            .map(|i| (x[i], self.alpha(i, j) + self.alpha(j, i)))
            .collect();
        S::linear(0.0, &terms)
    }
}

/// Checked form of the hard objective.
pub fn quad_hard(p: &QuadraticProblem, d: &BinaryDecisions) -> Result<f64> {
    check_dimension(p.n, d.len())?;
    Ok(p.hard_value(d.bits()))
}

impl Problem for QuadraticProblem {
    fn dimension(&self) -> usize {
        self.n
    }

    fn hard_value(&self, bits: &[bool]) -> f64 {
        let ones: Vec<usize> = (0..self.n).filter(|&i| bits[i]).collect();
        ones.iter().map(|&i| ones.iter().map(|&j| self.alpha(i, j)).sum::<f64>()).sum()
    }

    fn is_feasible(&self, _d: &BinaryDecisions) -> bool {
        true
    }

    fn surrogate<S: Scalar>(&self, x: &[S]) -> S {
        let v: Vec<f64> = x.iter().map(|s| s.value()).collect();
        let n = self.n;
        let mut value = 0.0;
        for i in 0..n {
            let row = &self.alpha[i * n..(i + 1) * n];
            value += v[i] * row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        if !S::RECORDS {
            return S::constant(value);
        }
        // ∂/∂x_k = Σ_j (α_kj + α_jk) x_j
        let terms: Vec<(S, f64)> = (0..n)
            .map(|k| {
                let g = (0..n).map(|j| (self.alpha(k, j) + self.alpha(j, k)) * v[j]).sum();
                (x[k], g)
            })
            .collect();
        S::fused(value, &terms)
    }

    fn flip_delta<S: Scalar>(&self, x: &[S], j: usize) -> [S; 2] {
        // f̃(x | x_j := b) − f̃(x) = (b − x_j) c_j + α_jj (b² − x_j²)
        let c = self.cross_coefficient(x, j);
        let xj = x[j];
        let ajj = self.alpha(j, j);
        let sq = xj * xj;
        let d0 = xj * c + sq * ajj;
        let d1 = (xj - 1.0) * c + (sq - 1.0) * ajj;
        [d0, d1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decisions::ContinuousDecisions;
    use crate::diff::{grad_check, Tape};
    use crate::problems::{full_flip_delta, oracle};
    use proptest::prelude::*;
    use rand::Rng;

    fn zero_diagonal(n: usize, seed: u64) -> QuadraticProblem {
        let mut p = QuadraticProblem::sample(n, SeedStream::new(seed));
        for i in 0..n {
            p.alpha[i * n + i] = 0.0;
        }
        p
    }

    fn random_point(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeedStream::new(seed).child(99).rng();
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn hard_objective_examples() {
        let id = QuadraticProblem::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(quad_hard(&id, &BinaryDecisions::new(vec![true, true])).unwrap(), 2.0);
        let p = QuadraticProblem::sample(5, SeedStream::new(3));
        assert_eq!(quad_hard(&p, &BinaryDecisions::zeros(5)).unwrap(), 0.0);
        let upper = QuadraticProblem::new(vec![vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(quad_hard(&upper, &BinaryDecisions::new(vec![true, true])).unwrap(), 2.0);
        assert_eq!(
            quad_hard(&upper, &BinaryDecisions::zeros(3)),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        );
    }

    #[test]
    fn surrogate_examples() {
        let p = QuadraticProblem::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let half = ContinuousDecisions::uniform(2, 0.5).unwrap();
        assert_eq!(p.surrogate_value(&half).unwrap(), 0.5);
        assert!(p.surrogate_value(&ContinuousDecisions::uniform(3, 0.5).unwrap()).is_err());
    }

    #[test]
    fn rejects_ragged_or_non_finite_alpha() {
        assert!(QuadraticProblem::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(QuadraticProblem::new(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn surrogate_extends_hard_objective_exhaustively() {
        for n in [0, 1, 4, 9] {
            let p = QuadraticProblem::sample(n, SeedStream::new(n as u64));
            for mask in 0..1u64 << n {
                let d = BinaryDecisions::from_mask(mask, n);
                let hard = p.hard_objective(&d).unwrap();
                let soft = p.surrogate(&d.to_f64());
                assert!((hard - soft).abs() <= 1e-9, "n={n} mask={mask}");
            }
        }
    }

    #[test]
    fn zero_diagonal_surrogate_is_exact_expectation() {
        let p = zero_diagonal(8, 17);
        let x = random_point(8, 17);
        let exact = oracle::expectation(&x, |d| p.hard_value(d.bits()));
        assert!((p.surrogate(&x) - exact).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_and_centered() {
        let a = QuadraticProblem::sample(50, SeedStream::new(1));
        assert_eq!(a, QuadraticProblem::sample(50, SeedStream::new(1)));
        assert_eq!(a.alpha.len(), 2500);
        let mean = a.alpha.iter().sum::<f64>() / 2500.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert_eq!(QuadraticProblem::sample(1, SeedStream::new(1)).dimension(), 1);
    }

    #[test]
    fn json_round_trip() {
        let p = QuadraticProblem::sample(4, SeedStream::new(8));
        assert_eq!(QuadraticProblem::from_json(&p.to_json()).unwrap(), p);
        assert!(QuadraticProblem::from_json(r#"{"alpha": [[1.0, 2.0]]}"#).is_err());
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let p = QuadraticProblem::sample(10, SeedStream::new(4));
        let x = ContinuousDecisions::new(random_point(10, 4).iter().map(|v| 0.05 + 0.9 * v).collect()).unwrap();
        let err = grad_check(|v| Ok(p.surrogate(v)), &x, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn incremental_deltas_match_full_reevaluation() {
        let p = QuadraticProblem::sample(12, SeedStream::new(21));
        let x = random_point(12, 21);
        for j in 0..12 {
            let fast = p.flip_delta(&x, j);
            let slow = full_flip_delta(&p, &x, j);
            for b in 0..2 {
                assert!((fast[b] - slow[b]).abs() < 1e-10, "j={j} b={b}");
            }
        }
        // the recorded path agrees too, including gradients
        let tape = Tape::new();
        let xs = tape.vars(&x);
        let fast = p.flip_delta(&xs, 3)[1];
        let slow = full_flip_delta(&p, &xs, 3)[1];
        assert!((fast.value() - slow.value()).abs() < 1e-10);
        let gf = crate::diff::backward(fast, &xs);
        let gs = crate::diff::backward(slow, &xs);
        for (a, b) in gf.iter().zip(&gs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_corners_agree(seed in 0u64..1000, mask in any::<u64>()) {
            let n = 30;
            let p = QuadraticProblem::sample(n, SeedStream::new(seed));
            let d = BinaryDecisions::from_mask(mask & ((1 << n) - 1), n);
            prop_assert!((p.hard_value(d.bits()) - p.surrogate(&d.to_f64())).abs() <= 1e-9);
        }
    }
}
