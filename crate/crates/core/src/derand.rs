//! Derandomization: turning continuous decisions into binary ones.
//!
//! Hard schemes work on plain values. The soft schemes replace the
//! discrete selection with a temperature softmax and are generic over
//! [`Scalar`], so the same code runs recorded for training and plain for
//! the misalignment sweeps.
//!
//! Ties prefer `b = 0`, then the smaller index.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decisions::{BinaryDecisions, ContinuousDecisions};
use crate::diff::{stable_softmax, Scalar};
use crate::error::{Error, Result};
use crate::problems::{check_dimension, Problem};
use crate::seed::SeedStream;

/// A visiting order over `0..n` (each index exactly once).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RoundingOrder(Vec<usize>);

impl RoundingOrder {
    pub fn new(sequence: Vec<usize>) -> Result<Self> {
        let n = sequence.len();
        let mut seen = vec![false; n];
        for &i in &sequence {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::param("order", format!("{sequence:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(RoundingOrder(sequence))
    }

    pub fn identity(n: usize) -> Self {
        RoundingOrder((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for RoundingOrder {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        RoundingOrder::new(v)
    }
}

impl From<RoundingOrder> for Vec<usize> {
    fn from(o: RoundingOrder) -> Self {
        o.0
    }
}

/// The identity order, or a uniformly random permutation when seeded.
pub fn default_order(n: usize, seed: Option<SeedStream>) -> RoundingOrder {
    let mut order = RoundingOrder::identity(n);
    if let Some(seed) = seed {
        order.0.shuffle(&mut seed.rng());
    }
    order
}

/// Temperature and step budget of a soft scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftConfig {
    pub tau: f64,
    /// Number of soft-greedy updates; unused by soft-iterative.
    pub steps: usize,
}

impl SoftConfig {
    pub fn new(tau: f64, steps: usize) -> Result<Self> {
        let cfg = SoftConfig { tau, steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("temperature", format!("{} is not a positive finite number", self.tau)));
        }
        if self.steps < 1 {
            return Err(Error::param("steps", "soft-greedy needs at least one step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Sample,
    Iterative,
    Greedy,
    SoftIterative,
    SoftGreedy,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Sample, Scheme::Iterative, Scheme::Greedy, Scheme::SoftIterative, Scheme::SoftGreedy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Sample => "sample",
            Scheme::Iterative => "iterative",
            Scheme::Greedy => "greedy",
            Scheme::SoftIterative => "soft-iterative",
            Scheme::SoftGreedy => "soft-greedy",
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self, Scheme::SoftIterative | Scheme::SoftGreedy)
    }

    /// The soft counterpart of a rounding scheme and vice versa.
    pub fn counterpart(&self) -> Option<Scheme> {
        match self {
            Scheme::Iterative => Some(Scheme::SoftIterative),
            Scheme::Greedy => Some(Scheme::SoftGreedy),
            Scheme::SoftIterative => Some(Scheme::Iterative),
            Scheme::SoftGreedy => Some(Scheme::Greedy),
            Scheme::Sample => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::param("scheme", format!("unknown scheme {s:?}")))
    }
}

/// Independent Bernoulli draw per entry.
pub fn sample_round(x: &ContinuousDecisions, seed: SeedStream) -> BinaryDecisions {
    let mut rng = seed.rng();
    BinaryDecisions::new(x.as_slice().iter().map(|&p| rng.gen::<f64>() < p).collect())
}

fn finite_deltas(d: [f64; 2], index: usize) -> Result<[f64; 2]> {
    match d.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(Error::NonFiniteSurrogate { index, value }),
        None => Ok(d),
    }
}

fn round_to_better(d: [f64; 2]) -> f64 {
    if d[1] > d[0] {
        1.0
    } else {
        0.0
    }
}

fn into_binary(x: &[f64]) -> BinaryDecisions {
    debug_assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
    BinaryDecisions::new(x.iter().map(|&v| v == 1.0).collect())
}

/// Visits entries in `order` and sets each to the bit with the lower
/// surrogate value given everything decided so far.
pub fn iterative_round<P: Problem>(problem: &P, x: &ContinuousDecisions, order: &RoundingOrder) -> Result<BinaryDecisions> {
    check_dimension(problem.dimension(), x.len())?;
    check_dimension(problem.dimension(), order.len())?;
    let mut d = x.as_slice().to_vec();
    for &j in order.as_slice() {
        let delta = finite_deltas(problem.flip_delta(&d, j), j)?;
        d[j] = round_to_better(delta);
    }
    Ok(into_binary(&d))
}

/// The best single-entry assignment: largest delta, ties to the smaller
/// index and then to `b = 0`.
fn best_move(deltas: &[[f64; 2]]) -> Result<Option<(usize, usize, f64)>> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (j, &d) in deltas.iter().enumerate() {
        let d = finite_deltas(d, j)?;
        for (b, &v) in d.iter().enumerate() {
            if best.is_none_or(|(_, _, bv)| v > bv) {
                best = Some((j, b, v));
            }
        }
    }
    Ok(best)
}

/// Greedy rounding.
///
/// Repeatedly applies the single-entry assignment with the largest
/// surrogate decrease until none decreases it. Entries still fractional
/// at that point are then rounded in index order to whichever bit is
/// better (ties to 0), so the output is always binary.
pub fn greedy_round<P: Problem>(problem: &P, x: &ContinuousDecisions) -> Result<BinaryDecisions> {
    check_dimension(problem.dimension(), x.len())?;
    let n = x.len();
    let mut d = x.as_slice().to_vec();
    // every move strictly decreases f̃ over a finite state space; the cap
    // only guards against rounding noise producing a two-cycle
    let max_moves = 64 * (n + 1) * (n + 1);
    for _ in 0..max_moves {
        match best_move(&problem.flip_deltas(&d))? {
            Some((j, b, delta)) if delta > 0.0 => d[j] = b as f64,
            _ => break,
        }
    }
    for j in 0..n {
        if d[j] != 0.0 && d[j] != 1.0 {
            let delta = finite_deltas(problem.flip_delta(&d, j), j)?;
            d[j] = round_to_better(delta);
        }
    }
    Ok(into_binary(&d))
}

/// Soft iterative rounding: entry `j` (in `order`) becomes the softmax
/// weight of `b = 1` over the two deltas at temperature `tau`.
pub fn soft_iterative<P: Problem, S: Scalar>(problem: &P, x: &[S], order: &RoundingOrder, tau: f64) -> Result<Vec<S>> {
    check_dimension(problem.dimension(), x.len())?;
    check_dimension(problem.dimension(), order.len())?;
    SoftConfig::new(tau, 1)?;
    let mut d = x.to_vec();
    for &j in order.as_slice() {
        let delta = problem.flip_delta(&d, j);
        d[j] = stable_softmax(&delta, tau)?[1];
    }
    Ok(d)
}

/// Soft greedy rounding with a fixed step budget.
///
/// Each step takes the softmax over all `2n` deltas and moves every entry
/// to the convex combination of staying put, being set to 0 (weight
/// `w_{j,0}`) and being set to 1 (weight `w_{j,1}`).
pub fn soft_greedy<P: Problem, S: Scalar>(problem: &P, x: &[S], cfg: &SoftConfig) -> Result<Vec<S>> {
    check_dimension(problem.dimension(), x.len())?;
    cfg.validate()?;
    let mut d = x.to_vec();
    if d.is_empty() {
        return Ok(d);
    }
    for _ in 0..cfg.steps {
        let scores: Vec<S> = problem.flip_deltas(&d).into_iter().flatten().collect();
        let w = stable_softmax(&scores, cfg.tau)?;
        d = d
            .iter()
            .zip(w.chunks_exact(2))
            .map(|(&dj, w)| dj * (w[0] + w[1]).rsub(1.0) + w[1])
            .collect();
    }
    Ok(d)
}

/// Plain-valued soft rounding packaged as decisions (clamped against
/// round-off at the interval ends).
pub fn soft_round<P: Problem>(problem: &P, x: &ContinuousDecisions, scheme: Scheme, order: &RoundingOrder, cfg: &SoftConfig) -> Result<ContinuousDecisions> {
    let out = match scheme {
        Scheme::SoftIterative => soft_iterative(problem, x.as_slice(), order, cfg.tau)?,
        Scheme::SoftGreedy => soft_greedy(problem, x.as_slice(), cfg)?,
        other => return Err(Error::param("scheme", format!("{other} is not a soft scheme"))),
    };
    ContinuousDecisions::from_clamped(out)
}

/// Hard rounding by a named scheme. `sample` needs a seed.
pub fn hard_round<P: Problem>(problem: &P, x: &ContinuousDecisions, scheme: Scheme, order: &RoundingOrder, seed: Option<SeedStream>) -> Result<BinaryDecisions> {
    match scheme {
        Scheme::Iterative => iterative_round(problem, x, order),
        Scheme::Greedy => greedy_round(problem, x),
        Scheme::Sample => {
            let seed = seed.ok_or_else(|| Error::param("seed", "sampling requires a seed"))?;
            check_dimension(problem.dimension(), x.len())?;
            Ok(sample_round(x, seed))
        }
        other => Err(Error::param("scheme", format!("{other} is not a hard scheme"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::diff::{backward, grad_check, Tape};
    use crate::problems::QuadraticProblem;
    use proptest::prelude::*;

    fn quad(alpha: Vec<Vec<f64>>) -> QuadraticProblem {
        QuadraticProblem::new(alpha).unwrap()
    }

    fn cd(v: Vec<f64>) -> ContinuousDecisions {
        ContinuousDecisions::new(v).unwrap()
    }

    fn random_point(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeedStream::new(seed).child(3).rng();
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn sampling_degenerate_and_statistical() {
        let s = SeedStream::new(1);
        assert_eq!(sample_round(&ContinuousDecisions::uniform(5, 1.0).unwrap(), s).bits(), &[true; 5]);
        assert_eq!(sample_round(&ContinuousDecisions::uniform(5, 0.0).unwrap(), s), BinaryDecisions::zeros(5));
        let half = ContinuousDecisions::uniform(4, 0.5).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..10_000 {
            for (c, &b) in counts.iter_mut().zip(sample_round(&half, s.child(i)).bits()) {
                *c += b as usize;
            }
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.5).abs() < 0.02, "{c}");
        }
    }

    #[test]
    fn iterative_separable_negative_identity_opens_everything() {
        let p = quad(vec![vec![-1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, -1.0]]);
        for order in [vec![0, 1, 2], vec![2, 0, 1]] {
            let out = iterative_round(&p, &cd(vec![0.1, 0.9, 0.4]), &RoundingOrder::new(order).unwrap()).unwrap();
            assert_eq!(out.bits(), &[true; 3]);
        }
    }

    #[test]
    fn iterative_zero_matrix_ties_to_zero() {
        let p = quad(vec![vec![0.0; 3]; 3]);
        let out = iterative_round(&p, &cd(vec![0.2, 0.8, 0.5]), &RoundingOrder::identity(3)).unwrap();
        assert_eq!(out, BinaryDecisions::zeros(3));
    }

    #[test]
    fn iterative_dimension_mismatch() {
        let p = quad(vec![vec![0.0; 2]; 2]);
        assert!(iterative_round(&p, &cd(vec![0.5; 3]), &RoundingOrder::identity(3)).is_err());
        assert!(iterative_round(&p, &cd(vec![0.5; 2]), &RoundingOrder::identity(3)).is_err());
    }

    #[test]
    fn greedy_two_by_two_trace() {
        let p = quad(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]);
        // f̃(0.5, 0.5) = -0.5. Candidates: x0:=0 → 0 (Δ=-0.5), x0:=1 → -1 (Δ=0.5),
        // likewise for x1. Best is (0, 1) by the index tie-break, then x1:=1 gives -2.
        let start = [0.5, 0.5];
        let d = p.flip_deltas(&start);
        assert_eq!(d, vec![[-0.5, 0.5], [-0.5, 0.5]]);
        let after = [1.0, 0.5];
        assert_eq!(p.flip_deltas(&after)[1], [-1.0, 1.0]);
        let out = greedy_round(&p, &cd(vec![0.5, 0.5])).unwrap();
        assert_eq!(out.bits(), &[true, true]);
        assert_eq!(p.hard_objective(&out).unwrap(), -2.0);
        let brute = (0..4u64).map(|m| p.hard_value(BinaryDecisions::from_mask(m, 2).bits())).fold(f64::INFINITY, f64::min);
        assert_eq!(brute, -2.0);
    }

    #[test]
    fn greedy_keeps_binary_local_minimum() {
        let p = quad(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]);
        let out = greedy_round(&p, &cd(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.bits(), &[true, true]);
    }

    #[test]
    fn greedy_zero_matrix_rounds_down() {
        let p = quad(vec![vec![0.0; 2]; 2]);
        assert_eq!(greedy_round(&p, &cd(vec![0.3, 0.7])).unwrap(), BinaryDecisions::zeros(2));
    }

    #[test]
    fn non_finite_surrogate_aborts() {
        let p = quad(vec![vec![1e308, 1e308], vec![1e308, 1e308]]);
        let err = iterative_round(&p, &cd(vec![1.0, 1.0]), &RoundingOrder::identity(2)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSurrogate { .. }));
        assert!(greedy_round(&p, &cd(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn iterative_never_beats_brute_force() {
        let mut p = QuadraticProblem::sample(10, SeedStream::new(77));
        p = QuadraticProblem::new(
            p.rows().enumerate().map(|(i, r)| r.iter().enumerate().map(|(j, &a)| if i == j { 0.0 } else { a }).collect()).collect(),
        )
        .unwrap();
        let best = (0..1u64 << 10).map(|m| p.hard_value(BinaryDecisions::from_mask(m, 10).bits())).fold(f64::INFINITY, f64::min);
        let out = iterative_round(&p, &cd(random_point(10, 77)), &RoundingOrder::identity(10)).unwrap();
        assert!(p.hard_objective(&out).unwrap() >= best);
    }

    #[test]
    fn soft_iterative_zero_matrix_gives_halves() {
        let p = quad(vec![vec![0.0; 3]; 3]);
        let out = soft_iterative(&p, &[0.1, 0.9, 0.0], &RoundingOrder::identity(3), 0.37).unwrap();
        assert_eq!(out, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn soft_iterative_high_temperature_is_uniform() {
        // |Δ_1 − Δ_0| ≤ 4 here, so each weight is within 1e-6 of 0.5
        let p = quad(vec![vec![0.3, -0.8, 0.5], vec![0.1, -0.2, 0.9], vec![-0.7, 0.4, 0.2]]);
        let out = soft_iterative(&p, &random_point(3, 2), &RoundingOrder::identity(3), 1e6).unwrap();
        assert!(out.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn soft_iterative_low_temperature_matches_hard() {
        let p = QuadraticProblem::sample(12, SeedStream::new(31));
        let x = random_point(12, 31);
        let order = default_order(12, Some(SeedStream::new(31)));
        let soft = soft_iterative(&p, &x, &order, 1e-4).unwrap();
        let hard = iterative_round(&p, &cd(x), &order).unwrap();
        assert_eq!(crate::decisions::threshold(&cd(soft), 0.5).unwrap(), hard);
    }

    #[test]
    fn soft_rejects_bad_temperature() {
        let p = quad(vec![vec![0.0; 2]; 2]);
        assert!(soft_iterative(&p, &[0.5, 0.5], &RoundingOrder::identity(2), 0.0).is_err());
        assert!(soft_greedy(&p, &[0.5, 0.5], &SoftConfig { tau: -1.0, steps: 1 }).is_err());
        assert!(soft_greedy(&p, &[0.5, 0.5], &SoftConfig { tau: 1.0, steps: 0 }).is_err());
    }

    #[test]
    fn soft_greedy_zero_matrix_fixed_point() {
        let p = quad(vec![vec![0.0; 4]; 4]);
        for tau in [0.01, 1.0, 100.0] {
            let out = soft_greedy(&p, &[0.5; 4], &SoftConfig { tau, steps: 7 }).unwrap();
            assert_eq!(out, vec![0.5; 4]);
        }
    }

    #[test]
    fn soft_greedy_low_temperature_concentrates_on_hard_move() {
        let p = QuadraticProblem::sample(9, SeedStream::new(40));
        let x = random_point(9, 40);
        let deltas = p.flip_deltas(&x);
        let (j, b, _) = best_move(&deltas).unwrap().unwrap();
        let out = soft_greedy(&p, &x, &SoftConfig { tau: 1e-4, steps: 1 }).unwrap();
        // total move weight on coordinate i is |out_i − x_i| / |target − x_i|
        let target = b as f64;
        let weight_j = (out[j] - x[j]) / (target - x[j]);
        assert!(weight_j > 1.0 - 1e-6, "{weight_j}");
        for i in (0..9).filter(|&i| i != j) {
            assert!((out[i] - x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn default_order_examples() {
        assert_eq!(default_order(3, None).as_slice(), &[0, 1, 2]);
        let a = default_order(3, Some(SeedStream::new(5)));
        assert!(RoundingOrder::new(a.as_slice().to_vec()).is_ok());
        assert_eq!(a, default_order(3, Some(SeedStream::new(5))));
        assert!(RoundingOrder::new(vec![0, 0, 1]).is_err());
        assert!(RoundingOrder::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("annealed".parse::<Scheme>().is_err());
        assert_eq!(serde_json::to_string(&Scheme::SoftGreedy).unwrap(), "\"soft-greedy\"");
    }

    #[test]
    fn soft_pipelines_are_differentiable() {
        let p = QuadraticProblem::sample(6, SeedStream::new(50));
        let x = cd(random_point(6, 50).iter().map(|v| 0.1 + 0.8 * v).collect());
        let order = RoundingOrder::identity(6);
        for tau in [1.0, 0.1] {
            let e1 = grad_check(|v| Ok(p.surrogate(&soft_iterative(&p, v, &order, tau)?)), &x, 1e-5).unwrap();
            let e2 = grad_check(|v| Ok(p.surrogate(&soft_greedy(&p, v, &SoftConfig { tau, steps: 6 })?)), &x, 1e-5).unwrap();
            assert!(e1 < 1e-4 && e2 < 1e-4, "tau={tau}: {e1} {e2}");
        }
    }

    #[test]
    fn recorded_and_plain_soft_paths_agree() {
        let p = QuadraticProblem::sample(7, SeedStream::new(51));
        let x = random_point(7, 51);
        let cfg = SoftConfig { tau: 0.5, steps: 5 };
        let plain = soft_greedy(&p, &x, &cfg).unwrap();
        let tape = Tape::new();
        let xs = tape.vars(&x);
        let rec = soft_greedy(&p, &xs, &cfg).unwrap();
        for (a, b) in plain.iter().zip(&rec) {
            assert_eq!(*a, b.value());
        }
        let g = backward(p.surrogate(&rec), &xs);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn hard_outputs_are_binary(seed in 0u64..10_000, n in 1usize..9, binary_start in any::<bool>()) {
            let p = QuadraticProblem::sample(n, SeedStream::new(seed));
            let mut x = random_point(n, seed);
            if binary_start {
                x.iter_mut().for_each(|v| *v = v.round());
            }
            let x = cd(x);
            let it = iterative_round(&p, &x, &default_order(n, Some(SeedStream::new(seed)))).unwrap();
            let gr = greedy_round(&p, &x).unwrap();
            prop_assert_eq!(it.len(), n);
            prop_assert_eq!(gr.len(), n);
        }

        #[test]
        fn soft_greedy_stays_in_unit_cube(seed in 0u64..10_000, tau in 1e-3f64..10.0, steps in 1usize..6) {
            let p = QuadraticProblem::sample(6, SeedStream::new(seed));
            let out = soft_greedy(&p, &random_point(6, seed), &SoftConfig { tau, steps }).unwrap();
            prop_assert!(out.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }

        #[test]
        fn orders_are_permutations(n in 0usize..50, seed in any::<u64>()) {
            let o = default_order(n, Some(SeedStream::new(seed)));
            let mut s = o.as_slice().to_vec();
            s.sort_unstable();
            prop_assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }
}
