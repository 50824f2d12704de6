use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_dimension, Problem};
use crate::decisions::BinaryDecisions;
use crate::diff::Scalar;
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use rand::Rng;

/// Facility location with a cardinality budget.
///
/// Every location is also a candidate center. The hard objective is the
/// total distance from each location to its closest open center, or
/// `n · M` when nothing is open; feasibility is "at most `k` open".
///
/// The surrogate is `E[service] + β · Pr[#open > k]` under independent
/// Bernoulli openings. Per location, candidates are visited in ascending
/// distance order (fixed at construction), so the expectation is
/// `Σ_i d_(i) p_(i) Π_{l<i} (1 − p_(l)) + M Π_l (1 − p_l)`. The overflow
/// probability is an exact Poisson-binomial tail. Both terms are
/// multilinear in the probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FacilityProblem {
    data: Arc<FacilityData>,
}

#[derive(Debug, PartialEq)]
struct FacilityData {
    n: usize,
    dist: Vec<f64>,
    k: usize,
    beta: f64,
    penalty: f64,
    points: Option<Vec<[f64; 2]>>,
    // order[v * n + r] is the candidate of rank r for location v
    order: Vec<u32>,
    rank: Vec<u32>,
}

/// JSON form: `{"points": [[x, y], ...], "k": int, "beta": real}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityInstance {
    pub points: Vec<[f64; 2]>,
    pub k: usize,
    pub beta: f64,
}

/// Distributions of how many of a run of Bernoulli variables are 1,
/// truncated to counts `0..=k`.
#[derive(Clone)]
struct Counts(Vec<f64>);

impl Counts {
    fn empty(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[0] = 1.0;
        Counts(c)
    }

    fn push(&mut self, p: f64) {
        let c = &mut self.0;
        for i in (1..c.len()).rev() {
            c[i] = c[i] * (1.0 - p) + c[i - 1] * p;
        }
        c[0] *= 1.0 - p;
    }

    /// Probability that the union of `self` and `other` has exactly `total` ones.
    fn joint_at(&self, other: &Counts, total: usize) -> f64 {
        (0..=total).map(|a| self.0[a] * other.0[total - a]).sum()
    }
}

/// Per-location quantities indexed by rank.
struct Profiles {
    // q[v*n + r] = Π_{l<r} (1 − p_(l)); s[v*n + r] = expected cost when ranks ≤ r are all closed
    q: Vec<f64>,
    s: Vec<f64>,
    value: f64,
}

impl FacilityProblem {
    /// Builds a problem from a full distance matrix (`dist[v][c]`, location
    /// to candidate), a budget `1 ≤ k ≤ n`, a constraint coefficient
    /// `β > 0` and an empty-selection penalty `M ≥ max dist`.
    pub fn from_distances(dist: Vec<Vec<f64>>, k: usize, beta: f64, penalty: f64) -> Result<Self> {
        let n = dist.len();
        if let Some(row) = dist.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidInstance(format!("distance row {row} has length {}, expected {n}", dist[row].len())));
        }
        let flat: Vec<f64> = dist.into_iter().flatten().collect();
        if flat.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInstance("distances must be finite and non-negative".into()));
        }
        let max = flat.iter().copied().fold(0.0, f64::max);
        if !(penalty.is_finite() && penalty >= max) {
            return Err(Error::InvalidInstance(format!("penalty {penalty} is below the largest distance {max}")));
        }
        Self::build(n, flat, k, beta, penalty, None)
    }

    /// Euclidean instance on the given points with `M` = largest distance.
    pub fn from_points(points: Vec<[f64; 2]>, k: usize, beta: f64) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInstance("point coordinates must be finite".into()));
        }
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for v in 0..n {
            for c in 0..n {
                dist[v * n + c] = (points[v][0] - points[c][0]).hypot(points[v][1] - points[c][1]);
            }
        }
        let penalty = dist.iter().copied().fold(0.0, f64::max);
        Self::build(n, dist, k, beta, penalty, Some(points))
    }

    /// `n` points uniform in the unit square.
    pub fn sample(n: usize, k: usize, beta: f64, seed: SeedStream) -> Result<Self> {
        let mut rng = seed.rng();
        let points = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        Self::from_points(points, k, beta)
    }

    fn build(n: usize, dist: Vec<f64>, k: usize, beta: f64, penalty: f64, points: Option<Vec<[f64; 2]>>) -> Result<Self> {
        if !(1..=n).contains(&k) {
            return Err(Error::InvalidInstance(format!("budget k = {k} must satisfy 1 <= k <= n = {n}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidInstance(format!("beta = {beta} must be positive")));
        }
        let mut order = Vec::with_capacity(n * n);
        let mut rank = vec![0u32; n * n];
        for v in 0..n {
            let row = &dist[v * n..(v + 1) * n];
            let mut cands: Vec<u32> = (0..n as u32).collect();
            cands.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(a.cmp(&b)));
            for (r, &c) in cands.iter().enumerate() {
                rank[v * n + c as usize] = r as u32;
            }
            order.extend(cands);
        }
        Ok(FacilityProblem { data: Arc::new(FacilityData { n, dist, k, beta, penalty, points, order, rank }) })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: FacilityInstance = serde_json::from_str(text)?;
        Self::from_points(inst.points, inst.k, inst.beta)
    }

    /// `None` for instances built from a bare distance matrix.
    pub fn to_instance(&self) -> Option<FacilityInstance> {
        self.data.points.as_ref().map(|points| FacilityInstance { points: points.clone(), k: self.data.k, beta: self.data.beta })
    }

    pub fn to_json(&self) -> Option<String> {
        self.to_instance().map(|i| serde_json::to_string(&i).expect("serializable"))
    }

    pub fn k(&self) -> usize {
        self.data.k
    }

    pub fn beta(&self) -> f64 {
        self.data.beta
    }

    pub fn penalty(&self) -> f64 {
        self.data.penalty
    }

    pub fn distance(&self, v: usize, c: usize) -> f64 {
        self.data.distance(v, c)
    }

    pub fn points(&self) -> Option<&[[f64; 2]]> {
        self.data.points.as_deref()
    }

    /// Expected total service distance under independent openings.
    pub fn expected_service<S: Scalar>(&self, x: &[S]) -> S {
        let p: Vec<f64> = x.iter().map(|s| s.value()).collect();
        let prof = self.data.profiles(&p);
        if !S::RECORDS {
            return S::constant(prof.value);
        }
        let terms: Vec<(S, f64)> = (0..self.data.n).map(|c| (x[c], self.data.service_partial(&prof, c))).collect();
        S::fused(prof.value, &terms)
    }

    /// `Pr[Σ_i Bernoulli(x_i) > k]`.
    pub fn tail_penalty<S: Scalar>(&self, x: &[S]) -> S {
        let p: Vec<f64> = x.iter().map(|s| s.value()).collect();
        let value = self.data.tail_value(&p);
        if !S::RECORDS {
            return S::constant(value);
        }
        let (prefix, suffix) = self.data.count_tables(&p);
        let terms: Vec<(S, f64)> = (0..self.data.n).map(|j| (x[j], self.data.tail_partial(&prefix, &suffix, j))).collect();
        S::fused(value, &terms)
    }
}

impl FacilityData {
    fn distance(&self, v: usize, c: usize) -> f64 {
        self.dist[v * self.n + c]
    }

    fn profiles(&self, p: &[f64]) -> Profiles {
        let n = self.n;
        let mut q = vec![0.0; n * n];
        let mut s = vec![0.0; n * n];
        let mut value = 0.0;
        for v in 0..n {
            let order = &self.order[v * n..(v + 1) * n];
            let (qv, sv) = (&mut q[v * n..(v + 1) * n], &mut s[v * n..(v + 1) * n]);
            sv[n - 1] = self.penalty;
            for r in (0..n - 1).rev() {
                let c = order[r + 1] as usize;
                sv[r] = self.distance(v, c) * p[c] + (1.0 - p[c]) * sv[r + 1];
            }
            qv[0] = 1.0;
            for r in 0..n - 1 {
                qv[r + 1] = qv[r] * (1.0 - p[order[r] as usize]);
            }
            let c0 = order[0] as usize;
            value += self.distance(v, c0) * p[c0] + (1.0 - p[c0]) * sv[0];
        }
        Profiles { q, s, value }
    }

    /// `∂f̃/∂p_j` alone, in `O(n² + nk)` without building tables.
    fn partial_value(&self, p: &[f64], j: usize) -> f64 {
        let n = self.n;
        let mut g = 0.0;
        for v in 0..n {
            let order = &self.order[v * n..(v + 1) * n];
            let r = self.rank[v * n + j] as usize;
            let mut s = self.penalty;
            for &c in order[r + 1..].iter().rev() {
                let c = c as usize;
                s = self.distance(v, c) * p[c] + (1.0 - p[c]) * s;
            }
            let q: f64 = order[..r].iter().map(|&c| 1.0 - p[c as usize]).product();
            g += q * (self.distance(v, j) - s);
        }
        let mut others = Counts::empty(self.k);
        for (i, &pi) in p.iter().enumerate() {
            if i != j {
                others.push(pi);
            }
        }
        g + self.beta * others.0[self.k]
    }

    fn tail_value(&self, p: &[f64]) -> f64 {
        // states 0..=k plus an absorbing overflow state k + 1
        let k = self.k;
        let mut states = vec![0.0; k + 2];
        states[0] = 1.0;
        for &pi in p {
            states[k + 1] += states[k] * pi;
            for c in (1..=k).rev() {
                states[c] = states[c] * (1.0 - pi) + states[c - 1] * pi;
            }
            states[0] *= 1.0 - pi;
        }
        states[k + 1]
    }

    /// `prefix[i]` counts indices `< i`, `suffix[i]` counts indices `>= i`.
    fn count_tables(&self, p: &[f64]) -> (Vec<Counts>, Vec<Counts>) {
        let n = self.n;
        let mut prefix = Vec::with_capacity(n + 1);
        let mut cur = Counts::empty(self.k);
        prefix.push(cur.clone());
        for &pi in p {
            cur.push(pi);
            prefix.push(cur.clone());
        }
        let mut suffix = vec![Counts::empty(self.k); n + 1];
        for i in (0..n).rev() {
            let mut c = suffix[i + 1].clone();
            c.push(p[i]);
            suffix[i] = c;
        }
        (prefix, suffix)
    }

    /// `∂ E[service] / ∂ p_c`.
    fn service_partial(&self, prof: &Profiles, c: usize) -> f64 {
        let n = self.n;
        (0..n)
            .map(|v| {
                let r = self.rank[v * n + c] as usize;
                prof.q[v * n + r] * (self.distance(v, c) - prof.s[v * n + r])
            })
            .sum()
    }

    /// Row `j` of the Hessian of the expected service, added into `row`.
    fn add_service_hessian_row(&self, prof: &Profiles, p: &[f64], j: usize, row: &mut [f64]) {
        let n = self.n;
        for v in 0..n {
            let order = &self.order[v * n..(v + 1) * n];
            let (q, s) = (&prof.q[v * n..(v + 1) * n], &prof.s[v * n..(v + 1) * n]);
            let r = self.rank[v * n + j] as usize;
            let coef = self.distance(v, j) - s[r];
            let mut running = 1.0;
            for l in (0..r).rev() {
                let i = order[l] as usize;
                row[i] -= q[l] * running * coef;
                running *= 1.0 - p[i];
            }
            let mut running = 1.0;
            for (l, &i) in order.iter().enumerate().skip(r + 1) {
                let i = i as usize;
                row[i] -= q[r] * running * (self.distance(v, i) - s[l]);
                running *= 1.0 - p[i];
            }
        }
    }

    /// `∂ Pr[#open > k] / ∂ p_j = Pr[#open among others = k]`.
    fn tail_partial(&self, prefix: &[Counts], suffix: &[Counts], j: usize) -> f64 {
        prefix[j].joint_at(&suffix[j + 1], self.k)
    }

    /// Row `j` of the Hessian of the overflow probability, scaled by
    /// `scale` and added into `row`.
    fn add_tail_hessian_row(&self, prefix: &[Counts], suffix: &[Counts], p: &[f64], j: usize, scale: f64, row: &mut [f64]) {
        let k = self.k;
        // ∂²/∂p_i∂p_j = Pr[others of {i,j} = k − 1] − Pr[others of {i,j} = k]
        let second = |before: &Counts, after: &Counts| {
            let below = if k == 0 { 0.0 } else { before.joint_at(after, k - 1) };
            below - before.joint_at(after, k)
        };
        let mut after = suffix[j + 1].clone();
        for i in (0..j).rev() {
            row[i] += scale * second(&prefix[i], &after);
            after.push(p[i]);
        }
        let mut before = prefix[j].clone();
        for i in j + 1..self.n {
            row[i] += scale * second(&before, &suffix[i + 1]);
            before.push(p[i]);
        }
    }

    /// Records `∂f̃/∂x_j` for each requested `j`, with the Hessian row as
    /// its local gradient when recording.
    fn partials<S: Scalar>(&self, x: &[S], coords: &[usize]) -> Vec<S> {
        let p: Vec<f64> = x.iter().map(|s| s.value()).collect();
        if !S::RECORDS && coords.len() == 1 {
            return vec![S::constant(self.partial_value(&p, coords[0]))];
        }
        let prof = self.profiles(&p);
        let (prefix, suffix) = self.count_tables(&p);
        let mut row = vec![0.0; self.n];
        coords
            .iter()
            .map(|&j| {
                let g = self.service_partial(&prof, j) + self.beta * self.tail_partial(&prefix, &suffix, j);
                if !S::RECORDS {
                    return S::constant(g);
                }
                row.iter_mut().for_each(|h| *h = 0.0);
                self.add_service_hessian_row(&prof, &p, j, &mut row);
                self.add_tail_hessian_row(&prefix, &suffix, &p, j, self.beta, &mut row);
                let terms: Vec<(S, f64)> = (0..self.n).filter(|&i| i != j).map(|i| (x[i], row[i])).collect();
                S::fused(g, &terms)
            })
            .collect()
    }
}

/// Checked form of the hard objective.
pub fn fl_hard(p: &FacilityProblem, d: &BinaryDecisions) -> Result<f64> {
    check_dimension(p.data.n, d.len())?;
    Ok(p.hard_value(d.bits()))
}

impl FacilityData {
    /// `Σ_j u_j ∂²f̃/∂p_i∂p_j` for every `i`, without forming the Hessian.
    fn hessian_vector(&self, p: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let prof = self.profiles(p);
        let mut out = vec![0.0; n];
        let (mut q_adj, mut s_adj, mut a_adj) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for v in 0..n {
            let order = &self.order[v * n..(v + 1) * n];
            let (q, s) = (&prof.q[v * n..(v + 1) * n], &prof.s[v * n..(v + 1) * n]);
            // reverse sweep of Σ_r u_(r) q_r (d_r − s_r) through the q and s recurrences
            for r in 0..n {
                let c = order[r] as usize;
                q_adj[r] = u[c] * (self.distance(v, c) - s[r]);
                s_adj[r] = -u[c] * q[r];
                a_adj[r] = 0.0;
            }
            for r in (0..n - 1).rev() {
                let a = 1.0 - p[order[r] as usize];
                q_adj[r] += q_adj[r + 1] * a;
                a_adj[r] += q_adj[r + 1] * q[r];
            }
            for r in 0..n - 1 {
                let c = order[r + 1] as usize;
                s_adj[r + 1] += s_adj[r] * (1.0 - p[c]);
                out[c] += s_adj[r] * self.distance(v, c);
                a_adj[r + 1] += s_adj[r] * s[r + 1];
            }
            for r in 0..n {
                out[order[r] as usize] -= a_adj[r];
            }
        }
        let (prefix, suffix) = self.count_tables(p);
        for (j, &uj) in u.iter().enumerate() {
            if uj != 0.0 {
                self.add_tail_hessian_row(&prefix, &suffix, p, j, self.beta * uj, &mut out);
            }
        }
        out
    }
}

impl Problem for FacilityProblem {
    fn dimension(&self) -> usize {
        self.data.n
    }

    fn hard_value(&self, bits: &[bool]) -> f64 {
        let d = &*self.data;
        let n = d.n;
        if !bits.iter().any(|&b| b) {
            return n as f64 * d.penalty;
        }
        (0..n)
            .map(|v| {
                let c = d.order[v * n..(v + 1) * n].iter().find(|&&c| bits[c as usize]).expect("some center is open");
                d.distance(v, *c as usize)
            })
            .sum()
    }

    fn is_feasible(&self, d: &BinaryDecisions) -> bool {
        d.count_ones() <= self.data.k
    }

    fn surrogate<S: Scalar>(&self, x: &[S]) -> S {
        self.expected_service(x) + self.tail_penalty(x) * self.data.beta
    }

    fn flip_delta<S: Scalar>(&self, x: &[S], j: usize) -> [S; 2] {
        // multilinear: f̃(x) − f̃(x | x_j := b) = (x_j − b) ∂f̃/∂x_j
        let g = self.data.partials(x, &[j])[0];
        [x[j] * g, (x[j] - 1.0) * g]
    }

    fn flip_deltas<S: Scalar>(&self, x: &[S]) -> Vec<[S; 2]> {
        let d = &self.data;
        let p: Vec<f64> = x.iter().map(|s| s.value()).collect();
        let prof = d.profiles(&p);
        let (prefix, suffix) = d.count_tables(&p);
        let grad: Vec<f64> = (0..d.n)
            .map(|j| d.service_partial(&prof, j) + d.beta * d.tail_partial(&prefix, &suffix, j))
            .collect();
        let vjp = S::RECORDS.then(|| {
            let data = Arc::clone(&self.data);
            Box::new(move |u: &[f64]| data.hessian_vector(&p, u)) as crate::diff::VectorJacobian
        });
        S::block(&grad, x, vjp)
            .into_iter()
            .zip(x)
            .map(|(g, &xj)| [xj * g, (xj - 1.0) * g])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::decisions::ContinuousDecisions;
    use crate::diff::{backward, grad_check, Tape};
    use crate::problems::{full_flip_delta, oracle};
    use proptest::prelude::*;

    fn random_point(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeedStream::new(seed).child(7).rng();
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    fn line(n: usize, k: usize) -> FacilityProblem {
        FacilityProblem::from_points((0..n).map(|i| [i as f64, 0.0]).collect(), k, 1.0).unwrap()
    }

    #[test]
    fn hard_objective_examples() {
        let p = line(3, 2);
        assert_eq!(fl_hard(&p, &BinaryDecisions::new(vec![true; 3])).unwrap(), 0.0);
        assert_eq!(fl_hard(&p, &BinaryDecisions::zeros(3)).unwrap(), 3.0 * 2.0);
        // single center at location 2: distances 2 + 1 + 0
        assert_eq!(fl_hard(&p, &BinaryDecisions::new(vec![false, false, true])).unwrap(), 3.0);
        assert!(fl_hard(&p, &BinaryDecisions::zeros(4)).is_err());
    }

    #[test]
    fn single_location_expectation() {
        let p = FacilityProblem::from_distances(vec![vec![0.7]], 1, 1.0, 2.0).unwrap();
        let x = [0.3];
        assert!((p.expected_service(&x) - (0.7 * 0.3 + 2.0 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn all_open_gives_nearest_distances() {
        let p = FacilityProblem::sample(9, 3, 1.0, SeedStream::new(2)).unwrap();
        let x = vec![1.0; 9];
        let nearest: f64 = (0..9).map(|v| (0..9).map(|c| p.distance(v, c)).fold(f64::INFINITY, f64::min)).sum();
        assert!((p.expected_service(&x) - nearest).abs() < 1e-12);
    }

    #[test]
    fn tail_examples() {
        let p = line(2, 1);
        assert_eq!(p.tail_penalty(&[1.0, 1.0]), 1.0);
        assert!((p.tail_penalty(&[0.5, 0.5]) - 0.25).abs() < 1e-15);
        let full = line(3, 3);
        assert_eq!(full.tail_penalty(&[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn tail_matches_exhaustive_enumeration() {
        let p = FacilityProblem::sample(12, 4, 1.0, SeedStream::new(4)).unwrap();
        let x = random_point(12, 4);
        let exact = oracle::expectation(&x, |d| if d.count_ones() > 4 { 1.0 } else { 0.0 });
        assert!((p.tail_penalty(&x) - exact).abs() < 1e-12);
    }

    #[test]
    fn service_matches_exhaustive_enumeration() {
        let p = FacilityProblem::sample(10, 3, 1.0, SeedStream::new(5)).unwrap();
        let x = random_point(10, 5);
        let exact = oracle::expectation(&x, |d| p.hard_value(d.bits()));
        assert!((p.expected_service(&x) - exact).abs() < 1e-9);
    }

    #[test]
    fn surrogate_on_corners() {
        let p = FacilityProblem::sample(6, 2, 1.5, SeedStream::new(6)).unwrap();
        let feasible = BinaryDecisions::new(vec![true, false, false, true, false, false]);
        assert!((p.surrogate(&feasible.to_f64()) - p.hard_value(feasible.bits())).abs() < 1e-12);
        let over = BinaryDecisions::new(vec![true, true, false, true, false, false]);
        assert!(!p.is_feasible(&over));
        assert!((p.surrogate(&over.to_f64()) - (p.hard_value(over.bits()) + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn instance_validation() {
        assert!(FacilityProblem::from_points(vec![[0.0, 0.0]], 0, 1.0).is_err());
        assert!(FacilityProblem::from_points(vec![[0.0, 0.0]], 2, 1.0).is_err());
        assert!(FacilityProblem::from_points(vec![[0.0, 0.0]], 1, 0.0).is_err());
        assert!(FacilityProblem::from_distances(vec![vec![0.0, 1.0], vec![1.0, 0.0]], 1, 1.0, 0.5).is_err());
        assert!(FacilityProblem::from_distances(vec![vec![0.0, -1.0], vec![1.0, 0.0]], 1, 1.0, 2.0).is_err());
        assert!(FacilityProblem::from_distances(vec![vec![0.0, 1.0]], 1, 1.0, 2.0).is_err());
    }

    #[test]
    fn sampled_instances_are_reproducible_metric() {
        let a = FacilityProblem::sample(20, 4, 1.0, SeedStream::new(9)).unwrap();
        assert_eq!(a, FacilityProblem::sample(20, 4, 1.0, SeedStream::new(9)).unwrap());
        let b = FacilityProblem::sample(2, 1, 1.0, SeedStream::new(1)).unwrap();
        assert_eq!(b.distance(0, 0), 0.0);
        assert_eq!(b.distance(1, 1), 0.0);
        assert_eq!(b.distance(0, 1), b.distance(1, 0));
        assert_eq!(b.penalty(), b.distance(0, 1));
    }

    #[test]
    fn json_round_trip() {
        let p = FacilityProblem::sample(7, 2, 0.5, SeedStream::new(3)).unwrap();
        let back = FacilityProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let q = FacilityProblem::from_json(r#"{"points": [[0,0],[3,4]], "k": 1, "beta": 2.0}"#).unwrap();
        assert_eq!(q.distance(0, 1), 5.0);
        assert_eq!(q.penalty(), 5.0);
    }

    #[test]
    fn default_scale_builds_quickly() {
        let start = std::time::Instant::now();
        let p = FacilityProblem::sample(200, 20, 1.0, SeedStream::new(0)).unwrap();
        assert_eq!(p.dimension(), 200);
        assert!(start.elapsed().as_secs_f64() < 1.0);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let p = FacilityProblem::sample(10, 3, 1.0, SeedStream::new(8)).unwrap();
        let x = ContinuousDecisions::new(random_point(10, 8).iter().map(|v| 0.05 + 0.9 * v).collect()).unwrap();
        let err = grad_check(|v| Ok(p.surrogate(v)), &x, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn incremental_deltas_match_full_reevaluation() {
        let p = FacilityProblem::sample(11, 3, 2.0, SeedStream::new(10)).unwrap();
        let x = random_point(11, 10);
        for (j, batch) in p.flip_deltas(&x).into_iter().enumerate() {
            let fast = p.flip_delta(&x, j);
            let slow = full_flip_delta(&p, &x, j);
            for b in 0..2 {
                assert!((fast[b] - slow[b]).abs() < 1e-10, "j={j} b={b}");
                assert!((batch[b] - slow[b]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn recorded_delta_gradients_match_full_reevaluation() {
        let p = FacilityProblem::sample(9, 3, 1.3, SeedStream::new(12)).unwrap();
        let x = random_point(9, 12);
        let tape = Tape::new();
        let xs = tape.vars(&x);
        let all = p.flip_deltas(&xs);
        for j in [0, 4, 8] {
            for (b, &batch) in all[j].iter().enumerate() {
                let slow = full_flip_delta(&p, &xs, j)[b];
                let single = p.flip_delta(&xs, j)[b];
                let gs = backward(slow, &xs);
                for fast in [single, batch] {
                    let gf = backward(fast, &xs);
                    for (a, c) in gf.iter().zip(&gs) {
                        assert!((a - c).abs() < 1e-10, "j={j} b={b}: {a} vs {c}");
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn feasible_corners_agree(seed in 0u64..500, mask in any::<u64>()) {
            let n = 25;
            let p = FacilityProblem::sample(n, 6, 1.0, SeedStream::new(seed)).unwrap();
            let d = BinaryDecisions::from_mask(mask & ((1 << n) - 1), n);
            let expected = p.hard_value(d.bits()) + if p.is_feasible(&d) { 0.0 } else { 1.0 };
            prop_assert!((p.surrogate(&d.to_f64()) - expected).abs() <= 1e-9);
        }
    }
}
