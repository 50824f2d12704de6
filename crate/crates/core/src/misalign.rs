//! Training-test misalignment: how often the surrogate value and the
//! post-rounding objective order two decision vectors oppositely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decisions::ContinuousDecisions;
use crate::derand::{hard_round, soft_round, RoundingOrder, Scheme, SoftConfig};
use crate::error::{Error, Result};
use crate::problems::{Problem, QuadraticProblem};
use crate::seed::SeedStream;

/// Surrogate and final values aligned by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScores {
    surrogate: Vec<f64>,
    final_values: Vec<f64>,
}

impl PairedScores {
    pub fn new(surrogate: Vec<f64>, final_values: Vec<f64>) -> Result<Self> {
        if surrogate.len() != final_values.len() {
            return Err(Error::DimensionMismatch { expected: surrogate.len(), actual: final_values.len() });
        }
        if surrogate.iter().chain(&final_values).any(|v| !v.is_finite()) {
            return Err(Error::param("scores", "all scores must be finite"));
        }
        Ok(PairedScores { surrogate, final_values })
    }

    pub fn len(&self) -> usize {
        self.surrogate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surrogate.is_empty()
    }

    pub fn surrogate(&self) -> &[f64] {
        &self.surrogate
    }

    pub fn final_values(&self) -> &[f64] {
        &self.final_values
    }

    /// Scores with the two roles exchanged.
    pub fn swapped(&self) -> Self {
        PairedScores { surrogate: self.final_values.clone(), final_values: self.surrogate.clone() }
    }
}

/// Counts of discordant, concordant and tied unordered pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairBreakdown {
    pub bad: u64,
    pub concordant: u64,
    pub ties: u64,
}

impl PairBreakdown {
    pub fn total(&self) -> u64 {
        self.bad + self.concordant + self.ties
    }
}

pub fn pair_breakdown(s: &PairedScores) -> PairBreakdown {
    let (a, b) = (&s.surrogate, &s.final_values);
    let mut out = PairBreakdown::default();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let prod = (a[i] - a[j]) * (b[i] - b[j]);
            if prod < 0.0 {
                out.bad += 1;
            } else if prod > 0.0 {
                out.concordant += 1;
            } else {
                out.ties += 1;
            }
        }
    }
    out
}

/// Pairs whose surrogate difference and final difference have a strictly
/// negative product. Ties are not bad.
pub fn bad_pair_count(s: &PairedScores) -> u64 {
    pair_breakdown(s).bad
}

pub fn total_pairs(m: usize) -> u64 {
    let m = m as u64;
    m * m.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub scheme: Scheme,
    /// Soft temperature, `None` for hard-only trials.
    pub temperature: Option<f64>,
    pub bad_count: u64,
    pub total_pairs: u64,
    pub fraction: f64,
}

impl TrialReport {
    pub fn from_scores(trial: usize, scheme: Scheme, temperature: Option<f64>, s: &PairedScores) -> Self {
        let bad_count = bad_pair_count(s);
        let total = total_pairs(s.len());
        TrialReport {
            trial,
            scheme,
            temperature,
            bad_count,
            total_pairs: total,
            fraction: if total == 0 { 0.0 } else { bad_count as f64 / total as f64 },
        }
    }
}

/// Size of the quadratic toy study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Number of binary decisions.
    pub n: usize,
    /// Number of random continuous decision vectors per trial.
    pub samples: usize,
    /// Soft-greedy step budget; `None` means `2n`.
    pub steps: Option<usize>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { n: 50, samples: 100, steps: None }
    }
}

/// One trial's instance and decision vectors, derived from the trial seed.
pub struct ToyTrial {
    pub problem: QuadraticProblem,
    pub decisions: Vec<ContinuousDecisions>,
}

impl ToyTrial {
    pub fn generate(cfg: &ToyConfig, trial_seed: SeedStream) -> Self {
        let problem = QuadraticProblem::sample(cfg.n, trial_seed.child(0));
        let mut rng = trial_seed.child(1).rng();
        let decisions = (0..cfg.samples)
            .map(|_| ContinuousDecisions::new((0..cfg.n).map(|_| rng.gen::<f64>()).collect()).expect("uniform draws lie in [0,1)"))
            .collect();
        ToyTrial { problem, decisions }
    }

    /// `f(round(D̃^(k)))` for every sample.
    pub fn final_values(&self, scheme: Scheme) -> Result<Vec<f64>> {
        let order = RoundingOrder::identity(self.problem.dimension());
        self.decisions
            .iter()
            .map(|d| Ok(self.problem.hard_value(hard_round(&self.problem, d, scheme, &order, None)?.bits())))
            .collect()
    }

    pub fn surrogate_values(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| self.problem.surrogate(d.as_slice())).collect()
    }

    /// `f̃(soft_round(D̃^(k), τ))` for every sample.
    pub fn soft_surrogate_values(&self, scheme: Scheme, cfg: &SoftConfig) -> Result<Vec<f64>> {
        let order = RoundingOrder::identity(self.problem.dimension());
        self.decisions
            .iter()
            .map(|d| Ok(self.problem.surrogate(soft_round(&self.problem, d, scheme, &order, cfg)?.as_slice())))
            .collect()
    }
}

fn require_rounding(scheme: Scheme) -> Result<()> {
    match scheme {
        Scheme::Iterative | Scheme::Greedy => Ok(()),
        other => Err(Error::param("scheme", format!("toy trials use iterative or greedy, not {other}"))),
    }
}

/// Bad pairs between the plain surrogate and the post-rounding objective
/// for one toy trial. The trial's seed is `root.child(trial)`.
pub fn toy_trial(cfg: &ToyConfig, scheme: Scheme, trial: usize, root: SeedStream) -> Result<TrialReport> {
    require_rounding(scheme)?;
    let t = ToyTrial::generate(cfg, root.child(trial as u64));
    let scores = PairedScores::new(t.surrogate_values(), t.final_values(scheme)?)?;
    Ok(TrialReport::from_scores(trial, scheme, None, &scores))
}

/// Bad pairs between the soft-rounded surrogate at each temperature and
/// the hard post-rounding objective of the original decisions, for one
/// trial. Reports follow `temperatures` order.
pub fn soft_trial(cfg: &ToyConfig, scheme: Scheme, temperatures: &[f64], trial: usize, root: SeedStream) -> Result<Vec<TrialReport>> {
    require_rounding(scheme)?;
    let soft = scheme.counterpart().expect("rounding schemes have soft counterparts");
    let t = ToyTrial::generate(cfg, root.child(trial as u64));
    let finals = t.final_values(scheme)?;
    let steps = cfg.steps.unwrap_or(2 * cfg.n).max(1);
    temperatures
        .iter()
        .map(|&tau| {
            let soft_cfg = SoftConfig::new(tau, steps)?;
            let scores = PairedScores::new(t.soft_surrogate_values(soft, &soft_cfg)?, finals.clone())?;
            Ok(TrialReport::from_scores(trial, scheme, Some(tau), &scores))
        })
        .collect()
}

/// [`soft_trial`] over `trials` trials, ordered by temperature then trial.
pub fn soft_sweep(cfg: &ToyConfig, scheme: Scheme, temperatures: &[f64], trials: usize, root: SeedStream) -> Result<Vec<TrialReport>> {
    let per_trial: Vec<Vec<TrialReport>> = (0..trials).map(|t| soft_trial(cfg, scheme, temperatures, t, root)).collect::<Result<_>>()?;
    Ok((0..temperatures.len()).flat_map(|i| per_trial.iter().map(move |r| r[i].clone())).collect())
}

pub const DEFAULT_TEMPERATURES: [f64; 5] = [10.0, 1.0, 0.1, 0.01, 0.001];

/// Mean bad-pair count and fraction over reports.
pub fn mean_of(reports: &[TrialReport]) -> (f64, f64) {
    if reports.is_empty() {
        return (0.0, 0.0);
    }
    let m = reports.len() as f64;
    (
        reports.iter().map(|r| r.bad_count as f64).sum::<f64>() / m,
        reports.iter().map(|r| r.fraction).sum::<f64>() / m,
    )
}
