//! Single-instance training through the surrogate.
//!
//! Decisions are parameterized as `D̃ = logistic(θ)`. Each epoch records
//! the loss at the current parameters together with the hard objectives
//! of iterative and greedy rounding of the current decisions, then takes
//! one adaptive-moment step on `θ`. Test metrics are computed on plain
//! values and never enter the recording.

use serde::{Deserialize, Serialize};

use crate::decisions::{BinaryDecisions, ContinuousDecisions};
use crate::derand::{greedy_round, iterative_round, soft_greedy, soft_iterative, RoundingOrder, Scheme, SoftConfig};
use crate::diff::{backward, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::seed::{standard_normal, SeedStream};

/// Which soft rounding, if any, sits between the decisions and the
/// surrogate in the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftScheme {
    None,
    SoftIterative,
    SoftGreedy,
}

impl SoftScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SoftScheme::None => "none",
            SoftScheme::SoftIterative => "soft-iterative",
            SoftScheme::SoftGreedy => "soft-greedy",
        }
    }
}

impl TryFrom<Scheme> for SoftScheme {
    type Error = Error;
    fn try_from(s: Scheme) -> Result<Self> {
        match s {
            Scheme::SoftIterative => Ok(SoftScheme::SoftIterative),
            Scheme::SoftGreedy => Ok(SoftScheme::SoftGreedy),
            other => Err(Error::param("scheme", format!("{other} cannot be used inside training"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub scheme: SoftScheme,
    pub tau: f64,
    /// Soft-greedy step budget; `None` means `min(n, 50)`.
    pub steps: Option<usize>,
    /// Initial logit shared by every coordinate.
    pub init_logit: f64,
    /// Standard deviation of seeded Gaussian noise added to the initial logits.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            scheme: SoftScheme::None,
            tau: 1.0,
            steps: None,
            init_logit: 0.0,
            init_scale: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::param("epochs", "at least one epoch is required"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", format!("{} is not positive", self.lr)));
        }
        for (name, d) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::param(name, format!("{d} is not in [0, 1)")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::param("eps", "must be positive"));
        }
        if self.scheme != SoftScheme::None && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("temperature", format!("{} is not positive", self.tau)));
        }
        if self.steps == Some(0) {
            return Err(Error::param("steps", "soft-greedy needs at least one step"));
        }
        if !self.init_logit.is_finite() || self.init_scale.is_nan() || self.init_scale < 0.0 {
            return Err(Error::param("init", "initial logit must be finite and noise scale non-negative"));
        }
        Ok(())
    }

    pub fn soft_steps(&self, n: usize) -> usize {
        self.steps.unwrap_or(n.min(50)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_iterative: f64,
    pub test_greedy: f64,
    pub feasible_iterative: bool,
    pub feasible_greedy: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

/// Why a run stopped before its last epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainAbort {
    pub epoch: usize,
    pub reason: String,
    /// Logits of the last state whose loss was finite.
    pub last_finite_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub curve: TrainingCurve,
    pub abort: Option<TrainAbort>,
    pub final_logits: Vec<f64>,
}

/// Initial logits: `init_logit` plus optional seeded noise.
pub fn initial_logits(n: usize, cfg: &TrainConfig) -> Vec<f64> {
    let mut rng = SeedStream::new(cfg.seed).child(0x1017).rng();
    (0..n)
        .map(|_| if cfg.init_scale > 0.0 { cfg.init_logit + cfg.init_scale * standard_normal(&mut rng) } else { cfg.init_logit })
        .collect()
}

pub fn decisions_of(logits: &[f64]) -> Result<ContinuousDecisions> {
    ContinuousDecisions::new(logits.iter().map(|&t| t.logistic()).collect())
}

/// The training loss as a function of recorded logits.
pub fn loss<'t, P: Problem>(problem: &P, cfg: &TrainConfig, logits: &[Var<'t>]) -> Result<Var<'t>> {
    let d: Vec<Var<'t>> = logits.iter().map(|t| t.logistic()).collect();
    let n = problem.dimension();
    let rounded = match cfg.scheme {
        SoftScheme::None => d,
        SoftScheme::SoftIterative => soft_iterative(problem, &d, &RoundingOrder::identity(n), cfg.tau)?,
        SoftScheme::SoftGreedy => soft_greedy(problem, &d, &SoftConfig::new(cfg.tau, cfg.soft_steps(n))?)?,
    };
    Ok(problem.surrogate(&rounded))
}

fn loss_and_gradient<P: Problem>(problem: &P, cfg: &TrainConfig, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let inputs = tape.vars(logits);
    let out = loss(problem, cfg, &inputs)?;
    Ok((out.value(), backward(out, &inputs)))
}

/// Iterative (identity order) and greedy rounding of the decisions,
/// evaluated with the hard objective.
pub fn evaluate_rounding<P: Problem>(problem: &P, d: &ContinuousDecisions) -> Result<(BinaryDecisions, BinaryDecisions)> {
    let it = iterative_round(problem, d, &RoundingOrder::identity(problem.dimension()))?;
    let gr = greedy_round(problem, d)?;
    Ok((it, gr))
}

fn record<P: Problem>(problem: &P, epoch: usize, train_loss: f64, logits: &[f64]) -> Result<EpochRecord> {
    let d = decisions_of(logits)?;
    let (it, gr) = evaluate_rounding(problem, &d)?;
    Ok(EpochRecord {
        epoch,
        train_loss,
        test_iterative: problem.hard_value(it.bits()),
        test_greedy: problem.hard_value(gr.bits()),
        feasible_iterative: problem.is_feasible(&it),
        feasible_greedy: problem.is_feasible(&gr),
    })
}

/// The epoch-0 record alone, without any update.
pub fn initial_record<P: Problem>(problem: &P, cfg: &TrainConfig) -> Result<TrainingCurve> {
    let logits = initial_logits(problem.dimension(), cfg);
    let tape = Tape::new();
    let l = loss(problem, cfg, &tape.vars(&logits))?.value();
    Ok(TrainingCurve { records: vec![record(problem, 0, l, &logits)?] })
}

/// Adam state for one parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, cfg: &TrainConfig, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Trains the decisions of one instance.
///
/// Returns `epochs + 1` records unless the loss or its gradient becomes
/// non-finite, in which case the run stops with the records so far and
/// an abort note carrying the last finite logits.
pub fn train_instance<P: Problem>(problem: &P, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let n = problem.dimension();
    let mut theta = initial_logits(n, cfg);
    let mut adam = Adam::new(n);
    let mut curve = TrainingCurve::default();
    let mut last_finite = theta.clone();
    for epoch in 0..=cfg.epochs {
        let outcome = loss_and_gradient(problem, cfg, &theta);
        let (value, grad) = match outcome {
            Ok((value, grad)) if value.is_finite() && grad.iter().all(|g| g.is_finite()) => (value, grad),
            Ok((value, _)) => {
                let reason = if value.is_finite() { "non-finite gradient".to_string() } else { Error::NonFiniteLoss { epoch, value }.to_string() };
                return Ok(aborted(curve, epoch, reason, last_finite, theta));
            }
            Err(e) => return Ok(aborted(curve, epoch, e.to_string(), last_finite, theta)),
        };
        last_finite.clone_from(&theta);
        curve.records.push(record(problem, epoch, value, &theta)?);
        if epoch == cfg.epochs {
            break;
        }
        adam.step(cfg, &mut theta, &grad);
    }
    Ok(TrainRun { curve, abort: None, final_logits: theta })
}

fn aborted(curve: TrainingCurve, epoch: usize, reason: String, last_finite_logits: Vec<f64>, theta: Vec<f64>) -> TrainRun {
    TrainRun { curve, abort: Some(TrainAbort { epoch, reason, last_finite_logits }), final_logits: theta }
}

/// Label of one run in a temperature sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub scheme: SoftScheme,
    /// `None` for the baseline.
    pub tau: Option<f64>,
}

impl RunLabel {
    pub fn baseline() -> Self {
        RunLabel { scheme: SoftScheme::None, tau: None }
    }

    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { scheme: self.scheme, tau: self.tau.unwrap_or(base.tau), ..base.clone() }
    }
}

/// Baseline first, then one label per temperature.
pub fn sweep_labels(scheme: SoftScheme, temperatures: &[f64]) -> Vec<RunLabel> {
    std::iter::once(RunLabel::baseline()).chain(temperatures.iter().map(|&tau| RunLabel { scheme, tau: Some(tau) })).collect()
}

/// Trains the baseline and one run per temperature on the same instance
/// and initialization. Run failures are kept in place; the sweep goes on.
pub fn sweep_temperatures<P: Problem>(problem: &P, base: &TrainConfig, scheme: SoftScheme, temperatures: &[f64]) -> Vec<(RunLabel, Result<TrainRun>)> {
    sweep_labels(scheme, temperatures).into_iter().map(|label| (label, train_instance(problem, &label.config(base)))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;
    use crate::problems::{FacilityProblem, QuadraticProblem};

    fn small_fl() -> FacilityProblem {
        FacilityProblem::sample(12, 3, 1.0, SeedStream::new(2)).unwrap()
    }

    #[test]
    fn record_only_run_starts_at_half() {
        let p = small_fl();
        let cfg = TrainConfig::default();
        let curve = initial_record(&p, &cfg).unwrap();
        assert_eq!(curve.records.len(), 1);
        assert_eq!(curve.records[0].epoch, 0);
        let d = decisions_of(&initial_logits(12, &cfg)).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn baseline_epoch_zero_loss_is_surrogate_at_half() {
        let p = small_fl();
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let run = train_instance(&p, &cfg).unwrap();
        let at_half = p.surrogate(&[0.5; 12]);
        assert!((run.curve.records[0].train_loss - at_half).abs() < 1e-12);
        assert_eq!(run.curve.records.len(), 3);
        assert_eq!(run.curve.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { scheme: SoftScheme::SoftGreedy, tau: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { steps: Some(0), ..ok }.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let p = small_fl();
        let cfg = TrainConfig { epochs: 5, scheme: SoftScheme::SoftGreedy, tau: 0.5, init_scale: 0.01, seed: 3, ..Default::default() };
        assert_eq!(train_instance(&p, &cfg).unwrap(), train_instance(&p, &cfg).unwrap());
    }

    #[test]
    fn loss_gradient_matches_finite_differences_in_logits() {
        let p = small_fl();
        for scheme in [SoftScheme::SoftIterative, SoftScheme::SoftGreedy] {
            for tau in [1.0, 0.1] {
                let cfg = TrainConfig { scheme, tau, steps: Some(4), init_scale: 0.3, seed: 9, ..Default::default() };
                // grad_check works on [0,1] inputs; map them to logits in (−2, 2)
                let x = decisions_of(&initial_logits(12, &cfg)).unwrap();
                let err = grad_check(
                    |v| {
                        let logits: Vec<Var> = v.iter().map(|&u| (u - 0.5) * 4.0).collect();
                        loss(&p, &cfg, &logits)
                    },
                    &x,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{scheme:?} tau={tau}: {err}");
            }
        }
    }

    #[test]
    fn baseline_descends_on_quadratic() {
        let p = QuadraticProblem::sample(10, SeedStream::new(6));
        let run = train_instance(&p, &TrainConfig { epochs: 50, lr: 0.05, ..Default::default() }).unwrap();
        let r = &run.curve.records;
        assert!(r.last().unwrap().train_loss < r[0].train_loss);
        assert!(run.abort.is_none());
    }

    #[test]
    fn non_finite_loss_aborts_with_partial_curve() {
        let p = QuadraticProblem::new(vec![vec![1e308, 1e308], vec![1e308, 1e308]]).unwrap();
        let run = train_instance(&p, &TrainConfig { epochs: 3, init_logit: 30.0, ..Default::default() }).unwrap();
        let abort = run.abort.expect("aborted");
        assert_eq!(abort.epoch, 0);
        assert!(run.curve.records.is_empty());
    }

    // At high temperature both soft schemes pull every entry towards 1/2
    // instead of leaving it alone, so the loss is not the baseline loss.
    #[test]
    #[ignore = "high-temperature soft rounding is uniform mixing, not the identity; see README"]
    fn very_high_temperature_tracks_baseline() {
        let p = small_fl();
        let base = TrainConfig { epochs: 5, ..Default::default() };
        let plain = train_instance(&p, &base).unwrap();
        for scheme in [SoftScheme::SoftIterative, SoftScheme::SoftGreedy] {
            let hot = train_instance(&p, &TrainConfig { scheme, tau: 1e6, ..base.clone() }).unwrap();
            for (a, b) in plain.curve.records.iter().zip(&hot.curve.records) {
                assert!((a.train_loss - b.train_loss).abs() < 1e-3 * a.train_loss.abs(), "{scheme:?} epoch {}", a.epoch);
            }
        }
    }

    #[test]
    fn sweep_has_baseline_first() {
        let p = small_fl();
        let out = sweep_temperatures(&p, &TrainConfig { epochs: 1, ..Default::default() }, SoftScheme::SoftIterative, &[1.0, 0.1]);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].0, RunLabel::baseline());
        let first: Vec<_> = out.iter().map(|(_, r)| r.as_ref().unwrap().curve.records[0].test_greedy).collect();
        assert!(first.windows(2).all(|w| w[0] == w[1]));
    }
}
