use uco_core::train::{train_instance, SoftScheme, TrainConfig};
use uco_core::{FacilityProblem, SeedStream};

/// The command-line default instance and start: 200 points, budget 20,
/// penalty weight 10, every logit at ln(k / (n - k)).
fn default_run(scheme: SoftScheme, tau: f64, epochs: usize) -> (FacilityProblem, TrainConfig) {
    let p = FacilityProblem::sample(200, 20, 10.0, SeedStream::new(0).child(0)).unwrap();
    let cfg = TrainConfig { epochs, scheme, tau, steps: Some(50), init_logit: (20.0f64 / 180.0).ln(), ..Default::default() };
    (p, cfg)
}

#[test]
fn baseline_descends_on_default_instance() {
    let (p, cfg) = default_run(SoftScheme::None, 1.0, 300);
    let run = train_instance(&p, &cfg).unwrap();
    let loss: Vec<f64> = run.curve.records.iter().map(|r| r.train_loss).collect();
    assert_eq!(loss.len(), 301);
    assert!(loss[300] < loss[0]);
    let steady = loss.windows(2).filter(|w| w[1] <= w[0] * 1.01).count();
    assert!(steady as f64 >= 0.9 * 300.0, "{steady} of 300 steps within 1%");
}

#[test]
fn sweep_runs_share_epoch_zero_tests() {
    let mut first = Vec::new();
    for (scheme, tau) in [(SoftScheme::None, 1.0), (SoftScheme::SoftIterative, 0.1), (SoftScheme::SoftGreedy, 0.01)] {
        let (p, cfg) = default_run(scheme, tau, 1);
        let r = train_instance(&p, &cfg).unwrap().curve.records[0].clone();
        first.push((r.test_iterative, r.test_greedy, r.feasible_iterative, r.feasible_greedy));
    }
    assert!(first.windows(2).all(|w| w[0] == w[1]));
    // the default start rounds to a feasible selection
    assert!(first[0].2 && first[0].3);
}
