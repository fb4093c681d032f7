use lmnet::harness::{self, ExperimentConfig};
use lmnet::optim_lm::{lm_step, LmConfig, LmState};
use lmnet::{net, LossKind};

#[test]
fn default_config_fits_the_sine_task() {
    let records = harness::run_experiment(&ExperimentConfig::default()).unwrap();
    let last = records.last().unwrap();
    assert_eq!(last.iter, 100);
    assert!(last.train_loss <= 0.01, "final loss {:e}", last.train_loss);
}

#[test]
fn plain_decrease_acceptance_never_raises_the_loss() {
    let cfg = ExperimentConfig::default();
    let (train, _, network) = harness::load_datasets(&cfg).unwrap();
    let lm = LmConfig {
        uphill_b: 0.0,
        line_search: false,
        ..LmConfig::default()
    };
    let mut state = LmState::new(net::init_params(&network, 17), &lm);
    let mut last = f64::INFINITY;
    for _ in 0..60 {
        let r = lm_step(&mut state, &network, train.samples(), LossKind::Mse, &lm).unwrap();
        assert!(r.new_loss <= r.loss && r.loss <= last);
        last = r.new_loss;
    }
}
