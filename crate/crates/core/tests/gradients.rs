//! Reverse-mode gradients against central finite differences.

mod common;

use common::{
    baseline_frame, gru_error, linear_error, lstm_error, max_gradient_error, modnn_error, positive_linear_error,
    window_at, FD_REL,
};
use modnn::model::{LstmConfig, LstmModel, NormStats};
use modnn::neural::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 50;

fn check(layer: &str, first_seed: u64, error: impl Fn(u64) -> f64) {
    for seed in first_seed..first_seed + INSTANCES {
        let err = error(seed);
        assert!(err < FD_REL, "{layer} instance {seed}: relative error {err:e}");
    }
}

#[test]
fn linear_matches_finite_differences() {
    check("linear", 0, linear_error);
}

#[test]
fn positive_linear_matches_finite_differences() {
    check("positive linear", 100, positive_linear_error);
}

#[test]
fn gru_step_matches_finite_differences() {
    check("gru", 200, |s| gru_error(s, None));
}

#[test]
fn gru_with_two_by_two_parameters() {
    check("gru 2x2", 250, |s| gru_error(s, Some((1, 2, 2))));
}

#[test]
fn lstm_step_matches_finite_differences() {
    check("lstm", 300, lstm_error);
}

#[test]
fn full_modnn_loss_matches_finite_differences() {
    let frame = baseline_frame(3, 5);
    check("modnn", 400, |s| modnn_error(&frame, s));
}

#[test]
fn lstm_model_loss_matches_finite_differences() {
    let frame = baseline_frame(3, 6);
    for seed in 0..10 {
        let rng = &mut ChaCha8Rng::seed_from_u64(500 + seed);
        let config = LstmConfig {
            history: 3,
            horizon: 3,
            hidden: 2,
        };
        let model = LstmModel::new(config, NormStats::fit(&frame, 0..frame.len()), seed);
        let w = window_at(&frame, rng.gen_range(3..frame.len() - 4), 3, 3);
        let err = max_gradient_error(&model, |m: &LstmModel, tape: &mut Tape, tr| m.loss_graph(tape, &[&w], tr));
        assert!(err < FD_REL, "lstm model instance {seed}: relative error {err:e}");
    }
}
