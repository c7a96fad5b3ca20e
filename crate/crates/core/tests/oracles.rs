mod common;

use common::{airy_ai_prime, delay_oracle, two_bus_nose_lambda};
use sdae_margin::normal_form::{nf_deterministic_trajectory, NormalFormParams, RunOptions};

#[test]
fn airy_series_reproduces_tabulated_values() {
    assert!((airy_ai_prime(0.0) + 0.258_819_403_792_806_8).abs() < 1e-15);
    // Ai'(1) and Ai'(-2) from standard tables
    assert!((airy_ai_prime(1.0) + 0.159_147_441_296_793_2).abs() < 1e-12);
    assert!((airy_ai_prime(-2.0) - 0.618_259_020_741_691_1).abs() < 1e-12);
}

#[test]
fn delay_oracle_is_first_zero_of_airy_derivative() {
    assert!((delay_oracle() - 1.018_792_971_647_471).abs() < 1e-12);
}

#[test]
fn fine_step_zero_crossing_matches_oracle() {
    let eps: f64 = 1e-2;
    let p = NormalFormParams::on_branch(eps, 0.0, -0.5);
    let (_, rec) =
        nf_deterministic_trajectory(&p, &RunOptions::new(eps / 1000.0, 0.5).unrecorded()).unwrap();
    let scaled = rec.y_cross_zero.unwrap() / eps.powf(2.0 / 3.0);
    assert!(
        (scaled - delay_oracle()).abs() / delay_oracle() < 0.01,
        "{scaled}"
    );
}

#[test]
fn two_bus_nose_is_frozen() {
    // p_max = cos(atan 0.2) / (1 + sin(atan 0.2)) evaluated independently
    assert!((two_bus_nose_lambda() - 2.279_2).abs() < 1e-4);
}
