use std::path::Path;

use nalgebra::DMatrix;
use proptest::prelude::*;

use sdae_margin::detector::{rcond_estimate, rcond_exact, tradeoff_sigma};
use sdae_margin::grid::{ramp_lambda, GridModel, GridState, NewtonOptions, RampSchedule};
use sdae_margin::io::{parse_case, CaseFormat};
use sdae_margin::montecarlo::{ci90_lower, histogram, Bins, Welford};
use sdae_margin::normal_form::classify_regime;
use sdae_margin::ou::{ou_step, OuParams, OuState};
use sdae_margin::RngStream;

fn three_bus() -> GridModel {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/three_bus.toml");
    parse_case(&p, CaseFormat::Canonical)
        .unwrap()
        .model()
        .unwrap()
}

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0..10.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

/// Series and shunt losses from branch currents, independent of the bus
/// injection formula.
fn network_losses(m: &GridModel, st: &GridState) -> f64 {
    let idx = m.case.bus_index();
    let mut loss = 0.0;
    for br in &m.case.branches {
        let (f, t) = (idx[&br.from], idx[&br.to]);
        let (vf, vt) = (st.v[f] / br.tap, st.v[t]);
        let dre = vf * st.theta[f].cos() - vt * st.theta[t].cos();
        let dim = vf * st.theta[f].sin() - vt * st.theta[t].sin();
        loss += br.g * (dre * dre + dim * dim);
    }
    for (i, b) in m.case.buses.iter().enumerate() {
        loss += b.gs * st.v[i] * st.v[i];
    }
    loss
}

proptest! {
    #[test]
    fn regime_depends_only_on_sigma_over_sqrt_eps(
        sigma in 1e-6..10.0f64, eps in 1e-8..1.0f64, k in 1e-3..1e3f64,
    ) {
        prop_assert_eq!(classify_regime(sigma, eps), classify_regime(k * sigma, k * k * eps));
    }

    #[test]
    fn tradeoff_preserves_regime(sigma in 1e-6..10.0f64, eps in 1e-8..1.0f64, eps2 in 1e-8..1.0f64) {
        let s2 = tradeoff_sigma(sigma, eps, eps2);
        prop_assert_eq!(classify_regime(s2, eps2), classify_regime(sigma, eps));
    }

    #[test]
    fn rcond_is_scale_invariant(a in matrix(4), c in prop::sample::select(vec![-8.0, -0.5, 0.25, 2.0, 1024.0])) {
        prop_assume!(rcond_exact(&a) > 1e-8);
        let scaled = &a * c;
        // powers of two scale every LU entry exactly
        prop_assert_eq!(rcond_estimate(&scaled), rcond_estimate(&a));
    }

    #[test]
    fn rcond_scale_invariance_general_factor(a in matrix(3), c in 1e-3..1e3f64) {
        prop_assume!(rcond_exact(&a) > 1e-8);
        let r = rcond_estimate(&a);
        prop_assert!((rcond_estimate(&(&a * c)) - r).abs() <= 1e-10 * r);
    }

    #[test]
    fn rcond_estimate_never_exceeds_exact(a in matrix(5)) {
        prop_assume!(rcond_exact(&a) > 1e-10);
        // the estimate of ‖A⁻¹‖ is a lower bound, so rcond can only be too large by
        // construction; in practice it is within a factor of 3 here
        let (e, x) = (rcond_estimate(&a), rcond_exact(&a));
        prop_assert!(e >= x * (1.0 - 1e-12));
        prop_assert!(e <= 3.0 * x, "{} vs {}", e, x);
    }

    #[test]
    fn ramp_is_monotone(delta in 1e-3..0.1f64, interval in 0.01..5.0f64, t in 0.0..100.0f64, dt in 0.0..10.0f64) {
        let s = RampSchedule::new(delta, interval, 5.0).unwrap();
        prop_assert!(ramp_lambda(&s, t + dt) >= ramp_lambda(&s, t));
        prop_assert!(ramp_lambda(&s, t) <= 5.0);
    }

    #[test]
    fn speed_conversion_is_self_inverse(speed in 0.01..100.0f64, delta in 1e-3..0.1f64, p0 in 1.0..1000.0f64) {
        let s = RampSchedule::from_speed(speed, delta, p0, 10.0).unwrap();
        prop_assert!((s.speed_mw_per_s(p0) - speed).abs() <= 1e-12 * speed);
    }

    #[test]
    fn histogram_counts_every_sample(xs in prop::collection::vec(-1e3..1e3f64, 1..300), bins in 1usize..50) {
        let h = histogram(&xs, Bins::Count(bins)).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), xs.len());
        prop_assert_eq!(h.counts.len(), bins);
    }

    #[test]
    fn welford_matches_two_pass(xs in prop::collection::vec(-1e3..1e3f64, 2..300)) {
        let mut w = Welford::default();
        xs.iter().for_each(|x| w.push(*x));
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        prop_assert!((w.mean() - m).abs() <= 1e-9 * (1.0 + m.abs()));
        prop_assert!((w.variance() - v).abs() <= 1e-9 * (1.0 + v));
    }

    #[test]
    fn ci90_lower_lies_within_sample(xs in prop::collection::vec(-1e3..1e3f64, 20..200)) {
        let q = ci90_lower(&xs).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(q >= lo && q <= hi);
    }

    #[test]
    fn zero_sigma_ou_step_is_linear_decay(eta in -5.0..5.0f64, alpha in 0.01..10.0f64, dt in 1e-4..0.09f64) {
        let p = OuParams::unit_variance(vec![alpha], 0.0).unwrap();
        let mut st = OuState { eta: vec![eta], t: 0.0 };
        ou_step(&mut st, &p, dt, &mut RngStream::new(0, 0));
        prop_assert_eq!(st.eta[0], eta + (-alpha * eta * dt));
    }

    #[test]
    fn ou_paths_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let p = OuParams::unit_variance(vec![1.0, 0.3], 0.1).unwrap();
        let run = || {
            let mut rng = RngStream::new(seed, stream);
            let mut st = OuState::zeros(2);
            (0..50).map(|_| { ou_step(&mut st, &p, 0.05, &mut rng); st.eta.clone() }).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_balance_accounts_for_losses(
        lambda in 0.0..3.5f64, eta in -0.1..0.1f64, xp in -0.05..0.05f64, xq in -0.05..0.05f64,
    ) {
        let m = three_bus();
        let opts = NewtonOptions::default();
        let mut st = m.initial_state(OuState { eta: vec![eta], t: 0.0 }, &opts).unwrap();
        st.lambda = lambda;
        st.x = vec![xp, xq];
        m.solve_algebraic(&mut st, &opts).unwrap();
        let (gen, demand, _) = m.active_balance(&st).unwrap();
        let loss = network_losses(&m, &st);
        prop_assert!((gen - demand - loss).abs() < 10.0 * opts.tol, "{}", gen - demand - loss);
    }

    #[test]
    fn limit_assignment_is_deterministic(lambda in 0.0..4.5f64, eta in -0.2..0.2f64) {
        let m = three_bus();
        let opts = NewtonOptions::default();
        let mut base = m.initial_state(OuState { eta: vec![eta], t: 0.0 }, &opts).unwrap();
        base.lambda = lambda;
        let (mut a, mut b) = (base.clone(), base.clone());
        let ra = m.solve_algebraic(&mut a, &opts);
        let rb = m.solve_algebraic(&mut b, &opts);
        prop_assert_eq!(ra.is_ok(), rb.is_ok());
        prop_assert_eq!(&a.q_limits, &b.q_limits);
        prop_assert_eq!(&a.v, &b.v);
    }
}
