use sdae_margin::normal_form::{nf_escape_ensemble, EscapeRecord, NormalFormParams, RunOptions};
use sdae_margin::ou::{ou_path_statistics, ou_stationary_path, OuParams};
use sdae_margin::RngStream;

#[test]
fn ou_variance_and_autocorrelation_match_closed_form() {
    let dt = 0.01;
    for (k, alpha) in [0.5, 1.0, 3.0].into_iter().enumerate() {
        let p = OuParams::unit_variance(vec![alpha], 0.2).unwrap();
        let target = p.stationary_variance(0);
        let n = (40_000.0 / dt) as usize;
        let path = ou_stationary_path(&p, dt, n, &mut RngStream::new(11, k as u64));
        let max_lag = (3.0 / alpha / dt) as usize;
        let lags: Vec<usize> = (1..=6).map(|j| j * max_lag / 6).collect();
        let st = ou_path_statistics(&path, &lags).unwrap();
        let rel = (st.variance[0] - target).abs() / target;
        assert!(
            rel < 0.05,
            "alpha {alpha}: variance {} vs {target}",
            st.variance[0]
        );
        let acf = st.autocorrelation[0].as_ref().unwrap();
        for (lag, r) in lags.iter().zip(acf) {
            let expect = (-alpha * *lag as f64 * dt).exp();
            assert!(
                (r - expect).abs() < 0.02,
                "alpha {alpha} lag {lag}: {r} vs {expect}"
            );
        }
    }
}

fn escape_records(eps: f64, sigma: f64, dt: f64) -> Vec<EscapeRecord> {
    let params = NormalFormParams::on_branch(eps, sigma, -0.5);
    nf_escape_ensemble(&params, &RunOptions::new(dt, 0.5), 1000, 5).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn early_escape_grows_with_noise() {
    let eps = 0.01;
    let mut last = -1.0;
    for sigma in [0.02, 0.05, 0.1, 0.2, 0.3] {
        let recs = escape_records(eps, sigma, eps / 10.0);
        let frac = recs
            .iter()
            .filter(|r| r.y_at_escape.is_some_and(|y| y < 0.0))
            .count() as f64
            / 1000.0;
        assert!(frac >= last, "sigma {sigma}: {frac} < {last}");
        last = frac;
    }
    assert!(last > 0.5);
}

#[test]
fn strong_noise_escapes_before_the_fold() {
    let eps: f64 = 1e-3;
    let det = 2.338 * eps.powf(2.0 / 3.0);
    let mut last = f64::INFINITY;
    for k in [2.0, 4.0, 8.0] {
        let recs = escape_records(eps, k * eps.sqrt(), eps / 100.0);
        assert!(recs.iter().all(|r| r.escaped));
        let esc = median(recs.iter().map(|r| r.y_at_escape.unwrap()).collect());
        let zero = median(recs.iter().map(|r| r.y_cross_zero.unwrap()).collect());
        assert!(esc < last && esc < det, "{k}√ε: median escape {esc}");
        assert!(zero < 0.0, "{k}√ε: median zero crossing {zero}");
        if k >= 4.0 {
            assert!(esc < 0.0, "{k}√ε: median escape {esc}");
        }
        last = esc;
    }
}
