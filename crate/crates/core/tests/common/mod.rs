#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn cases() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases")
}

/// `Ai'(z)` from the Maclaurin series of `w'' = z w`.
pub fn airy_ai_prime(z: f64) -> f64 {
    // Ai(0) and -Ai'(0)
    let (c1, c2) = (0.355_028_053_887_817_2, 0.258_819_403_792_806_8);
    let mut a = [c1, -c2, 0.0];
    let mut sum = 0.0;
    let mut zp = 1.0; // z^(n-1)
    for n in 1..400usize {
        let an = if n < 3 {
            a[n]
        } else {
            a[n % 3] / (n * (n - 1)) as f64
        };
        if n >= 3 {
            a[n % 3] = an;
        }
        sum += n as f64 * an * zp;
        zp *= z;
        if zp.abs() < 1e-300 {
            break;
        }
    }
    sum
}

/// Scaled location `y/ε^{2/3}` where the noise-free fast variable crosses
/// zero: `x = −ε^{1/3} Ai'(−s)/Ai(−s)` vanishes at the first zero of `Ai'`.
pub fn delay_oracle() -> f64 {
    let (mut lo, mut hi) = (0.5_f64, 1.5_f64);
    let f = |s: f64| airy_ai_prime(-s);
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form maximum loadability of the two-bus fixture: a constant
/// power load with `tan φ = q0/p0` behind reactance `X` from `V = 1`
/// peaks at `P = cos φ / (2 X (1 + sin φ))`.
pub fn two_bus_nose_lambda() -> f64 {
    let (p0, q0, x) = (0.25_f64, 0.05_f64, 0.5_f64);
    let phi = (q0 / p0).atan();
    let p_max = phi.cos() / (2.0 * x * (1.0 + phi.sin()));
    p_max / p0 - 1.0
}
