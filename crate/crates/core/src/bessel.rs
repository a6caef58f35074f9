//! Log-gamma and the modified Bessel function of the second kind.
//!
//! `K_nu` is the only special function the correlation families need and it
//! is kept self-contained here. The evaluation follows the usual hybrid:
//! Temme's series below `x = 2`, a Steed continued fraction (CF2) above, both
//! computed for the reduced order `mu` in `[-1/2, 1/2]` and raised to `nu` by
//! the stable upward recurrence `K_{v+1} = K_{v-1} + (2v/x) K_v`. Both
//! kernels work on `e^x K_v(x)` so the large-`x` branch cannot underflow
//! before the recurrence runs.
//!
//! Supported domain: `nu` in `[0, 35]` (by symmetry `K_{-nu} = K_nu`) and
//! `x > 0`. Within `nu <= 31`, `x >= 1e-6` every value fits in an `f64`
//! (the largest, around `K_31(1e-6) ~ 1e227`, stays under the overflow
//! threshold); callers that need smaller arguments must handle the limit
//! themselves, as the Matern family does.

use crate::error::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Lanczos coefficients, g = 7, n = 9.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments; the reflection
/// formula extends it to negative non-integer arguments.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // ln Γ(x) = ln(π / sin(πx)) − ln Γ(1−x)
        let s = (std::f64::consts::PI * x).sin();
        return (std::f64::consts::PI / s.abs()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Taylor coefficients of 1/Γ(z) = Σ c_k z^k (Abramowitz & Stegun 6.1.34).
/// Only the even-index terms survive in the symmetric difference used by
/// `temme_gammas`, so only those are kept.
const INV_GAMMA_C4: f64 = -0.042_002_635_034_095_2;
const INV_GAMMA_C6: f64 = -0.042_197_734_555_544_3;
const INV_GAMMA_C8: f64 = 0.007_218_943_246_663_0;

/// Temme's gamma combinations for |mu| <= 1/2:
/// g1 = (1/Γ(1−μ) − 1/Γ(1+μ)) / (2μ) with limit −γ as μ → 0,
/// g2 = (1/Γ(1−μ) + 1/Γ(1+μ)) / 2.
/// Returns (1/Γ(1+μ), 1/Γ(1−μ), g1, g2).
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    debug_assert!(mu.abs() <= 0.5 + 1e-12);
    let gampl = (-ln_gamma(1.0 + mu)).exp();
    let gammi = (-ln_gamma(1.0 - mu)).exp();
    let g1 = if mu.abs() < 1e-4 {
        // direct difference cancels; even Taylor series is exact here
        let m2 = mu * mu;
        -(EULER_GAMMA + m2 * (INV_GAMMA_C4 + m2 * (INV_GAMMA_C6 + m2 * INV_GAMMA_C8)))
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    let g2 = 0.5 * (gammi + gampl);
    (gampl, gammi, g1, g2)
}

const MAX_ITER: usize = 20_000;

/// Temme series for (e^x K_mu(x), e^x K_{mu+1}(x)), |mu| <= 1/2, 0 < x <= 2.
fn k_temme_scaled(mu: f64, x: f64) -> Result<(f64, f64)> {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let sigma = -mu * ln_half_x;
    let pi_mu = std::f64::consts::PI * mu;
    let sinrat = if pi_mu.abs() < 1e-290 { 1.0 } else { pi_mu / pi_mu.sin() };
    let sinhrat = if sigma.abs() < 1e-290 { 1.0 } else { sigma.sinh() / sigma };
    let (gampl, gammi, g1, g2) = temme_gammas(mu);
    let half_x_mu = (mu * ln_half_x).exp();

    let mut f = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_x * g2);
    let mut p = 0.5 / (half_x_mu * gampl);
    let mut q = 0.5 * half_x_mu / gammi;
    let mut c = 1.0;
    let mut sum0 = f;
    let mut sum1 = p;
    let x2_4 = half_x * half_x;
    for k in 1..=MAX_ITER {
        let kf = k as f64;
        f = (kf * f + p + q) / (kf * kf - mu * mu);
        c *= x2_4 / kf;
        p /= kf - mu;
        q /= kf + mu;
        let h = p - kf * f;
        let del0 = c * f;
        sum0 += del0;
        sum1 += c * h;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            let ex = x.exp();
            return Ok((sum0 * ex, sum1 * (2.0 / x) * ex));
        }
    }
    Err(Error::Numerical(format!(
        "Bessel K series did not converge for order {mu}, argument {x}"
    )))
}

/// Steed/Temme CF2 for (e^x K_mu(x), e^x K_{mu+1}(x)), |mu| <= 1/2, x > 2.
fn k_cf2_scaled(mu: f64, x: f64) -> Result<(f64, f64)> {
    let a1 = 0.25 - mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut a = -a1;
    let mut c = a1;
    let mut q = a1;
    let mut s = 1.0 + q * delh;
    for i in 2..=MAX_ITER {
        a -= 2.0 * (i - 1) as f64;
        c = -a * c / i as f64;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            let h = a1 * h;
            let k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() / s;
            let k_mup1 = k_mu * (mu + x + 0.5 - h) / x;
            return Ok((k_mu, k_mup1));
        }
    }
    Err(Error::Numerical(format!(
        "Bessel K continued fraction did not converge for order {mu}, argument {x}"
    )))
}

/// Modified Bessel function of the second kind, K_nu(x).
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, x)? * (-x).exp())
}

/// e^x K_nu(x); finite over a wider argument range than `bessel_k` because
/// the exponential decay is factored out.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Bessel K argument must be positive and finite, got {x}"
        )));
    }
    let nu = nu.abs();
    if !nu.is_finite() || nu > 35.0 {
        return Err(Error::InvalidParameter(format!(
            "Bessel K order must lie in [0, 35], got {nu}"
        )));
    }
    let n = (nu + 0.5).floor() as usize;
    let mu = nu - n as f64;
    let (mut k_lo, mut k_hi) =
        if x < 2.0 { k_temme_scaled(mu, x)? } else { k_cf2_scaled(mu, x)? };
    for j in 0..n {
        let next = k_lo + 2.0 * (mu + j as f64 + 1.0) / x * k_hi;
        k_lo = k_hi;
        k_hi = next;
    }
    Ok(k_lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_reference_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(5.0), 24.0_f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            max_relative = 1e-14
        );
        // Γ(30) = 29!
        let f29: f64 = (2..=29).map(|k| k as f64).product();
        assert_relative_eq!(ln_gamma(30.0), f29.ln(), max_relative = 1e-13);
        // reflection branch: Γ(0.25)Γ(0.75) = π/sin(π/4)
        let lhs = ln_gamma(0.25) + ln_gamma(0.75);
        let rhs = (std::f64::consts::PI / (std::f64::consts::PI / 4.0).sin()).ln();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
    }

    #[test]
    fn temme_gamma_limit_matches_direct_formula() {
        // crossing the series/direct switch at |mu| = 1e-4 must be seamless
        for &mu in &[9.9e-5, 1.01e-4, -9.9e-5, -1.01e-4] {
            let gampl = (-ln_gamma(1.0 + mu)).exp();
            let gammi = (-ln_gamma(1.0 - mu)).exp();
            let direct = (gammi - gampl) / (2.0 * mu);
            let (_, _, g1, _) = temme_gammas(mu);
            assert_relative_eq!(g1, direct, max_relative = 1e-9);
        }
        let (_, _, g1, g2) = temme_gammas(0.0);
        assert_relative_eq!(g1, -EULER_GAMMA, max_relative = 1e-15);
        assert_relative_eq!(g2, 1.0, max_relative = 1e-15);
    }

    // K_{1/2}(x) = sqrt(pi/(2x)) e^{-x}, K_{3/2} = K_{1/2} (1 + 1/x),
    // K_{5/2} = K_{1/2} (1 + 3/x + 3/x^2)
    fn k_half(x: f64) -> f64 {
        (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp()
    }

    #[test]
    fn half_integer_orders_closed_form() {
        for &x in &[0.05, 0.5, 1.0, 1.9, 2.1, 5.0, 20.0, 50.0] {
            assert_relative_eq!(bessel_k(0.5, x).unwrap(), k_half(x), max_relative = 1e-12);
            assert_relative_eq!(
                bessel_k(1.5, x).unwrap(),
                k_half(x) * (1.0 + 1.0 / x),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                bessel_k(2.5, x).unwrap(),
                k_half(x) * (1.0 + 3.0 / x + 3.0 / (x * x)),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn integer_orders_reference_values() {
        // Abramowitz & Stegun tables 9.8
        assert_relative_eq!(bessel_k(0.0, 1.0).unwrap(), 0.421_024_438_240_708_33, max_relative = 1e-12);
        assert_relative_eq!(bessel_k(1.0, 1.0).unwrap(), 0.601_907_230_197_234_57, max_relative = 1e-12);
        assert_relative_eq!(bessel_k(0.0, 2.0).unwrap(), 0.113_893_872_749_533_55, max_relative = 1e-12);
        assert_relative_eq!(bessel_k(1.0, 2.0).unwrap(), 0.139_865_881_816_522_54, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_in_order() {
        for &x in &[0.3, 3.0] {
            assert_relative_eq!(
                bessel_k(-1.3, x).unwrap(),
                bessel_k(1.3, x).unwrap(),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn continuous_across_branch_switch() {
        for &nu in &[0.05, 0.5, 1.3, 7.7, 29.5] {
            let below = bessel_k(nu, 2.0 - 1e-9).unwrap();
            let above = bessel_k(nu, 2.0 + 1e-9).unwrap();
            assert_relative_eq!(below, above, max_relative = 1e-7);
        }
    }

    #[test]
    fn monotone_in_argument_and_order() {
        let xs: Vec<f64> = (1..200).map(|i| i as f64 * 0.25).collect();
        for &nu in &[0.1, 1.0, 4.5, 22.0] {
            let mut prev = f64::INFINITY;
            for &x in &xs {
                let v = bessel_k(nu, x).unwrap();
                assert!(v > 0.0 && v < prev, "K_{nu}({x}) not decreasing");
                prev = v;
            }
        }
        for &x in &[0.5, 5.0] {
            let mut prev = 0.0;
            for i in 0..60 {
                let nu = i as f64 * 0.5;
                let v = bessel_k(nu, x).unwrap();
                assert!(v >= prev, "K_nu({x}) not nondecreasing in nu at {nu}");
                prev = v;
            }
        }
    }

    #[test]
    fn extreme_small_argument_large_order_is_finite() {
        // near the top of the supported envelope: ~1e227
        let v = bessel_k(30.0, 1e-6).unwrap();
        assert!(v.is_finite() && v > 1e200);
        // small-x power law: K_nu(x) ~ 0.5 Γ(nu) (2/x)^nu
        let expect = (ln_gamma(30.0) + 30.0 * (2.0 / 1e-6_f64).ln() - 2.0_f64.ln()).exp();
        assert_relative_eq!(v, expect, max_relative = 1e-6);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -3.0).is_err());
        assert!(bessel_k(40.0, 1.0).is_err());
        assert!(bessel_k(f64::NAN, 1.0).is_err());
    }
}
