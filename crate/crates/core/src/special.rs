//! Scalar special functions used across the crate.

use libm::erfc;
use statrs::function::beta::beta_reg;

/// Natural log of the gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * LN_2PI).exp()
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation followed by one Newton step on `Φ(x) - u`.
/// Returns `±∞` at the endpoints and NaN outside `[0, 1]`.
pub fn inverse_normal_cdf(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return f64::NAN;
    }
    if u == 0.0 {
        return f64::NEG_INFINITY;
    }
    if u == 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if u < P_LOW {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if u <= 1.0 - P_LOW {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - u).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Newton step. In the upper tail work with the complement to keep precision.
    let pdf = normal_pdf(x);
    if pdf == 0.0 {
        return x;
    }
    if u > 0.5 {
        x + (normal_cdf(-x) - (1.0 - u)) / pdf
    } else {
        x - (normal_cdf(x) - u) / pdf
    }
}

/// `log T(t; df)`, the log CDF of a univariate Student-t distribution.
pub fn log_student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, x);
    if t < 0.0 {
        tail.ln()
    } else {
        (-tail).ln_1p()
    }
}

/// `log Σ exp(v)`, ignoring `-∞` entries. Returns `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_round_trip() {
        let n = 10_000;
        let (lo, hi) = (1e-10_f64, 1.0 - 1e-10);
        let mut worst = 0.0_f64;
        for i in 0..n {
            let u = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let err = (normal_cdf(inverse_normal_cdf(u)) - u).abs();
            worst = worst.max(err);
        }
        assert!(worst < 1e-12, "worst round-trip error {worst}");
        for u in [1e-10, 1e-8, 1e-5, 1e-3] {
            let x = inverse_normal_cdf(u);
            let rel = (normal_cdf(x) - u).abs() / u;
            assert!(rel < 1e-12, "relative error {rel} at u = {u}");
        }
    }

    #[test]
    fn inverse_cdf_landmarks() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((inverse_normal_cdf(0.025) + 1.959_963_984_540_054).abs() < 1e-13);
        assert_eq!(inverse_normal_cdf(0.0), f64::NEG_INFINITY);
        assert!(inverse_normal_cdf(1.5).is_nan());
    }

    #[test]
    fn student_cdf_values() {
        assert!((log_student_t_cdf(0.0, 7.0) - 0.5_f64.ln()).abs() < 1e-15);
        // t_1 is Cauchy: CDF(1) = 3/4.
        assert!((log_student_t_cdf(1.0, 1.0).exp() - 0.75).abs() < 1e-14);
        assert!((log_student_t_cdf(-1.0, 1.0).exp() - 0.25).abs() < 1e-14);
        assert!(log_student_t_cdf(-200.0, 7.0).is_finite());
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp([0.0, 0.0]) - 2.0_f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp([-1000.0, -1000.0]) - (-1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }
}
