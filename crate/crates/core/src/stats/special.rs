//! Special functions needed by the interval estimators.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Digamma `ψ(x)` for `x > 0`; NaN otherwise.
pub fn digamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r / 132.0))));
    acc + x.ln() - 0.5 / x - series
}

/// Trigamma `ψ'(x)` for `x > 0`; NaN otherwise.
pub fn trigamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * 5.0 / 66.0)));
    acc + 1.0 / x + 0.5 * r + series * r / x
}

/// Standard normal quantile `Φ⁻¹(p)` (Wichura's AS241, about 1e-16 relative).
pub fn probit(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2_509.080_928_730_122_7 + 33_430.575_583_588_13) * r + 67_265.770_927_008_7) * r
            + 45_921.953_931_549_87)
            * r
            + 13_731.693_765_509_46)
            * r
            + 1_971.590_950_306_551_3)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((r * 5_226.495_278_852_546 + 28_729.085_735_721_943) * r + 39_307.895_800_092_71) * r
            + 21_213.794_301_586_597)
            * r
            + 5_394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_345e-4) * r + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288e-7 + 2.711_555_568_743_487_6e-5) * r + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_887_9)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Two-sided normal critical value for `confidence`, e.g. 1.959964 at 0.95.
pub fn z_critical(confidence: f64) -> f64 {
    probit(0.5 + confidence / 2.0)
}

/// Quantile of χ² with one degree of freedom.
pub fn chi2_1_quantile(confidence: f64) -> f64 {
    let z = z_critical(confidence);
    z * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma as sg;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(close(ln_gamma(1.0), 0.0, 1e-14));
        assert!(close(ln_gamma(2.0), 0.0, 1e-14));
        assert!(close(ln_gamma(0.5), PI.sqrt().ln(), 1e-14));
        assert!(close(ln_gamma(10.0), 362_880f64.ln(), 1e-13));
        for &x in &[1e-3, 0.1, 0.7, 1.5, 3.3, 17.0, 123.4, 1e4] {
            assert!(close(ln_gamma(x), sg::ln_gamma(x), 1e-12), "x = {x}");
        }
    }

    #[test]
    fn digamma_matches_reference() {
        // ψ(1) = -γ
        assert!(close(digamma(1.0), -0.577_215_664_901_532_9, 1e-13));
        for &x in &[1e-3, 0.05, 0.5, 1.7, 4.2, 9.99, 10.0, 55.5, 1e5] {
            assert!(close(digamma(x), sg::digamma(x), 1e-12), "x = {x}");
        }
        assert!(digamma(0.0).is_nan());
    }

    #[test]
    fn trigamma_known_values_and_recurrence() {
        assert!(close(trigamma(1.0), PI * PI / 6.0, 1e-13));
        assert!(close(trigamma(0.5), PI * PI / 2.0, 1e-13));
        for &x in &[0.01, 0.3, 2.5, 11.0, 400.0] {
            assert!(close(trigamma(x) - trigamma(x + 1.0), 1.0 / (x * x), 1e-12), "x = {x}");
            // derivative of digamma
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(close(trigamma(x), fd, 1e-6), "x = {x}");
        }
    }

    #[test]
    fn probit_matches_reference() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-300, 1e-20, 1e-6, 0.01, 0.025, 0.2, 0.5, 0.7, 0.975, 0.999_999] {
            let z = probit(p);
            assert!(close(z, n.inverse_cdf(p), 1e-9), "p = {p}");
        }
        assert!(close(z_critical(0.95), 1.959_963_984_540_054, 1e-14));
        assert!(close(chi2_1_quantile(0.95), 3.841_458_820_694_124, 1e-13));
        assert_eq!(probit(0.5), 0.0);
        assert!(probit(1.5).is_nan());
    }
}
