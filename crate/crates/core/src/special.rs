//! Special functions not covered by `statrs`: the complex log-gamma needed by
//! the hyperbolic secant family.

use num_complex::Complex64;
use std::f64::consts::PI;

pub use statrs::function::gamma::ln_gamma;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
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

/// Above this imaginary part the Stirling series is used instead of Lanczos.
const STIRLING_SWITCH: f64 = 20.0;

/// `ln Γ(z)` for `Re z > 0`.
///
/// Only the real part is continuous across the whole half plane; the imaginary
/// part is correct modulo `2π`. That is all the density code needs, since it
/// only uses `ln |Γ(z)| = Re ln Γ(z)`.
pub fn ln_gamma_complex(z: Complex64) -> Complex64 {
    debug_assert!(z.re > 0.0, "ln_gamma_complex needs Re z > 0, got {z}");
    if z.im.abs() > STIRLING_SWITCH {
        return stirling(z);
    }
    // Lanczos is accurate for Re z >= 1/2; shift up with Γ(z) = Γ(z+1)/z.
    let mut shift = Complex64::new(0.0, 0.0);
    let mut w = z;
    while w.re < 0.5 {
        shift += w.ln();
        w += 1.0;
    }
    lanczos(w) - shift
}

fn lanczos(z: Complex64) -> Complex64 {
    let z = z - 1.0;
    let mut x = Complex64::new(LANCZOS_COEFFS[0], 0.0);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

fn stirling(z: Complex64) -> Complex64 {
    // Bernoulli terms B_{2k} / (2k (2k-1)).
    const TERMS: [f64; 7] =
        [1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0, -691.0 / 360_360.0, 1.0 / 156.0];
    let inv = z.inv();
    let inv2 = inv * inv;
    let mut series = Complex64::new(0.0, 0.0);
    let mut pow = inv;
    for &c in &TERMS {
        series += c * pow;
        pow *= inv2;
    }
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series
}

/// `ln |Γ(re + i·im)|²`.
pub fn ln_abs_gamma_sq(re: f64, im: f64) -> f64 {
    2.0 * ln_gamma_complex(Complex64::new(re, im)).re
}

/// `ln C(n, k)` for real `n >= k >= 0`.
pub fn ln_binomial(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_axis_matches_statrs() {
        for &x in &[0.1, 0.5, 1.0, 2.5, 7.3, 19.0, 55.5] {
            let got = ln_gamma_complex(Complex64::new(x, 0.0)).re;
            assert!((got - ln_gamma(x)).abs() < 1e-12 * (1.0 + ln_gamma(x).abs()), "x = {x}");
        }
    }

    #[test]
    fn half_line_reflection_identity() {
        // |Γ(1/2 + i y)|² = π / cosh(π y)
        for &y in &[0.0, 0.3, 1.0, 4.0, 12.0, 19.9, 20.1, 35.0] {
            let got = ln_abs_gamma_sq(0.5, y);
            let want = PI.ln() - (PI * y).cosh().ln();
            assert!((got - want).abs() < 1e-11, "y = {y}: {got} vs {want}");
        }
    }

    #[test]
    fn unit_line_identity() {
        // |Γ(1 + i y)|² = π y / sinh(π y)
        for &y in &[0.1, 1.0, 5.0, 19.0, 21.0, 40.0] {
            let got = ln_abs_gamma_sq(1.0, y);
            let want = (PI * y).ln() - (PI * y).sinh().ln();
            assert!((got - want).abs() < 1e-11, "y = {y}");
        }
    }

    #[test]
    fn lanczos_and_stirling_agree_at_the_switch() {
        for &re in &[0.5, 1.0, 3.0] {
            let z = Complex64::new(re, STIRLING_SWITCH);
            let a = lanczos(z).re;
            let b = stirling(z).re;
            assert!((a - b).abs() < 1e-12, "re = {re}: {a} vs {b}");
        }
    }
}
