//! Order-zero modified Bessel functions and the canonical pair (ξ, ζ).
//!
//! `I0`, `I1` are summed from their power series (all terms positive) and
//! switch to the Hankel asymptotic expansion for large arguments. `K0`, `K1`
//! use the logarithmic series for small arguments and the trapezoid rule on
//! `K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt` above [`K_SERIES_MAX`], where
//! the series would lose digits to cancellation.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{KsError, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Largest argument for which the K series is used.
pub const K_SERIES_MAX: f64 = 2.0;

/// Above this argument the I functions use their asymptotic expansion.
pub const I_SERIES_MAX: f64 = 50.0;

const TRAP_STEP: f64 = 0.1;
const TRAP_CUTOFF: f64 = 46.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesselEval {
    pub r: f64,
    pub i0: f64,
    pub i0p: f64,
    pub k0: f64,
    pub k0p: f64,
}

impl BesselEval {
    /// `r (I0' K0 − I0 K0')`, identically one.
    pub fn wronskian(&self) -> f64 {
        self.r * (self.i0p * self.k0 - self.i0 * self.k0p)
    }

    /// Second derivatives from `f'' = f − f'/r`.
    pub fn i0pp(&self) -> f64 {
        self.i0 - self.i0p / self.r
    }

    pub fn k0pp(&self) -> f64 {
        self.k0 - self.k0p / self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesselPair {
    pub r: f64,
    pub xi: f64,
    pub xip: f64,
    pub zeta: f64,
    pub zetap: f64,
    pub c_mix: f64,
}

impl BesselPair {
    pub fn wronskian(&self) -> f64 {
        self.r * (self.xip * self.zeta - self.xi * self.zetap)
    }

    pub fn xipp(&self) -> f64 {
        self.xi - self.xip / self.r
    }

    pub fn zetapp(&self) -> f64 {
        self.zeta - self.zetap / self.r
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return Err(KsError::Domain(format!("radius must be positive and finite, got {r}")));
    }
    Ok(())
}

/// Evaluates `I0, I0', K0, K0'` at `r > 0`.
pub fn modified_bessel(r: f64) -> Result<BesselEval> {
    check_radius(r)?;
    let (i0, i1) = i01(r);
    let (k0, k1) = k01(r);
    Ok(BesselEval { r, i0, i0p: i1, k0, k0p: -k1 })
}

/// `ξ = I0` and `ζ = K0 + c·I0` with `c` fixed by `ζ'(1) = 0`.
pub fn xi_zeta(r: f64) -> Result<BesselPair> {
    check_radius(r)?;
    if r > 1.0 {
        return Err(KsError::Domain(format!("xi_zeta needs 0 < r <= 1, got {r}")));
    }
    Ok(pair_unchecked(r))
}

pub(crate) fn pair_unchecked(r: f64) -> BesselPair {
    let c = c_mix();
    let (i0, i1) = i01(r);
    let (k0, k1) = k01(r);
    BesselPair { r, xi: i0, xip: i1, zeta: k0 + c * i0, zetap: -k1 + c * i1, c_mix: c }
}

/// `K1(1)/I1(1)`.
pub fn c_mix() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let (_, i1) = i01(1.0);
        let (_, k1) = k01(1.0);
        k1 / i1
    })
}

/// `(I0(x), I1(x))`.
pub fn i01(x: f64) -> (f64, f64) {
    if x > I_SERIES_MAX {
        return i01_asymptotic(x);
    }
    let q = 0.25 * x * x;
    let mut t0 = 1.0;
    let mut t1 = 1.0;
    let mut s0 = 1.0;
    let mut s1 = 1.0;
    let mut k = 1.0;
    loop {
        t0 *= q / (k * k);
        t1 *= q / (k * (k + 1.0));
        s0 += t0;
        s1 += t1;
        if t0 <= 1e-18 * s0 && t1 <= 1e-18 * s1 {
            break;
        }
        k += 1.0;
    }
    (s0, 0.5 * x * s1)
}

fn i01_asymptotic(x: f64) -> (f64, f64) {
    // I_ν(x) ~ e^x/√(2πx) Σ (−1)^k a_k(ν)/x^k, a_k(ν) = Π_{j≤k}(4ν²−(2j−1)²)/(k! 8^k)
    let pref = x.exp() / (2.0 * std::f64::consts::PI * x).sqrt();
    let series = |nu: f64| {
        let m = 4.0 * nu * nu;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            let next = -term * (m - odd * odd) / (kf * 8.0 * x);
            if next.abs() > term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    };
    (pref * series(0.0), pref * series(1.0))
}

/// `(K0(x), K1(x))`.
pub fn k01(x: f64) -> (f64, f64) {
    if x <= K_SERIES_MAX {
        k01_series(x)
    } else {
        k01_quadrature(x)
    }
}

fn k01_series(x: f64) -> (f64, f64) {
    let (i0, i1) = i01(x);
    let q = 0.25 * x * x;
    let lg = (0.5 * x).ln();
    // K0 = −(ln(x/2)+γ) I0 + Σ_{k≥1} H_k q^k/(k!)²
    // K1 = 1/x + ln(x/2) I1 − (x/4) Σ_{k≥0} (ψ(k+1)+ψ(k+2)) q^k/(k!(k+1)!)
    let mut h = 0.0;
    let mut t0 = 1.0;
    let mut t1 = 1.0;
    let mut s0 = 0.0;
    let mut s1 = 1.0 - 2.0 * EULER_GAMMA;
    let mut k = 1.0;
    loop {
        h += 1.0 / k;
        t0 *= q / (k * k);
        t1 *= q / (k * (k + 1.0));
        let a = t0 * h;
        let b = t1 * (2.0 * h + 1.0 / (k + 1.0) - 2.0 * EULER_GAMMA);
        s0 += a;
        s1 += b;
        if a.abs() <= 1e-18 * s0.abs().max(1e-300) && b.abs() <= 1e-18 * s1.abs() {
            break;
        }
        k += 1.0;
    }
    let k0 = -(lg + EULER_GAMMA) * i0 + s0;
    let k1 = 1.0 / x + lg * i1 - 0.25 * x * s1;
    (k0, k1)
}

fn k01_quadrature(x: f64) -> (f64, f64) {
    let mut s0 = 0.5;
    let mut s1 = 0.5;
    let mut j = 1.0;
    loop {
        let t = j * TRAP_STEP;
        let c = t.cosh();
        let arg = x * (c - 1.0);
        if arg > TRAP_CUTOFF {
            break;
        }
        let e = (-arg).exp();
        s0 += e;
        s1 += e * c;
        j += 1.0;
    }
    let scale = TRAP_STEP * (-x).exp();
    (s0 * scale, s1 * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracles: periodic trapezoid on I_n(x) = (1/π)∫₀^π e^{x cos θ} cos(nθ) dθ and
    // a fine composite Simpson rule on the K integral representation.
    fn i_oracle(n: f64, x: f64) -> f64 {
        let m = 400;
        let h = std::f64::consts::PI / m as f64;
        let mut s = 0.0;
        for j in 0..=m {
            let th = j as f64 * h;
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            s += w * (x * th.cos()).exp() * (n * th).cos();
        }
        s * h / std::f64::consts::PI
    }

    fn k_oracle(n: f64, x: f64) -> f64 {
        let upper = 12.0;
        let m = 24000;
        let h = upper / m as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * (n * t).cosh();
        let mut s = f(0.0) + f(upper);
        for j in 1..m {
            s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(j as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn reference_values_at_one() {
        let e = modified_bessel(1.0).unwrap();
        assert!((e.i0 - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((e.k0 - 0.421_024_438_240_708_34).abs() < 1e-15);
        assert!((e.i0p - 0.565_159_103_992_485).abs() < 1e-15);
        assert!((e.k0p + 0.601_907_230_197_234_6).abs() < 1e-15);
    }

    #[test]
    fn matches_integral_oracles() {
        for &x in &[1e-3, 0.1, 0.5, 1.0, 1.9, 2.0, 2.1, 3.0, 5.0, 7.75, 10.0] {
            let (i0, i1) = i01(x);
            let (k0, k1) = k01(x);
            assert!((i0 / i_oracle(0.0, x) - 1.0).abs() < 1e-13, "I0({x})");
            assert!((i1 / i_oracle(1.0, x) - 1.0).abs() < 1e-12, "I1({x})");
            if x > 0.05 {
                assert!((k0 / k_oracle(0.0, x) - 1.0).abs() < 1e-11, "K0({x})");
                assert!((k1 / k_oracle(1.0, x) - 1.0).abs() < 1e-11, "K1({x})");
            }
        }
    }

    #[test]
    fn branches_agree_at_switch_points() {
        let (a0, a1) = k01_series(2.0);
        let (b0, b1) = k01_quadrature(2.0);
        assert!((a0 / b0 - 1.0).abs() < 1e-14);
        assert!((a1 / b1 - 1.0).abs() < 1e-14);
        let (s0, s1) = i01(I_SERIES_MAX);
        let (t0, t1) = i01_asymptotic(I_SERIES_MAX);
        assert!((s0 / t0 - 1.0).abs() < 1e-14);
        assert!((s1 / t1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn wronskian_over_wide_range() {
        let mut r = 1e-8;
        while r <= 10.0 {
            let e = modified_bessel(r).unwrap();
            assert!((e.wronskian() - 1.0).abs() < 1e-12, "r = {r}");
            r *= 1.07;
        }
    }

    #[test]
    fn small_argument_limit() {
        let r = 1e-7;
        let e = modified_bessel(r).unwrap();
        assert!((e.i0 - 1.0).abs() < 1e-13);
        assert!((e.k0 + (r / 2.0).ln() + EULER_GAMMA).abs() < 1e-12);
    }

    #[test]
    fn pair_values() {
        let c = c_mix();
        assert!((c - 1.065_022_620_966_640_6).abs() < 1e-9);
        let p = xi_zeta(0.5).unwrap();
        assert!((p.zeta - 2.057_052_918_089_028).abs() < 1e-13);
        assert!(xi_zeta(1.0).unwrap().zetap.abs() < 1e-14);
        let p = xi_zeta(1e-9).unwrap();
        assert!((p.xi - 1.0).abs() < 1e-15 && p.xip.abs() < 1e-9);
    }

    #[test]
    fn domain_errors() {
        assert!(modified_bessel(0.0).is_err());
        assert!(modified_bessel(f64::NAN).is_err());
        assert!(xi_zeta(1.5).is_err());
        assert!(xi_zeta(-1.0).is_err());
    }
}
