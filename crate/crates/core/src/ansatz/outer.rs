//! Outer profile `u₂ = (√2/ε)(Aζ + Bξ)` matched to the boundary layer.

use serde::Serialize;

use super::boundary::{correction_constants, CorrectionConstants};
use crate::error::{KsError, Result};
use crate::specfun::{c_mix, pair_unchecked, EULER_GAMMA};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const LN2: f64 = std::f64::consts::LN_2;
const MAX_SWEEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterMatch {
    pub eps: f64,
    /// Boundary layer scale ratio `μ̃/ε`.
    pub gamma: f64,
    /// Coefficient of ζ (fixed by the singular strength).
    pub a_coef: f64,
    /// Coefficient of ξ.
    pub b_coef: f64,
    pub constants: CorrectionConstants,
    /// Zero of `u₂'`.
    pub r_tilde: f64,
    /// `H(0)` for the regular part `H = u₂ + 4 ln r`.
    pub h0: f64,
    /// Sweeps of the constants/scale fixed point.
    pub iterations: usize,
}

impl OuterMatch {
    /// `[u₂, u₂', u₂'']` at `r ∈ (0, 1]`.
    pub fn eval(&self, r: f64) -> [f64; 3] {
        let p = pair_unchecked(r);
        let k = SQRT2 / self.eps;
        [
            k * (self.a_coef * p.zeta + self.b_coef * p.xi),
            k * (self.a_coef * p.zetap + self.b_coef * p.xip),
            k * (self.a_coef * p.zetapp() + self.b_coef * p.xipp()),
        ]
    }

    /// Regular part `H(r) = u₂(r) + 4 ln r` and its limit at 0.
    pub fn regular_part(&self, r: f64) -> f64 {
        if r == 0.0 {
            self.h0
        } else {
            self.eval(r)[0] + 4.0 * r.ln()
        }
    }
}

/// Scale coefficient from the derivative condition at r = 1.
fn b_of_gamma(eps: f64, g: f64, c: &CorrectionConstants, xip1: f64) -> f64 {
    (1.0 / g + eps / SQRT2 * (-2.0 + 2.0 * g * LN2 + eps * g * c.zeta1)) / xip1
}

fn value_defect(eps: f64, g: f64, c: &CorrectionConstants) -> f64 {
    let p = pair_unchecked(1.0);
    let a = 2.0 * SQRT2 * eps;
    a * p.zeta + b_of_gamma(eps, g, c, p.xip) * p.xi - 1.0 - eps / SQRT2 * (-2.0 * g.ln() + eps * g * c.nu2)
}

/// Smallest positive root of the value condition, i.e. the branch that
/// tends to `ξ(1)/ξ'(1)` as ε → 0.
fn solve_gamma(eps: f64, c: &CorrectionConstants) -> Result<f64> {
    let n = 600;
    let grid: Vec<f64> = (0..=n).map(|j| 1e-3 * 1e6f64.powf(j as f64 / n as f64)).collect();
    let mut prev = (grid[0], value_defect(eps, grid[0], c));
    for &g in &grid[1..] {
        let f = value_defect(eps, g, c);
        if prev.1 > 0.0 && f <= 0.0 {
            let (mut lo, mut hi) = (prev.0, g);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if value_defect(eps, mid, c) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 4.0 * f64::EPSILON * hi {
                    break;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        prev = (g, f);
    }
    Err(KsError::Matching(format!("no positive scale ratio satisfies the r = 1 matching conditions at eps = {eps}")))
}

fn locate_r_tilde(a: f64, b: f64) -> Result<f64> {
    let slope = |r: f64| {
        let p = pair_unchecked(r);
        a * p.zetap + b * p.xip
    };
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    if !(slope(lo) < 0.0 && slope(hi) > 0.0) {
        return Err(KsError::Matching("outer profile has no interior critical point".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves the two r = 1 conditions for `(B, γ)` with the constants iterated
/// to consistency with γ.
pub fn match_outer(eps: f64) -> Result<OuterMatch> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(KsError::Domain(format!("eps must lie in (0,1), got {eps}")));
    }
    let p1 = pair_unchecked(1.0);
    let a = 2.0 * SQRT2 * eps;
    let mut g = p1.xi / p1.xip;
    let mut iterations = 0;
    let mut c = correction_constants(g)?;
    loop {
        iterations += 1;
        let next = solve_gamma(eps, &c)?;
        let moved = (next - g).abs();
        g = next;
        c = correction_constants(g)?;
        if moved <= 1e-12 * (1.0 + g) {
            break;
        }
        if iterations >= MAX_SWEEPS {
            return Err(KsError::Convergence { what: "outer matching sweeps".into(), iterations, residual: moved });
        }
    }
    if g <= 0.0 {
        return Err(KsError::Matching(format!("scale ratio {g} not positive")));
    }
    let b = b_of_gamma(eps, g, &c, p1.xip);
    let r_tilde = locate_r_tilde(a, b)?;
    let h0 = 4.0 * (LN2 - EULER_GAMMA + c_mix()) + SQRT2 / eps * b;
    Ok(OuterMatch { eps, gamma: g, a_coef: a, b_coef: b, constants: c, r_tilde, h0, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_both_conditions() {
        let m = match_outer(0.025).unwrap();
        let u = m.eval(1.0);
        let k = SQRT2 / m.eps;
        let c = &m.constants;
        let g = m.gamma;
        let want_v = 1.0 + m.eps / SQRT2 * (-2.0 * g.ln() + m.eps * g * c.nu2);
        let want_d = 1.0 / g + m.eps / SQRT2 * (-2.0 + 2.0 * g * LN2 + m.eps * g * c.zeta1);
        assert!((u[0] / k - want_v).abs() < 1e-12);
        assert!((u[1] / k - want_d).abs() < 1e-12);
        // independent high-order integration of the same fixed point
        assert!((g - 3.07168420584).abs() < 1e-6, "{g}");
    }

    #[test]
    fn singular_strength_is_four() {
        let m = match_outer(0.02).unwrap();
        let (r1, r2) = (1e-6, 1e-8);
        let s = (m.eval(r2)[0] - m.eval(r1)[0]) / (r1.ln() - r2.ln());
        assert!((s - 4.0).abs() < 1e-6, "{s}");
        let h_small = m.regular_part(1e-8);
        assert!((h_small - m.h0).abs() < 1e-6);
    }

    #[test]
    fn critical_point_scale() {
        let m = match_outer(0.025).unwrap();
        assert!(m.eval(m.r_tilde)[1].abs() < 1e-8);
        let ratio = m.r_tilde / m.eps.sqrt();
        assert!((0.1..=10.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn large_eps_has_no_matching() {
        assert!(matches!(match_outer(0.1), Err(KsError::Matching(_))));
    }
}
