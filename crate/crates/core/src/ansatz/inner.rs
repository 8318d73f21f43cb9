//! Inner correction `H₀`: `−ΔH₀ + H₀ = −U₀` on `(0, r̃)` with `H₀'(0) = 0` and
//! `H₀'(r̃) = −U₀'(r̃)`, discretized by conservative finite volumes.

use serde::Serialize;

use super::bubble2d;
use crate::error::{KsError, Result};
use crate::grid::fd_derivatives;
use crate::linalg::Tridiag;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerSolution {
    /// Nodes of `[0, r̃]`, a prefix of the ambient grid.
    pub r: Vec<f64>,
    /// `[H₀, H₀', H₀'']` per node.
    pub h: Vec<[f64; 3]>,
    /// `[u₀, u₀', u₀'']` per node.
    pub u0: Vec<[f64; 3]>,
}

/// Solves for `H₀` on the grid prefix ending at `r_tilde` (which must be a node).
pub fn inner_u0(grid: &[f64], r_tilde: f64, mu: f64, lambda: f64) -> Result<InnerSolution> {
    let end = grid.iter().position(|r| *r == r_tilde).ok_or_else(|| KsError::Domain("r_tilde must be a grid node".into()))?;
    if grid[0] != 0.0 || end < 3 {
        return Err(KsError::Domain("inner grid must start at 0 and hold at least 4 nodes".into()));
    }
    let r = &grid[..=end];
    let n = r.len();
    let u0: Vec<[f64; 3]> = r.iter().map(|x| bubble2d(*x, mu, lambda)).collect();
    let mut t = Tridiag::zeros(n);
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let fl = if i == 0 { 0.0 } else { 0.5 * (r[i - 1] + r[i]) };
        let fr = if i + 1 == n { r[i] } else { 0.5 * (r[i] + r[i + 1]) };
        let vol = 0.5 * (fr * fr - fl * fl);
        let mut d = vol;
        if i > 0 {
            let c = fl / (r[i] - r[i - 1]);
            d += c;
            t.lower[i - 1] = -c;
        }
        if i + 1 < n {
            let c = fr / (r[i + 1] - r[i]);
            d += c;
            t.upper[i] = -c;
        }
        t.diag[i] = d;
        rhs[i] = -vol * u0[i][0];
        if i + 1 == n {
            rhs[i] += r_tilde * (-u0[i][1]);
        }
    }
    let h = t.solve(&rhs).ok_or_else(|| KsError::Discretization("inner correction system is singular".into()))?;
    let (mut d1, _) = fd_derivatives(r, &h);
    d1[0] = 0.0;
    d1[n - 1] = -u0[n - 1][1];
    let hs: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let d2 = if i == 0 { 0.5 * (h[0] + u0[0][0]) } else { h[i] + u0[i][0] - d1[i] / r[i] };
            [h[i], d1[i], d2]
        })
        .collect();
    let u: Vec<[f64; 3]> = hs.iter().zip(&u0).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect();
    Ok(InnerSolution { r: r.to_vec(), h: hs, u0: u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::specfun::{i01, k01};

    /// Green-function quadrature of the same problem: with the Neumann
    /// condition at `R`, `H₀(r) = ∫₀^R G(r, t)(−U₀(t)) t dt + c I₀(r)`.
    fn oracle(r: f64, rt: f64, mu: f64, lambda: f64) -> f64 {
        let (i0r, _) = i01(r);
        let (k0r, _) = k01(r);
        let (_, i1t) = i01(rt);
        let (_, k1t) = k01(rt);
        // basis vanishing derivative at R: K0 + (K1(R)/I1(R)) I0
        let m = k1t / i1t;
        let n = 20000;
        let f = |t: f64| -bubble2d(t, mu, lambda)[0] * t;
        let mut acc = 0.0;
        // Simpson on [0, R] in two pieces split at r
        let simpson = |a: f64, b: f64, g: &dyn Fn(f64) -> f64| {
            let h = (b - a) / n as f64;
            let mut s = g(a) + g(b);
            for j in 1..n {
                let x = a + j as f64 * h;
                s += if j % 2 == 1 { 4.0 } else { 2.0 } * g(x);
            }
            s * h / 3.0
        };
        let inner = |t: f64| {
            let (i0, _) = i01(t);
            i0 * f(t)
        };
        let outer = |t: f64| {
            let (k0, _) = k01(t);
            let (i0, _) = i01(t);
            (k0 + m * i0) * f(t)
        };
        acc += (k0r + m * i0r) * simpson(1e-14, r, &inner);
        acc += i0r * simpson(r, rt, &outer);
        // Neumann data: H₀'(R) = −U₀'(R); the particular part has zero slope there
        let g = -bubble2d(rt, mu, lambda)[1];
        acc + g / i1t * i0r
    }

    #[test]
    fn matches_green_quadrature() {
        let (mu, lambda, rt) = (2.0, 1e-3, 0.3);
        let grid = GridSpec::new(3000, 1e-3, 1e-2).build_with_breakpoints(&[rt]).unwrap();
        let sol = inner_u0(&grid, rt, mu, lambda).unwrap();
        for rr in [0.01, 0.1, 0.2, 0.29] {
            let got = crate::grid::interp(&sol.r, &sol.h.iter().map(|v| v[0]).collect::<Vec<_>>(), rr);
            let want = oracle(rr, rt, mu, lambda);
            assert!((got - want).abs() < 2e-4 * (1.0 + want.abs()), "r={rr}: {got} vs {want}");
        }
        assert_eq!(sol.h[0][1], 0.0);
        let slope = (sol.h[1][0] - sol.h[0][0]) / sol.r[1];
        assert!(slope.abs() < 1e-3);
    }
}
