//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.

use crate::error::{KsError, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-10 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` through each of `outputs` (monotone in the
/// direction of integration) and returns the state at every output point.
pub fn integrate<const N: usize, F>(f: F, t0: f64, y0: [f64; N], outputs: &[f64], tol: Tolerance) -> Result<Vec<[f64; N]>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut out = Vec::with_capacity(outputs.len());
    let mut t = t0;
    let mut y = y0;
    let span = outputs.last().map(|e| (e - t0).abs()).unwrap_or(0.0);
    let mut h = (span * 1e-3).max(1e-8);
    let mut k1 = f(t, &y);
    let mut steps = 0usize;
    for &target in outputs {
        let dir = (target - t).signum();
        while (target - t).abs() > 1e-14 * (1.0 + t.abs()) {
            steps += 1;
            if steps > 2_000_000 {
                return Err(KsError::Convergence { what: "ODE integration".into(), iterations: steps, residual: h });
            }
            let truncated = h > (target - t).abs();
            let mut step = h.min((target - t).abs()) * dir;
            loop {
                let k2 = f(t + C2 * step, &axpy(&y, step, &[(A21, &k1)]));
                let k3 = f(t + C3 * step, &axpy(&y, step, &[(A31, &k1), (A32, &k2)]));
                let k4 = f(t + C4 * step, &axpy(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
                let k5 = f(t + C5 * step, &axpy(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
                let k6 = f(t + step, &axpy(&y, step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
                let y_new = axpy(&y, step, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
                let k7 = f(t + step, &y_new);
                let mut err = 0.0_f64;
                for i in 0..N {
                    let e = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                    let sc = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
                    err = err.max((e / sc).abs());
                }
                if !err.is_finite() {
                    step *= 0.1;
                    if step.abs() < 1e-15 {
                        return Err(KsError::Convergence { what: "ODE integration".into(), iterations: steps, residual: f64::NAN });
                    }
                    continue;
                }
                if err <= 1.0 {
                    t += step;
                    y = y_new;
                    k1 = k7;
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    let proposed = step.abs() * fac;
                    h = if truncated { h.max(proposed) } else { proposed };
                    break;
                }
                step *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if step.abs() < 1e-14 * (1.0 + t.abs()) {
                    return Err(KsError::Convergence { what: "ODE integration".into(), iterations: steps, residual: err });
                }
            }
        }
        t = target;
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let outs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ys = integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], &outs, Tolerance::default()).unwrap();
        for (t, y) in outs.iter().zip(&ys) {
            assert!((y[0] - t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_integration() {
        let ys = integrate(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], &[-1.0, -5.0], Tolerance::default()).unwrap();
        assert!((ys[1][0] / (-5.0f64).exp() - 1.0).abs() < 1e-8);
    }
}
