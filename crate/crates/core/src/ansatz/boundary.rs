//! Layer correction stack: the profiles `α, v, β, z` around a layer radius,
//! integrated in the stretched variable `s = (r − R)/μ`, and the affine
//! constants of `v` and `z` far from the layer.

use serde::Serialize;

use super::{w_layer, N_DIM};
use crate::error::{KsError, Result};
use crate::ode::{integrate, Tolerance};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const LN4: f64 = 2.0 * std::f64::consts::LN_2;

/// Affine asymptotics `v ≈ ν₁s + ν₂`, `ẑ ≈ ζ₁s + ζ₂` as `s → −∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectionConstants {
    pub gamma: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    /// Largest relative deviation from the affine fits on the window.
    pub fit_residual: f64,
    /// Fit window in `s`.
    pub window: (f64, f64),
}

impl CorrectionConstants {
    /// `ν₁ = −2(n−1)(1 − ln 2) + 2 ln 2·γ`.
    pub fn nu1_closed_form(gamma: f64) -> f64 {
        -2.0 * (N_DIM - 1.0) * (1.0 - std::f64::consts::LN_2) + 2.0 * std::f64::consts::LN_2 * gamma
    }
}

/// Primary fit window and the single widened fallback.
pub const FIT_WINDOWS: [(f64, f64); 2] = [(-40.0, -25.0), (-60.0, -35.0)];
/// Relative affine-fit residual above which extraction fails.
pub const FIT_TOL: f64 = 1e-6;
const FIT_POINTS: usize = 301;

fn tol() -> Tolerance {
    Tolerance { abs: 1e-10, rel: 1e-10 }
}

/// Leading expansion terms in `s`, given the running integrals.
fn alpha1(gamma: f64, s: f64, i1: f64) -> f64 {
    -i1 + gamma / SQRT2 * s * s
}

fn alpha2(gamma: f64, s: f64, i2: f64, j: f64) -> f64 {
    i2 - 0.5 * LN4 * s * s + j - s * s * gamma.ln()
}

/// Right-hand side of the stretched-variable system shared by all layers:
/// `[∫W, ∬W, ∫σW, ∫v, v, v', ẑ, ẑ']`.
fn inner_rhs(gamma: f64, s: f64, y: &[f64]) -> [f64; 8] {
    let (w, _) = w_layer(s);
    let ew = w.exp();
    let a1 = alpha1(gamma, s, y[0]);
    let a2 = alpha2(gamma, s, y[1], y[2]);
    let b1 = -y[3];
    let av = a1 + y[4];
    [w, y[0], s * w, y[4], y[5], -ew * y[4] - ew * a1, y[7], -ew * y[6] - ew * (a2 + b1 + 0.5 * av * av)]
}

fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let scale = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let worst = x.iter().zip(y).map(|(a, b)| (b - slope * a - icpt).abs()).fold(0.0, f64::max);
    (slope, icpt, worst / scale)
}

fn fit_on(gamma: f64, window: (f64, f64)) -> Result<CorrectionConstants> {
    let (lo, hi) = window;
    let outs: Vec<f64> = (0..FIT_POINTS).map(|j| hi + (lo - hi) * j as f64 / (FIT_POINTS - 1) as f64).collect();
    let ys = integrate(|s, y: &[f64; 8]| inner_rhs(gamma, s, y), 0.0, [0.0; 8], &outs, tol())?;
    let v: Vec<f64> = ys.iter().map(|y| y[4]).collect();
    let z: Vec<f64> = ys.iter().map(|y| y[6]).collect();
    let (nu1, nu2, rv) = affine_fit(&outs, &v);
    let (zeta1, zeta2, rz) = affine_fit(&outs, &z);
    Ok(CorrectionConstants { gamma, nu1, nu2, zeta1, zeta2, fit_residual: rv.max(rz), window })
}

/// Extracts `(ν₁, ν₂, ζ₁, ζ₂)` for the layer scale ratio `γ = μ/ε`.
pub fn correction_constants(gamma: f64) -> Result<CorrectionConstants> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(KsError::Domain(format!("layer scale ratio must be positive, got {gamma}")));
    }
    let first = fit_on(gamma, FIT_WINDOWS[0])?;
    if first.fit_residual <= FIT_TOL {
        return Ok(first);
    }
    let second = fit_on(gamma, FIT_WINDOWS[1])?;
    if second.fit_residual <= FIT_TOL {
        return Ok(second);
    }
    Err(KsError::Extraction { residual: second.fit_residual })
}

/// Geometry of one correction stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackSpec {
    /// Layer radius `R`.
    pub center: f64,
    /// Layer width `μ`.
    pub mu: f64,
    pub eps: f64,
    pub ln_lambda: f64,
    /// Keep the third-order term `z`.
    pub with_z: bool,
}

impl StackSpec {
    pub fn gamma(&self) -> f64 {
        self.mu / self.eps
    }
}

/// Value and two radial derivatives of each stack term at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StackSample {
    pub r: f64,
    /// `W_μ − ln λ`.
    pub bubble: [f64; 3],
    pub alpha: [f64; 3],
    pub v: [f64; 3],
    pub beta: [f64; 3],
    pub z: [f64; 3],
}

impl StackSample {
    pub fn total(&self) -> [f64; 3] {
        let mut t = [0.0; 3];
        for part in [self.bubble, self.alpha, self.v, self.beta, self.z] {
            for d in 0..3 {
                t[d] += part[d];
            }
        }
        t
    }

    /// The four corrections without the bubble.
    pub fn corrections(&self) -> [[f64; 3]; 4] {
        [self.alpha, self.v, self.beta, self.z]
    }
}

/// Full 12-state system: the eight stretched states followed by
/// `[α, dα/ds, β, dβ/ds]` with `r = R + μs`.
fn full_rhs(spec: &StackSpec, s: f64, y: &[f64; 12]) -> [f64; 12] {
    let g = spec.gamma();
    let head = inner_rhs(g, s, &y[..8]);
    let mu = spec.mu;
    let r = spec.center + mu * s;
    let (w, wp) = w_layer(s);
    let forcing = w - 2.0 * mu.ln() - spec.ln_lambda;
    let app = -mu * y[9] / r - mu * wp / r + mu * mu * forcing;
    let bpp = -mu * y[11] / r - mu * mu * y[5] / r;
    let mut out = [0.0; 12];
    out[..8].copy_from_slice(&head);
    out[8] = y[9];
    out[9] = app;
    out[10] = y[11];
    out[11] = bpp;
    out
}

fn sample_from_state(spec: &StackSpec, s: f64, y: &[f64; 12]) -> StackSample {
    let mu = spec.mu;
    let r = spec.center + mu * s;
    let (w, wp) = w_layer(s);
    let ew = w.exp();
    let bubble = [w - 2.0 * mu.ln() - spec.ln_lambda, wp / mu, -ew / (mu * mu)];
    let ar = y[9] / mu;
    let alpha = [y[8], ar, -ar / r - (wp / mu) / r + w - 2.0 * mu.ln() - spec.ln_lambda];
    let a1 = alpha1(spec.gamma(), s, y[0]);
    let v = [mu * y[4], y[5], (-ew * y[4] - ew * a1) / mu];
    let br = y[11] / mu;
    let beta = [y[10], br, -br / r - y[5] / r];
    let z = if spec.with_z {
        let d = inner_rhs(spec.gamma(), s, &y[..8]);
        [mu * mu * y[6], mu * y[7], d[7]]
    } else {
        [0.0; 3]
    };
    StackSample { r, bubble, alpha, v, beta, z }
}

/// Evaluates the stack at `radii`, which must all lie on one side of the
/// center and be ordered away from it. Every radius must stay positive.
pub fn stack_one_side(spec: &StackSpec, radii: &[f64]) -> Result<Vec<StackSample>> {
    if !(spec.mu > 0.0 && spec.eps > 0.0 && spec.center > 0.0) {
        return Err(KsError::Domain("stack needs positive center, width and eps".into()));
    }
    if radii.is_empty() {
        return Ok(Vec::new());
    }
    let outs: Vec<f64> = radii.iter().map(|r| (r - spec.center) / spec.mu).collect();
    let monotone = outs.windows(2).all(|w| (w[1].abs() >= w[0].abs()) && w[0] * w[1] >= 0.0);
    if !monotone || radii.iter().any(|r| *r <= 0.0) {
        return Err(KsError::Domain("stack radii must be positive, one-sided and ordered away from the center".into()));
    }
    let ys = integrate(|s, y: &[f64; 12]| full_rhs(spec, s, y), 0.0, [0.0; 12], &outs, tol())?;
    Ok(outs.iter().zip(&ys).map(|(s, y)| sample_from_state(spec, *s, y)).collect())
}

/// Evaluates the stack at sorted `radii` on both sides of the center.
pub fn stack_two_sided(spec: &StackSpec, radii: &[f64]) -> Result<Vec<StackSample>> {
    let split = radii.partition_point(|r| *r < spec.center);
    let left: Vec<f64> = radii[..split].iter().rev().copied().collect();
    let right = &radii[split..];
    let mut l = stack_one_side(spec, &left)?;
    l.reverse();
    l.extend(stack_one_side(spec, right)?);
    Ok(l)
}

/// Boundary-layer correction profiles on the window `[1 − 2δ₁, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryCorrections {
    pub constants: CorrectionConstants,
    /// Samples at the requested radii, ordered by increasing r.
    pub samples: Vec<StackSample>,
}

/// Integrates the boundary stack (`R = 1`, width `μ̃`) at the given sorted radii.
pub fn boundary_corrections(mu_tilde: f64, eps: f64, ln_lambda: f64, radii: &[f64]) -> Result<BoundaryCorrections> {
    let constants = correction_constants(mu_tilde / eps)?;
    if radii.iter().any(|r| *r > 1.0) {
        return Err(KsError::Domain("boundary stack radii must not exceed 1".into()));
    }
    let spec = StackSpec { center: 1.0, mu: mu_tilde, eps, ln_lambda, with_z: true };
    let rev: Vec<f64> = radii.iter().rev().copied().collect();
    let mut samples = stack_one_side(&spec, &rev)?;
    samples.reverse();
    Ok(BoundaryCorrections { constants, samples })
}

/// Leading stretched profiles `(α)₁` and `v` at `s ≤ 0`, for expansion checks.
pub fn stretched_leading(gamma: f64, s_points: &[f64]) -> Result<Vec<(f64, f64)>> {
    let ys = integrate(|s, y: &[f64; 8]| inner_rhs(gamma, s, y), 0.0, [0.0; 8], s_points, tol())?;
    Ok(s_points.iter().zip(&ys).map(|(s, y)| (alpha1(gamma, *s, y[0]), y[4])).collect())
}
