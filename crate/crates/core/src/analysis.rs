//! Weighted norms, the residual and nonlinearity of the ansatz, the linearized
//! operator `L = −Δ + 1 − λe^U` with its bubble kernel mode, and the contraction
//! that corrects the ansatz to a solution.
//!
//! Discrete statements use the conservative finite volumes of [`crate::fv`], so
//! a fixed point of the discrete map is an exact zero of the discrete residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ansatz::{solve_epsilon, AnsatzParams};
use crate::error::{KsError, Result};
use crate::fv::RadialCells;
use crate::grid::{disk_integral, smoothstep, Profile};
use crate::linalg::{max_abs, Tridiag};

/// Weight exponent of the inner sup norm.
pub const NU_DEFAULT: f64 = 0.5;
/// Exponent in the inner residual envelope `λ^α + r²/ε`, any value in (0, 1/2).
pub const INNER_ALPHA: f64 = 0.25;
/// Backward error accepted from the banded solve.
pub const LINEAR_TOL: f64 = 1e-10;
/// `‖φ‖_∞/‖h‖_∞` above which the smallest singular value is computed.
const AMPLIFICATION_CHECK: f64 = 1e6;
/// Smallest singular value treated as a kernel.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Largest exponent before `λe^u` is declared an overflow.
const EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormParams {
    pub nu: f64,
    pub lambda: f64,
}

impl NormParams {
    pub fn new(nu: f64, lambda: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < 1.0) {
            return Err(KsError::Domain(format!("weight exponent must lie in (0,1), got {nu}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(KsError::Domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { nu, lambda })
    }

    /// `f_λ(r) = λ / (λ + (1 + r/√λ)^{−2−ν})`.
    pub fn weight(&self, r: f64) -> f64 {
        let t = 1.0 + r / self.lambda.sqrt();
        // (1+t)^{-2-ν}/λ in logs keeps tiny λ finite
        let q = (-(2.0 + self.nu) * t.ln() - self.lambda.ln()).exp();
        1.0 / (1.0 + q)
    }
}

/// Inner cutoff: 1 on `[0, 1/2]`, 0 on `[3/4, 1]`.
pub fn chi_inner(r: f64) -> f64 {
    1.0 - smoothstep((r - 0.5) / 0.25).0
}

/// Outer cutoff: 0 on `[0, 1/4]`, 1 on `[1/2, 1]`.
pub fn chi_outer(r: f64) -> f64 {
    smoothstep((r - 0.25) / 0.25).0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `‖χ̃₁R‖_⋆`.
    pub sup_weighted_inner: f64,
    /// `‖χ̃₂R‖_{L¹}`.
    pub l1_outer: f64,
    pub star: f64,
    pub starstar: f64,
    /// Exponent σ in `ε^{1+σ}`, filled in by ladder drivers.
    pub sigma_fit: Option<f64>,
    /// Plain `‖R‖_{L¹(B₁∖B_{1/2})}`.
    pub l1_annulus: f64,
    pub sup_abs: f64,
}

/// Norms of a radial field on a grid.
pub fn field_norms(grid: &[f64], field: &[f64], norm: &NormParams) -> ResidualReport {
    let sup_weighted_inner = grid.iter().zip(field).map(|(r, v)| norm.weight(*r) * (chi_inner(*r) * v).abs()).fold(0.0, f64::max);
    let outer: Vec<f64> = grid.iter().zip(field).map(|(r, v)| (chi_outer(*r) * v).abs()).collect();
    let l1_outer = disk_integral(grid, &outer, 0.0, 1.0);
    let abs: Vec<f64> = field.iter().map(|v| v.abs()).collect();
    let l1_annulus = disk_integral(grid, &abs, 0.5, 1.0);
    ResidualReport {
        sup_weighted_inner,
        l1_outer,
        star: (norm.lambda.ln().abs() * sup_weighted_inner).max(l1_outer),
        starstar: sup_weighted_inner.max(l1_outer),
        sigma_fit: None,
        l1_annulus,
        sup_abs: max_abs(field),
    }
}

/// `‖u‖_*` alone.
pub fn star_norm(grid: &[f64], field: &[f64], norm: &NormParams) -> f64 {
    field_norms(grid, field, norm).star
}

fn lambda_exp(r: f64, u: f64, ln_lambda: f64) -> Result<f64> {
    let e = u + ln_lambda;
    if !e.is_finite() || e > EXP_LIMIT {
        return Err(KsError::Overflow { radius: r });
    }
    Ok(e.exp())
}

/// `λe^u` per node.
pub fn reaction(grid: &[f64], u: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let ll = lambda.ln();
    grid.iter().zip(u).map(|(r, v)| lambda_exp(*r, *v, ll)).collect()
}

/// Pointwise `R(U) = −ΔU + U − λe^U` from the profile's own derivatives.
pub fn residual(u: &Profile, lambda: f64) -> Result<(Vec<f64>, ResidualReport)> {
    let norm = NormParams::new(NU_DEFAULT, lambda)?;
    let react = reaction(&u.grid, &u.values, lambda)?;
    let field: Vec<f64> = (0..u.len())
        .map(|i| {
            let r = u.grid[i];
            let lap = if r == 0.0 { 2.0 * u.d2[i] } else { u.d2[i] + u.d1[i] / r };
            -lap + u.values[i] - react[i]
        })
        .collect();
    if let Some(i) = field.iter().position(|v| !v.is_finite()) {
        return Err(KsError::Overflow { radius: u.grid[i] });
    }
    let report = field_norms(&u.grid, &field, &norm);
    Ok((field, report))
}

/// Finite volume residual, integrated per cell.
pub fn discrete_residual_integrated(cells: &RadialCells, u: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let react = reaction(&cells.r, u, lambda)?;
    let mut out = cells.stiffness_apply(u);
    for i in 0..out.len() {
        out[i] += cells.volume[i] * (u[i] - react[i]);
    }
    Ok(out)
}

/// Finite volume residual divided by the cell volumes, with its norms.
pub fn discrete_residual(grid: &[f64], u: &[f64], lambda: f64) -> Result<(Vec<f64>, ResidualReport)> {
    let norm = NormParams::new(NU_DEFAULT, lambda)?;
    let cells = RadialCells::new(grid)?;
    let field = cells.pointwise(&discrete_residual_integrated(&cells, u, lambda)?);
    let report = field_norms(grid, &field, &norm);
    Ok((field, report))
}

/// Regions of the residual and nonlinearity estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bands {
    pub eps: f64,
    pub delta: f64,
    pub delta1: f64,
    pub mu: f64,
}

impl From<&AnsatzParams> for Bands {
    fn from(p: &AnsatzParams) -> Self {
        Self { eps: p.eps, delta: p.delta, delta1: p.delta1, mu: p.mu }
    }
}

/// `8μ²λ/(λμ² + r²)²`, the bubble density `λe^{U₀}`.
pub fn bubble_density(r: f64, mu: f64, lambda: f64) -> f64 {
    let a = lambda * mu * mu;
    8.0 * mu * mu * lambda / ((a + r * r) * (a + r * r))
}

/// Regime by regime ratios of the residual to its expected envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEnvelope {
    /// `sup_{r≤δ} |R| / (λe^{U₀}(λ^α + r²/ε))`.
    pub inner_ratio: f64,
    /// `sup |R|` on `[δ, 1−2δ₁]`.
    pub middle_sup: f64,
    /// `ln(middle_sup)/ln ε`, the exponent β realized there.
    pub middle_beta: f64,
    /// `‖R‖_{L¹(B₁∖B_{1/2})}`.
    pub annulus_l1: f64,
}

pub fn residual_envelope(grid: &[f64], field: &[f64], lambda: f64, bands: &Bands) -> ResidualEnvelope {
    let mut inner_ratio: f64 = 0.0;
    let mut middle_sup: f64 = 0.0;
    let la = lambda.powf(INNER_ALPHA);
    for (r, v) in grid.iter().zip(field) {
        if *r <= bands.delta {
            let env = bubble_density(*r, bands.mu, lambda) * (la + r * r / bands.eps);
            inner_ratio = inner_ratio.max(v.abs() / env);
        }
        if *r >= bands.delta && *r <= 1.0 - 2.0 * bands.delta1 {
            middle_sup = middle_sup.max(v.abs());
        }
    }
    let abs: Vec<f64> = field.iter().map(|v| v.abs()).collect();
    ResidualEnvelope {
        inner_ratio,
        middle_sup,
        middle_beta: middle_sup.ln() / bands.eps.ln(),
        annulus_l1: disk_integral(grid, &abs, 0.5, 1.0),
    }
}

/// `N(φ) = λe^U(e^φ − 1 − φ)`.
pub fn nonlinearity(u: &Profile, phi: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if phi.len() != u.len() {
        return Err(KsError::Domain("phi must live on the profile grid".into()));
    }
    if max_abs(phi) > 1.0 {
        return Err(KsError::Domain(format!("nonlinearity expects |phi| <= 1, got {}", max_abs(phi))));
    }
    let react = reaction(&u.grid, &u.values, lambda)?;
    Ok(react.iter().zip(phi).map(|(e, p)| e * (p.exp_m1() - p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonlinearEnvelope {
    /// `sup_{r≤2δ} |N| / (|φ|² λe^{U₀})`.
    pub inner: f64,
    /// `sup |N|/|φ|²` on `[2δ, 1−2δ₁]`.
    pub middle: f64,
    /// `ε‖N‖_{L¹(B₁∖B_{1/2})} / ‖φ‖²_{L∞(B₁∖B_{1/2})}`.
    pub outer: f64,
}

pub fn nonlinear_envelope(grid: &[f64], phi: &[f64], n: &[f64], lambda: f64, bands: &Bands) -> NonlinearEnvelope {
    let mut inner: f64 = 0.0;
    let mut middle: f64 = 0.0;
    let mut outer_sup: f64 = 0.0;
    for ((r, p), v) in grid.iter().zip(phi).zip(n) {
        let p2 = p * p;
        if p2 > 0.0 {
            if *r <= 2.0 * bands.delta {
                inner = inner.max(v.abs() / (p2 * bubble_density(*r, bands.mu, lambda)));
            } else if *r <= 1.0 - 2.0 * bands.delta1 {
                middle = middle.max(v.abs() / p2);
            }
        }
        if *r >= 0.5 {
            outer_sup = outer_sup.max(p.abs());
        }
    }
    let abs: Vec<f64> = n.iter().map(|v| v.abs()).collect();
    let l1 = disk_integral(grid, &abs, 0.5, 1.0);
    let outer = if outer_sup > 0.0 { bands.eps * l1 / (outer_sup * outer_sup) } else { 0.0 };
    NonlinearEnvelope { inner, middle, outer }
}

/// Dilation mode `z₀ = (r² − λμ²)/(r² + λμ²)`.
pub fn kernel_mode(r: f64, lambda: f64, mu: f64) -> f64 {
    let a = lambda * mu * mu;
    (r * r - a) / (r * r + a)
}

/// Max over `samples` radii in `[0, 1]` of the centered difference residual of
/// `−Δz₀ = 8λμ²/(λμ²+r²)² z₀`, in units of the bubble scale `√λ μ` (the
/// equation is invariant under that dilation, so the number does not depend on λ).
pub fn kernel_mode_residual(lambda: f64, mu: f64, samples: usize) -> f64 {
    let a = (lambda * mu * mu).sqrt();
    let h = 1e-4 * a;
    let z = |r: f64| kernel_mode(r.abs(), lambda, mu);
    let mut worst: f64 = 0.0;
    for j in 0..samples {
        // half the samples resolve the bubble, half cover [0, 1] uniformly
        let r = if j % 2 == 0 { j as f64 / samples as f64 } else { a * 20.0 * j as f64 / samples as f64 };
        let r = r.min(1.0);
        let d2 = (z(r + h) - 2.0 * z(r) + z(r - h)) / (h * h);
        let lap = if r == 0.0 { 2.0 * d2 } else { d2 + (z(r + h) - z(r - h)) / (2.0 * h * r) };
        let res = -lap - 8.0 * a * a / ((a * a + r * r) * (a * a + r * r)) * z(r);
        worst = worst.max((res * a * a).abs());
    }
    worst
}

/// Squared bubble scale `λμ²` read off the peak, `λe^{U(0)} = 8/(λμ²)`.
pub fn bubble_scale_sq(u0: f64, lambda: f64) -> f64 {
    8.0 / (u0 + lambda.ln()).exp()
}

/// Integrated linearized operator `K + V(1 − λe^U)`.
pub fn linear_operator(cells: &RadialCells, u: &[f64], lambda: f64) -> Result<Tridiag> {
    let react = reaction(&cells.r, u, lambda)?;
    let potential: Vec<f64> = react.iter().map(|e| 1.0 - e).collect();
    Ok(cells.operator(&potential))
}

/// Smallest eigenvalue in modulus of the volume-symmetrized operator
/// `V^{-1/2} J V^{-1/2}` (its smallest singular value) and the mode in nodal form.
pub fn smallest_mode(cells: &RadialCells, op: &Tridiag) -> (f64, Vec<f64>) {
    let n = cells.len();
    let sq: Vec<f64> = cells.volume.iter().map(|v| v.sqrt()).collect();
    let mut s = Tridiag::zeros(n);
    for i in 0..n {
        s.diag[i] = op.diag[i] / cells.volume[i];
        if i + 1 < n {
            s.lower[i] = op.lower[i] / (sq[i] * sq[i + 1]);
            s.upper[i] = op.upper[i] / (sq[i] * sq[i + 1]);
        }
    }
    let scale = s.diag.iter().map(|d| d.abs()).fold(0.0, f64::max).max(1.0);
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i as f64) * 0.37).sin()).collect();
    let normalize = |v: &mut Vec<f64>| {
        let l = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= l);
    };
    normalize(&mut x);
    let mut shifted = s.clone();
    for _ in 0..40 {
        let next = match shifted.solve(&x) {
            Some(y) if y.iter().all(|v| v.is_finite()) => y,
            _ => {
                shifted.diag.iter_mut().for_each(|d| *d += 1e-14 * scale);
                continue;
            }
        };
        x = next;
        normalize(&mut x);
    }
    let sx = s.mul_vec(&x);
    let sigma = x.iter().zip(&sx).map(|(a, b)| a * b).sum::<f64>().abs();
    let mode = x.iter().zip(&sq).map(|(a, w)| a / w).collect();
    (sigma, mode)
}

/// Volume-weighted cosine between a mode and the cut-off `χ̃₁z₀`.
pub fn z0_overlap(cells: &RadialCells, mode: &[f64], scale_sq: f64) -> f64 {
    let z: Vec<f64> = cells.r.iter().map(|r| chi_inner(*r) * (r * r - scale_sq) / (r * r + scale_sq)).collect();
    let d = cells.dot(mode, &z);
    d.abs() / (cells.dot(mode, mode).sqrt() * cells.dot(&z, &z).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearSolve {
    pub phi: Vec<f64>,
    /// `‖φ‖_∞/‖h‖_*` and `‖φ‖_∞/‖h‖_**`.
    pub ratio_star: f64,
    pub ratio_starstar: f64,
    pub backward_error: f64,
}

fn near_kernel(cells: &RadialCells, op: &Tridiag, u0: f64, lambda: f64) -> KsError {
    let (sigma_min, mode) = smallest_mode(cells, op);
    KsError::NearKernel { sigma_min, z0_overlap: z0_overlap(cells, &mode, bubble_scale_sq(u0, lambda)) }
}

fn solve_integrated(cells: &RadialCells, op: &Tridiag, rhs: &[f64], u0: f64, lambda: f64) -> Result<(Vec<f64>, f64)> {
    let phi = match op.solve(rhs) {
        Some(p) if p.iter().all(|v| v.is_finite()) => p,
        _ => return Err(near_kernel(cells, op, u0, lambda)),
    };
    let res = op.mul_vec(&phi);
    let err = res.iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let op_norm = (0..op.len())
        .map(|i| {
            let mut s = op.diag[i].abs();
            if i > 0 {
                s += op.lower[i - 1].abs();
            }
            if i + 1 < op.len() {
                s += op.upper[i].abs();
            }
            s
        })
        .fold(0.0, f64::max);
    let backward = err / (op_norm * max_abs(&phi) + max_abs(rhs)).max(f64::MIN_POSITIVE);
    if backward > LINEAR_TOL {
        return Err(near_kernel(cells, op, u0, lambda));
    }
    // a tiny pivot-free solve can still sit on a kernel; large amplification triggers the check
    let h_sup = rhs.iter().zip(&cells.volume).map(|(a, v)| (a / v).abs()).fold(0.0, f64::max);
    if max_abs(&phi) > AMPLIFICATION_CHECK * h_sup {
        let (sigma_min, mode) = smallest_mode(cells, op);
        if sigma_min < SIGMA_FLOOR {
            return Err(KsError::NearKernel { sigma_min, z0_overlap: z0_overlap(cells, &mode, bubble_scale_sq(u0, lambda)) });
        }
    }
    Ok((phi, backward))
}

/// Solves `Lφ = h` with `φ'(0) = φ'(1) = 0` by finite volumes.
pub fn solve_linear(u: &Profile, lambda: f64, h: &[f64]) -> Result<LinearSolve> {
    if h.len() != u.len() {
        return Err(KsError::Domain("right-hand side must live on the profile grid".into()));
    }
    let norm = NormParams::new(NU_DEFAULT, lambda)?;
    let cells = RadialCells::new(&u.grid)?;
    let op = linear_operator(&cells, &u.values, lambda)?;
    let rhs: Vec<f64> = h.iter().zip(&cells.volume).map(|(a, v)| a * v).collect();
    let (phi, backward_error) = solve_integrated(&cells, &op, &rhs, u.values[0], lambda)?;
    let hn = field_norms(&u.grid, h, &norm);
    let p = max_abs(&phi);
    Ok(LinearSolve { phi, ratio_star: p / hn.star, ratio_starstar: p / hn.starstar, backward_error })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub lambda: f64,
    pub seed: u64,
    /// Per right-hand side `(‖φ‖_∞/‖h‖_*, ‖φ‖_∞/‖h‖_**)`.
    pub ratios: Vec<(f64, f64)>,
    pub sup_ratio_star: f64,
    pub sup_ratio_starstar: f64,
}

/// Smooth random right-hand side `Σ_{j≤5} a_j cos(jπr)` with `a_j ~ U(−1,1)/(1+j)`.
pub fn random_smooth_rhs(grid: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let coef: Vec<f64> = (0..6).map(|j| rng.gen_range(-1.0..1.0) / (1.0 + j as f64)).collect();
    grid.iter()
        .map(|r| coef.iter().enumerate().map(|(j, a)| a * (j as f64 * std::f64::consts::PI * r).cos()).sum())
        .collect()
}

/// Runs `count` seeded right-hand sides through [`solve_linear`].
pub fn linear_probe(u: &Profile, lambda: f64, seed: u64, count: usize) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(count);
    for _ in 0..count {
        let h = random_smooth_rhs(&u.grid, &mut rng);
        let s = solve_linear(u, lambda, &h)?;
        ratios.push((s.ratio_star, s.ratio_starstar));
    }
    let sup_ratio_star = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let sup_ratio_starstar = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(ProbeReport { lambda, seed, ratios, sup_ratio_star, sup_ratio_starstar })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointOptions {
    /// Ball size; `None` picks `4‖φ₁‖_∞/ε^{1+σ}`.
    pub rho: Option<f64>,
    pub sigma: f64,
    pub max_iter: usize,
    /// Stop when an increment falls below `tol·(1 + ‖U‖_∞)`, the rounding
    /// floor of the iterates.
    pub tol: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { rho: None, sigma: 0.1, max_iter: 200, tol: 1e-13 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Iterate {
    pub iteration: usize,
    pub phi_norm: f64,
    pub increment: f64,
    /// Ratio to the previous increment.
    pub factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub phi: Vec<f64>,
    pub eps: f64,
    pub rho: f64,
    /// `ρε^{1+σ}`.
    pub radius: f64,
    /// Largest increment ratio above the rounding floor.
    pub contraction_factor: f64,
    pub history: Vec<Iterate>,
    /// Discrete residual norms before and after the correction.
    pub raw: ResidualReport,
    pub corrected: ResidualReport,
    /// `raw.starstar / corrected.starstar`.
    pub drop: f64,
}

/// Picard iteration `φ ← L⁻¹[N(φ) − R(U)]` from φ = 0.
pub fn fixed_point(u: &Profile, lambda: f64, opts: FixedPointOptions) -> Result<FixedPoint> {
    let eps = solve_epsilon(lambda)?;
    let cells = RadialCells::new(&u.grid)?;
    let op = linear_operator(&cells, &u.values, lambda)?;
    let react = reaction(&u.grid, &u.values, lambda)?;
    let r_int = discrete_residual_integrated(&cells, &u.values, lambda)?;
    let (_, raw) = discrete_residual(&u.grid, &u.values, lambda)?;
    let u0 = u.values[0];
    let u_sup = max_abs(&u.values);

    let apply = |phi: &[f64]| -> Result<Vec<f64>> {
        let rhs: Vec<f64> = (0..phi.len()).map(|i| cells.volume[i] * react[i] * (phi[i].exp_m1() - phi[i]) - r_int[i]).collect();
        Ok(solve_integrated(&cells, &op, &rhs, u0, lambda)?.0)
    };

    let mut phi = apply(&vec![0.0; u.len()])?;
    let first = max_abs(&phi);
    let scale = eps.powf(1.0 + opts.sigma);
    let rho = opts.rho.unwrap_or(4.0 * first / scale);
    let radius = rho * scale;
    let mut history = vec![Iterate { iteration: 1, phi_norm: first, increment: first, factor: None }];
    let mut factor: f64 = 0.0;
    let mut prev_inc = first;
    let mut converged = first == 0.0;
    for it in 2..=opts.max_iter {
        if converged {
            break;
        }
        let norm = max_abs(&phi);
        if norm > radius || norm > 1.0 {
            return Err(KsError::NonContraction { factor, escape: norm / radius });
        }
        let next = apply(&phi)?;
        let inc = next.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ratio = inc / prev_inc;
        let floor = 1e3 * f64::EPSILON * (1.0 + u_sup);
        if prev_inc > floor && inc > floor {
            factor = factor.max(ratio);
        }
        history.push(Iterate { iteration: it, phi_norm: max_abs(&next), increment: inc, factor: Some(ratio) });
        phi = next;
        if factor >= 1.0 {
            return Err(KsError::NonContraction { factor, escape: max_abs(&phi) / radius });
        }
        converged = inc <= opts.tol * (1.0 + u_sup);
        prev_inc = inc;
    }
    if !converged {
        return Err(KsError::Convergence { what: "fixed-point iteration".into(), iterations: opts.max_iter, residual: prev_inc });
    }
    if max_abs(&phi) > radius {
        return Err(KsError::NonContraction { factor, escape: max_abs(&phi) / radius });
    }
    let corrected_u: Vec<f64> = u.values.iter().zip(&phi).map(|(a, b)| a + b).collect();
    let (_, corrected) = discrete_residual(&u.grid, &corrected_u, lambda)?;
    let drop = raw.starstar / corrected.starstar.max(f64::MIN_POSITIVE);
    Ok(FixedPoint { phi, eps, rho, radius, contraction_factor: factor, history, raw, corrected, drop })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn flat(nodes: usize, value: f64) -> Profile {
        let grid = GridSpec::new(nodes, 1e-2, 1e-2).build().unwrap();
        let n = grid.len();
        Profile::from_values(grid, vec![value; n]).unwrap()
    }

    #[test]
    fn weight_limits() {
        let w = NormParams::new(0.5, 1e-4).unwrap();
        assert!((w.weight(0.0) - 1e-4 / (1e-4 + 1.0)).abs() < 1e-15);
        assert!(w.weight(1.0) > 0.9);
        assert!(NormParams::new(1.0, 1e-4).is_err());
    }

    #[test]
    fn weight_in_lambda_turns_at_two_over_nu() {
        // d/dλ ln of the inner term changes sign at r/√λ = 2/ν
        let nu = 0.5;
        for lam in [1e-6f64, 1e-4, 1e-2] {
            let t_turn = 2.0 / nu;
            let (lo, hi) = (0.5 * t_turn * lam.sqrt(), 2.0 * t_turn * lam.sqrt());
            let f = |l: f64, r: f64| NormParams::new(nu, l).unwrap().weight(r);
            assert!(f(lam * 1.01, lo) > f(lam, lo));
            assert!(f(lam * 1.01, hi) < f(lam, hi));
        }
    }

    #[test]
    fn cutoffs_are_plateaus() {
        assert_eq!(chi_inner(0.3), 1.0);
        assert_eq!(chi_inner(0.8), 0.0);
        assert_eq!(chi_outer(0.2), 0.0);
        assert_eq!(chi_outer(0.6), 1.0);
    }

    #[test]
    fn norm_identities() {
        let grid = GridSpec::new(500, 1e-3, 1e-2).build().unwrap();
        let f: Vec<f64> = grid.iter().map(|r| (3.0 * r).sin() - 0.2).collect();
        let p = NormParams::new(0.5, 1e-3).unwrap();
        let rep = field_norms(&grid, &f, &p);
        assert_eq!(rep.star, (1e-3f64.ln().abs() * rep.sup_weighted_inner).max(rep.l1_outer));
        assert_eq!(rep.starstar, rep.sup_weighted_inner.max(rep.l1_outer));
    }

    #[test]
    fn constant_solution_has_no_residual() {
        // u ≡ c with c = λe^c
        let lambda = 0.2;
        let mut c: f64 = 0.0;
        for _ in 0..100 {
            c = lambda * c.exp();
        }
        let p = flat(200, c);
        let (field, _) = residual(&p, lambda).unwrap();
        // difference quotients of a constant leave rounding noise near r = 0
        assert!(max_abs(&field) < 1e-9);
        let (_, d) = discrete_residual(&p.grid, &p.values, lambda).unwrap();
        assert!(d.starstar < 1e-13);
    }

    #[test]
    fn overflow_names_the_radius() {
        let mut p = flat(50, 0.0);
        p.values[10] = 1e4;
        match residual(&p, 1e-3) {
            Err(KsError::Overflow { radius }) => assert_eq!(radius, p.grid[10]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonlinearity_base_point_and_constant() {
        let mut p = flat(100, 0.0);
        p.values.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.05).sin());
        let lambda = 0.3;
        let zero = nonlinearity(&p, &vec![0.0; p.len()], lambda).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        for c in [0.1, 0.05, -0.1] {
            let n = nonlinearity(&p, &vec![c; p.len()], lambda).unwrap();
            for (v, u) in n.iter().zip(&p.values) {
                let quad = lambda * u.exp() * c * c / 2.0;
                assert!((v - quad).abs() <= 0.1 * quad.abs());
            }
        }
        assert!(nonlinearity(&p, &vec![2.0; p.len()], lambda).is_err());
    }

    #[test]
    fn kernel_mode_values() {
        let (l, mu) = (1e-4, 2.0);
        assert_eq!(kernel_mode(0.0, l, mu), -1.0);
        assert!(kernel_mode(l.sqrt() * mu, l, mu).abs() < 1e-15);
        assert!((kernel_mode(1.0, 1e-6, 1.0) - 1.0).abs() < 1e-4);
        for (l, mu) in [(1e-6, 1.0), (1e-3, 3.0), (0.1, 1.0)] {
            assert!(kernel_mode_residual(l, mu, 2001) < 1e-6);
        }
    }

    #[test]
    fn screened_laplacian_keeps_sign() {
        let p = flat(300, f64::NEG_INFINITY.max(-800.0));
        // λe^U underflows to 0: L = −Δ + 1
        let h = vec![2.0; p.len()];
        let s = solve_linear(&p, 1e-3, &h).unwrap();
        assert!(s.phi.iter().all(|v| (*v - 2.0).abs() < 1e-10));
        let h = vec![-1.0; p.len()];
        assert!(solve_linear(&p, 1e-3, &h).unwrap().phi.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        // U = cos(πr), φ = cos(2πr); h = −Δφ + φ − λe^Uφ
        let lambda = 0.5;
        let pi = std::f64::consts::PI;
        let err = |nodes: usize| {
            let grid: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
            let u: Vec<f64> = grid.iter().map(|r| (pi * r).cos()).collect();
            let p = Profile::from_values(grid.clone(), u).unwrap();
            let exact: Vec<f64> = grid.iter().map(|r| (2.0 * pi * r).cos()).collect();
            let h: Vec<f64> = grid
                .iter()
                .zip(&exact)
                .map(|(r, f)| {
                    let w = 2.0 * pi;
                    let lap = if *r == 0.0 { -2.0 * w * w } else { -w * w * (w * r).cos() - w * (w * r).sin() / r };
                    -lap + f - lambda * (pi * r).cos().exp() * f
                })
                .collect();
            let s = solve_linear(&p, lambda, &h).unwrap();
            s.phi.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(201), err(401));
        let rate = (e1 / e2).log2();
        assert!(rate > 1.8, "rate {rate} ({e1} -> {e2})");
    }

    #[test]
    fn smallest_mode_of_a_singular_operator() {
        // λe^U ≡ 1 makes L = −Δ, whose kernel is the constants
        let p = flat(200, 0.0);
        let cells = RadialCells::new(&p.grid).unwrap();
        let op = linear_operator(&cells, &p.values, 1.0).unwrap();
        let (s, mode) = smallest_mode(&cells, &op);
        assert!(s < 1e-8, "{s}");
        let m0 = mode[0];
        assert!(mode.iter().all(|v| (v / m0 - 1.0).abs() < 1e-6));
        match solve_linear(&p, 1.0, &vec![1.0; p.len()]) {
            Err(KsError::NearKernel { sigma_min, .. }) => assert!(sigma_min < 1e-8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_point_on_a_perturbed_constant() {
        // the lower constant root of c = λe^c, perturbed
        let lambda = 0.1;
        let mut c: f64 = 0.0;
        for _ in 0..200 {
            c = lambda * c.exp();
        }
        let grid = GridSpec::new(300, 1e-2, 1e-2).build().unwrap();
        let u: Vec<f64> = grid.iter().map(|r| c + 1e-3 * (std::f64::consts::PI * r).cos()).collect();
        let p = Profile::from_values(grid, u).unwrap();
        let fp = fixed_point(&p, lambda, FixedPointOptions { rho: Some(1e3), ..Default::default() }).unwrap();
        assert!(fp.contraction_factor < 0.5);
        assert!(fp.corrected.starstar <= 10.0 * LINEAR_TOL);
        let fixed: Vec<f64> = p.values.iter().zip(&fp.phi).map(|(a, b)| a + b).collect();
        assert!(fixed.iter().all(|v| (v - c).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn weight_is_increasing_in_r(lam in 1e-8f64..0.3, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let w = NormParams::new(0.5, lam).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(w.weight(lo) <= w.weight(hi));
            prop_assert!(w.weight(lo) > 0.0 && w.weight(hi) <= 1.0);
        }

        #[test]
        fn solve_linear_is_linear(s in -3.0f64..3.0, t in -3.0f64..3.0, seed in 0u64..1000) {
            let grid = GridSpec::new(200, 1e-2, 1e-2).build().unwrap();
            let u: Vec<f64> = grid.iter().map(|r| 2.0 - r * r).collect();
            let p = Profile::from_values(grid, u).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h1 = random_smooth_rhs(&p.grid, &mut rng);
            let h2 = random_smooth_rhs(&p.grid, &mut rng);
            let mix: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| s * a + t * b).collect();
            let (p1, p2, pm) = (solve_linear(&p, 0.05, &h1).unwrap().phi, solve_linear(&p, 0.05, &h2).unwrap().phi, solve_linear(&p, 0.05, &mix).unwrap().phi);
            for i in 0..pm.len() {
                prop_assert!((pm[i] - s * p1[i] - t * p2[i]).abs() < 1e-9 * (1.0 + max_abs(&pm)));
            }
        }
    }
}
