//! Piecewise solutions of `−u'' − u'/r + u = 0` with a logarithmic singularity at
//! the origin: the singular Green function and the multi-layer Green functions
//! fixed by the reflection law at each free interface.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::linalg::{max_abs, Tridiag};
use crate::specfun::{i01, k01, pair_unchecked};

/// Largest admissible singular coefficient.
pub const B_MAX: f64 = 0.2;
/// Largest supported layer count.
pub const K_MAX: usize = 8;
/// Condition-number ceiling for a two-point annulus solve.
pub const COND_MAX: f64 = 1e12;

pub const NEWTON_MAX_ITER: usize = 60;
pub const NEWTON_STEP_TOL: f64 = 1e-12;
pub const NEWTON_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMode {
    /// The last layer sits on r = 1 where the value is 1.
    DirichletOne,
    /// Zero flux at r = 1; every layer is interior.
    Neumann,
}

impl OuterMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" | "dirichlet_one" => Ok(OuterMode::DirichletOne),
            "neumann" => Ok(OuterMode::Neumann),
            other => Err(KsError::Domain(format!("outer mode must be dirichlet or neumann, got {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OuterMode::DirichletOne => "dirichlet",
            OuterMode::Neumann => "neumann",
        }
    }

    /// Number of interfaces whose radius is free for a profile with `k` layers.
    pub fn free_count(&self, k: usize) -> usize {
        match self {
            OuterMode::DirichletOne => k - 1,
            OuterMode::Neumann => k,
        }
    }
}

/// Bessel data at one radius.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Basis {
    pub r: f64,
    pub i: f64,
    pub ip: f64,
    pub k: f64,
    pub kp: f64,
}

impl Basis {
    pub fn at(r: f64) -> Self {
        let (i0, i1) = i01(r);
        let (k0, k1) = k01(r);
        Self { r, i: i0, ip: i1, k: k0, kp: -k1 }
    }

    pub fn ipp(&self) -> f64 {
        self.i - self.ip / self.r
    }

    pub fn kpp(&self) -> f64 {
        self.k - self.kp / self.r
    }
}

/// Coefficients `(c_K, c_I)` on one annulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusCoeffs {
    pub inner: f64,
    pub outer: f64,
    pub c_k: f64,
    pub c_i: f64,
}

impl AnnulusCoeffs {
    fn eval(&self, r: f64) -> [f64; 3] {
        let (i0, i1) = i01(r);
        let (k0, k1) = k01(r);
        let u = self.c_k * k0 + self.c_i * i0;
        let up = -self.c_k * k1 + self.c_i * i1;
        [u, up, u - up / r]
    }
}

/// Result of [`annulus_solution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusSolve {
    pub c_k: f64,
    pub c_i: f64,
    pub cond: f64,
}

/// Two-point solve on `(r_left, r_right)` in the `{K0, I0}` basis.
pub fn annulus_solution(r_left: f64, r_right: f64, v_left: f64, v_right: f64) -> Result<AnnulusSolve> {
    if !(r_left > 0.0 && r_left < r_right && r_right <= 1.0) {
        return Err(KsError::Domain(format!("annulus needs 0 < r_left < r_right <= 1, got ({r_left}, {r_right})")));
    }
    if !(v_left.is_finite() && v_right.is_finite()) {
        return Err(KsError::Domain("annulus boundary values must be finite".into()));
    }
    let (l, r) = (Basis::at(r_left), Basis::at(r_right));
    let det = l.k * r.i - l.i * r.k;
    let norm = (l.k.abs() + r.k.abs()).max(l.i.abs() + r.i.abs());
    let inv_norm = (r.i.abs() + r.k.abs()).max(l.i.abs() + l.k.abs()) / det.abs();
    let cond = norm * inv_norm;
    if !(cond.is_finite() && cond < COND_MAX) {
        return Err(KsError::Conditioning { cond });
    }
    Ok(AnnulusSolve { c_k: (v_left * r.i - v_right * l.i) / det, c_i: (v_right * l.k - v_left * r.k) / det, cond })
}

/// Radial solution assembled annulus by annulus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseGreen {
    /// Interface radii `α₁ < … < α_m`; in Dirichlet mode the last one is 1.
    pub interfaces: Vec<f64>,
    /// Prescribed value at each interface.
    pub values: Vec<f64>,
    /// One entry per annulus, innermost first.
    pub coeffs: Vec<AnnulusCoeffs>,
    pub b_sing: f64,
    pub outer_mode: OuterMode,
}

impl PiecewiseGreen {
    pub fn build(b_sing: f64, interfaces: &[f64], values: &[f64], outer_mode: OuterMode) -> Result<Self> {
        check_interfaces(interfaces, outer_mode)?;
        if values.len() != interfaces.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(KsError::Domain("one finite value per interface required".into()));
        }
        if !b_sing.is_finite() {
            return Err(KsError::Domain("singular coefficient must be finite".into()));
        }
        let mut coeffs = Vec::with_capacity(interfaces.len() + 1);
        let first = Basis::at(interfaces[0]);
        coeffs.push(AnnulusCoeffs {
            inner: 0.0,
            outer: interfaces[0],
            c_k: b_sing,
            c_i: (values[0] - b_sing * first.k) / first.i,
        });
        for j in 0..interfaces.len() - 1 {
            let s = annulus_solution(interfaces[j], interfaces[j + 1], values[j], values[j + 1])?;
            coeffs.push(AnnulusCoeffs { inner: interfaces[j], outer: interfaces[j + 1], c_k: s.c_k, c_i: s.c_i });
        }
        if outer_mode == OuterMode::Neumann {
            let t = *interfaces.last().unwrap();
            let p = pair_unchecked(t);
            let scale = values.last().unwrap() / p.zeta;
            coeffs.push(AnnulusCoeffs { inner: t, outer: 1.0, c_k: scale, c_i: scale * p.c_mix });
        }
        Ok(Self { interfaces: interfaces.to_vec(), values: values.to_vec(), coeffs, b_sing, outer_mode })
    }

    /// Index of the annulus holding `r` (interfaces belong to the inner annulus).
    pub fn annulus_index(&self, r: f64) -> usize {
        self.coeffs.iter().position(|c| r <= c.outer).unwrap_or(self.coeffs.len() - 1)
    }

    /// `(u, u', u'')` at `r ∈ (0, 1]`.
    pub fn eval(&self, r: f64) -> [f64; 3] {
        self.coeffs[self.annulus_index(r)].eval(r)
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r)[0]
    }

    /// Left and right radial derivatives at interface `i`.
    pub fn one_sided(&self, i: usize) -> (f64, f64) {
        let t = self.interfaces[i];
        let left = self.coeffs[i].eval(t)[1];
        let right = if i + 1 < self.coeffs.len() { self.coeffs[i + 1].eval(t)[1] } else { f64::NAN };
        (left, right)
    }

    /// Left and right values at interface `i`.
    pub fn one_sided_values(&self, i: usize) -> (f64, f64) {
        let t = self.interfaces[i];
        let left = self.coeffs[i].eval(t)[0];
        let right = if i + 1 < self.coeffs.len() { self.coeffs[i + 1].eval(t)[0] } else { left };
        (left, right)
    }

    /// Number of interfaces carrying a reflection defect.
    pub fn free_count(&self) -> usize {
        match self.outer_mode {
            OuterMode::DirichletOne => self.interfaces.len() - 1,
            OuterMode::Neumann => self.interfaces.len(),
        }
    }

    /// `U'⁺ + U'⁻` at each free interface.
    pub fn reflection_defects(&self) -> Vec<f64> {
        (0..self.free_count())
            .map(|i| {
                let (l, r) = self.one_sided(i);
                l + r
            })
            .collect()
    }

    /// Samples `(u, u', u'')` on a grid; r = 0 maps to +∞ when singular.
    pub fn sample(&self, grid: &[f64]) -> Vec<[f64; 3]> {
        grid.iter()
            .map(|&r| if r <= 0.0 { [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY] } else { self.eval(r) })
            .collect()
    }
}

fn check_interfaces(interfaces: &[f64], mode: OuterMode) -> Result<()> {
    if interfaces.is_empty() {
        return Err(KsError::Domain("at least one interface is required".into()));
    }
    if interfaces.iter().any(|a| !(a.is_finite() && *a > 0.0 && *a <= 1.0)) {
        return Err(KsError::Domain(format!("interfaces must lie in (0, 1], got {interfaces:?}")));
    }
    if interfaces.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KsError::Domain(format!("interfaces must be strictly increasing, got {interfaces:?}")));
    }
    match mode {
        OuterMode::DirichletOne if *interfaces.last().unwrap() != 1.0 => {
            Err(KsError::Domain("dirichlet mode needs the last interface at r = 1".into()))
        }
        OuterMode::Neumann if *interfaces.last().unwrap() >= 1.0 => {
            Err(KsError::Domain("neumann mode needs every interface inside (0, 1)".into()))
        }
        _ => Ok(()),
    }
}

/// The singular Green function: `G(1) = 1`, `G ~ −b̃ ln r` at 0, and `r_tilde` its interior minimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularGreen {
    pub green: PiecewiseGreen,
    pub r_tilde: f64,
    pub b_tilde: f64,
    /// Newton iterations of the calibration.
    pub iterations: usize,
}

/// `b ↦ b̃`: the −ln r coefficient of the solution with `u'(b) = 0`, `u(1) = 1`.
pub fn calibration_map(b: f64) -> (f64, f64) {
    let at_b = pair_unchecked(b);
    let one = pair_unchecked(1.0);
    let den = at_b.xip * one.zeta - one.xi * at_b.zetap;
    let value = at_b.xip / den;
    // derivative in b, using ξ'' and ζ'' from the ODE
    let dden = at_b.xipp() * one.zeta - one.xi * at_b.zetapp();
    let deriv = (at_b.xipp() * den - at_b.xip * dden) / (den * den);
    (value, deriv)
}

/// Supremum of the calibration map (reached at b = 1).
pub fn calibration_limit() -> f64 {
    1.0 / pair_unchecked(1.0).zeta
}

/// Inverts the calibration map by safeguarded Newton.
pub fn calibrate(b_tilde: f64) -> Result<(f64, usize)> {
    let limit = calibration_limit();
    if !(b_tilde.is_finite() && b_tilde > 0.0) {
        return Err(KsError::Domain(format!("b_tilde must be positive, got {b_tilde}")));
    }
    if b_tilde >= limit {
        return Err(KsError::Calibration { b_tilde, limit });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let xi1 = pair_unchecked(1.0).xi;
    let mut b = (2.0 * xi1 * b_tilde).sqrt().min(0.5);
    for it in 1..=200 {
        let (f, df) = calibration_map(b);
        let g = f - b_tilde;
        if g == 0.0 {
            return Ok((b, it));
        }
        if g > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let mut next = b - g / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - b).abs() <= 1e-15 * b || g.abs() <= 1e-16 * b_tilde {
            return Ok((next, it));
        }
        b = next;
    }
    Err(KsError::Convergence { what: "calibration".into(), iterations: 200, residual: (calibration_map(b).0 - b_tilde).abs() })
}

/// Green function with coefficient `b_tilde` of `−ln r`, equal to 1 at r = 1.
pub fn green_singular(b_tilde: f64) -> Result<SingularGreen> {
    if b_tilde > B_MAX {
        return Err(KsError::Calibration { b_tilde, limit: B_MAX });
    }
    let (b, iterations) = calibrate(b_tilde)?;
    let first = Basis::at(1.0);
    let c_i = (1.0 - b_tilde * first.k) / first.i;
    let green = PiecewiseGreen {
        interfaces: vec![1.0],
        values: vec![1.0],
        coeffs: vec![AnnulusCoeffs { inner: 0.0, outer: 1.0, c_k: b_tilde, c_i }],
        b_sing: b_tilde,
        outer_mode: OuterMode::DirichletOne,
    };
    Ok(SingularGreen { green, r_tilde: b, b_tilde, iterations })
}

/// Solved layer configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerConfig {
    pub k: usize,
    /// All interfaces, including r = 1 in Dirichlet mode.
    pub alphas: Vec<f64>,
    pub b: f64,
    pub outer_mode: OuterMode,
    pub residual: f64,
    pub iterations: usize,
}

impl LayerConfig {
    pub fn free_alphas(&self) -> &[f64] {
        &self.alphas[..self.outer_mode.free_count(self.k)]
    }
}

fn full_interfaces(free: &[f64], mode: OuterMode) -> Vec<f64> {
    let mut v = free.to_vec();
    if mode == OuterMode::DirichletOne {
        v.push(1.0);
    }
    v
}

/// Reflection defects of the candidate `config` (its `alphas` are used as given).
pub fn reflection_residual(config: &LayerConfig) -> Result<Vec<f64>> {
    let free = config.free_alphas();
    if free.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || free.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KsError::Domain(format!("candidate interfaces overlap or leave (0,1): {free:?}")));
    }
    defects_at(free, config.b, config.outer_mode)
}

fn defects_at(free: &[f64], b: f64, mode: OuterMode) -> Result<Vec<f64>> {
    let ifs = full_interfaces(free, mode);
    let ones = vec![1.0; ifs.len()];
    Ok(PiecewiseGreen::build(b, &ifs, &ones, mode)?.reflection_defects())
}

/// One-sided slopes at the two ends of an annulus and their shift derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AnnulusSlopes {
    /// `u'(p⁺)`
    pub s_in: f64,
    /// `u'(q⁻)`
    pub s_out: f64,
    pub ds_in_dp: f64,
    pub ds_in_dq: f64,
    pub ds_out_dp: f64,
    pub ds_out_dq: f64,
}

pub(crate) fn annulus_slopes(p: f64, q: f64, vp: f64, vq: f64) -> AnnulusSlopes {
    let (a, c) = (Basis::at(p), Basis::at(q));
    let d00 = a.k * c.i - a.i * c.k;
    let d10 = a.kp * c.i - a.ip * c.k;
    let d01 = a.k * c.ip - a.i * c.kp;
    let d20 = a.kpp() * c.i - a.ipp() * c.k;
    let d11 = a.kp * c.ip - a.ip * c.kp;
    let d02 = a.k * c.ipp() - a.i * c.kpp();
    let n_in = vp * d10 + vq / p;
    let n_out = -vp / q + vq * d01;
    let d2 = d00 * d00;
    AnnulusSlopes {
        s_in: n_in / d00,
        s_out: n_out / d00,
        ds_in_dp: (vp * d20 - vq / (p * p)) / d00 - n_in * d10 / d2,
        ds_in_dq: vp * d11 / d00 - n_in * d01 / d2,
        ds_out_dp: vq * d11 / d00 - n_out * d10 / d2,
        ds_out_dq: (vp / (q * q) + vq * d02) / d00 - n_out * d01 / d2,
    }
}

/// `u'(t⁻)` on the innermost annulus and its derivative in `t`.
pub(crate) fn core_slope(t: f64, v: f64, b: f64) -> (f64, f64) {
    let e = Basis::at(t);
    let num = v * e.ip - b / t;
    let s = num / e.i;
    let ds = (v * e.ipp() + b / (t * t)) / e.i - num * e.ip / (e.i * e.i);
    (s, ds)
}

/// `u'(t⁺)` on the Neumann outer annulus and its derivative in `t`.
pub(crate) fn neumann_slope(t: f64, v: f64) -> (f64, f64) {
    let p = pair_unchecked(t);
    let s = v * p.zetap / p.zeta;
    let ds = v * (p.zetapp() * p.zeta - p.zetap * p.zetap) / (p.zeta * p.zeta);
    (s, ds)
}

/// Slopes of the Green function with unit values, and the shift Jacobian of its reflection defects.
pub(crate) struct DefectJacobian {
    pub defects: Vec<f64>,
    /// `(U'⁻, U'⁺)` at each free interface.
    pub slopes: Vec<(f64, f64)>,
    pub jac: Tridiag,
    /// `U'⁻(1)` in Dirichlet mode.
    pub boundary_slope: Option<f64>,
    /// Derivative of `U'⁻(1)` with respect to the last free interface.
    pub boundary_slope_shift: Option<f64>,
}

pub(crate) fn defect_jacobian(free: &[f64], b: f64, mode: OuterMode, values: &[f64]) -> DefectJacobian {
    let ifs = full_interfaces(free, mode);
    let m = free.len();
    let mut left = vec![0.0; m];
    let mut right = vec![0.0; m];
    let mut jac = Tridiag::zeros(m);
    let mut boundary_slope = None;
    let mut boundary_slope_shift = None;
    // innermost annulus
    let (s, ds) = core_slope(ifs[0], values[0], b);
    if m > 0 {
        left[0] = s;
        jac.diag[0] += ds;
    } else {
        boundary_slope = Some(s);
    }
    for j in 0..ifs.len() - 1 {
        let sl = annulus_slopes(ifs[j], ifs[j + 1], values[j], values[j + 1]);
        // interface j is free (j < m); interface j+1 free if j+1 < m
        right[j] = sl.s_in;
        jac.diag[j] += sl.ds_in_dp;
        if j + 1 < m {
            left[j + 1] = sl.s_out;
            jac.diag[j + 1] += sl.ds_out_dq;
            jac.upper[j] += sl.ds_in_dq;
            jac.lower[j] += sl.ds_out_dp;
        } else {
            boundary_slope = Some(sl.s_out);
            boundary_slope_shift = Some(sl.ds_out_dp);
        }
    }
    if mode == OuterMode::Neumann {
        let (s, ds) = neumann_slope(ifs[m - 1], values[m - 1]);
        right[m - 1] = s;
        jac.diag[m - 1] += ds;
    }
    let defects = (0..m).map(|i| left[i] + right[i]).collect();
    let slopes = (0..m).map(|i| (left[i], right[i])).collect();
    DefectJacobian { defects, slopes, jac, boundary_slope, boundary_slope_shift }
}

/// Analytic Jacobian of the reflection defects with respect to the free radii.
pub fn defect_shift_jacobian(free: &[f64], b: f64, mode: OuterMode) -> Tridiag {
    let n = free.len() + usize::from(mode == OuterMode::DirichletOne);
    defect_jacobian(free, b, mode, &vec![1.0; n]).jac
}

fn validate_layer_request(k: usize, b: f64) -> Result<()> {
    if k == 0 || k > K_MAX {
        return Err(KsError::Domain(format!("layer count must be in 1..={K_MAX}, got {k}")));
    }
    if !(b.is_finite() && b > 0.0 && b <= B_MAX) {
        return Err(KsError::Domain(format!("singular coefficient must be in (0, {B_MAX}], got {b}")));
    }
    Ok(())
}

/// Default starting radii for the free interfaces.
pub fn initial_guess(k: usize, mode: OuterMode) -> Vec<f64> {
    match mode {
        OuterMode::Neumann => (1..=k).map(|i| i as f64 / (k + 1) as f64).collect(),
        OuterMode::DirichletOne => (1..k).map(|i| i as f64 / k as f64).collect(),
    }
}

/// Solves the reflection-law system for `k` layers.
pub fn solve_layers(k: usize, b: f64, outer_mode: OuterMode) -> Result<(LayerConfig, PiecewiseGreen)> {
    validate_layer_request(k, b)?;
    let m = outer_mode.free_count(k);
    let (free, iterations) = match m {
        0 => (Vec::new(), 0),
        1 => {
            let (a, it) = bisect_single(b, outer_mode)?;
            (vec![a], it)
        }
        _ => newton_layers(&initial_guess(k, outer_mode), b, outer_mode)?,
    };
    finish(k, b, outer_mode, &free, iterations)
}

/// Solves by damped Newton for any number of free interfaces (used for cross-checks at k = 1).
pub fn solve_layers_newton(k: usize, b: f64, outer_mode: OuterMode) -> Result<(LayerConfig, PiecewiseGreen)> {
    validate_layer_request(k, b)?;
    let m = outer_mode.free_count(k);
    if m == 0 {
        return finish(k, b, outer_mode, &[], 0);
    }
    let (free, iterations) = newton_layers(&initial_guess(k, outer_mode), b, outer_mode)?;
    finish(k, b, outer_mode, &free, iterations)
}

fn finish(k: usize, b: f64, mode: OuterMode, free: &[f64], iterations: usize) -> Result<(LayerConfig, PiecewiseGreen)> {
    let alphas = full_interfaces(free, mode);
    let ones = vec![1.0; alphas.len()];
    let green = PiecewiseGreen::build(b, &alphas, &ones, mode)?;
    let residual = max_abs(&green.reflection_defects());
    if residual > NEWTON_RESIDUAL_TOL {
        return Err(KsError::Convergence { what: "layer solve".into(), iterations, residual });
    }
    Ok((LayerConfig { k, alphas, b, outer_mode: mode, residual, iterations }, green))
}

fn single_defect(a: f64, b: f64, mode: OuterMode) -> f64 {
    let ifs = full_interfaces(&[a], mode);
    let n = ifs.len();
    defect_jacobian(&[a], b, mode, &vec![1.0; n]).defects[0]
}

fn bisect_single(b: f64, mode: OuterMode) -> Result<(f64, usize)> {
    let mut lo = 0.5;
    while single_defect(lo, b, mode) >= 0.0 {
        lo *= 0.5;
        if lo < 1e-14 {
            return Err(KsError::Convergence { what: "layer bracket".into(), iterations: 0, residual: f64::NAN });
        }
    }
    let mut hi = 1.0 - 1e-9;
    if single_defect(hi, b, mode) <= 0.0 {
        return Err(KsError::Convergence { what: "layer bracket".into(), iterations: 0, residual: single_defect(hi, b, mode) });
    }
    let mut it = 0;
    while hi - lo > 1e-15 && it < 200 {
        it += 1;
        let mid = 0.5 * (lo + hi);
        if single_defect(mid, b, mode) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    Ok((root, it))
}

fn admissible(x: &[f64]) -> bool {
    x.iter().all(|a| *a > 0.0 && *a < 1.0) && x.windows(2).all(|w| w[1] > w[0])
}

fn newton_layers(start: &[f64], b: f64, mode: OuterMode) -> Result<(Vec<f64>, usize)> {
    let n_if = start.len() + usize::from(mode == OuterMode::DirichletOne);
    let ones = vec![1.0; n_if];
    let mut x = start.to_vec();
    let mut dj = defect_jacobian(&x, b, mode, &ones);
    let mut norm = max_abs(&dj.defects);
    for it in 1..=NEWTON_MAX_ITER {
        let rhs: Vec<f64> = dj.defects.iter().map(|v| -v).collect();
        let dx = dj.jac.solve(&rhs).ok_or(KsError::Convergence { what: "layer Newton (singular Jacobian)".into(), iterations: it, residual: norm })?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + t * d).collect();
            if admissible(&trial) {
                let tj = defect_jacobian(&trial, b, mode, &ones);
                let tn = max_abs(&tj.defects);
                if tn < norm || tn <= NEWTON_RESIDUAL_TOL {
                    let step = t * max_abs(&dx);
                    x = trial;
                    dj = tj;
                    norm = tn;
                    if norm <= NEWTON_RESIDUAL_TOL && step <= NEWTON_STEP_TOL.max(1e-6 * norm.sqrt()) {
                        return Ok((x, it));
                    }
                    if norm <= 1e-14 {
                        return Ok((x, it));
                    }
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                if norm <= NEWTON_RESIDUAL_TOL {
                    return Ok((x, it));
                }
                return Err(KsError::Convergence { what: "layer Newton (line search)".into(), iterations: it, residual: norm });
            }
        }
    }
    if norm <= NEWTON_RESIDUAL_TOL {
        return Ok((x, NEWTON_MAX_ITER));
    }
    Err(KsError::Convergence { what: "layer Newton".into(), iterations: NEWTON_MAX_ITER, residual: norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data_gives_zero() {
        let s = annulus_solution(0.3, 0.7, 0.0, 0.0).unwrap();
        assert_eq!((s.c_k, s.c_i), (0.0, 0.0));
    }

    #[test]
    fn reproduces_basis_function() {
        let (p, q) = (0.2, 0.9);
        let s = annulus_solution(p, q, i01(p).0, i01(q).0).unwrap();
        assert!(s.c_k.abs() < 1e-13 && (s.c_i - 1.0).abs() < 1e-13);
    }

    #[test]
    fn interior_minimum_below_boundary_values() {
        let s = annulus_solution(0.3, 0.7, 1.0, 1.0).unwrap();
        let a = AnnulusCoeffs { inner: 0.3, outer: 0.7, c_k: s.c_k, c_i: s.c_i };
        let min = (1..100).map(|j| a.eval(0.3 + 0.4 * j as f64 / 100.0)[0]).fold(f64::INFINITY, f64::min);
        assert!(min < 1.0);
        assert!((a.eval(0.3)[0] - 1.0).abs() < 1e-12 && (a.eval(0.7)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_annulus_rejected() {
        assert!(matches!(annulus_solution(0.5, 0.5 + 1e-14, 1.0, 1.0), Err(KsError::Conditioning { .. })));
        assert!(annulus_solution(0.5, 0.4, 1.0, 1.0).is_err());
    }

    #[test]
    fn slope_formulas_match_coefficients() {
        let (p, q, vp, vq) = (0.25, 0.6, 1.3, 0.7);
        let s = annulus_solution(p, q, vp, vq).unwrap();
        let a = AnnulusCoeffs { inner: p, outer: q, c_k: s.c_k, c_i: s.c_i };
        let sl = annulus_slopes(p, q, vp, vq);
        assert!((sl.s_in - a.eval(p)[1]).abs() < 1e-12);
        assert!((sl.s_out - a.eval(q)[1]).abs() < 1e-12);
        let h = 1e-6;
        let fd = |dp: f64, dq: f64| annulus_slopes(p + dp, q + dq, vp, vq);
        let (pp, pm, qp, qm) = (fd(h, 0.0), fd(-h, 0.0), fd(0.0, h), fd(0.0, -h));
        assert!((sl.ds_in_dp - (pp.s_in - pm.s_in) / (2.0 * h)).abs() < 1e-6);
        assert!((sl.ds_in_dq - (qp.s_in - qm.s_in) / (2.0 * h)).abs() < 1e-6);
        assert!((sl.ds_out_dp - (pp.s_out - pm.s_out) / (2.0 * h)).abs() < 1e-6);
        assert!((sl.ds_out_dq - (qp.s_out - qm.s_out) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn calibration_inverts() {
        for bt in [1e-6, 1e-4, 1e-2, 0.1, 0.2] {
            let (b, _) = calibrate(bt).unwrap();
            assert!((calibration_map(b).0 / bt - 1.0).abs() < 1e-12, "{bt} {b} {}", calibration_map(b).0);
        }
        assert!(matches!(calibrate(0.6), Err(KsError::Calibration { .. })));
        assert!(matches!(green_singular(0.3), Err(KsError::Calibration { .. })));
    }

    #[test]
    fn singular_green_minimum() {
        let g = green_singular(1e-3).unwrap();
        let [_, d, _] = g.green.eval(g.r_tilde);
        assert!(d.abs() < 1e-12);
        assert!((g.green.value(1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_single_layer_is_pure_green() {
        let (cfg, g) = solve_layers(1, 1e-3, OuterMode::DirichletOne).unwrap();
        assert_eq!(cfg.alphas, vec![1.0]);
        assert_eq!(g.coeffs.len(), 1);
        assert!((g.value(1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn newton_solves_three_layers() {
        for mode in [OuterMode::DirichletOne, OuterMode::Neumann] {
            let (cfg, _) = solve_layers(3, 1e-3, mode).unwrap();
            assert!(cfg.residual <= 1e-10, "{mode:?}");
        }
    }
}
