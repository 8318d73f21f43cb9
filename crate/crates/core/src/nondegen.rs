//! Shifted and value-perturbed Green functions, the shift matrix `A` of the
//! reflection defects and its determinant, and the implicit system fixing the
//! layer scales and shifts at small ε.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{KsError, Result};
use crate::greens::{defect_jacobian, LayerConfig, OuterMode, PiecewiseGreen};
use crate::linalg::{max_abs, Tridiag};

/// Default upper bound on ε for [`solve_layer_parameters`].
pub const EPS_MAX: f64 = 0.05;
/// Determinants below this magnitude refuse the implicit solve.
pub const DET_THRESHOLD: f64 = 1e-8;
/// Step of the finite-difference guard on `A`.
pub const FD_STEP: f64 = 1e-6;
/// Relative agreement required between analytic and differenced entries.
pub const FD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedGreenSpec {
    /// Base interfaces (including r = 1 in Dirichlet mode).
    pub alphas: Vec<f64>,
    /// Value offsets: the value at interface `i` is `1 + eps·a[i]`.
    pub a: Vec<f64>,
    /// Radial shifts; the Dirichlet boundary entry must be zero.
    pub sigma: Vec<f64>,
    pub b: f64,
    pub eps: f64,
    pub outer_mode: OuterMode,
}

impl PerturbedGreenSpec {
    pub fn unperturbed(config: &LayerConfig) -> Self {
        let n = config.alphas.len();
        Self { alphas: config.alphas.clone(), a: vec![0.0; n], sigma: vec![0.0; n], b: config.b, eps: 0.0, outer_mode: config.outer_mode }
    }

    pub fn shifted_radii(&self) -> Vec<f64> {
        self.alphas.iter().zip(&self.sigma).map(|(a, s)| a + s).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.a.iter().map(|a| 1.0 + self.eps * a).collect()
    }
}

/// Open shift window `(lo, hi)` for each interface; the Dirichlet boundary gets `(0, 0)`.
pub fn sigma_windows(alphas: &[f64], mode: OuterMode) -> Vec<(f64, f64)> {
    let n = alphas.len();
    (0..n)
        .map(|i| {
            if mode == OuterMode::DirichletOne && i == n - 1 {
                return (0.0, 0.0);
            }
            let prev = if i == 0 { 0.0 } else { alphas[i - 1] };
            let next = if i + 1 < n { alphas[i + 1] } else { 1.0 };
            (-(alphas[i] - prev) / 4.0, (next - alphas[i]) / 4.0)
        })
        .collect()
}

fn check_windows(spec: &PerturbedGreenSpec) -> Result<()> {
    let n = spec.alphas.len();
    if spec.a.len() != n || spec.sigma.len() != n {
        return Err(KsError::Domain("a and sigma need one entry per interface".into()));
    }
    for (i, ((lo, hi), s)) in sigma_windows(&spec.alphas, spec.outer_mode).iter().zip(&spec.sigma).enumerate() {
        let boundary = spec.outer_mode == OuterMode::DirichletOne && i == n - 1;
        let ok = if boundary { *s == 0.0 } else { *s > *lo && *s < *hi };
        if !ok {
            return Err(KsError::Domain(format!("shift sigma[{i}] = {s} outside its window ({lo}, {hi})")));
        }
    }
    Ok(())
}

/// Green function with interface values `1 + ε a_i` at the shifted radii `α_i + σ_i`.
pub fn perturbed_green(spec: &PerturbedGreenSpec) -> Result<PiecewiseGreen> {
    check_windows(spec)?;
    PiecewiseGreen::build(spec.b, &spec.shifted_radii(), &spec.values(), spec.outer_mode)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegenMatrix {
    pub k: usize,
    pub entries: Tridiag,
    pub det: f64,
    pub cond: f64,
}

/// Assembles `A` for the free interfaces of a solved configuration and guards it
/// against central differences of [`perturbed_green`].
pub fn assemble_ak(config: &LayerConfig) -> Result<NondegenMatrix> {
    let entries = analytic_ak(config);
    let fd = assemble_ak_fd(config, FD_STEP)?;
    let scale = entries.diag.iter().chain(&entries.lower).chain(&entries.upper).fold(0.0_f64, |m, v| m.max(v.abs()));
    let k = entries.len();
    for i in 0..k {
        for j in 0..k {
            let (a, f) = (entries.get(i, j), fd[(i, j)]);
            if (a - f).abs() > FD_TOL * a.abs().max(1e-3 * scale) {
                return Err(KsError::InternalConsistency(format!("shift matrix entry ({i},{j}): analytic {a:.12e} vs differenced {f:.12e}")));
            }
        }
    }
    finish_matrix(entries)
}

/// Assembles `A` without the finite-difference guard.
pub fn assemble_ak_unchecked(config: &LayerConfig) -> Result<NondegenMatrix> {
    finish_matrix(analytic_ak(config))
}

fn finish_matrix(entries: Tridiag) -> Result<NondegenMatrix> {
    let k = entries.len();
    let mut m = NondegenMatrix { k, entries, det: f64::NAN, cond: f64::NAN };
    m.det = det_mk(&m)?;
    m.cond = condition_estimate(&m.entries);
    Ok(m)
}

fn analytic_ak(config: &LayerConfig) -> Tridiag {
    let free = config.free_alphas();
    defect_jacobian(free, config.b, config.outer_mode, &vec![1.0; config.alphas.len()]).jac
}

/// Central differences of the shifted reflection defects, step `h`.
pub fn assemble_ak_fd(config: &LayerConfig, h: f64) -> Result<DMatrix<f64>> {
    let m = config.outer_mode.free_count(config.k);
    let base = PerturbedGreenSpec::unperturbed(config);
    let defects = |spec: &PerturbedGreenSpec| -> Result<Vec<f64>> {
        let g = perturbed_green(spec)?;
        Ok((0..m)
            .map(|i| {
                let (l, r) = g.one_sided(i);
                l + r
            })
            .collect())
    };
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut plus = base.clone();
        plus.sigma[j] = h;
        let mut minus = base.clone();
        minus.sigma[j] = -h;
        let (dp, dm) = (defects(&plus)?, defects(&minus)?);
        for i in 0..m {
            out[(i, j)] = (dp[i] - dm[i]) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `det A` by the continuant recurrence; `M_0 = 1`.
pub fn det_mk(matrix: &NondegenMatrix) -> Result<f64> {
    if matrix.entries.is_empty() {
        return Ok(1.0);
    }
    let (det, _) = matrix.entries.det();
    if !det.is_finite() {
        return Err(KsError::InternalConsistency(format!("determinant overflow for k = {}", matrix.k)));
    }
    Ok(det)
}

fn condition_estimate(t: &Tridiag) -> f64 {
    if t.is_empty() {
        return 1.0;
    }
    let d = t.to_dense();
    let norm1 = |m: &DMatrix<f64>| (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    match d.clone().try_inverse() {
        Some(inv) => norm1(&d) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// One row of the nondegeneracy sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Size of `A` (number of free layers).
    pub k: usize,
    pub b: f64,
    pub det: f64,
    pub cond: f64,
    /// Radii of the Dirichlet configuration the matrix was built on.
    pub alphas: Vec<f64>,
}

/// `M_k` for the Dirichlet configuration with `k` free layers plus the boundary layer.
pub fn sweep_point(k: usize, b: f64) -> Result<SweepRow> {
    let (cfg, _) = crate::greens::solve_layers(k + 1, b, OuterMode::DirichletOne)?;
    let m = assemble_ak(&cfg)?;
    Ok(SweepRow { k, b, det: m.det, cond: m.cond, alphas: cfg.alphas })
}

/// Per-layer constants entering the right-hand side of the implicit system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerConstants {
    pub zeta1: f64,
    pub nu2: f64,
}

/// Solution of the implicit layer system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerParameters {
    /// One scale per layer (negative at the base point, `−1/U'⁻(α_i)`).
    pub gamma: Vec<f64>,
    /// One shift per layer; zero on the Dirichlet boundary.
    pub sigma: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// `M` of the free layers.
    pub det: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSolveOptions {
    pub eps_max: f64,
    /// Space dimension in the right-hand side.
    pub n: f64,
}

impl Default for LayerSolveOptions {
    fn default() -> Self {
        Self { eps_max: EPS_MAX, n: 2.0 }
    }
}

fn phi(n: f64, x: f64, t: f64, eps: f64, c: &LayerConstants) -> f64 {
    (2.0 * (n - 1.0) / t - 2.0 * x * std::f64::consts::LN_2 - eps * x * c.zeta1) / std::f64::consts::SQRT_2
}

/// Value offset `φ̃(x) = (−ln x² + εxν₂)/√2` of a layer with scale `x`.
pub fn phi_tilde(x: f64, eps: f64, c: &LayerConstants) -> f64 {
    (-(x * x).ln() + eps * x * c.nu2) / std::f64::consts::SQRT_2
}

/// The implicit system `H(ε; x; σ)` for one configuration.
pub struct LayerSystem<'a> {
    pub config: &'a LayerConfig,
    pub eps: f64,
    pub constants: &'a [LayerConstants],
    pub n: f64,
}

impl LayerSystem<'_> {
    pub fn layers(&self) -> usize {
        self.config.k
    }

    pub fn free(&self) -> usize {
        self.config.outer_mode.free_count(self.config.k)
    }

    pub fn dim(&self) -> usize {
        self.layers() + self.free()
    }

    fn split<'v>(&self, z: &'v [f64]) -> (&'v [f64], &'v [f64]) {
        z.split_at(self.layers())
    }

    /// Evaluates `H` at `z = (x, σ_free)`.
    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (x, s) = self.split(z);
        let k = self.layers();
        let m = self.free();
        let mut sigma = s.to_vec();
        sigma.resize(k, 0.0);
        let a: Vec<f64> = (0..k).map(|i| phi_tilde(x[i], self.eps, &self.constants[i])).collect();
        let spec = PerturbedGreenSpec {
            alphas: self.config.alphas.clone(),
            a,
            sigma,
            b: self.config.b,
            eps: self.eps,
            outer_mode: self.config.outer_mode,
        };
        let g = perturbed_green(&spec)?;
        let radii = spec.shifted_radii();
        let mut h = Vec::with_capacity(self.dim());
        for i in 0..m {
            let (l, r) = g.one_sided(i);
            let p = self.eps * phi(self.n, x[i], radii[i], self.eps, &self.constants[i]);
            h.push(l - (-1.0 / x[i] + p));
            h.push(r - (1.0 / x[i] + p));
        }
        if self.config.outer_mode == OuterMode::DirichletOne {
            let (l, _) = g.one_sided(k - 1);
            let p = self.eps * phi(self.n, x[k - 1], 1.0, self.eps, &self.constants[k - 1]);
            h.push(l - (-1.0 / x[k - 1] + p));
        }
        Ok(h)
    }

    /// Base point `x_i = −1/U'⁻(α_i)`, `σ = 0`.
    pub fn base_point(&self) -> Vec<f64> {
        let dj = defect_jacobian(self.config.free_alphas(), self.config.b, self.config.outer_mode, &vec![1.0; self.config.alphas.len()]);
        let mut z: Vec<f64> = dj.slopes.iter().map(|(l, _)| -1.0 / l).collect();
        if let Some(s) = dj.boundary_slope {
            z.push(-1.0 / s);
        }
        z.resize(self.dim(), 0.0);
        z
    }

    /// Analytic Jacobian of `H` at the ε = 0 base point.
    pub fn base_jacobian(&self) -> DMatrix<f64> {
        let cfg = self.config;
        let k = self.layers();
        let m = self.free();
        let dj = defect_jacobian(cfg.free_alphas(), cfg.b, cfg.outer_mode, &vec![1.0; cfg.alphas.len()]);
        let x = self.base_point();
        let mut n = DMatrix::zeros(self.dim(), self.dim());
        let parts = one_sided_shift_derivatives(cfg);
        for i in 0..m {
            n[(2 * i, i)] = -1.0 / (x[i] * x[i]);
            n[(2 * i + 1, i)] = 1.0 / (x[i] * x[i]);
            for (j, (dl, dr)) in parts[i].iter().enumerate() {
                n[(2 * i, k + j)] = *dl;
                n[(2 * i + 1, k + j)] = *dr;
            }
        }
        if cfg.outer_mode == OuterMode::DirichletOne {
            let row = 2 * m;
            n[(row, k - 1)] = -1.0 / (x[k - 1] * x[k - 1]);
            if m > 0 {
                n[(row, k + m - 1)] = dj.boundary_slope_shift.unwrap_or(0.0);
            }
        }
        n
    }

    /// Central-difference Jacobian of `H`.
    pub fn fd_jacobian(&self, z: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            let step = h * (1.0 + z[j].abs());
            zp[j] += step;
            zm[j] -= step;
            let (fp, fm) = (self.residual(&zp)?, self.residual(&zm)?);
            for i in 0..d {
                out[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        Ok(out)
    }
}

/// `∂/∂σ_j (U'⁻, U'⁺)(α_i + σ_i)` at the base configuration, indexed `[i][j]`.
pub fn one_sided_shift_derivatives(config: &LayerConfig) -> Vec<Vec<(f64, f64)>> {
    use crate::greens::{annulus_slopes, core_slope, neumann_slope};
    let free = config.free_alphas();
    let m = free.len();
    let ifs = &config.alphas;
    let mut out = vec![vec![(0.0, 0.0); m]; m];
    for i in 0..m {
        // left side: annulus (ifs[i−1], ifs[i]) or the core
        if i == 0 {
            out[i][i].0 = core_slope(ifs[0], 1.0, config.b).1;
        } else {
            let sl = annulus_slopes(ifs[i - 1], ifs[i], 1.0, 1.0);
            out[i][i].0 = sl.ds_out_dq;
            out[i][i - 1].0 = sl.ds_out_dp;
        }
        // right side: annulus (ifs[i], ifs[i+1]) or the Neumann tail
        if i + 1 < ifs.len() {
            let sl = annulus_slopes(ifs[i], ifs[i + 1], 1.0, 1.0);
            out[i][i].1 = sl.ds_in_dp;
            if i + 1 < m {
                out[i][i + 1].1 = sl.ds_in_dq;
            }
        } else {
            out[i][i].1 = neumann_slope(ifs[i], 1.0).1;
        }
    }
    out
}

/// Predicted ratio `det N / M` from expanding along the scale columns.
pub fn nk_identity_factor(config: &LayerConfig) -> f64 {
    let sys = LayerSystem { config, eps: 0.0, constants: &[], n: 2.0 };
    let k = sys.layers();
    let m = sys.free();
    let x = sys.base_point();
    // column i (1-based) has its only entry in row 2i−1, or 2m+1 for the boundary
    let mut parity = 0usize;
    let mut product = 1.0;
    for i in 1..=k {
        let row = if i <= m { 2 * i - 1 } else { 2 * m + 1 };
        parity += row + i;
        product *= -1.0 / (x[i - 1] * x[i - 1]);
    }
    if parity % 2 == 1 {
        -product
    } else {
        product
    }
}

/// Solves `H(ε; γ; σ) = 0` by damped Newton from the ε = 0 base point.
pub fn solve_layer_parameters(config: &LayerConfig, eps: f64, constants: &[LayerConstants], opts: LayerSolveOptions) -> Result<LayerParameters> {
    if !(eps.is_finite() && eps >= 0.0 && eps <= opts.eps_max) {
        return Err(KsError::Domain(format!("eps must lie in [0, {}], got {eps}", opts.eps_max)));
    }
    if constants.len() != config.k {
        return Err(KsError::Domain(format!("need {} per-layer constants, got {}", config.k, constants.len())));
    }
    let det = assemble_ak_unchecked(config)?.det;
    if det.abs() < DET_THRESHOLD {
        return Err(KsError::Nondegeneracy { det, threshold: DET_THRESHOLD });
    }
    let sys = LayerSystem { config, eps, constants, n: opts.n };
    let k = sys.layers();
    let windows = sigma_windows(&config.alphas, config.outer_mode);
    let inside = |z: &[f64]| z[k..].iter().zip(&windows).all(|(s, (lo, hi))| s > lo && s < hi) && z[..k].iter().all(|x| *x < 0.0);
    let mut z = sys.base_point();
    let mut h = sys.residual(&z)?;
    let mut norm = max_abs(&h);
    let tol = crate::greens::NEWTON_RESIDUAL_TOL;
    let mut iterations = 0;
    while norm > tol {
        iterations += 1;
        if iterations > crate::greens::NEWTON_MAX_ITER {
            return Err(KsError::Convergence { what: "layer parameter Newton".into(), iterations, residual: norm });
        }
        let jac = sys.fd_jacobian(&z, 1e-7).map_err(|_| KsError::Convergence { what: "layer parameter Newton (shift pressed against its window)".into(), iterations, residual: norm })?;
        let rhs: Vec<f64> = h.iter().map(|v| -v).collect();
        let dz = crate::linalg::dense_solve(jac, &rhs).ok_or(KsError::Convergence { what: "layer parameter Newton (singular Jacobian)".into(), iterations, residual: norm })?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a + t * d).collect();
            if inside(&trial) {
                if let Ok(th) = sys.residual(&trial) {
                    let tn = max_abs(&th);
                    if tn < norm {
                        z = trial;
                        h = th;
                        norm = tn;
                        break;
                    }
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(KsError::Convergence { what: "layer parameter Newton (line search)".into(), iterations, residual: norm });
            }
        }
    }
    let mut sigma = z[k..].to_vec();
    sigma.resize(k, 0.0);
    Ok(LayerParameters { gamma: z[..k].to_vec(), sigma, residual: norm, iterations, det })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::solve_layers;

    #[test]
    fn reduction_is_exact() {
        let (cfg, g) = solve_layers(3, 1e-3, OuterMode::DirichletOne).unwrap();
        let p = perturbed_green(&PerturbedGreenSpec::unperturbed(&cfg)).unwrap();
        assert_eq!(p.coeffs, g.coeffs);
    }

    #[test]
    fn value_offsets_hit_interfaces() {
        let (cfg, _) = solve_layers(2, 1e-3, OuterMode::Neumann).unwrap();
        let mut spec = PerturbedGreenSpec::unperturbed(&cfg);
        spec.eps = 1e-6;
        spec.a[0] = 1.0;
        let g = perturbed_green(&spec).unwrap();
        assert_eq!(g.value(cfg.alphas[0]), 1.0 + 1e-6);
    }

    #[test]
    fn window_violation_rejected() {
        let (cfg, _) = solve_layers(2, 1e-3, OuterMode::DirichletOne).unwrap();
        let mut spec = PerturbedGreenSpec::unperturbed(&cfg);
        spec.sigma[1] = 1e-3;
        assert!(matches!(perturbed_green(&spec), Err(KsError::Domain(_))));
        let mut spec = PerturbedGreenSpec::unperturbed(&cfg);
        spec.sigma[0] = cfg.alphas[0];
        assert!(perturbed_green(&spec).is_err());
    }

    #[test]
    fn single_free_layer_matrix_positive() {
        for mode in [OuterMode::DirichletOne, OuterMode::Neumann] {
            let k = if mode == OuterMode::DirichletOne { 2 } else { 1 };
            let (cfg, _) = solve_layers(k, 1e-3, mode).unwrap();
            let m = assemble_ak(&cfg).unwrap();
            assert_eq!(m.k, 1);
            assert!(m.det > 0.0);
        }
    }

    #[test]
    fn base_point_solves_at_zero_eps() {
        let (cfg, _) = solve_layers(3, 1e-3, OuterMode::DirichletOne).unwrap();
        let c = vec![LayerConstants { zeta1: 1.0, nu2: 1.0 }; 3];
        let p = solve_layer_parameters(&cfg, 0.0, &c, LayerSolveOptions::default()).unwrap();
        assert_eq!(p.iterations, 0);
        assert!(p.sigma.iter().all(|s| *s == 0.0));
        assert!(p.gamma.iter().all(|g| *g < 0.0));
    }

    #[test]
    fn base_jacobian_matches_differences() {
        for mode in [OuterMode::DirichletOne, OuterMode::Neumann] {
            let (cfg, _) = solve_layers(3, 1e-3, mode).unwrap();
            let c = vec![LayerConstants { zeta1: 0.0, nu2: 0.0 }; 3];
            let sys = LayerSystem { config: &cfg, eps: 0.0, constants: &c, n: 2.0 };
            let an = sys.base_jacobian();
            let fd = sys.fd_jacobian(&sys.base_point(), 1e-6).unwrap();
            let scale = an.amax();
            assert!((an - fd).amax() < 1e-6 * scale, "{mode:?}");
        }
    }
}
