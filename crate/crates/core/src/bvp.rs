//! Direct radial solves of `−Δu + u = λe^u` and of the bifurcation form
//! `−Δu + u = e^{μ(u−1)}` (related by `u_λ = μu_μ`, `λ = μe^{−μ}`), branch
//! continuation from the trivial solution, radial Neumann eigenvalues and
//! concentration diagnostics.
//!
//! The discretization is the conservative finite volume scheme of [`crate::fv`];
//! residuals are reported per control volume, where a pointwise 1e−9 would sit
//! below the rounding floor of `Δu` at bubble scales.

use serde::Serialize;

use crate::ansatz::solve_epsilon;
use crate::error::{KsError, Result};
use crate::fv::RadialCells;
use crate::grid::{disk_integral, Piece, Profile};
use crate::greens::{LayerConfig, PiecewiseGreen};
use crate::linalg::{dense_solve, max_abs, Tridiag};

/// Per control volume residual accepted by Newton.
pub const RESIDUAL_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 50;
/// Default node count of the direct solver.
pub const BVP_NODES: usize = 4000;
/// Default node count along continued branches.
pub const BRANCH_NODES: usize = 400;
/// Half-width of the band of `u − level` ignored when counting zeros.
pub const ZERO_DEAD_BAND: f64 = 1e-10;
const EXP_LIMIT: f64 = 700.0;

/// Right-hand side of the radial equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reaction {
    /// `λe^u`.
    Ks { lambda: f64 },
    /// `e^{μ(u−1)}`.
    Mu { mu: f64 },
}

impl Reaction {
    fn exponent(&self, u: f64) -> f64 {
        match *self {
            Reaction::Ks { lambda } => u + lambda.ln(),
            Reaction::Mu { mu } => mu * (u - 1.0),
        }
    }

    /// `(g, g', ∂g/∂μ)` at one node.
    fn eval(&self, r: f64, u: f64) -> Result<(f64, f64, f64)> {
        let e = self.exponent(u);
        if !e.is_finite() || e > EXP_LIMIT {
            return Err(KsError::Overflow { radius: r });
        }
        let g = e.exp();
        Ok(match *self {
            Reaction::Ks { .. } => (g, g, 0.0),
            Reaction::Mu { mu } => (g, mu * g, (u - 1.0) * g),
        })
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Reaction::Ks { lambda } => lambda,
            Reaction::Mu { mu } => mu,
        }
    }
}

/// Integrated residual, Jacobian and parameter derivative.
pub fn assemble(cells: &RadialCells, u: &[f64], reaction: Reaction) -> Result<(Vec<f64>, Tridiag, Vec<f64>)> {
    let n = cells.len();
    let mut f = cells.stiffness_apply(u);
    let mut potential = vec![0.0; n];
    let mut dparam = vec![0.0; n];
    for i in 0..n {
        let (g, dg, dp) = reaction.eval(cells.r[i], u[i])?;
        f[i] += cells.volume[i] * (u[i] - g);
        potential[i] = 1.0 - dg;
        dparam[i] = -cells.volume[i] * dp;
    }
    Ok((f, cells.operator(&potential), dparam))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonRun {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Residual before each step and after the last.
    pub history: Vec<f64>,
}

/// Damped Newton at a fixed parameter.
pub fn newton(cells: &RadialCells, guess: &[f64], reaction: Reaction, tol: f64, max_iter: usize) -> Result<NewtonRun> {
    let mut u = guess.to_vec();
    let (mut f, mut jac, _) = assemble(cells, &u, reaction)?;
    let mut norm = max_abs(&f);
    let mut history = vec![norm];
    for it in 0..max_iter {
        if norm <= tol {
            return Ok(NewtonRun { u, iterations: it, history });
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let step = match jac.solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Err(KsError::Fold { parameter: reaction.parameter() }),
        };
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            let accepted = match assemble(cells, &trial, reaction) {
                Ok((tf, tj, _)) if max_abs(&tf) < (1.0 - 1e-4 * t) * norm || max_abs(&tf) <= tol => Some((trial, tf, tj)),
                _ => None,
            };
            if let Some((trial, tf, tj)) = accepted {
                u = trial;
                f = tf;
                jac = tj;
                norm = max_abs(&f);
                break;
            }
            t *= 0.5;
            if t < 1.0 / 1024.0 {
                return Err(KsError::Convergence { what: "damped Newton".into(), iterations: it + 1, residual: norm });
            }
        }
        history.push(norm);
    }
    if norm <= tol {
        return Ok(NewtonRun { u, iterations: max_iter, history });
    }
    Err(KsError::Convergence { what: "damped Newton".into(), iterations: max_iter, residual: norm })
}

/// Estimated convergence orders `ln r_{k+1} / ln r_k` over the tail of a history.
pub fn convergence_orders(history: &[f64]) -> Vec<f64> {
    history.windows(2).filter(|w| w[0] < 1.0 && w[0] > 0.0 && w[1] > 0.0).map(|w| w[1].ln() / w[0].ln()).collect()
}

/// Sign changes of `u − level`, ignoring values within the dead-band.
pub fn count_zeros(u: &[f64], level: f64) -> usize {
    let mut last = 0.0;
    let mut count = 0;
    for v in u {
        let d = v - level;
        if d.abs() <= ZERO_DEAD_BAND {
            continue;
        }
        if last != 0.0 && d.signum() != last {
            count += 1;
        }
        last = d.signum();
    }
    count
}

/// The root `μ > 1` of `μe^{−μ} = λ`, for `λ < 1/e`.
pub fn mu_of_lambda(lambda: f64) -> Option<f64> {
    if !(lambda > 0.0 && lambda < (-1.0f64).exp()) {
        return None;
    }
    let f = |m: f64| m.ln() - m - lambda.ln();
    let (mut lo, mut hi) = (1.0, 2.0);
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Unknown is `u` with parameter λ.
    Ks,
    /// Unknown is `u_μ` with parameter μ.
    Mu,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPoint {
    pub form: Form,
    /// λ, or `μe^{−μ}` for bifurcation-form points.
    pub lambda: f64,
    pub mu: Option<f64>,
    pub profile: Profile,
    pub u0_value: f64,
    /// Zeros of `u_μ − 1`, equivalently of `u − μ` in the λ form.
    pub zero_count: usize,
    pub newton_iters: usize,
    /// Max per control volume residual.
    pub residual_norm: f64,
    pub history: Vec<f64>,
}

impl BranchPoint {
    fn new(form: Form, param: f64, grid: &[f64], u: Vec<f64>, run_iters: usize, history: Vec<f64>) -> Result<Self> {
        let (lambda, mu, level) = match form {
            Form::Ks => {
                let mu = mu_of_lambda(param);
                (param, mu, mu.unwrap_or(1.0))
            }
            Form::Mu => (param * (-param).exp(), Some(param), 1.0),
        };
        let zero_count = count_zeros(&u, level);
        let residual_norm = *history.last().unwrap_or(&0.0);
        let u0_value = u[0];
        let mut profile = Profile::from_values(grid.to_vec(), u)?;
        profile.piece = vec![Piece::Solved; grid.len()];
        Ok(Self { form, lambda, mu, profile, u0_value, zero_count, newton_iters: run_iters, residual_norm, history })
    }

    /// `λ∫_{B_ρ} e^u` with the 2π measure; λ-form points only.
    pub fn mass(&self, rho: f64) -> f64 {
        let ll = self.lambda.ln();
        let e: Vec<f64> = self.profile.values.iter().map(|u| (u + ll).exp()).collect();
        disk_integral(&self.profile.grid, &e, 0.0, rho)
    }
}

/// Newton on `−Δu + u = λe^u` from a profile on the solver grid.
pub fn solve_bvp(lambda: f64, guess: &Profile) -> Result<BranchPoint> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(KsError::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if guess.values.iter().any(|v| !v.is_finite()) {
        return Err(KsError::Domain("initial guess must be finite".into()));
    }
    let cells = RadialCells::new(&guess.grid)?;
    let run = newton(&cells, &guess.values, Reaction::Ks { lambda }, RESIDUAL_TOL, NEWTON_MAX_ITER)?;
    BranchPoint::new(Form::Ks, lambda, &guess.grid, run.u, run.iterations, run.history)
}

/// Newton on the bifurcation form at fixed μ.
pub fn solve_mu(mu: f64, guess: &Profile) -> Result<BranchPoint> {
    let cells = RadialCells::new(&guess.grid)?;
    let run = newton(&cells, &guess.values, Reaction::Mu { mu }, RESIDUAL_TOL, NEWTON_MAX_ITER)?;
    BranchPoint::new(Form::Mu, mu, &guess.grid, run.u, run.iterations, run.history)
}

/// `J₁(x) = (1/π)∫₀^π cos(τ − x sin τ) dτ`; the trapezoid rule is spectrally
/// accurate for this periodic integrand.
pub fn bessel_j1(x: f64) -> f64 {
    let n = 64 + 4 * x.abs().ceil() as usize;
    let h = std::f64::consts::PI / n as f64;
    let f = |t: f64| (t - x * t.sin()).cos();
    let mut s = 0.5 * (f(0.0) + f(std::f64::consts::PI));
    for j in 1..n {
        s += f(j as f64 * h);
    }
    s * h / std::f64::consts::PI
}

/// `J₀(x) = (1/π)∫₀^π cos(x sin τ) dτ`.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 64 + 4 * x.abs().ceil() as usize;
    let h = std::f64::consts::PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut s = 0.5 * (f(0.0) + f(std::f64::consts::PI));
    for j in 1..n {
        s += f(j as f64 * h);
    }
    s * h / std::f64::consts::PI
}

/// First `count` positive zeros of `J₀' = −J₁`, by scanning and bisection.
pub fn neumann_wavenumbers(count: usize) -> Vec<f64> {
    let mut roots = Vec::with_capacity(count);
    let mut a = 0.5;
    let mut fa = bessel_j1(a);
    while roots.len() < count {
        let b = a + 0.1;
        let fb = bessel_j1(b);
        if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = bessel_j1(mid);
                if fm * flo > 0.0 {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    roots
}

/// Radial Neumann eigenvalues of `−Δ + 1` on the unit disk, ascending.
pub fn radial_eigenvalues(count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(KsError::Domain("eigenvalue count must be at least 1".into()));
    }
    let mut out = vec![1.0];
    out.extend(neumann_wavenumbers(count - 1).iter().map(|k| 1.0 + k * k));
    Ok(out)
}

/// Discrete counterpart of the `i`-th radial eigenpair on a finite volume grid,
/// eigenfunction scaled to unit max-norm with positive value at 0.
pub fn discrete_eigenpair(cells: &RadialCells, i: usize) -> Result<(f64, Vec<f64>)> {
    let target = radial_eigenvalues(i)?[i - 1] - 1.0;
    let n = cells.len();
    // shift slightly off the continuous value so the shifted operator stays regular
    let shift = target * (1.0 - 1e-6) - 1e-9;
    let op = cells.operator(&vec![-shift; n]);
    let mut x: Vec<f64> = cells.r.iter().map(|r| bessel_j0(target.sqrt() * r)).collect();
    for _ in 0..30 {
        let rhs: Vec<f64> = x.iter().zip(&cells.volume).map(|(a, v)| a * v).collect();
        x = op.solve(&rhs).ok_or_else(|| KsError::Discretization("shifted eigen solve is singular".into()))?;
        let m = max_abs(&x);
        x.iter_mut().for_each(|v| *v /= m);
    }
    if x[0] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let kx = cells.stiffness_apply(&x);
    let kappa = x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>() / cells.dot(&x, &x);
    Ok((1.0 + kappa, x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuationOptions {
    pub nodes: usize,
    /// Seed amplitude relative to the eigenfunction max-norm.
    pub amplitude: f64,
    pub step_max: f64,
    pub step_min: f64,
    pub max_corrector: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { nodes: BRANCH_NODES, amplitude: 1e-3, step_max: 0.25, step_min: 1e-8, max_corrector: 8 }
    }
}

/// Direction of travel in `(u, μ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tangent {
    pub du: Vec<f64>,
    pub dmu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub index: usize,
    /// +1 for the component with `u_μ(0) > 1`.
    pub sign: i32,
    pub points: Vec<BranchPoint>,
}

/// Weighted product on `(u, μ)`: `Σ 2V u v + μ ν`, so constants have unit norm.
struct ArcMetric {
    w: Vec<f64>,
}

impl ArcMetric {
    fn dot(&self, a: (&[f64], f64), b: (&[f64], f64)) -> f64 {
        self.w.iter().zip(a.0).zip(b.0).map(|((w, x), y)| w * x * y).sum::<f64>() + a.1 * b.1
    }

    fn normalize(&self, t: &mut Tangent) {
        let n = self.dot((&t.du, t.dmu), (&t.du, t.dmu)).sqrt();
        t.du.iter_mut().for_each(|v| *v /= n);
        t.dmu /= n;
    }
}

/// Bordered Newton for `F(u, μ) = 0`, `⟨t, x − x_pred⟩ = 0`.
fn arclength_corrector(cells: &RadialCells, metric: &ArcMetric, pred: (&[f64], f64), t: &Tangent, max_iter: usize) -> Option<(Vec<f64>, f64, usize, Vec<f64>)> {
    let n = cells.len();
    let (mut u, mut mu) = (pred.0.to_vec(), pred.1);
    let mut history = Vec::new();
    for it in 0..=max_iter {
        let (f, jac, dmu) = assemble(cells, &u, Reaction::Mu { mu }).ok()?;
        let constraint = metric.dot((&t.du, t.dmu), (&u.iter().zip(pred.0).map(|(a, b)| a - b).collect::<Vec<_>>(), mu - pred.1));
        let norm = max_abs(&f).max(constraint.abs());
        history.push(norm);
        if norm <= RESIDUAL_TOL {
            return Some((u, mu, it, history));
        }
        if it == max_iter || !norm.is_finite() {
            return None;
        }
        let mut a = jac.to_dense().insert_column(n, 0.0).insert_row(n, 0.0);
        for i in 0..n {
            a[(i, n)] = dmu[i];
            a[(n, i)] = metric.w[i] * t.du[i];
        }
        a[(n, n)] = t.dmu;
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        rhs.push(-constraint);
        let step = dense_solve(a, &rhs)?;
        u.iter_mut().zip(&step).for_each(|(x, d)| *x += d);
        mu += step[n];
    }
    None
}

/// Pseudo-arclength continuation from a converged bifurcation-form point.
pub fn continue_branch(start: &BranchPoint, direction: &Tangent, steps: usize, first_step: f64, opts: &ContinuationOptions) -> std::result::Result<Vec<BranchPoint>, (KsError, Vec<BranchPoint>)> {
    let grid = start.profile.grid.clone();
    let cells = match RadialCells::new(&grid) {
        Ok(c) => c,
        Err(e) => return Err((e, Vec::new())),
    };
    if start.form != Form::Mu || direction.du.len() != grid.len() {
        return Err((KsError::Domain("continuation runs on bifurcation-form points with a matching direction".into()), Vec::new()));
    }
    let metric = ArcMetric { w: cells.volume.iter().map(|v| 2.0 * v).collect() };
    let mut t = direction.clone();
    metric.normalize(&mut t);
    let mut x = (start.profile.values.clone(), start.mu.unwrap_or(1.0));
    let mut step = first_step;
    let mut out: Vec<BranchPoint> = Vec::with_capacity(steps);
    while out.len() < steps {
        let pred_u: Vec<f64> = x.0.iter().zip(&t.du).map(|(a, b)| a + step * b).collect();
        let pred_mu = x.1 + step * t.dmu;
        match arclength_corrector(&cells, &metric, (&pred_u, pred_mu), &t, opts.max_corrector) {
            Some((u, mu, iters, history)) => {
                // secant predictor for the next step
                let mut next = Tangent { du: u.iter().zip(&x.0).map(|(a, b)| a - b).collect(), dmu: mu - x.1 };
                metric.normalize(&mut next);
                t = next;
                x = (u.clone(), mu);
                match BranchPoint::new(Form::Mu, mu, &grid, u, iters, history) {
                    Ok(p) => out.push(p),
                    Err(e) => return Err((e, out)),
                }
                if iters <= 3 {
                    step = (step * 1.5).min(opts.step_max);
                }
            }
            None => {
                step *= 0.5;
                if step < opts.step_min {
                    return Err((KsError::Stall { accepted: out.len(), step }, out));
                }
            }
        }
    }
    Ok(out)
}

/// Branch `𝓑_i^±` traced from the discrete bifurcation point `(μ_i, 1)`.
pub fn bifurcation_branch(i: usize, sign: i32, steps: usize, opts: &ContinuationOptions) -> std::result::Result<Branch, (KsError, Vec<BranchPoint>)> {
    if i < 2 || !(sign == 1 || sign == -1) {
        return Err((KsError::Domain("branches start at i >= 2 with sign +1 or -1".into()), Vec::new()));
    }
    let setup = || -> Result<(BranchPoint, Tangent, f64)> {
        let grid = crate::grid::GridSpec::new(opts.nodes, 0.05, 0.05).build()?;
        let cells = RadialCells::new(&grid)?;
        let (mu_i, phi) = discrete_eigenpair(&cells, i)?;
        let n = grid.len();
        let start = BranchPoint::new(Form::Mu, mu_i, &grid, vec![1.0; n], 0, vec![0.0])?;
        let du: Vec<f64> = phi.iter().map(|v| sign as f64 * v).collect();
        let metric = ArcMetric { w: cells.volume.iter().map(|v| 2.0 * v).collect() };
        let first = opts.amplitude * metric.dot((&du, 0.0), (&du, 0.0)).sqrt();
        Ok((start, Tangent { du, dmu: 0.0 }, first))
    };
    let (start, dir, first) = setup().map_err(|e| (e, Vec::new()))?;
    let points = continue_branch(&start, &dir, steps, first, opts)?;
    Ok(Branch { index: i, sign, points })
}

/// Smallest distance `|Δμ| + ‖Δu‖_∞` between sampled points of two branches on one grid.
pub fn branch_separation(a: &Branch, b: &Branch) -> f64 {
    let mut best = f64::INFINITY;
    for p in &a.points {
        for q in &b.points {
            let du = p.profile.values.iter().zip(&q.profile.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            best = best.min((p.mu.unwrap_or(0.0) - q.mu.unwrap_or(0.0)).abs() + du);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub lambda: f64,
    pub eps: f64,
    /// `λ∫_{B_{α₁/2}} e^u`.
    pub origin_mass: f64,
    /// `λ∫_{B₁} e^u`.
    pub total_mass: f64,
    /// `|∂_ν U(α_i)|^{−1}` of the reference Green function per layer.
    pub layer_fluxes: Vec<f64>,
    /// `ελ∫ e^u` over the annulus of width `exclusion` at r = 1.
    pub boundary_mass: f64,
    /// `sup |εu − √2 U|` away from the origin and the layers.
    pub profile_gap: f64,
    /// Radius of the excluded neighborhoods.
    pub exclusion: f64,
}

/// Masses and profile distance of a λ-form solution against a layer configuration.
pub fn concentration_report(point: &BranchPoint, reference: &LayerConfig) -> Result<ConcentrationReport> {
    if point.form != Form::Ks {
        return Err(KsError::Domain("concentration diagnostics need a lambda-form solution".into()));
    }
    let lambda = point.lambda;
    let eps = solve_epsilon(lambda)?;
    let ones = vec![1.0; reference.alphas.len()];
    let green = PiecewiseGreen::build(reference.b, &reference.alphas, &ones, reference.outer_mode)?;
    let alphas = &reference.alphas;
    let mut smallest_gap = alphas[0];
    for w in alphas.windows(2) {
        smallest_gap = smallest_gap.min(w[1] - w[0]);
    }
    let exclusion = (10.0 * lambda.sqrt().max(eps)).min(0.25 * smallest_gap);
    let origin_mass = point.mass(0.5 * alphas[0]);
    let total_mass = point.mass(1.0);
    let layer_fluxes = (0..alphas.len()).map(|i| 1.0 / green.one_sided(i).0.abs()).collect();
    let ll = lambda.ln();
    let grid = &point.profile.grid;
    let e: Vec<f64> = point.profile.values.iter().map(|u| (u + ll).exp()).collect();
    let boundary_mass = eps * disk_integral(grid, &e, 1.0 - exclusion, 1.0);
    let sqrt2 = std::f64::consts::SQRT_2;
    let profile_gap = grid
        .iter()
        .zip(&point.profile.values)
        .filter(|(r, _)| **r >= exclusion && alphas.iter().all(|a| (**r - a).abs() >= exclusion))
        .map(|(r, u)| (eps * u - sqrt2 * green.value(*r)).abs())
        .fold(0.0, f64::max);
    Ok(ConcentrationReport { lambda, eps, origin_mass, total_mass, layer_fluxes, boundary_mass, profile_gap, exclusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn uniform(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constants_solve_the_bifurcation_form() {
        let grid = GridSpec::new(200, 1e-2, 1e-2).build().unwrap();
        let n = grid.len();
        for mu in [1.5, 4.0, 20.0] {
            let p = solve_mu(mu, &Profile::from_values(grid.clone(), vec![1.0; n]).unwrap()).unwrap();
            assert_eq!(p.newton_iters, 0);
            assert!(p.residual_norm < 1e-15);
            assert_eq!(p.zero_count, 0);
        }
    }

    #[test]
    fn lower_constant_from_a_perturbed_start() {
        let lambda = 0.1;
        let grid = GridSpec::new(300, 1e-2, 1e-2).build().unwrap();
        let guess: Vec<f64> = grid.iter().map(|r| 0.1 + 0.05 * r * r).collect();
        let p = solve_bvp(lambda, &Profile::from_values(grid, guess).unwrap()).unwrap();
        let c = p.u0_value;
        assert!((c - lambda * c.exp()).abs() < 1e-9, "{c} {:?}", p.history);
        assert!(p.profile.values.iter().all(|v| (v - c).abs() < 1e-10));
        assert!(p.residual_norm <= RESIDUAL_TOL);
        let orders = convergence_orders(&p.history);
        assert!(orders.last().copied().unwrap_or(2.0) > 1.5, "{orders:?}");
    }

    #[test]
    fn mu_of_lambda_inverts() {
        for lam in [1e-8, 1e-3, 0.2, 0.36] {
            let m = mu_of_lambda(lam).unwrap();
            assert!(m > 1.0);
            assert!((m * (-m).exp() / lam - 1.0).abs() < 1e-12);
        }
        assert!(mu_of_lambda(0.5).is_none());
    }

    #[test]
    fn zero_counting_ignores_the_band() {
        assert_eq!(count_zeros(&[1.5, 0.5, 1.5, 0.5], 1.0), 3);
        assert_eq!(count_zeros(&[1.5, 1.0 + 1e-12, 1.0 - 1e-12, 1.5], 1.0), 0);
        assert_eq!(count_zeros(&[1.5, 1.0, 0.5], 1.0), 1);
    }

    #[test]
    fn eigenvalues() {
        let ev = radial_eigenvalues(4).unwrap();
        assert_eq!(ev[0], 1.0);
        // tabulated first zeros of J1
        let j = [3.831_705_970_207_512, 7.015_586_669_815_619, 10.173_468_135_062_722];
        for (e, k) in ev[1..].iter().zip(j) {
            assert!((e - 1.0 - k * k).abs() < 1e-8 * e, "{e}");
        }
        assert!(ev.windows(2).all(|w| w[1] > w[0]));
        assert!((ev[1] - 15.6820).abs() < 1e-4);
        assert!(radial_eigenvalues(0).is_err());
    }

    #[test]
    fn discrete_eigenpair_is_close_to_continuous() {
        let cells = RadialCells::new(&uniform(401)).unwrap();
        let (m, phi) = discrete_eigenpair(&cells, 2).unwrap();
        assert!((m - 15.682).abs() < 1e-2, "{m}");
        assert_eq!(count_zeros(&phi, 0.0), 1);
        assert!((phi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobian_is_self_adjoint() {
        let grid = GridSpec::new(300, 1e-3, 1e-2).build().unwrap();
        let cells = RadialCells::new(&grid).unwrap();
        let u: Vec<f64> = grid.iter().map(|r| 3.0 - 2.0 * r * r).collect();
        let (_, jac, _) = assemble(&cells, &u, Reaction::Ks { lambda: 0.01 }).unwrap();
        // ⟨V⁻¹Jx, y⟩_V = xᵀJᵀy against xᵀJy
        let x: Vec<f64> = grid.iter().map(|r| (5.0 * r).sin()).collect();
        let y: Vec<f64> = grid.iter().map(|r| (2.0 * r).cos() + r).collect();
        let jx = jac.mul_vec(&x);
        let jy = jac.mul_vec(&y);
        let a: f64 = jx.iter().zip(&y).map(|(p, q)| p * q).sum();
        let b: f64 = jy.iter().zip(&x).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() <= 1e-10 * (a.abs() + b.abs()));
    }

    #[test]
    fn branch_two_near_bifurcation() {
        let opts = ContinuationOptions::default();
        let br = bifurcation_branch(2, 1, 6, &opts).unwrap();
        let first = &br.points[0];
        assert!(first.u0_value > 1.0);
        assert_eq!(first.zero_count, 1);
        assert!((first.mu.unwrap() - 15.682).abs() < 0.05);
        for p in &br.points {
            assert!(p.residual_norm <= RESIDUAL_TOL);
        }
        let neg = bifurcation_branch(2, -1, 3, &opts).unwrap();
        assert!(neg.points[0].u0_value < 1.0);
    }

    #[test]
    fn refinement_ratio_is_second_order() {
        // a point on the second branch, re-solved at fixed μ on nested uniform grids
        let opts = ContinuationOptions { nodes: 201, ..Default::default() };
        let br = bifurcation_branch(2, 1, 12, &opts).unwrap();
        let p = br.points.last().unwrap();
        let mu = p.mu.unwrap();
        let u0 = |n: usize| {
            let g = uniform(n);
            let guess: Vec<f64> = g.iter().map(|r| p.profile.interpolate(*r)).collect();
            solve_mu(mu, &Profile::from_values(g, guess).unwrap()).unwrap().u0_value
        };
        let (a, b, c) = (u0(201), u0(401), u0(801));
        let ratio = (a - b) / (b - c);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}: {a} {b} {c}");
    }
}
