//! Multi-layer ansatz: bubble at the origin, interior Green pieces between
//! layers, and a bubble stack at every layer radius.

use serde::Serialize;

use super::blend::{falling_cutoff, mix};
use super::boundary::{correction_constants, stack_one_side, stack_two_sided, CorrectionConstants, StackSpec};
use super::{inner_u0, solve_epsilon, validate_eta, ETA_DEFAULT, NODES_DEFAULT};
use crate::error::{KsError, Result};
use crate::greens::{solve_layers, LayerConfig, OuterMode, PiecewiseGreen};
use crate::grid::{GridSpec, Piece, Profile};
use crate::nondegen::{perturbed_green, phi_tilde, solve_layer_parameters, LayerConstants, LayerParameters, LayerSolveOptions, PerturbedGreenSpec};
use crate::specfun::EULER_GAMMA;

const SQRT2: f64 = std::f64::consts::SQRT_2;
const MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultilayerOptions {
    pub eta: f64,
    pub nodes: usize,
    /// Upper bound on ε accepted by the layer-parameter solve.
    pub eps_max: f64,
}

impl Default for MultilayerOptions {
    fn default() -> Self {
        Self { eta: ETA_DEFAULT, nodes: NODES_DEFAULT, eps_max: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultilayerAnsatz {
    pub k: usize,
    pub outer_mode: OuterMode,
    pub lambda: f64,
    pub eps: f64,
    /// Singular strength `4ε/√2`.
    pub b: f64,
    pub config: LayerConfig,
    pub parameters: LayerParameters,
    pub constants: Vec<CorrectionConstants>,
    /// Layer radii `α_i + σ_i`.
    pub radii: Vec<f64>,
    /// Layer widths `ε|γ_i|`.
    pub widths: Vec<f64>,
    pub delta: f64,
    pub delta1: f64,
    pub r_tilde: f64,
    /// Origin bubble scale.
    pub mu0: f64,
    /// `sup |peak − interior|` over each transition band.
    pub transition_gaps: Vec<f64>,
    /// `sup |ε·u − √2·U_{b,k}|` away from the origin and the layers.
    pub green_gap: f64,
    pub profile: Profile,
    /// Interior Green function (value offsets and shifts applied).
    #[serde(skip)]
    pub interior: PiecewiseGreen,
    /// Unperturbed reference Green function.
    #[serde(skip)]
    pub reference: PiecewiseGreen,
}

fn layer_constants(x: &[f64]) -> Result<Vec<CorrectionConstants>> {
    x.iter().map(|v| correction_constants(v.abs())).collect()
}

fn as_layer(c: &[CorrectionConstants]) -> Vec<LayerConstants> {
    c.iter().map(|c| LayerConstants { zeta1: c.zeta1, nu2: c.nu2 }).collect()
}

/// Solves the layer system with the per-layer constants iterated to
/// consistency with the scales they depend on.
fn consistent_parameters(config: &LayerConfig, eps: f64, eps_max: f64) -> Result<(LayerParameters, Vec<CorrectionConstants>)> {
    let base = crate::nondegen::LayerSystem { config, eps: 0.0, constants: &[], n: 2.0 }.base_point();
    let mut x = base[..config.k].to_vec();
    let opts = LayerSolveOptions { eps_max, n: 2.0 };
    for sweep in 1..=MAX_SWEEPS {
        let consts = layer_constants(&x)?;
        let params = solve_layer_parameters(config, eps, &as_layer(&consts), opts)?;
        let moved = params.gamma.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = params.gamma.clone();
        if moved <= 1e-10 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
            let consts = layer_constants(&x)?;
            return Ok((params, consts));
        }
        if sweep == MAX_SWEEPS {
            return Err(KsError::Convergence { what: "layer constants sweeps".into(), iterations: sweep, residual: moved });
        }
    }
    unreachable!()
}

fn critical_point(green: &PiecewiseGreen, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (1e-12, hi * (1.0 - 1e-12));
    let slope = |r: f64| green.eval(r)[1];
    if !(slope(lo) < 0.0 && slope(hi) > 0.0) {
        return Err(KsError::Matching("innermost Green piece has no interior minimum".into()));
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

/// Builds the k-layer ansatz for λ.
pub fn multilayer_ansatz(k: usize, lambda: f64, outer_mode: OuterMode, opts: MultilayerOptions) -> Result<MultilayerAnsatz> {
    validate_eta(opts.eta)?;
    let eps = solve_epsilon(lambda)?;
    let b = 2.0 * SQRT2 * eps;
    let (config, reference) = solve_layers(k, b, outer_mode)?;
    let (parameters, constants) = consistent_parameters(&config, eps, opts.eps_max)?;
    let lc = as_layer(&constants);
    let spec = PerturbedGreenSpec {
        alphas: config.alphas.clone(),
        a: parameters.gamma.iter().zip(&lc).map(|(x, c)| phi_tilde(*x, eps, c)).collect(),
        sigma: parameters.sigma.clone(),
        b,
        eps,
        outer_mode,
    };
    let interior = perturbed_green(&spec)?;
    let radii = spec.shifted_radii();
    let widths: Vec<f64> = parameters.gamma.iter().map(|x| eps * x.abs()).collect();
    let scale = SQRT2 / eps;
    let u_int = |r: f64| {
        let g = interior.eval(r);
        [scale * g[0], scale * g[1], scale * g[2]]
    };

    // origin
    let core = &interior.coeffs[0];
    let h0 = scale * (core.c_k * (std::f64::consts::LN_2 - EULER_GAMMA) + core.c_i);
    let mu0 = (0.5 * h0).exp() / 8f64.sqrt();
    let r_tilde = critical_point(&interior, radii[0])?;
    let delta = (0.5 * eps.sqrt()).min(r_tilde / 4.0);
    let delta1 = eps.powf(opts.eta);

    // bands must not overlap
    let mut left_edge = 2.0 * delta;
    for (i, &r) in radii.iter().enumerate() {
        let lo = r - 2.0 * delta1;
        if lo <= left_edge {
            return Err(KsError::Domain(format!("layer band {} overlaps its inner neighbour (δ₁ = {delta1:.3e}); decrease lambda or eta", i + 1)));
        }
        left_edge = r + 2.0 * delta1;
    }
    let dirichlet = outer_mode == OuterMode::DirichletOne;
    if !dirichlet && left_edge >= 1.0 {
        return Err(KsError::Domain("outermost layer band reaches r = 1; decrease lambda or eta".into()));
    }

    let mut breaks = vec![delta, 2.0 * delta, r_tilde];
    for &r in &radii {
        for off in [-2.0, -1.0, 1.0, 2.0] {
            let p = r + off * delta1;
            if p < 1.0 {
                breaks.push(p);
            }
        }
        if r < 1.0 {
            breaks.push(r);
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let focus: Vec<(f64, f64)> = radii.iter().zip(&widths).filter(|(r, _)| **r < 1.0).map(|(r, w)| (*r, *w)).collect();
    let outer_scale = if dirichlet { *widths.last().unwrap() } else { 0.05 };
    let grid = GridSpec::new(opts.nodes, lambda.sqrt() * mu0, outer_scale).with_focus(focus).build_with_breakpoints(&breaks)?;
    let n = grid.len();

    let inner = inner_u0(&grid, r_tilde, mu0, lambda)?;
    // peaks: samples on the band nodes
    let mut peak: Vec<Option<(usize, [f64; 3])>> = vec![None; n];
    let ln_lambda = lambda.ln();
    for (i, (&r, &w)) in radii.iter().zip(&widths).enumerate() {
        let boundary = dirichlet && i + 1 == radii.len();
        let lo = grid.partition_point(|x| *x < r - 2.0 * delta1);
        let hi = grid.partition_point(|x| *x <= r + 2.0 * delta1);
        let band = &grid[lo..hi];
        let stack = StackSpec { center: r, mu: w, eps, ln_lambda, with_z: boundary };
        let samples = if boundary {
            let rev: Vec<f64> = band.iter().rev().copied().collect();
            let mut s = stack_one_side(&stack, &rev)?;
            s.reverse();
            s
        } else {
            stack_two_sided(&stack, band)?
        };
        for (j, s) in samples.iter().enumerate() {
            peak[lo + j] = Some((i, s.total()));
        }
    }

    let mut values = Vec::with_capacity(n);
    let mut d1v = Vec::with_capacity(n);
    let mut d2v = Vec::with_capacity(n);
    let mut piece = Vec::with_capacity(n);
    let mut transition_gaps = vec![0.0_f64; radii.len()];
    let mut green_gap = 0.0_f64;
    for (idx, &r) in grid.iter().enumerate() {
        let (u, lab) = if r <= delta {
            (inner.u0[idx], Piece::U0)
        } else if r < 2.0 * delta {
            (mix(falling_cutoff(r, delta, delta), inner.u0[idx], u_int(r)), Piece::U1)
        } else if let Some((i, p)) = peak[idx] {
            let c = radii[i];
            let d = (r - c).abs();
            if d <= delta1 {
                (p, Piece::Peak(i))
            } else {
                let int = u_int(r);
                transition_gaps[i] = transition_gaps[i].max((p[0] - int[0]).abs());
                let chi = if r < c {
                    falling_cutoff(r, c - 2.0 * delta1, delta1)
                } else {
                    let f = falling_cutoff(r, c + delta1, delta1);
                    [1.0 - f[0], -f[1], -f[2]]
                };
                (mix(chi, int, p), Piece::Transition(i))
            }
        } else {
            let ann = interior.annulus_index(r);
            let int = u_int(r);
            green_gap = green_gap.max((eps * int[0] - SQRT2 * reference.value(r)).abs());
            (int, Piece::Interior(ann))
        };
        values.push(u[0]);
        d1v.push(u[1]);
        d2v.push(u[2]);
        piece.push(lab);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(KsError::Domain("multi-layer ansatz is not finite".into()));
    }
    let profile = Profile { grid, values, d1: d1v, d2: d2v, piece };
    Ok(MultilayerAnsatz {
        k,
        outer_mode,
        lambda,
        eps,
        b,
        config,
        parameters,
        constants,
        radii,
        widths,
        delta,
        delta1,
        r_tilde,
        mu0,
        transition_gaps,
        green_gap,
        profile,
        interior,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::lambda_of_eps;

    #[test]
    fn single_interior_layer_neumann() {
        let lam = lambda_of_eps(0.005);
        let m = multilayer_ansatz(1, lam, OuterMode::Neumann, MultilayerOptions::default()).unwrap();
        assert_eq!(m.radii.len(), 1);
        assert!(m.radii[0] > 0.0 && m.radii[0] < 1.0);
        assert!(m.profile.piece.contains(&Piece::Peak(0)));
        assert!(m.profile.values.iter().all(|v| v.is_finite()));
        // Neumann data at r = 1
        assert!(m.profile.d1.last().unwrap().abs() < 1e-8);
    }

    #[test]
    fn boundary_only_dirichlet() {
        let lam = lambda_of_eps(0.01);
        let m = multilayer_ansatz(1, lam, OuterMode::DirichletOne, MultilayerOptions::default()).unwrap();
        assert_eq!(m.radii, vec![1.0]);
        assert!(m.profile.piece.last() == Some(&Piece::Peak(0)));
    }

    #[test]
    fn interior_and_boundary_layers() {
        let lam = lambda_of_eps(0.002);
        let m = multilayer_ansatz(2, lam, OuterMode::DirichletOne, MultilayerOptions::default()).unwrap();
        assert_eq!(m.radii.len(), 2);
        assert!(m.radii[0] < m.radii[1]);
        assert!(m.profile.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn layers_too_wide_for_large_lambda() {
        let r = multilayer_ansatz(1, 1e-3, OuterMode::Neumann, MultilayerOptions::default());
        assert!(r.is_err());
    }
}
