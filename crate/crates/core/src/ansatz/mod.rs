//! Matched-asymptotic approximate solution: a bubble at the origin, the
//! singular outer Green profile and a boundary layer at r = 1, glued by
//! smooth cutoffs. The multi-layer variant lives in [`multilayer`].

pub mod blend;
pub mod boundary;
pub mod inner;
pub mod multilayer;
pub mod outer;

use serde::Serialize;

pub use boundary::{boundary_corrections, correction_constants, BoundaryCorrections, CorrectionConstants, StackSample, StackSpec};
pub use inner::{inner_u0, InnerSolution};
pub use multilayer::{multilayer_ansatz, MultilayerAnsatz};
pub use outer::{match_outer, OuterMatch};

use crate::error::{KsError, Result};
use crate::grid::{GridSpec, Profile};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Space dimension.
pub const N_DIM: f64 = 2.0;
/// Default exponent in `δ₁ = ε^η`.
pub const ETA_DEFAULT: f64 = 0.8;
/// Admissible open window for η.
pub const ETA_WINDOW: (f64, f64) = (2.0 / 3.0, 1.0);
/// Default node count of the ansatz grid.
pub const NODES_DEFAULT: usize = 4000;

/// `λ(ε) = (4/ε²)·e^{−√2/ε}`.
pub fn lambda_of_eps(eps: f64) -> f64 {
    4.0 / (eps * eps) * (-SQRT2 / eps).exp()
}

fn relation(eps: f64, ln_lambda: f64) -> f64 {
    (4.0 / (eps * eps)).ln() - ln_lambda - SQRT2 / eps
}

/// Small root of `ln(4/ε²) − ln λ = √2/ε`.
pub fn solve_epsilon(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < (-1.0f64).exp()) {
        return Err(KsError::Domain(format!("lambda must lie in (0, 1/e), got {lambda}")));
    }
    let ll = lambda.ln();
    // the relation increases on (0, 1/√2)
    let (mut lo, mut hi) = (1e-6, std::f64::consts::FRAC_1_SQRT_2);
    if relation(lo, ll) > 0.0 {
        return Err(KsError::Domain(format!("lambda {lambda} too small for double precision")));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if relation(mid, ll) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut e = 0.5 * (lo + hi);
    for _ in 0..20 {
        let f = relation(e, ll);
        let df = -2.0 / e + SQRT2 / (e * e);
        let step = f / df;
        e -= step;
        if step.abs() <= 1e-16 * e {
            break;
        }
    }
    Ok(e)
}

/// Two-dimensional bubble `ln(8μ²/(μ²λ + r²)²)` with radial derivatives.
pub fn bubble2d(r: f64, mu: f64, lambda: f64) -> [f64; 3] {
    let a = mu * mu * lambda;
    let q = a + r * r;
    [(8.0 * mu * mu).ln() - 2.0 * q.ln(), -4.0 * r / q, -4.0 * (a - r * r) / (q * q)]
}

/// One-dimensional profile `W(s) = −2 ln cosh(s/√2)` and `W'(s)`.
pub fn w_layer(s: f64) -> (f64, f64) {
    let x = (s / SQRT2).abs();
    let lncosh = x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2;
    (-2.0 * lncosh, -SQRT2 * (s / SQRT2).tanh())
}

/// `W_μ̃(r) = W((r−1)/μ̃) − 2 ln μ̃` with radial derivatives.
pub fn bubble1d(r: f64, mu_tilde: f64) -> [f64; 3] {
    let s = (r - 1.0) / mu_tilde;
    let (w, wp) = w_layer(s);
    [w - 2.0 * mu_tilde.ln(), wp / mu_tilde, -w.exp() / (mu_tilde * mu_tilde)]
}

/// Construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnsatzOptions {
    pub eta: f64,
    pub nodes: usize,
}

impl Default for AnsatzOptions {
    fn default() -> Self {
        Self { eta: ETA_DEFAULT, nodes: NODES_DEFAULT }
    }
}

pub fn validate_eta(eta: f64) -> Result<()> {
    if !(eta > ETA_WINDOW.0 && eta < ETA_WINDOW.1) {
        return Err(KsError::Domain(format!("eta must lie in the open window (2/3, 1), got {eta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnsatzParams {
    pub lambda: f64,
    pub eps: f64,
    pub eta: f64,
    pub delta: f64,
    pub delta1: f64,
    pub mu: f64,
    pub mu_tilde: f64,
    pub gamma_eps: f64,
    pub r_tilde: f64,
    /// `H(0)` of the outer regular part (sets μ).
    pub h0: f64,
    pub constants: CorrectionConstants,
}

impl AnsatzParams {
    /// Machine check of the parameter relations.
    pub fn check(&self) -> Result<()> {
        let rel = relation(self.eps, self.lambda.ln());
        if rel.abs() > 1e-12 * (SQRT2 / self.eps) {
            return Err(KsError::InternalConsistency(format!("eps/lambda relation off by {rel}")));
        }
        validate_eta(self.eta)?;
        if !(2.0 * self.delta < self.r_tilde && self.delta <= 0.5 * self.eps.sqrt() * (1.0 + 1e-15)) {
            return Err(KsError::InternalConsistency("inner matching radius violates 2δ < r̃, δ ≤ √ε/2".into()));
        }
        let mu2 = self.mu * self.mu;
        if ((mu2 - self.h0.exp() / 8.0) / mu2).abs() > 1e-12 {
            return Err(KsError::InternalConsistency("μ² differs from e^{H(0)}/8".into()));
        }
        if 2.0 * self.delta >= 1.0 - 2.0 * self.delta1 {
            return Err(KsError::InternalConsistency("inner and boundary matching bands overlap".into()));
        }
        Ok(())
    }

    /// Width of the origin bubble, `√λ·μ`.
    pub fn bubble_width(&self) -> f64 {
        self.lambda.sqrt() * self.mu
    }
}

/// Parameters for a given λ: ε, the outer matching and the derived radii.
pub fn ansatz_params(lambda: f64, eta: f64) -> Result<(AnsatzParams, OuterMatch)> {
    validate_eta(eta)?;
    let eps = solve_epsilon(lambda)?;
    let outer = match_outer(eps)?;
    let delta = (0.5 * eps.sqrt()).min(outer.r_tilde / 4.0);
    let delta1 = eps.powf(eta);
    let mu = (outer.h0.exp() / 8.0).sqrt();
    let params = AnsatzParams {
        lambda,
        eps,
        eta,
        delta,
        delta1,
        mu,
        mu_tilde: eps * outer.gamma,
        gamma_eps: outer.gamma,
        r_tilde: outer.r_tilde,
        h0: outer.h0,
        constants: outer.constants,
    };
    params.check()?;
    Ok((params, outer))
}

/// Matching diagnostics of the glued ansatz.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingReport {
    /// `sup |u₀ − u₂|` and `sup |u₀' − u₂'|` on `[δ, 2δ]`.
    pub inner_gap: f64,
    pub inner_slope_gap: f64,
    /// `sup |H₀ − (H − ln 8μ²)|` on `(0, r̃)`.
    pub h0_gap: f64,
    /// `sup |u₄ − u₂|` on `(1−2δ₁, 1−δ₁)`.
    pub boundary_gap: f64,
    /// `sup |u₄ − u₂| / envelope` on the same band.
    pub boundary_envelope_ratio: f64,
    pub chi1_bounds: (f64, f64),
    pub chi3_bounds: (f64, f64),
}

/// Envelope `ε² + ε d² + d³ + d⁴/ε + e^{−d/ε}` with `d = |r − 1|`.
pub fn boundary_envelope(eps: f64, r: f64) -> f64 {
    let d = (1.0 - r).abs();
    eps * eps + eps * d * d + d.powi(3) + d.powi(4) / eps + (-d / eps).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ansatz {
    pub params: AnsatzParams,
    pub outer: OuterMatch,
    pub profile: Profile,
    pub report: MatchingReport,
}

impl Ansatz {
    /// Singular strength of the outer piece (`b` in the Green function normalization).
    pub fn green_b(&self) -> f64 {
        self.outer.a_coef
    }
}

/// Builds the glued ansatz for λ.
pub fn build_ansatz(lambda: f64, opts: AnsatzOptions) -> Result<Ansatz> {
    let (params, outer) = ansatz_params(lambda, opts.eta)?;
    let (d, d1) = (params.delta, params.delta1);
    let breaks = [d, 2.0 * d, params.r_tilde, 1.0 - 2.0 * d1, 1.0 - d1];
    let grid = GridSpec::new(opts.nodes, params.bubble_width(), params.mu_tilde).build_with_breakpoints(&breaks)?;
    let n = grid.len();
    let inner = inner_u0(&grid, params.r_tilde, params.mu, lambda)?;
    let mut inner_piece = vec![None; n];
    for (i, u) in inner.u0.iter().enumerate() {
        if grid[i] <= 2.0 * d {
            inner_piece[i] = Some(*u);
        }
    }
    let outer_piece: Vec<Option<[f64; 3]>> = grid.iter().map(|r| (*r >= d && *r <= 1.0 - d1).then(|| outer.eval(*r))).collect();
    let lo = 1.0 - 2.0 * d1;
    let first = grid.partition_point(|r| *r < lo);
    let bc = boundary_corrections(params.mu_tilde, params.eps, lambda.ln(), &grid[first..])?;
    let mut boundary_piece = vec![None; n];
    for (j, s) in bc.samples.iter().enumerate() {
        boundary_piece[first + j] = Some(s.total());
    }
    let (profile, blend_report) = blend::blend(&blend::BlendInput {
        grid: &grid,
        inner: &inner_piece,
        outer: &outer_piece,
        boundary: &boundary_piece,
        delta: d,
        delta1: d1,
    })?;

    let mut inner_gap = 0.0_f64;
    let mut inner_slope_gap = 0.0_f64;
    let mut h0_gap = 0.0_f64;
    let ln8mu2 = (8.0 * params.mu * params.mu).ln();
    for (i, r) in inner.r.iter().enumerate() {
        let h = outer.regular_part(*r);
        h0_gap = h0_gap.max((inner.h[i][0] - (h - ln8mu2)).abs());
        if *r >= d && *r <= 2.0 * d {
            let o = outer.eval(*r);
            inner_gap = inner_gap.max((inner.u0[i][0] - o[0]).abs());
            inner_slope_gap = inner_slope_gap.max((inner.u0[i][1] - o[1]).abs());
        }
    }
    let mut boundary_gap = 0.0_f64;
    let mut ratio = 0.0_f64;
    for (j, s) in bc.samples.iter().enumerate() {
        let r = grid[first + j];
        if r > lo && r < 1.0 - d1 {
            let gap = (s.total()[0] - outer.eval(r)[0]).abs();
            boundary_gap = boundary_gap.max(gap);
            ratio = ratio.max(gap / boundary_envelope(params.eps, r));
        }
    }
    let report = MatchingReport {
        inner_gap,
        inner_slope_gap,
        h0_gap,
        boundary_gap,
        boundary_envelope_ratio: ratio,
        chi1_bounds: blend_report.chi1_bounds,
        chi3_bounds: blend_report.chi3_bounds,
    };
    Ok(Ansatz { params, outer, profile, report })
}
