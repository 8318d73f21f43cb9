//! Cutoff blending of the ansatz pieces with quintic smoothsteps.

use serde::Serialize;

use crate::error::{KsError, Result};
use crate::grid::{smoothstep, Piece, Profile, SMOOTHSTEP_D1_MAX, SMOOTHSTEP_D2_MAX};

/// `χ·a + (1−χ)·b` with derivatives, `chi = [χ, χ', χ'']`.
pub fn mix(chi: [f64; 3], a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    [
        b[0] + chi[0] * d[0],
        b[1] + chi[0] * d[1] + chi[1] * d[0],
        b[2] + chi[0] * d[2] + 2.0 * chi[1] * d[1] + chi[2] * d[0],
    ]
}

/// Cutoff equal to 1 below `lo`, 0 above `lo + width`.
pub fn falling_cutoff(r: f64, lo: f64, width: f64) -> [f64; 3] {
    let (v, d1, d2) = smoothstep((r - lo) / width);
    [1.0 - v, -d1 / width, -d2 / (width * width)]
}

/// Bounds `(sup|χ'|, sup|χ''|)` of a cutoff of the given width.
pub fn cutoff_bounds(width: f64) -> (f64, f64) {
    (SMOOTHSTEP_D1_MAX / width, SMOOTHSTEP_D2_MAX / (width * width))
}

/// Piecewise data on a common grid; `None` where a piece is not defined.
pub struct BlendInput<'a> {
    pub grid: &'a [f64],
    pub inner: &'a [Option<[f64; 3]>],
    pub outer: &'a [Option<[f64; 3]>],
    pub boundary: &'a [Option<[f64; 3]>],
    pub delta: f64,
    pub delta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlendReport {
    /// Derivative bounds of χ₁ and χ₃.
    pub chi1_bounds: (f64, f64),
    pub chi3_bounds: (f64, f64),
}

fn need(v: Option<[f64; 3]>, what: &str, r: f64) -> Result<[f64; 3]> {
    v.ok_or_else(|| KsError::Domain(format!("piece {what} missing at r = {r}")))
}

/// Assembles `U`: `u₀` on `[0, δ]`, `u₂` on `[2δ, 1−2δ₁]`, `u₄` on `[1−δ₁, 1]`
/// and the cutoff blends `u₁`, `u₃` in between.
pub fn blend(input: &BlendInput) -> Result<(Profile, BlendReport)> {
    let n = input.grid.len();
    if input.inner.len() != n || input.outer.len() != n || input.boundary.len() != n {
        return Err(KsError::Domain("blend pieces must live on the profile grid".into()));
    }
    let (d, d1) = (input.delta, input.delta1);
    if !(d > 0.0 && 2.0 * d < 1.0 - 2.0 * d1 && d1 > 0.0) {
        return Err(KsError::Domain("blend breakpoints overlap".into()));
    }
    let mut values = Vec::with_capacity(n);
    let mut p1 = Vec::with_capacity(n);
    let mut p2 = Vec::with_capacity(n);
    let mut piece = Vec::with_capacity(n);
    for (i, &r) in input.grid.iter().enumerate() {
        let (u, lab) = if r <= d {
            (need(input.inner[i], "u0", r)?, Piece::U0)
        } else if r < 2.0 * d {
            let chi = falling_cutoff(r, d, d);
            (mix(chi, need(input.inner[i], "u0", r)?, need(input.outer[i], "u2", r)?), Piece::U1)
        } else if r <= 1.0 - 2.0 * d1 {
            (need(input.outer[i], "u2", r)?, Piece::U2)
        } else if r < 1.0 - d1 {
            let chi = falling_cutoff(r, 1.0 - 2.0 * d1, d1);
            (mix(chi, need(input.outer[i], "u2", r)?, need(input.boundary[i], "u4", r)?), Piece::U3)
        } else {
            (need(input.boundary[i], "u4", r)?, Piece::U4)
        };
        values.push(u[0]);
        p1.push(u[1]);
        p2.push(u[2]);
        piece.push(lab);
    }
    if values.iter().any(|v: &f64| !v.is_finite()) {
        return Err(KsError::Domain("blended profile is not finite".into()));
    }
    let profile = Profile { grid: input.grid.to_vec(), values, d1: p1, d2: p2, piece };
    Ok((profile, BlendReport { chi1_bounds: cutoff_bounds(d), chi3_bounds: cutoff_bounds(d1) }))
}
