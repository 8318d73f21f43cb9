//! Radial grids on [0, 1] graded toward both ends, and the radial field container.

use serde::Serialize;

use crate::error::{KsError, Result};

/// Node density `1/(r+a) + 1/(1−r+b) + Σ 1/(|r−c_j|+s_j) + w` mapped from a
/// uniform computational grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub nodes: usize,
    /// Length scale resolved near r = 0.
    pub inner_scale: f64,
    /// Length scale resolved near r = 1.
    pub outer_scale: f64,
    /// Weight of the uniform part of the density.
    pub uniform_weight: f64,
    /// Interior refinement points `(center, scale)`.
    pub focus: Vec<(f64, f64)>,
}

impl GridSpec {
    pub fn new(nodes: usize, inner_scale: f64, outer_scale: f64) -> Self {
        Self { nodes, inner_scale, outer_scale, uniform_weight: 10.0, focus: Vec::new() }
    }

    pub fn with_focus(mut self, focus: Vec<(f64, f64)>) -> Self {
        self.focus = focus;
        self
    }

    fn phi(&self, r: f64) -> f64 {
        let (a, b) = (self.inner_scale, self.outer_scale);
        let mut v = ((r + a) / a).ln() + ((1.0 + b) / (1.0 - r + b)).ln() + self.uniform_weight * r;
        for &(c, s) in &self.focus {
            v += if r <= c { ((c + s) / (c - r + s)).ln() } else { ((c + s) / s).ln() + ((r - c + s) / s).ln() };
        }
        v
    }

    fn density(&self, r: f64) -> f64 {
        let mut d = 1.0 / (r + self.inner_scale) + 1.0 / (1.0 - r + self.outer_scale) + self.uniform_weight;
        for &(c, s) in &self.focus {
            d += 1.0 / ((r - c).abs() + s);
        }
        d
    }

    fn validate(&self) -> Result<()> {
        if self.nodes < 8 {
            return Err(KsError::Domain(format!("grid needs at least 8 nodes, got {}", self.nodes)));
        }
        for (name, v) in [("inner_scale", self.inner_scale), ("outer_scale", self.outer_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KsError::Domain(format!("grid {name} must be positive, got {v}")));
            }
        }
        if !(self.uniform_weight.is_finite() && self.uniform_weight >= 0.0) {
            return Err(KsError::Domain("grid uniform_weight must be nonnegative".into()));
        }
        if self.focus.iter().any(|&(c, s)| !(c > 0.0 && c < 1.0 && s > 0.0 && s.is_finite())) {
            return Err(KsError::Domain("grid focus points need a center in (0,1) and a positive scale".into()));
        }
        Ok(())
    }

    /// Node radii, `r[0] = 0`, `r[n−1] = 1`.
    pub fn build(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.nodes;
        let total = self.phi(1.0);
        let mut r = Vec::with_capacity(n);
        r.push(0.0);
        let mut guess = 0.0;
        for j in 1..n - 1 {
            let target = total * j as f64 / (n - 1) as f64;
            // monotone inverse: safeguarded Newton
            let (mut lo, mut hi) = (guess, 1.0);
            let mut x = guess;
            for _ in 0..200 {
                let f = self.phi(x) - target;
                if f > 0.0 {
                    hi = x;
                } else {
                    lo = x;
                }
                let mut next = x - f / self.density(x);
                if !(next > lo && next < hi) {
                    next = 0.5 * (lo + hi);
                }
                if (next - x).abs() <= 1e-16 * (1.0 + x) {
                    x = next;
                    break;
                }
                x = next;
            }
            r.push(x);
            guess = x;
        }
        r.push(1.0);
        Ok(r)
    }

    /// Builds the grid and moves the nearest interior node onto each breakpoint.
    pub fn build_with_breakpoints(&self, breakpoints: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.build()?;
        let mut used = vec![false; r.len()];
        for &bp in breakpoints {
            if !(bp > 0.0 && bp < 1.0) {
                return Err(KsError::Domain(format!("breakpoint {bp} outside (0,1)")));
            }
            let idx = match r.binary_search_by(|x| x.partial_cmp(&bp).unwrap()) {
                Ok(i) => i,
                Err(i) => {
                    if i == 0 {
                        1
                    } else if i >= r.len() {
                        r.len() - 2
                    } else if (r[i] - bp).abs() < (bp - r[i - 1]).abs() {
                        i
                    } else {
                        i - 1
                    }
                }
            };
            let idx = idx.clamp(1, r.len() - 2);
            if used[idx] {
                return Err(KsError::Domain(format!("breakpoints too close for a {}-node grid", r.len())));
            }
            used[idx] = true;
            r[idx] = bp;
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KsError::Domain("breakpoints break grid monotonicity".into()));
        }
        Ok(r)
    }
}

/// Label of the ansatz piece that defines the value at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Piece {
    U0,
    U1,
    U2,
    U3,
    U4,
    /// Interior Green piece between layers (0-based annulus index).
    Interior(usize),
    /// Bubble stack around interface `i`.
    Peak(usize),
    /// Blend into or out of peak `i`.
    Transition(usize),
    /// Not produced by an ansatz (solver output or file input).
    Solved,
}

impl Piece {
    pub fn label(&self) -> String {
        match self {
            Piece::U0 => "u0".into(),
            Piece::U1 => "u1".into(),
            Piece::U2 => "u2".into(),
            Piece::U3 => "u3".into(),
            Piece::U4 => "u4".into(),
            Piece::Interior(i) => format!("int{}", i + 1),
            Piece::Peak(i) => format!("peak{}", i + 1),
            Piece::Transition(i) => format!("trans{}", i + 1),
            Piece::Solved => "solved".into(),
        }
    }
}

/// Radial field with first and second derivatives on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub piece: Vec<Piece>,
}

impl Profile {
    /// Wraps nodal values, filling derivatives by second-order differences.
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 3 {
            return Err(KsError::Domain("profile grid and values must match and have at least 3 nodes".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KsError::Domain("profile grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KsError::Domain("profile values must be finite".into()));
        }
        let (d1, d2) = fd_derivatives(&grid, &values);
        let n = grid.len();
        Ok(Self { grid, values, d1, d2, piece: vec![Piece::Solved; n] })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Linear interpolation of the values.
    pub fn interpolate(&self, r: f64) -> f64 {
        interp(&self.grid, &self.values, r)
    }
}

pub fn interp(x: &[f64], y: &[f64], t: f64) -> f64 {
    if t <= x[0] {
        return y[0];
    }
    let n = x.len();
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let i = x.partition_point(|v| *v <= t) - 1;
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] * (1.0 - w) + y[i + 1] * w
}

/// Three-point nonuniform differences; one-sided second-order at the ends,
/// and the symmetric closure at r = 0 when the grid starts there.
pub fn fd_derivatives(r: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        let hl = r[i] - r[i - 1];
        let hr = r[i + 1] - r[i];
        d1[i] = (-hr / (hl * (hl + hr))) * u[i - 1] + ((hr - hl) / (hl * hr)) * u[i] + (hl / (hr * (hl + hr))) * u[i + 1];
        d2[i] = 2.0 * (u[i - 1] / (hl * (hl + hr)) - u[i] / (hl * hr) + u[i + 1] / (hr * (hl + hr)));
    }
    let one_sided = |i0: usize, i1: usize, i2: usize| {
        let (x0, x1, x2) = (r[i0], r[i1], r[i2]);
        let (h1, h2) = (x1 - x0, x2 - x0);
        let a = -(h1 + h2) / (h1 * h2);
        let b = h2 / (h1 * (h2 - h1));
        let c = -h1 / (h2 * (h2 - h1));
        a * u[i0] + b * u[i1] + c * u[i2]
    };
    d1[0] = if r[0] == 0.0 { 0.0 } else { one_sided(0, 1, 2) };
    d1[n - 1] = one_sided(n - 1, n - 2, n - 3);
    if r[0] == 0.0 {
        // even extension: u(−h) = u(h)
        let h = r[1];
        d2[0] = 2.0 * (u[1] - u[0]) / (h * h);
    } else {
        d2[0] = d2[1];
    }
    d2[n - 1] = d2[n - 2] + (d2[n - 2] - d2[n - 3]) * (r[n - 1] - r[n - 2]) / (r[n - 2] - r[n - 3]);
    (d1, d2)
}

/// `∫_{lo}^{hi} f(r) 2πr dr` by the trapezoid rule, clipping partial cells linearly.
pub fn disk_integral(r: &[f64], f: &[f64], lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 0..r.len() - 1 {
        let (a, b) = (r[i].max(lo), r[i + 1].min(hi));
        if b <= a {
            continue;
        }
        let fa = interp_cell(r, f, i, a) * a;
        let fb = interp_cell(r, f, i, b) * b;
        total += 0.5 * (fa + fb) * (b - a);
    }
    two_pi * total
}

fn interp_cell(r: &[f64], f: &[f64], i: usize, t: f64) -> f64 {
    let w = (t - r[i]) / (r[i + 1] - r[i]);
    f[i] * (1.0 - w) + f[i + 1] * w
}

/// Quintic smoothstep: 0 for t ≤ 0, 1 for t ≥ 1, C² joins. Returns (value, d/dt, d²/dt²).
pub fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        let t3 = t2 * t;
        (t3 * (10.0 - 15.0 * t + 6.0 * t2), 30.0 * t2 * (1.0 - t) * (1.0 - t), 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t))
    }
}

/// Bounds of |χ'| and |χ''| for the unit smoothstep (15/8 and 10/√3).
pub const SMOOTHSTEP_D1_MAX: f64 = 1.875;
pub const SMOOTHSTEP_D2_MAX: f64 = 5.773_502_691_896_258;
