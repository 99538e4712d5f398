//! Fixed-node quadrature grids and an adaptive Gauss–Legendre integrator.
//!
//! Every continuous integral in the crate is realised as a weighted sum over
//! the nodes of a [`Grid`]; two densities are comparable only when they are
//! tabulated on the same grid.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Result, SdtError};

/// Nodes per Gauss–Legendre panel in composite grids.
pub const PANEL_ORDER: usize = 16;

/// Default node count for divergence integrals.
pub const DEFAULT_NODES: usize = 512;

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

fn adaptive_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridRule {
    /// Composite Gauss–Legendre with [`PANEL_ORDER`] nodes per panel.
    GaussLegendre,
    /// Equispaced nodes with trapezoid weights.
    Trapezoid,
}

/// A window `[lower, upper]` with a fixed set of quadrature nodes.
#[derive(Debug, Clone)]
pub struct Grid {
    lower: f64,
    upper: f64,
    rule: GridRule,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.lower == other.lower
            && self.upper == other.upper
            && self.rule == other.rule
            && self.nodes.len() == other.nodes.len()
    }
}

impl Grid {
    /// Composite Gauss–Legendre grid; `count` must be a positive multiple of [`PANEL_ORDER`].
    pub fn gauss_legendre(lower: f64, upper: f64, count: usize) -> Result<Self> {
        check_window(lower, upper)?;
        if count == 0 || count % PANEL_ORDER != 0 {
            return Err(SdtError::Domain(format!(
                "Gauss-Legendre grid needs a positive multiple of {PANEL_ORDER} nodes, got {count}"
            )));
        }
        let (xs, ws) = panel_rule();
        let panels = count / PANEL_ORDER;
        let width = (upper - lower) / panels as f64;
        let mut nodes = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for k in 0..panels {
            let a = lower + k as f64 * width;
            let mid = a + 0.5 * width;
            for (x, w) in xs.iter().zip(ws) {
                nodes.push(mid + 0.5 * width * x);
                weights.push(0.5 * width * w);
            }
        }
        Ok(Grid {
            lower,
            upper,
            rule: GridRule::GaussLegendre,
            nodes,
            weights,
        })
    }

    /// Equispaced grid with trapezoid weights (`count >= 2`).
    pub fn uniform(lower: f64, upper: f64, count: usize) -> Result<Self> {
        check_window(lower, upper)?;
        if count < 2 {
            return Err(SdtError::Domain(format!(
                "uniform grid needs at least 2 nodes, got {count}"
            )));
        }
        let step = (upper - lower) / (count - 1) as f64;
        let nodes: Vec<f64> = (0..count).map(|i| lower + step * i as f64).collect();
        let mut weights = vec![step; count];
        weights[0] *= 0.5;
        weights[count - 1] *= 0.5;
        Ok(Grid {
            lower,
            upper,
            rule: GridRule::Trapezoid,
            nodes,
            weights,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn rule(&self) -> GridRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted sum of tabulated values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn integrate_fn<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, w)| w * f(x))
            .sum()
    }
}

fn check_window(lower: f64, upper: f64) -> Result<()> {
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(SdtError::Domain(format!(
            "invalid integration window [{lower}, {upper}]"
        )));
    }
    Ok(())
}

/// Adaptive Gauss–Legendre integration of a smooth function over `[a, b]`.
///
/// Each interval is accepted when the 20-point estimate agrees with the sum
/// of the two half-interval estimates to `tol` (scaled by the interval share).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let whole = gl_panel(f, a, b);
    adaptive_step(f, a, b, whole, tol, 0)
}

const MAX_DEPTH: usize = 40;

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = gl_panel(f, a, mid);
    let right = gl_panel(f, mid, b);
    let refined = left + right;
    if !refined.is_finite() {
        return Err(SdtError::Integration(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    if (refined - whole).abs() <= tol.max(1e-15 * refined.abs()) {
        return Ok(refined);
    }
    if depth >= MAX_DEPTH {
        return Err(SdtError::Integration(format!(
            "adaptive quadrature did not settle on [{a}, {b}] (difference {:.3e})",
            (refined - whole).abs()
        )));
    }
    Ok(adaptive_step(f, a, mid, left, 0.5 * tol, depth + 1)?
        + adaptive_step(f, mid, b, right, 0.5 * tol, depth + 1)?)
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (xs, ws) = adaptive_rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    xs.iter()
        .zip(ws)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}
