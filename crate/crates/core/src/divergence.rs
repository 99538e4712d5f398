//! The two-parameter S-divergence family and its building blocks.
//!
//! For densities `g` and `f`,
//!
//! ```text
//! S(g, f) = (1/A) ∫ f^(1+γ) − (1+γ)/(A·B) ∫ f^B g^A + (1/B) ∫ g^(1+γ)
//! A = 1 + λ(1−γ),   B = γ − λ(1−γ)
//! ```
//!
//! with the continuous limits at `A = 0` or `B = 0`. Integrals are evaluated
//! pointwise in the form `f^(1+γ)·[−E(A, l) + e^(A·l)·E(B, l)]` with
//! `l = log(g/f)` and `E(a, l) = expm1(a·l)/a`. Each pointwise term is
//! nonnegative and the limit branches fall out by replacing `E(a, l)` with `l`.

use serde::Serialize;

use crate::error::{Result, SdtError};
use crate::model::ParametricModel;
use crate::quadrature::Grid;

/// Below this magnitude `A` or `B` is treated as zero and the logarithmic
/// limit expressions are used.
pub const LIMIT_EPS: f64 = 1e-8;

/// Negative divergences above this are clamped to zero; below it they are an error.
pub const NEGATIVE_CLAMP: f64 = 1e-9;

/// Divergence parameters `(γ, λ)` together with the derived `(A, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuningParams {
    gamma: f64,
    lambda: f64,
    a: f64,
    b: f64,
}

impl TuningParams {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        let (a, b) = derive_ab(gamma, lambda)?;
        Ok(TuningParams {
            gamma,
            lambda,
            a,
            b,
        })
    }

    /// The density power divergence of order `gamma` (`λ = 0`).
    pub fn dpd(gamma: f64) -> Result<Self> {
        Self::new(gamma, 0.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn a_is_zero(&self) -> bool {
        self.a.abs() <= LIMIT_EPS
    }

    pub fn b_is_zero(&self) -> bool {
        self.b.abs() <= LIMIT_EPS
    }
}

/// `A = 1 + λ(1−γ)` and `B = γ − λ(1−γ)`.
pub fn derive_ab(gamma: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SdtError::Domain(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if !lambda.is_finite() {
        return Err(SdtError::Domain(format!("lambda must be finite, got {lambda}")));
    }
    let shift = lambda * (1.0 - gamma);
    Ok((1.0 + shift, gamma - shift))
}

/// `(e^(a·l) − 1)/a`, or its limit `l` when `|a| <= LIMIT_EPS`.
#[inline]
pub(crate) fn expm1_ratio(a: f64, l: f64) -> f64 {
    if a.abs() <= LIMIT_EPS {
        l
    } else {
        (a * l).exp_m1() / a
    }
}

/// The residual adjustment `K(δ) = ((δ+1)^A − 1)/A`, with `log(1+δ)` as the `A → 0` limit.
///
/// At `δ = −1` with `A <= 0` the value is `−∞`; callers must check finiteness.
pub fn k_transform(delta: f64, a: f64) -> Result<f64> {
    if delta.is_nan() || delta < -1.0 {
        return Err(SdtError::Domain(format!("K(delta) needs delta >= -1, got {delta}")));
    }
    if delta == -1.0 {
        if a > LIMIT_EPS {
            return Ok(-1.0 / a);
        }
        return Ok(f64::NEG_INFINITY);
    }
    Ok(expm1_ratio(a, delta.ln_1p()))
}

/// Pointwise integrand of `S(g, f)` at one node; `None` when it is infinite.
#[inline]
pub(crate) fn pointwise(g: f64, f: f64, tp: &TuningParams) -> Option<f64> {
    let one_g = 1.0 + tp.gamma;
    if f > 0.0 && g > 0.0 {
        let l = (g / f).ln();
        let v = f.powf(one_g) * (-expm1_ratio(tp.a, l) + (tp.a * l).exp() * expm1_ratio(tp.b, l));
        return v.is_finite().then_some(v);
    }
    if f > 0.0 {
        // g = 0
        return (tp.a > LIMIT_EPS).then(|| f.powf(one_g) / tp.a);
    }
    if g > 0.0 {
        // f = 0
        return (tp.b > LIMIT_EPS).then(|| g.powf(one_g) / tp.b);
    }
    Some(0.0)
}

/// `K(δ)·f^(1+γ)` with `δ = g/f − 1`, i.e. the estimating-equation weight
/// multiplying the score. `∂/∂f` of the pointwise integrand equals
/// `−(1+γ)/f` times this value.
#[inline]
pub(crate) fn residual_weight(g: f64, f: f64, tp: &TuningParams) -> Option<f64> {
    let one_g = 1.0 + tp.gamma;
    if f > 0.0 && g > 0.0 {
        let v = f.powf(one_g) * expm1_ratio(tp.a, (g / f).ln());
        return v.is_finite().then_some(v);
    }
    if f > 0.0 {
        return (tp.a > LIMIT_EPS).then(|| -f.powf(one_g) / tp.a);
    }
    if g > 0.0 {
        return (tp.b > LIMIT_EPS).then_some(0.0);
    }
    Some(0.0)
}

/// A density tabulated on a discrete support or on a quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityRep {
    DiscreteTable { points: Vec<f64>, masses: Vec<f64> },
    GridFunction { grid: Grid, values: Vec<f64> },
}

impl DensityRep {
    /// Probability table on strictly increasing support points; masses must sum to 1 ± 1e−9.
    pub fn discrete(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() || points.is_empty() {
            return Err(SdtError::Shape(format!(
                "{} support points but {} masses",
                points.len(),
                masses.len()
            )));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SdtError::Domain("support points must be strictly increasing".into()));
        }
        check_nonnegative(&masses)?;
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SdtError::Domain(format!("masses sum to {total}, expected 1")));
        }
        Ok(DensityRep::DiscreteTable { points, masses })
    }

    /// Density values on a grid; the quadrature integral must be 1 ± 1e−6.
    pub fn grid(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::grid_with_tolerance(grid, values, 1e-6)
    }

    /// Like [`DensityRep::grid`] with an explicit mass tolerance.
    pub fn grid_with_tolerance(grid: Grid, values: Vec<f64>, tolerance: f64) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(SdtError::Shape(format!(
                "grid has {} nodes but {} values",
                grid.len(),
                values.len()
            )));
        }
        check_nonnegative(&values)?;
        let mass = grid.integrate(&values);
        if (mass - 1.0).abs() > tolerance {
            return Err(SdtError::Domain(format!(
                "grid density integrates to {mass}, expected 1 ± {tolerance}"
            )));
        }
        Ok(DensityRep::GridFunction { grid, values })
    }

    /// Tabulates `density` on the grid without a mass check (for truncated windows).
    pub(crate) fn grid_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        DensityRep::GridFunction { grid, values }
    }

    pub fn nodes(&self) -> &[f64] {
        match self {
            DensityRep::DiscreteTable { points, .. } => points,
            DensityRep::GridFunction { grid, .. } => grid.nodes(),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            DensityRep::DiscreteTable { masses, .. } => masses,
            DensityRep::GridFunction { values, .. } => values,
        }
    }

    /// Quadrature weight of node `i` (1 for discrete tables).
    pub fn weight(&self, i: usize) -> f64 {
        match self {
            DensityRep::DiscreteTable { .. } => 1.0,
            DensityRep::GridFunction { grid, .. } => grid.weights()[i],
        }
    }

    /// Total mass (sum or quadrature integral).
    pub fn mass(&self) -> f64 {
        match self {
            DensityRep::DiscreteTable { masses, .. } => masses.iter().sum(),
            DensityRep::GridFunction { grid, values } => grid.integrate(values),
        }
    }

    fn same_support(&self, other: &DensityRep) -> bool {
        match (self, other) {
            (
                DensityRep::DiscreteTable { points: a, .. },
                DensityRep::DiscreteTable { points: b, .. },
            ) => a == b,
            (DensityRep::GridFunction { grid: a, .. }, DensityRep::GridFunction { grid: b, .. }) => {
                a == b
            }
            _ => false,
        }
    }
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(SdtError::Domain(format!(
            "density values must be finite and nonnegative (entry {i} is {v})"
        )));
    }
    Ok(())
}

/// `S_(γ,λ)(g, f)` for two densities tabulated on the same support.
pub fn s_divergence(g: &DensityRep, f: &DensityRep, tp: &TuningParams) -> Result<f64> {
    if !g.same_support(f) {
        return Err(SdtError::Shape(
            "densities are tabulated on different supports".into(),
        ));
    }
    let nodes = g.nodes();
    let total = weighted_divergence(
        nodes,
        |i| g.weight(i),
        g.values(),
        f.values(),
        tp,
    )?;
    clamp_divergence(total)
}

pub(crate) fn weighted_divergence<W: Fn(usize) -> f64>(
    nodes: &[f64],
    weight: W,
    g: &[f64],
    f: &[f64],
    tp: &TuningParams,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..nodes.len() {
        match pointwise(g[i], f[i], tp) {
            Some(v) => total += weight(i) * v,
            None => {
                return Err(SdtError::Evaluation(format!(
                    "S-divergence is infinite at x = {} (g = {:e}, f = {:e}, A = {}, B = {})",
                    nodes[i], g[i], f[i], tp.a, tp.b
                )))
            }
        }
    }
    Ok(total)
}

pub(crate) fn clamp_divergence(value: f64) -> Result<f64> {
    if value.is_nan() {
        return Err(SdtError::Evaluation("S-divergence evaluated to NaN".into()));
    }
    if value < 0.0 {
        if value >= -NEGATIVE_CLAMP {
            return Ok(0.0);
        }
        return Err(SdtError::Evaluation(format!(
            "S-divergence evaluated to {value:e}; quadrature is inaccurate"
        )));
    }
    Ok(value)
}

/// `S_(γ,λ)(f_θ1, f_θ2)`; uses the model's closed form when it has one.
pub fn s_divergence_between_members(
    model: &dyn ParametricModel,
    theta1: &[f64],
    theta2: &[f64],
    tp: &TuningParams,
) -> Result<f64> {
    check_members(model, theta1, theta2)?;
    match model.divergence_closed_form(theta1, theta2, tp) {
        Some(v) => v,
        None => s_divergence_quadrature(model, theta1, theta2, tp),
    }
}

/// Member-to-member divergence by quadrature/summation over the model support.
pub fn s_divergence_quadrature(
    model: &dyn ParametricModel,
    theta1: &[f64],
    theta2: &[f64],
    tp: &TuningParams,
) -> Result<f64> {
    check_members(model, theta1, theta2)?;
    let domain = model.domain(&[theta1, theta2]);
    let nodes = domain.nodes();
    let g: Vec<f64> = nodes.iter().map(|&x| model.density(theta1, x)).collect();
    let f: Vec<f64> = nodes.iter().map(|&x| model.density(theta2, x)).collect();
    let total = weighted_divergence(nodes, |i| domain.weights()[i], &g, &f, tp)?;
    clamp_divergence(total)
}

fn check_members(model: &dyn ParametricModel, theta1: &[f64], theta2: &[f64]) -> Result<()> {
    for t in [theta1, theta2] {
        if t.len() != model.dim() {
            return Err(SdtError::Shape(format!(
                "parameter has length {}, model {} expects {}",
                t.len(),
                model.name(),
                model.dim()
            )));
        }
        if !model.in_parameter_space(t) {
            return Err(SdtError::Domain(format!(
                "{t:?} is outside the parameter space of {}",
                model.name()
            )));
        }
    }
    Ok(())
}
