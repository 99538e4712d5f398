//! Parametric model families, constraint sets and kernel-smoothed models.

mod constraint;
mod normal;
mod poisson;
mod smoothing;

use std::fmt;

use rand::RngCore;

use crate::asymptotics::DpdMatrices;
use crate::divergence::TuningParams;
use crate::error::Result;
use crate::quadrature::Grid;

pub use constraint::{make_affine_constraint, ConstraintSet};
pub use normal::{make_normal_fixed_sigma, make_normal_model, NormalModel};
pub use poisson::{make_poisson_model, PoissonModel};
pub use smoothing::{is_transparent, smooth_model, Kernel, SmoothedModel, Transparency};

/// Mass beyond the truncation point of a discrete support.
pub const TRUNCATION_MASS: f64 = 1e-12;

/// Half-width of continuous integration windows, in scale units.
pub const WINDOW_SCALES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// `{0, 1, 2, ...}`, truncated per member where the upper tail drops below [`TRUNCATION_MASS`].
    DiscreteCounting,
    ContinuousInterval { lower: f64, upper: f64 },
}

impl Support {
    pub fn is_discrete(&self) -> bool {
        matches!(self, Support::DiscreteCounting)
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::DiscreteCounting => x >= 0.0 && x.fract() == 0.0 && x.is_finite(),
            Support::ContinuousInterval { lower, upper } => x >= lower && x <= upper && x.is_finite(),
        }
    }
}

/// The nodes and weights over which model integrals are evaluated.
#[derive(Debug, Clone)]
pub enum Domain {
    /// Points `0..=max` with unit weights.
    Counting { nodes: Vec<f64>, weights: Vec<f64> },
    Continuous(Grid),
}

impl Domain {
    pub fn counting(max: usize) -> Self {
        Domain::Counting {
            nodes: (0..=max).map(|k| k as f64).collect(),
            weights: vec![1.0; max + 1],
        }
    }

    pub fn nodes(&self) -> &[f64] {
        match self {
            Domain::Counting { nodes, .. } => nodes,
            Domain::Continuous(g) => g.nodes(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            Domain::Counting { weights, .. } => weights,
            Domain::Continuous(g) => g.weights(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes().is_empty()
    }

    pub fn integrate_fn<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes()
            .iter()
            .zip(self.weights())
            .map(|(&x, w)| w * f(x))
            .sum()
    }
}

/// A `p`-dimensional parametric family of densities on the real line.
///
/// Parameters are exposed in their natural coordinates; optimizers work on
/// the unconstrained "free" coordinates given by [`ParametricModel::to_free`].
/// The transform acts coordinatewise.
pub trait ParametricModel: fmt::Debug + Send + Sync {
    fn name(&self) -> String;

    fn param_names(&self) -> &[&'static str];

    fn dim(&self) -> usize {
        self.param_names().len()
    }

    fn support(&self) -> Support;

    fn in_parameter_space(&self, theta: &[f64]) -> bool;

    fn log_density(&self, theta: &[f64], x: f64) -> f64;

    fn density(&self, theta: &[f64], x: f64) -> f64 {
        self.log_density(theta, x).exp()
    }

    /// `∇_θ log f_θ(x)`.
    fn score(&self, theta: &[f64], x: f64) -> Vec<f64>;

    fn to_free(&self, theta: &[f64]) -> Vec<f64>;

    fn from_free(&self, z: &[f64]) -> Vec<f64>;

    /// `dθ_i/dz_i` at free coordinates `z`.
    fn free_derivative(&self, z: &[f64]) -> Vec<f64>;

    /// Moment-based starting values from a weighted sample; further entries are
    /// optional alternative starts.
    fn initial_estimates(&self, atoms: &[f64], weights: &[f64]) -> Vec<Vec<f64>>;

    /// Perturbation size per free coordinate used to spread multistarts.
    fn start_spread(&self, theta: &[f64]) -> Vec<f64>;

    /// Integration domain covering every listed member.
    fn domain(&self, thetas: &[&[f64]]) -> Domain;

    fn draw(&self, theta: &[f64], rng: &mut dyn RngCore) -> f64;

    /// `S(f_θ1, f_θ2)` in closed form, when available.
    fn divergence_closed_form(
        &self,
        _theta1: &[f64],
        _theta2: &[f64],
        _tp: &TuningParams,
    ) -> Option<Result<f64>> {
        None
    }

    /// `(∫ f^(1+β), ∫ u f^(1+β))` in closed form, when available.
    fn power_integral_closed_form(&self, _theta: &[f64], _beta: f64) -> Option<(f64, Vec<f64>)> {
        None
    }

    fn dpd_matrices_closed_form(&self, _theta: &[f64], _beta: f64) -> Option<DpdMatrices> {
        None
    }

    /// Density and score of the member smoothed by a kernel of the given bandwidth.
    fn smoothed_closed_form(
        &self,
        _kernel: Kernel,
        _bandwidth: f64,
        _theta: &[f64],
        _x: f64,
    ) -> Option<(f64, Vec<f64>)> {
        None
    }

    /// `Some(true)` when the kernel is known to be transparent for this family.
    fn kernel_transparency(&self, _kernel: Kernel) -> Option<bool> {
        None
    }
}

/// `(∫ f^(1+β), ∫ u f^(1+β))`, closed form or quadrature.
pub fn power_integral(model: &dyn ParametricModel, theta: &[f64], beta: f64) -> (f64, Vec<f64>) {
    if let Some(v) = model.power_integral_closed_form(theta, beta) {
        return v;
    }
    power_integral_quadrature(model, theta, beta)
}

pub fn power_integral_quadrature(
    model: &dyn ParametricModel,
    theta: &[f64],
    beta: f64,
) -> (f64, Vec<f64>) {
    let domain = model.domain(&[theta]);
    let mut total = 0.0;
    let mut xi = vec![0.0; model.dim()];
    for (&x, &w) in domain.nodes().iter().zip(domain.weights()) {
        let fp = (model.log_density(theta, x) * (1.0 + beta)).exp();
        if fp == 0.0 {
            continue;
        }
        total += w * fp;
        for (acc, u) in xi.iter_mut().zip(model.score(theta, x)) {
            *acc += w * fp * u;
        }
    }
    (total, xi)
}
