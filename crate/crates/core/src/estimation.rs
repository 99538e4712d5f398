//! Unrestricted and restricted minimum-divergence estimation.
//!
//! Three routes share one optimizer driver:
//!
//! * empirical DPD (`τ = 0`): minimizes `∫ f^(1+β) − (1+β)/β · Σ w_i (f(x_i)^β − 1)`
//!   over a weighted measure, which needs no density estimate;
//! * discrete: `S_(β,τ)(r_n, f_θ)` with relative frequencies `r_n`;
//! * Basu–Lindsay: `S_(β,τ)(g*_n, f*_θ)` with both sides kernel-smoothed.
//!
//! Parameters are optimized in the model's free coordinates. Coordinate
//! restrictions are eliminated, other affine restrictions are handled through
//! a null-space parameterization, and nonlinear ones by an augmented
//! Lagrangian. Lagrange multipliers solve `Hλ = −∇F` in the least-squares sense.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::{default_bandwidth, default_kde_grid, kernel_density, relative_frequency, Sample, WeightedMeasure};
use crate::divergence::{expm1_ratio, pointwise, residual_weight, DensityRep, TuningParams};
use crate::error::{Result, SdtError};
use crate::model::{power_integral, smooth_model, ConstraintSet, ParametricModel, SmoothedModel};
use crate::optim::{bfgs, minimize, OptimOptions, Problem};

/// Feasibility tolerance on `|h(θ)|∞` for restricted fits.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Route {
    /// Empirical density power divergence objective (requires `τ = 0`).
    Empirical,
    /// Relative frequencies on a counting support.
    Discrete,
    /// Kernel-smoothed data and model; `None` selects the default bandwidth rule.
    BasuLindsay { bandwidth: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationConfig {
    pub beta: f64,
    pub tau: f64,
    pub route: Route,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub multistart: usize,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            beta: 0.0,
            tau: 0.0,
            route: Route::Empirical,
            tolerance: 1e-9,
            max_iterations: 500,
            multistart: 5,
            seed: 0,
        }
    }
}

impl EstimationConfig {
    pub fn mdpde(beta: f64) -> Self {
        EstimationConfig {
            beta,
            ..Default::default()
        }
    }

    pub fn tuning(&self) -> Result<TuningParams> {
        TuningParams::new(self.beta, self.tau)
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SdtError::Domain(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.tolerance > 0.0) {
            return Err(SdtError::Domain(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.route == Route::Empirical && self.tau != 0.0 {
            return Err(SdtError::Unsupported(
                "the empirical route minimizes the density power divergence and needs tau = 0".into(),
            ));
        }
        if self.route != Route::Empirical {
            self.tuning()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub objective: f64,
    pub lagrange: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// An objective in natural parameter coordinates.
pub(crate) trait ThetaObjective: Sync {
    fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)>;
}

/// Empirical DPD objective over a weighted measure.
pub(crate) struct DpdObjective<'a> {
    pub model: &'a dyn ParametricModel,
    pub atoms: &'a [f64],
    pub weights: &'a [f64],
    pub beta: f64,
}

impl ThetaObjective for DpdObjective<'_> {
    fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let b = self.beta;
        let (integral, xi) = power_integral(self.model, theta, b);
        let mut data_term = 0.0;
        let mut grad: Vec<f64> = xi.iter().map(|v| (1.0 + b) * v).collect();
        for (&x, &w) in self.atoms.iter().zip(self.weights) {
            if w == 0.0 {
                continue;
            }
            let l = self.model.log_density(theta, x);
            if !l.is_finite() {
                if b > 0.0 && l == f64::NEG_INFINITY {
                    data_term -= w / b;
                    continue;
                }
                return None;
            }
            data_term += w * expm1_ratio(b, l);
            let fb = (b * l).exp();
            for (g, u) in grad.iter_mut().zip(self.model.score(theta, x)) {
                *g -= (1.0 + b) * w * fb * u;
            }
        }
        let value = integral - (1.0 + b) * data_term;
        value.is_finite().then_some((value, grad))
    }
}

/// `Σ_x I(g(x), f_θ(x))` over fixed nodes with quadrature weights.
pub(crate) struct TabulatedObjective<'a> {
    pub nodes: Vec<f64>,
    pub node_weights: Vec<f64>,
    pub g: Vec<f64>,
    pub tp: TuningParams,
    pub family: Family<'a>,
}

pub(crate) enum Family<'a> {
    Plain(&'a dyn ParametricModel),
    Smoothed(SmoothedModel<'a>),
}

impl Family<'_> {
    fn evaluate(&self, theta: &[f64], xs: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        match self {
            Family::Plain(m) => xs.iter().map(|&x| (m.density(theta, x), m.score(theta, x))).unzip(),
            Family::Smoothed(s) => s.evaluate(theta, xs),
        }
    }
}

impl ThetaObjective for TabulatedObjective<'_> {
    fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (f, u) = self.family.evaluate(theta, &self.nodes);
        let one_g = 1.0 + self.tp.gamma();
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for i in 0..self.nodes.len() {
            let w = self.node_weights[i];
            value += w * pointwise(self.g[i], f[i], &self.tp)?;
            let rw = residual_weight(self.g[i], f[i], &self.tp)?;
            if rw != 0.0 {
                for (gr, ui) in grad.iter_mut().zip(&u[i]) {
                    *gr -= one_g * w * rw * ui;
                }
            }
        }
        value.is_finite().then_some((value, grad))
    }
}

/// How optimizer coordinates map to natural parameters.
enum Param {
    /// All coordinates free (through the model's transform).
    Free,
    /// Listed coordinates free, the rest held at `template`.
    Fixed { free: Vec<usize>, template: Vec<f64> },
    /// `θ = particular + basis · z` in natural coordinates.
    Affine { particular: DVector<f64>, basis: DMatrix<f64> },
}

struct Reparam<'a> {
    model: &'a dyn ParametricModel,
    objective: &'a dyn ThetaObjective,
    param: &'a Param,
    /// Augmented-Lagrangian terms `(constraints, μ, ρ)`.
    penalty: Option<(&'a ConstraintSet, Vec<f64>, f64)>,
}

impl Reparam<'_> {
    fn theta(&self, z: &[f64]) -> Vec<f64> {
        match self.param {
            Param::Free => self.model.from_free(z),
            Param::Fixed { free, template } => {
                let mut full_z = self.model.to_free(template);
                for (k, &i) in free.iter().enumerate() {
                    full_z[i] = z[k];
                }
                let mut theta = self.model.from_free(&full_z);
                for (i, t) in theta.iter_mut().enumerate() {
                    if !free.contains(&i) {
                        *t = template[i];
                    }
                }
                theta
            }
            Param::Affine { particular, basis } => {
                (particular + basis * DVector::from_column_slice(z)).iter().copied().collect()
            }
        }
    }

    fn z_of(&self, theta: &[f64]) -> Option<Vec<f64>> {
        match self.param {
            Param::Free => Some(self.model.to_free(theta)),
            Param::Fixed { free, template } => {
                let mut t = template.clone();
                for &i in free {
                    t[i] = theta[i];
                }
                if !self.model.in_parameter_space(&t) {
                    return None;
                }
                let z = self.model.to_free(&t);
                Some(free.iter().map(|&i| z[i]).collect())
            }
            Param::Affine { particular, basis } => {
                let z = basis.transpose() * (DVector::from_column_slice(theta) - particular);
                let z: Vec<f64> = z.iter().copied().collect();
                self.model.in_parameter_space(&self.theta(&z)).then_some(z)
            }
        }
    }

    /// `dθ_i/dz_i` for the coordinatewise parameterizations.
    fn chain(&self, z: &[f64]) -> Vec<f64> {
        match self.param {
            Param::Free => self.model.free_derivative(z),
            Param::Fixed { free, template } => {
                let mut full_z = self.model.to_free(template);
                for (k, &i) in free.iter().enumerate() {
                    full_z[i] = z[k];
                }
                let d = self.model.free_derivative(&full_z);
                free.iter().map(|&i| d[i]).collect()
            }
            Param::Affine { .. } => vec![1.0; z.len()],
        }
    }

    /// Value and natural-coordinate gradient, including penalty terms.
    fn theta_eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        if !self.model.in_parameter_space(theta) {
            return None;
        }
        let (mut v, mut g) = self.objective.value_grad(theta)?;
        if let Some((c, mu, rho)) = &self.penalty {
            let h = c.h(theta);
            let hj = c.jacobian(theta);
            let coef: DVector<f64> = DVector::from_column_slice(mu) + &h * *rho;
            v += DVector::from_column_slice(mu).dot(&h) + 0.5 * rho * h.norm_squared();
            let add = hj * coef;
            for (gi, a) in g.iter_mut().zip(add.iter()) {
                *gi += a;
            }
        }
        Some((v, g))
    }
}

impl Problem for Reparam<'_> {
    fn eval(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let theta = self.theta(z);
        let (v, g) = self.theta_eval(&theta)?;
        let gz = match self.param {
            Param::Free => g.iter().zip(self.chain(z)).map(|(a, b)| a * b).collect(),
            Param::Fixed { free, .. } => free.iter().zip(self.chain(z)).map(|(&i, d)| g[i] * d).collect(),
            Param::Affine { basis, .. } => (basis.transpose() * DVector::from_vec(g)).iter().copied().collect(),
        };
        Some((v, gz))
    }

    /// Max-norm of the gradient projected on the free directions, in natural coordinates.
    fn measure(&self, z: &[f64], gz: &[f64]) -> f64 {
        match self.param {
            Param::Affine { basis, .. } => (basis * DVector::from_column_slice(gz)).amax(),
            _ => gz
                .iter()
                .zip(self.chain(z))
                .fold(0.0f64, |m, (g, d)| m.max((g / d).abs())),
        }
    }
}

/// Least-squares multipliers and the residual `‖∇F + Hλ‖∞`.
fn lagrange_and_residual(grad: &[f64], h: Option<&DMatrix<f64>>) -> (Vec<f64>, f64) {
    let g = DVector::from_column_slice(grad);
    match h {
        None => (Vec::new(), g.amax()),
        Some(h) => {
            let hth = h.transpose() * h;
            let lambda = match hth.cholesky() {
                Some(ch) => -ch.solve(&(h.transpose() * &g)),
                None => DVector::zeros(h.ncols()),
            };
            let residual = (&g + h * &lambda).amax();
            (lambda.iter().copied().collect(), residual)
        }
    }
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

struct Candidate {
    theta: Vec<f64>,
    value: f64,
    measure: f64,
    iterations: usize,
    converged: bool,
}

/// Multistart driver shared by every route.
pub(crate) fn optimize(
    model: &dyn ParametricModel,
    objective: &dyn ThetaObjective,
    constraints: Option<&ConstraintSet>,
    inits: &[Vec<f64>],
    cfg: &EstimationConfig,
) -> Result<FitResult> {
    let p = model.dim();
    if let Some(c) = constraints {
        if c.p() != p {
            return Err(SdtError::Shape(format!(
                "constraints are for p = {}, model has p = {p}",
                c.p()
            )));
        }
    }
    let param = match constraints {
        None => Param::Free,
        Some(c) => match c.fixed_coordinates() {
            Some(fixed) => {
                let mut template = inits[0].clone();
                for &(i, v) in &fixed {
                    template[i] = v;
                }
                if !model.in_parameter_space(&template) {
                    return Err(SdtError::Constraint(format!(
                        "restriction values {fixed:?} are outside the parameter space"
                    )));
                }
                let free: Vec<usize> = (0..p).filter(|i| !fixed.iter().any(|f| f.0 == *i)).collect();
                Param::Fixed { free, template }
            }
            None => match c.affine_parameterization() {
                Some((particular, basis)) => Param::Affine { particular, basis },
                None => Param::Free,
            },
        },
    };
    let nonlinear = constraints.filter(|c| !c.is_affine());

    // fully restricted: nothing to optimize
    if let Param::Fixed { free, template } = &param {
        if free.is_empty() {
            let (value, grad) = objective.value_grad(template).ok_or_else(|| {
                SdtError::Evaluation(format!("objective is not finite at {template:?}"))
            })?;
            let h = constraints.map(|c| c.jacobian(template));
            let (lagrange, grad_norm) = lagrange_and_residual(&grad, h.as_ref());
            return Ok(FitResult {
                theta_hat: template.clone(),
                objective: value,
                lagrange,
                grad_norm,
                iterations: 0,
                converged: true,
            });
        }
    }

    let base = Reparam {
        model,
        objective,
        param: &param,
        penalty: None,
    };
    let starts = start_points(model, &base, inits, cfg);
    if starts.is_empty() {
        return Err(SdtError::Evaluation("no valid starting point for the optimizer".into()));
    }
    let opts = OptimOptions {
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_iterations,
    };
    let mut candidates = Vec::with_capacity(starts.len());
    for z0 in &starts {
        let outcome = match nonlinear {
            None => minimize(&base, z0, &opts).map(|o| Candidate {
                theta: base.theta(&o.x),
                value: o.value,
                measure: o.measure,
                iterations: o.iterations,
                converged: o.converged,
            }),
            Some(c) => augmented_lagrangian(&base, c, z0, &opts),
        };
        if let Some(cand) = outcome {
            candidates.push(cand);
        }
    }
    let pick = |pool: &mut dyn Iterator<Item = &Candidate>| -> Option<usize> {
        let mut best: Option<&Candidate> = None;
        for c in pool {
            best = match best {
                None => Some(c),
                Some(b) => {
                    let tie = (c.value - b.value).abs() <= 1e-12 * (1.0 + b.value.abs());
                    if (!tie && c.value < b.value) || (tie && lexicographic_less(&c.theta, &b.theta)) {
                        Some(c)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best.map(|b| candidates.iter().position(|c| std::ptr::eq(c, b)).expect("member"))
    };
    let chosen = pick(&mut candidates.iter().filter(|c| c.converged));
    let Some(idx) = chosen else {
        let best = pick(&mut candidates.iter());
        return Err(match best {
            Some(i) => SdtError::Convergence {
                iterations: candidates[i].iterations,
                grad_norm: candidates[i].measure,
                theta: candidates[i].theta.clone(),
            },
            None => SdtError::Convergence {
                iterations: 0,
                grad_norm: f64::INFINITY,
                theta: inits[0].clone(),
            },
        });
    };
    let best = &candidates[idx];
    let (value, grad) = objective
        .value_grad(&best.theta)
        .ok_or_else(|| SdtError::Evaluation(format!("objective is not finite at {:?}", best.theta)))?;
    let h = constraints.map(|c| c.jacobian(&best.theta));
    let (lagrange, grad_norm) = lagrange_and_residual(&grad, h.as_ref());
    let feasible = constraints.map_or(true, |c| c.is_satisfied(&best.theta, FEASIBILITY_TOLERANCE));
    Ok(FitResult {
        theta_hat: best.theta.clone(),
        objective: value,
        lagrange,
        grad_norm,
        iterations: best.iterations,
        converged: grad_norm <= cfg.tolerance && feasible,
    })
}

fn start_points(
    model: &dyn ParametricModel,
    reparam: &Reparam<'_>,
    inits: &[Vec<f64>],
    cfg: &EstimationConfig,
) -> Vec<Vec<f64>> {
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let Some(center) = inits.iter().find_map(|t| {
        if model.in_parameter_space(t) {
            reparam.z_of(t)
        } else {
            None
        }
    }) else {
        return starts;
    };
    let spread: Vec<f64> = match reparam.param {
        Param::Free => model.start_spread(&reparam.theta(&center)),
        Param::Fixed { free, .. } => {
            let s = model.start_spread(&reparam.theta(&center));
            free.iter().map(|&i| s[i]).collect()
        }
        Param::Affine { .. } => center.iter().map(|c| 0.5 * (1.0 + c.abs())).collect(),
    };
    let valid = |z: &Vec<f64>| reparam.eval(z).is_some();
    starts.push(center.clone());
    for i in 0..center.len() {
        for sign in [1.0, -1.0] {
            let mut z = center.clone();
            z[i] += sign * spread[i];
            if valid(&z) {
                starts.push(z);
            }
        }
    }
    for alt in inits.iter().skip(1) {
        if let Some(z) = model.in_parameter_space(alt).then(|| reparam.z_of(alt)).flatten() {
            if valid(&z) {
                starts.push(z);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut attempts = 0;
    while starts.len() < cfg.multistart && attempts < 50 * cfg.multistart.max(1) {
        attempts += 1;
        let z: Vec<f64> = center
            .iter()
            .zip(&spread)
            .map(|(c, s)| c + s * rng.random_range(-1.0..1.0))
            .collect();
        if valid(&z) {
            starts.push(z);
        }
    }
    starts
}

fn augmented_lagrangian(
    base: &Reparam<'_>,
    constraints: &ConstraintSet,
    z0: &[f64],
    opts: &OptimOptions,
) -> Option<Candidate> {
    let mut mu = vec![0.0; constraints.r()];
    let mut rho = 10.0;
    let mut z = z0.to_vec();
    let mut previous = f64::INFINITY;
    let mut iterations = 0;
    let mut last = None;
    for _ in 0..60 {
        let problem = Reparam {
            model: base.model,
            objective: base.objective,
            param: base.param,
            penalty: Some((constraints, mu.clone(), rho)),
        };
        let out = bfgs(&problem, &z, opts.max_iterations, opts.tolerance)?;
        iterations += out.iterations;
        z = out.x.clone();
        let theta = base.theta(&z);
        let h = constraints.h(&theta);
        let infeasibility = h.amax();
        let (value, _) = base.objective.value_grad(&theta)?;
        last = Some(Candidate {
            theta,
            value,
            measure: out.measure,
            iterations,
            converged: out.converged && infeasibility <= FEASIBILITY_TOLERANCE,
        });
        if infeasibility <= FEASIBILITY_TOLERANCE && out.converged {
            break;
        }
        for (m, hv) in mu.iter_mut().zip(h.iter()) {
            *m += rho * hv;
        }
        if infeasibility > 0.25 * previous {
            rho *= 2.0;
        }
        previous = infeasibility;
    }
    last
}

fn check_sample(sample: &Sample, model: &dyn ParametricModel) -> Result<()> {
    sample.check_support(model)
}

/// Minimum-DPD fit of order `beta` (maximum likelihood at `beta = 0`).
pub fn mdpde_fit(sample: &Sample, model: &dyn ParametricModel, beta: f64) -> Result<FitResult> {
    fit(sample, model, None, &EstimationConfig::mdpde(beta))
}

/// Minimum-DPD fit under `h(θ) = 0`.
pub fn restricted_mdpde_fit(
    sample: &Sample,
    model: &dyn ParametricModel,
    beta: f64,
    constraints: &ConstraintSet,
) -> Result<FitResult> {
    fit(sample, model, Some(constraints), &EstimationConfig::mdpde(beta))
}

/// Minimum-DPD fit to an arbitrary weighted measure (used for functionals at `F_θ`
/// and point-contaminated distributions).
pub fn mdpde_fit_measure(
    measure: &WeightedMeasure,
    model: &dyn ParametricModel,
    constraints: Option<&ConstraintSet>,
    cfg: &EstimationConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let objective = DpdObjective {
        model,
        atoms: measure.atoms(),
        weights: measure.weights(),
        beta: cfg.beta,
    };
    let inits = model.initial_estimates(measure.atoms(), measure.weights());
    optimize(model, &objective, constraints, &inits, cfg)
}

/// Fit by the route selected in `cfg`.
pub fn fit(
    sample: &Sample,
    model: &dyn ParametricModel,
    constraints: Option<&ConstraintSet>,
    cfg: &EstimationConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_sample(sample, model)?;
    match cfg.route {
        Route::Empirical => mdpde_fit_measure(&WeightedMeasure::empirical(sample), model, constraints, cfg),
        Route::Discrete => {
            let inits = model.initial_estimates(sample.observations(), &vec![1.0; sample.n()]);
            let max_obs = sample.observations().iter().fold(0.0f64, |m, &x| m.max(x)) as usize;
            let mut limit = discrete_limit(model, &inits[0], max_obs)?;
            loop {
                let table = relative_frequency(sample, limit)?;
                let result = fit_discrete_table(&table, model, constraints, cfg, &inits)?;
                let needed = discrete_limit(model, &result.theta_hat, max_obs)?;
                if needed <= limit {
                    return Ok(result);
                }
                limit = 2 * needed;
            }
        }
        Route::BasuLindsay { bandwidth } => {
            let h = match bandwidth {
                Some(h) => h,
                None => default_bandwidth(sample)?,
            };
            let smoothed = smooth_model(model, h)?;
            let grid = default_kde_grid(sample, h)?;
            let gstar = kernel_density(sample, h, &grid)?;
            let inits = model.initial_estimates(sample.observations(), &vec![1.0; sample.n()]);
            fit_smoothed_with(&gstar, smoothed, constraints, cfg, &inits)
        }
    }
}

fn discrete_limit(model: &dyn ParametricModel, theta: &[f64], max_obs: usize) -> Result<usize> {
    if !model.support().is_discrete() {
        return Err(SdtError::Unsupported(format!(
            "the discrete route needs a counting support; {} is continuous",
            model.name()
        )));
    }
    let model_limit = match model.domain(&[theta]) {
        crate::model::Domain::Counting { nodes, .. } => nodes.len().saturating_sub(1),
        _ => 0,
    };
    Ok(2 * model_limit.max(max_obs) + 20)
}

fn fit_discrete_table(
    table: &DensityRep,
    model: &dyn ParametricModel,
    constraints: Option<&ConstraintSet>,
    cfg: &EstimationConfig,
    inits: &[Vec<f64>],
) -> Result<FitResult> {
    let objective = TabulatedObjective {
        nodes: table.nodes().to_vec(),
        node_weights: vec![1.0; table.nodes().len()],
        g: table.values().to_vec(),
        tp: cfg.tuning()?,
        family: Family::Plain(model),
    };
    optimize(model, &objective, constraints, inits, cfg)
}

/// `S_(γ,λ)(g, f_θ)` minimized over θ for a probability table on the counting support.
pub fn msde_fit_table(
    table: &DensityRep,
    model: &dyn ParametricModel,
    tp: &TuningParams,
    constraints: Option<&ConstraintSet>,
) -> Result<FitResult> {
    let DensityRep::DiscreteTable { points, masses } = table else {
        return Err(SdtError::Unsupported("expected a discrete probability table".into()));
    };
    if let Some(x) = points.iter().find(|&&x| !model.support().contains(x)) {
        return Err(SdtError::Data(format!("table point {x} is outside the model support")));
    }
    let cfg = EstimationConfig {
        beta: tp.gamma(),
        tau: tp.lambda(),
        route: Route::Discrete,
        ..Default::default()
    };
    let inits = model.initial_estimates(points, masses);
    let max_point = points.iter().fold(0.0f64, |m, &x| m.max(x)) as usize;
    let mut limit = discrete_limit(model, &inits[0], max_point)?;
    loop {
        let mut full = vec![0.0; limit + 1];
        for (&x, &m) in points.iter().zip(masses) {
            full[x as usize] += m;
        }
        let padded = DensityRep::DiscreteTable {
            points: (0..=limit).map(|k| k as f64).collect(),
            masses: full,
        };
        let result = fit_discrete_table(&padded, model, constraints, &cfg, &inits)?;
        let needed = discrete_limit(model, &result.theta_hat, max_point)?;
        if needed <= limit {
            return Ok(result);
        }
        limit = 2 * needed;
    }
}

/// Minimum S-divergence fit on the counting support with relative frequencies.
pub fn msde_fit_discrete(
    sample: &Sample,
    model: &dyn ParametricModel,
    tp: &TuningParams,
    constraints: Option<&ConstraintSet>,
) -> Result<FitResult> {
    let cfg = EstimationConfig {
        beta: tp.gamma(),
        tau: tp.lambda(),
        route: Route::Discrete,
        ..Default::default()
    };
    fit(sample, model, constraints, &cfg)
}

/// Basu–Lindsay fit: `S_(γ,λ)(g*_n, f*_θ)` with a Gaussian kernel of the given
/// (or rule-of-thumb) bandwidth.
pub fn msde_fit_basu_lindsay(
    sample: &Sample,
    model: &dyn ParametricModel,
    tp: &TuningParams,
    bandwidth: Option<f64>,
    constraints: Option<&ConstraintSet>,
) -> Result<FitResult> {
    let cfg = EstimationConfig {
        beta: tp.gamma(),
        tau: tp.lambda(),
        route: Route::BasuLindsay { bandwidth },
        ..Default::default()
    };
    fit(sample, model, constraints, &cfg)
}

/// Basu–Lindsay fit to an already smoothed density `g*` tabulated on a grid.
pub fn msde_fit_smoothed(
    gstar: &DensityRep,
    smoothed: SmoothedModel<'_>,
    tp: &TuningParams,
    constraints: Option<&ConstraintSet>,
) -> Result<FitResult> {
    let cfg = EstimationConfig {
        beta: tp.gamma(),
        tau: tp.lambda(),
        route: Route::BasuLindsay {
            bandwidth: Some(smoothed.bandwidth()),
        },
        ..Default::default()
    };
    let weights: Vec<f64> = (0..gstar.nodes().len())
        .map(|i| gstar.weight(i) * gstar.values()[i])
        .collect();
    let inits = smoothed.base().initial_estimates(gstar.nodes(), &weights);
    fit_smoothed_with(gstar, smoothed, constraints, &cfg, &inits)
}

fn fit_smoothed_with(
    gstar: &DensityRep,
    smoothed: SmoothedModel<'_>,
    constraints: Option<&ConstraintSet>,
    cfg: &EstimationConfig,
    inits: &[Vec<f64>],
) -> Result<FitResult> {
    let DensityRep::GridFunction { grid, values } = gstar else {
        return Err(SdtError::Unsupported("smoothed fits need a grid density".into()));
    };
    let model = smoothed.base();
    let objective = TabulatedObjective {
        nodes: grid.nodes().to_vec(),
        node_weights: grid.weights().to_vec(),
        g: values.clone(),
        tp: cfg.tuning()?,
        family: Family::Smoothed(smoothed.clone()),
    };
    optimize(model, &objective, constraints, inits, cfg)
}

/// `‖∇F(θ̂) + H(θ̂)λ‖∞` at a reported fit: the estimating-equation residual
/// in the objective-gradient scale, with `λ` the fit's multipliers.
pub fn estimating_equation_residual(
    fit_result: &FitResult,
    sample: &Sample,
    model: &dyn ParametricModel,
    cfg: &EstimationConfig,
    constraints: Option<&ConstraintSet>,
) -> Result<f64> {
    cfg.validate()?;
    let theta = &fit_result.theta_hat;
    let grad = match cfg.route {
        Route::Empirical => {
            let m = WeightedMeasure::empirical(sample);
            DpdObjective {
                model,
                atoms: m.atoms(),
                weights: m.weights(),
                beta: cfg.beta,
            }
            .value_grad(theta)
        }
        Route::Discrete => {
            let max_obs = sample.observations().iter().fold(0.0f64, |m, &x| m.max(x)) as usize;
            let limit = discrete_limit(model, theta, max_obs)?;
            let table = relative_frequency(sample, limit)?;
            TabulatedObjective {
                nodes: table.nodes().to_vec(),
                node_weights: vec![1.0; table.nodes().len()],
                g: table.values().to_vec(),
                tp: cfg.tuning()?,
                family: Family::Plain(model),
            }
            .value_grad(theta)
        }
        Route::BasuLindsay { bandwidth } => {
            let h = match bandwidth {
                Some(h) => h,
                None => default_bandwidth(sample)?,
            };
            let grid = default_kde_grid(sample, h)?;
            let gstar = kernel_density(sample, h, &grid)?;
            TabulatedObjective {
                nodes: grid.nodes().to_vec(),
                node_weights: grid.weights().to_vec(),
                g: gstar.values().to_vec(),
                tp: cfg.tuning()?,
                family: Family::Smoothed(smooth_model(model, h)?),
            }
            .value_grad(theta)
        }
    }
    .ok_or_else(|| SdtError::Evaluation(format!("objective is not finite at {theta:?}")))?
    .1;
    let mut g = DVector::from_vec(grad);
    if let Some(c) = constraints {
        if fit_result.lagrange.len() == c.r() {
            g += c.jacobian(theta) * DVector::from_column_slice(&fit_result.lagrange);
        }
    }
    Ok(g.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_normal_model, make_poisson_model, PoissonModel};

    fn sample(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    const DATA: [f64; 9] = [-1.3, 0.2, 0.4, 0.9, 1.1, 1.6, 2.4, 3.0, 7.5];

    #[test]
    fn beta_zero_is_the_mle() {
        let s = sample(&DATA);
        let fit = mdpde_fit(&s, &make_normal_model(), 0.0).unwrap();
        let n = DATA.len() as f64;
        let mean = DATA.iter().sum::<f64>() / n;
        let sd = (DATA.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - mean).abs() < 1e-8);
        assert!((fit.theta_hat[1] - sd).abs() < 1e-8);
        assert!(fit.lagrange.is_empty());
    }

    #[test]
    fn restricted_mle_of_sigma() {
        let s = sample(&DATA);
        let c = ConstraintSet::fix(2, &[(0, 1.0)]).unwrap();
        let fit = restricted_mdpde_fit(&s, &make_normal_model(), 0.0, &c).unwrap();
        let expected = (DATA.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / DATA.len() as f64).sqrt();
        assert_eq!(fit.theta_hat[0], 1.0);
        assert!((fit.theta_hat[1] - expected).abs() < 1e-8);
        assert_eq!(fit.lagrange.len(), 1);
        assert!(fit.grad_norm <= 1e-9);
    }

    #[test]
    fn fully_restricted_fit_returns_the_point() {
        let s = sample(&DATA);
        let c = ConstraintSet::fix(2, &[(0, 1.0), (1, 2.0)]).unwrap();
        let fit = restricted_mdpde_fit(&s, &make_normal_model(), 0.3, &c).unwrap();
        assert_eq!(fit.theta_hat, vec![1.0, 2.0]);
        assert_eq!(fit.iterations, 0);
        assert!(fit.grad_norm < 1e-12);
    }

    #[test]
    fn general_affine_and_nonlinear_restrictions_agree() {
        // μ = σ written as an affine and as a (trivially) nonlinear restriction
        let s = sample(&DATA);
        let m = make_normal_model();
        let affine = crate::model::make_affine_constraint(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            vec![0.0],
        )
        .unwrap();
        let nonlinear = ConstraintSet::nonlinear(2, 1, |t: &[f64]| vec![t[0] - t[1]], None).unwrap();
        let a = restricted_mdpde_fit(&s, &m, 0.2, &affine).unwrap();
        let b = restricted_mdpde_fit(&s, &m, 0.2, &nonlinear).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.theta_hat[0] - a.theta_hat[1]).abs() < 1e-12);
        assert!((a.theta_hat[0] - b.theta_hat[0]).abs() < 1e-6);
        assert!((a.objective - b.objective).abs() < 1e-9);
    }

    #[test]
    fn poisson_discrete_mle_is_the_mean() {
        let s = sample(&[0.0, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
        let tp = TuningParams::new(0.0, 0.0).unwrap();
        let fit = msde_fit_discrete(&s, &make_poisson_model(), &tp, None).unwrap();
        assert!((fit.theta_hat[0] - 21.0 / 8.0).abs() < 1e-8);
    }

    #[test]
    fn discrete_dpd_matches_empirical_route() {
        let s = sample(&[0.0, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0, 9.0]);
        let tp = TuningParams::new(0.4, 0.0).unwrap();
        let m = make_poisson_model();
        let a = msde_fit_discrete(&s, &m, &tp, None).unwrap();
        let b = mdpde_fit(&s, &m, 0.4).unwrap();
        assert!((a.theta_hat[0] - b.theta_hat[0]).abs() < 1e-6);
    }

    #[test]
    fn exact_table_recovers_parameter() {
        let m = make_poisson_model();
        let k = PoissonModel::truncation_point(3.2);
        let points: Vec<f64> = (0..=k).map(|j| j as f64).collect();
        let mut masses: Vec<f64> = points.iter().map(|&x| m.density(&[3.2], x)).collect();
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|v| *v /= total);
        let table = DensityRep::discrete(points, masses).unwrap();
        for (g, l) in [(0.5, 0.0), (0.3, -0.5), (0.7, 1.0)] {
            let fit = msde_fit_table(&table, &m, &TuningParams::new(g, l).unwrap(), None).unwrap();
            assert!((fit.theta_hat[0] - 3.2).abs() < 1e-6, "{g} {l}: {:?}", fit.theta_hat);
        }
    }

    #[test]
    fn residual_matches_grad_norm_for_unconstrained_fit() {
        let s = sample(&DATA);
        let m = make_normal_model();
        let cfg = EstimationConfig::mdpde(0.3);
        let f = fit(&s, &m, None, &cfg).unwrap();
        let r = estimating_equation_residual(&f, &s, &m, &cfg, None).unwrap();
        assert!((r - f.grad_norm).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = sample(&DATA);
        let m = make_normal_model();
        let cfg = EstimationConfig { seed: 7, multistart: 8, ..EstimationConfig::mdpde(0.5) };
        assert_eq!(fit(&s, &m, None, &cfg).unwrap(), fit(&s, &m, None, &cfg).unwrap());
    }

    #[test]
    fn empirical_route_rejects_tau() {
        let s = sample(&DATA);
        let cfg = EstimationConfig { tau: 0.5, ..EstimationConfig::mdpde(0.5) };
        assert!(matches!(fit(&s, &make_normal_model(), None, &cfg), Err(SdtError::Unsupported(_))));
    }
}
