//! Influence diagnostics for the estimators and the test, and Monte Carlo
//! level/power under point contamination.
//!
//! Contamination sequences are `(1 − ε/√n)·F_θn + (ε/√n)·δ_y` with
//! `θn = θ0` (level) or `θn = θ0 + Δ/√n` (power).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{a_gamma_matrix, dpd_matrices, noncentral_shift, null_law, restricted_projection};
use crate::density::Sample;
use crate::divergence::TuningParams;
use crate::error::{Result, SdtError, StageExt};
use crate::model::{ConstraintSet, ParametricModel};
use crate::testing::{run_sdt, TestSpec};

/// Step of the central ε-difference behind the level and power influence functions.
pub const EPSILON_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Direction {
    LevelSequence,
    PowerSequence(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub y: f64,
    pub direction: Direction,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        ContaminationSpec {
            epsilon: 0.0,
            y: 0.0,
            direction: Direction::LevelSequence,
        }
    }

    /// Contaminating mass at sample size `n`.
    pub fn mass(&self, n: usize) -> Result<f64> {
        let m = self.epsilon / (n as f64).sqrt();
        if !(self.epsilon >= 0.0 && m <= 1.0) {
            return Err(SdtError::Domain(format!(
                "contamination ε = {} gives mass {m} at n = {n}",
                self.epsilon
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Functional {
    Unrestricted,
    Restricted,
    TestSecondOrder,
    Level,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceCurve {
    pub functional: Functional,
    pub points: Vec<(f64, Vec<f64>)>,
}

impl InfluenceCurve {
    /// Evaluates `f` at every `y`; fails on the first non-finite value.
    pub fn trace<F>(functional: Functional, ys: &[f64], f: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<Vec<f64>>,
    {
        let mut points = Vec::with_capacity(ys.len());
        for &y in ys {
            let v = f(y)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SdtError::Evaluation(format!("influence value at y = {y} is not finite: {v:?}")));
            }
            points.push((y, v));
        }
        Ok(InfluenceCurve { functional, points })
    }

    /// Largest absolute component over the traced points.
    pub fn sup_norm(&self) -> f64 {
        self.points
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// `f_θ(y)^β u_θ(y) − ξ_β(θ)`.
fn psi(model: &dyn ParametricModel, theta: &[f64], beta: f64, xi: &DVector<f64>, y: f64) -> DVector<f64> {
    let fb = (beta * model.log_density(theta, y)).exp();
    DVector::from_vec(model.score(theta, y)) * fb - xi
}

/// Influence function of the minimum-DPD functional at `F_θ`: `J⁻¹(f^β u − ξ)`.
pub fn if_mdpde(y: f64, model: &dyn ParametricModel, theta: &[f64], beta: f64) -> Result<Vec<f64>> {
    let m = dpd_matrices(model, theta, beta)?;
    let ji = m.j_inverse()?;
    Ok((ji * psi(model, theta, beta, &m.xi, y)).iter().copied().collect())
}

/// Influence function of the restricted functional: `P(f^β u − ξ)`, tangent to the null set.
pub fn if_restricted_mdpde(
    y: f64,
    model: &dyn ParametricModel,
    theta: &[f64],
    beta: f64,
    constraints: &ConstraintSet,
) -> Result<Vec<f64>> {
    check_null(theta, constraints)?;
    let m = dpd_matrices(model, theta, beta)?;
    if constraints.r() == model.dim() {
        return Ok(vec![0.0; model.dim()]);
    }
    let p = restricted_projection(&m.j, &constraints.jacobian(theta))?;
    Ok((p * psi(model, theta, beta, &m.xi, y)).iter().copied().collect())
}

fn check_null(theta: &[f64], constraints: &ConstraintSet) -> Result<()> {
    let scale = theta.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    if !constraints.is_satisfied(theta, 1e-6 * scale) {
        return Err(SdtError::Constraint(format!(
            "{theta:?} is not in the null set (h = {:?})",
            constraints.h(theta).as_slice()
        )));
    }
    Ok(())
}

/// `D_β(y) = IF(unrestricted) − IF(restricted)`.
pub fn influence_difference(
    y: f64,
    model: &dyn ParametricModel,
    theta0: &[f64],
    beta: f64,
    constraints: &ConstraintSet,
) -> Result<DVector<f64>> {
    let u = if_mdpde(y, model, theta0, beta)?;
    let r = if_restricted_mdpde(y, model, theta0, beta, constraints)?;
    Ok(DVector::from_iterator(u.len(), u.iter().zip(&r).map(|(a, b)| a - b)))
}

/// Second-order influence function of the test functional at a null `F_θ0`: `DᵀA_γD`.
pub fn if2_sdt(
    y: f64,
    model: &dyn ParametricModel,
    theta0: &[f64],
    beta: f64,
    tp: &TuningParams,
    constraints: &ConstraintSet,
) -> Result<f64> {
    let d = influence_difference(y, model, theta0, beta, constraints)?;
    let a = a_gamma_matrix(model, theta0, tp)?;
    if2_from(&a, &d)
}

fn if2_from(a: &DMatrix<f64>, d: &DVector<f64>) -> Result<f64> {
    let v = (d.transpose() * a * d)[0];
    if v < -1e-12 * (1.0 + a.amax() * d.norm_squared()) {
        return Err(SdtError::Evaluation(format!("negative second-order influence {v:.3e}")));
    }
    Ok(v.max(0.0))
}

/// Asymptotic rejection probability under contiguous alternatives `Δ` and
/// contamination `ε` at `y`: the tail of `WᵀA_γW`, `W ~ N(Δ + εD_β(y), Σ̃)`,
/// at the null critical value.
pub fn contaminated_power(spec: &TestSpec, theta0: &[f64], delta: &[f64], epsilon: f64, y: f64) -> Result<f64> {
    let model = spec.model.as_ref();
    let tp = spec.tuning()?;
    if delta.len() != model.dim() {
        return Err(SdtError::Shape(format!(
            "Δ has length {}, model has p = {}",
            delta.len(),
            model.dim()
        )));
    }
    let law = null_law(model, theta0, spec.beta, &tp, &spec.constraints).stage("null law")?;
    let t_alpha = law.mixture()?.quantile(spec.alpha_level).stage("critical value")?;
    let mut shift = DVector::from_column_slice(delta);
    if epsilon != 0.0 {
        shift += influence_difference(y, model, theta0, spec.beta, &spec.constraints)? * epsilon;
    }
    if shift.iter().all(|v| *v == 0.0) {
        return law.mixture()?.tail(t_alpha);
    }
    noncentral_shift(&law, shift.as_slice())?.tail(t_alpha)
}

/// Power influence function: `∂/∂ε` of [`contaminated_power`] at `ε = 0`.
pub fn power_influence(y: f64, spec: &TestSpec, theta0: &[f64], delta: &[f64]) -> Result<f64> {
    let up = contaminated_power(spec, theta0, delta, EPSILON_STEP, y)?;
    let down = contaminated_power(spec, theta0, delta, -EPSILON_STEP, y)?;
    Ok((up - down) / (2.0 * EPSILON_STEP))
}

/// Level influence function: the power influence function at `Δ = 0`.
pub fn level_influence(y: f64, spec: &TestSpec, theta0: &[f64]) -> Result<f64> {
    power_influence(y, spec, theta0, &vec![0.0; spec.model.dim()])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub rate: f64,
    pub mc_se: f64,
    pub replicates: usize,
    /// Replicates whose test could not be carried out; excluded from the rate.
    pub failures: usize,
}

/// Draws one sample of size `n` from the contaminated distribution.
pub fn draw_contaminated(
    model: &dyn ParametricModel,
    theta_true: &[f64],
    contamination: &ContaminationSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let mass = contamination.mass(n)?;
    let theta_n: Vec<f64> = match &contamination.direction {
        Direction::LevelSequence => theta_true.to_vec(),
        Direction::PowerSequence(delta) => {
            if delta.len() != theta_true.len() {
                return Err(SdtError::Shape("Δ and θ differ in length".into()));
            }
            let root_n = (n as f64).sqrt();
            theta_true.iter().zip(delta).map(|(t, d)| t + d / root_n).collect()
        }
    };
    if !model.in_parameter_space(&theta_n) {
        return Err(SdtError::Domain(format!("θ_n = {theta_n:?} is outside the parameter space")));
    }
    let obs = (0..n)
        .map(|_| {
            if mass > 0.0 && rng.random::<f64>() < mass {
                contamination.y
            } else {
                model.draw(&theta_n, rng)
            }
        })
        .collect();
    Sample::new(obs)
}

/// Monte Carlo rejection rate of [`run_sdt`]; replicate `i` uses stream `i` of a
/// ChaCha generator seeded with `seed`, so results do not depend on scheduling.
pub fn simulate_level_power(
    spec: &TestSpec,
    theta_true: &[f64],
    contamination: &ContaminationSpec,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<SimulationOutcome> {
    if replicates < 100 {
        return Err(SdtError::Domain(format!("need at least 100 replicates, got {replicates}")));
    }
    contamination.mass(n)?;
    let outcomes: Vec<Option<bool>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let sample = draw_contaminated(spec.model.as_ref(), theta_true, contamination, n, &mut rng).ok()?;
            run_sdt(&sample, spec).ok().map(|r| r.reject)
        })
        .collect();
    let done: Vec<bool> = outcomes.iter().flatten().copied().collect();
    let failures = replicates - done.len();
    if done.is_empty() {
        return Err(SdtError::Evaluation("every replicate failed".into()));
    }
    let rate = done.iter().filter(|&&r| r).count() as f64 / done.len() as f64;
    Ok(SimulationOutcome {
        rate,
        mc_se: (rate * (1.0 - rate) / done.len() as f64).sqrt(),
        replicates,
        failures,
    })
}
