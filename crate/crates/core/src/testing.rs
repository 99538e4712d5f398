//! The S-divergence test of a composite null `h(θ) = 0`.
//!
//! Both fits use the minimum-DPD estimator of order β; the statistic
//! `2n·S_(γ,λ)(f_θ̂, f_θ̃)` is referred to the weighted chi-square law
//! assembled at the restricted fit.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asymptotics::{dpd_matrices, null_law, restricted_projection, NullLawSpec};
use crate::density::{Sample, WeightedMeasure};
use crate::divergence::{s_divergence_between_members, TuningParams, LIMIT_EPS};
use crate::error::{Result, SdtError, StageExt};
use crate::estimation::{fit, mdpde_fit_measure, EstimationConfig, FitResult};
use crate::model::{ConstraintSet, ParametricModel};

#[derive(Clone)]
pub struct TestSpec {
    pub model: Arc<dyn ParametricModel>,
    pub constraints: ConstraintSet,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha_level: f64,
}

impl std::fmt::Debug for TestSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestSpec")
            .field("model", &self.model.name())
            .field("beta", &self.beta)
            .field("gamma", &self.gamma)
            .field("lambda", &self.lambda)
            .field("alpha_level", &self.alpha_level)
            .finish_non_exhaustive()
    }
}

impl TestSpec {
    pub fn new(
        model: Arc<dyn ParametricModel>,
        constraints: ConstraintSet,
        beta: f64,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        let spec = TestSpec {
            model,
            constraints,
            beta,
            gamma,
            lambda,
            alpha_level: 0.05,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_alpha(mut self, alpha_level: f64) -> Result<Self> {
        self.alpha_level = alpha_level;
        self.validate()?;
        Ok(self)
    }

    pub fn tuning(&self) -> Result<TuningParams> {
        TuningParams::new(self.gamma, self.lambda)
    }

    pub fn estimation(&self) -> EstimationConfig {
        EstimationConfig::mdpde(self.beta)
    }

    fn validate(&self) -> Result<()> {
        self.tuning()?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SdtError::Domain(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(SdtError::Domain(format!(
                "alpha level must lie in (0, 1), got {}",
                self.alpha_level
            )));
        }
        if self.constraints.p() != self.model.dim() {
            return Err(SdtError::Shape(format!(
                "constraints are for p = {}, model {} has p = {}",
                self.constraints.p(),
                self.model.name(),
                self.model.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub n: usize,
    pub statistic: f64,
    pub unrestricted_fit: FitResult,
    pub restricted_fit: FitResult,
    pub null_law: NullLawSpec,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// `2n·S_(γ,λ)(f_θ̂, f_θ̃)`.
pub fn sdt_statistic(
    theta_hat: &[f64],
    theta_tilde: &[f64],
    model: &dyn ParametricModel,
    tp: &TuningParams,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(SdtError::Domain("sample size must be positive".into()));
    }
    Ok(2.0 * n as f64 * s_divergence_between_members(model, theta_hat, theta_tilde, tp)?)
}

/// The statistic for `H0: μ = μ0` in the normal model, written out directly
/// from the unrestricted `(μ̂, σ̂)` and restricted `(μ0, σ̃)` fits.
///
/// The `A = 0` and `B = 0` branches are the continuous limits of the generic
/// expression; both carry a `2nκ̃(σ̂^(−γ) − σ̃^(−γ))/(1+γ)` term (with opposite
/// signs) that vanishes when `γ = 0` or `σ̂ = σ̃`.
pub fn normal_sdt_closed_form(
    mu_hat: f64,
    sigma_hat: f64,
    mu0: f64,
    sigma_tilde: f64,
    gamma: f64,
    lambda: f64,
    n: usize,
) -> Result<f64> {
    if !(sigma_hat > 0.0 && sigma_tilde > 0.0) {
        return Err(SdtError::Domain(format!(
            "standard deviations must be positive, got {sigma_hat} and {sigma_tilde}"
        )));
    }
    let tp = TuningParams::new(gamma, lambda)?;
    let (a, b) = (tp.a(), tp.b());
    let n = n as f64;
    let kappa = (2.0 * std::f64::consts::PI).powf(-gamma / 2.0) / (1.0 + gamma).sqrt();
    let (sh, st) = (sigma_hat, sigma_tilde);
    let d2 = (mu_hat - mu0).powi(2);
    let cross = 2.0 * n * kappa * (sh.powf(-gamma) - st.powf(-gamma)) / (1.0 + gamma);
    if a.abs() <= LIMIT_EPS {
        let bracket = (sh * sh / (st * st)).ln() + (st * st / (sh * sh) - 1.0) / (1.0 + gamma) + d2 / (sh * sh);
        return Ok(n * kappa / st.powf(gamma) * bracket + cross);
    }
    if b.abs() <= LIMIT_EPS {
        let bracket = (st * st / (sh * sh)).ln() + (sh * sh / (st * st) - 1.0) / (1.0 + gamma) + d2 / (st * st);
        return Ok(n * kappa / sh.powf(gamma) * bracket - cross);
    }
    let spread = b * sh * sh + a * st * st;
    if spread <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let last = (1.0 + gamma).powf(1.5) * st.powf(1.0 - b) * sh.powf(1.0 - a) / spread.sqrt()
        * (-a * b * d2 / (2.0 * spread)).exp();
    Ok(2.0 * n * kappa / (a * b) * (a / sh.powf(gamma) + b / st.powf(gamma) - last))
}

/// Fits both estimators, evaluates the statistic and refers it to the plug-in null law.
pub fn run_sdt(sample: &Sample, spec: &TestSpec) -> Result<TestReport> {
    spec.validate()?;
    let model = spec.model.as_ref();
    let tp = spec.tuning()?;
    let cfg = spec.estimation();
    let unrestricted = fit(sample, model, None, &cfg).stage("unrestricted fit")?;
    let restricted = fit(sample, model, Some(&spec.constraints), &cfg).stage("restricted fit")?;
    let statistic = sdt_statistic(&unrestricted.theta_hat, &restricted.theta_hat, model, &tp, sample.n())
        .stage("statistic")?;
    let law = null_law(model, &restricted.theta_hat, spec.beta, &tp, &spec.constraints).stage("null law")?;
    let mixture = law.mixture().stage("null law")?;
    let critical_value = mixture.quantile(spec.alpha_level).stage("critical value")?;
    let p_value = mixture.tail(statistic).stage("p-value")?;
    Ok(TestReport {
        n: sample.n(),
        statistic,
        unrestricted_fit: unrestricted,
        restricted_fit: restricted,
        null_law: law,
        critical_value,
        p_value,
        reject: statistic > critical_value,
    })
}

/// Limit of the restricted estimator when the data come from `F_θ*`.
pub fn restricted_population_fit(spec: &TestSpec, theta_star: &[f64]) -> Result<FitResult> {
    let model = spec.model.as_ref();
    let measure = WeightedMeasure::from_model(model, theta_star);
    mdpde_fit_measure(&measure, model, Some(&spec.constraints), &spec.estimation())
}

fn central_gradient<F: Fn(&[f64]) -> Result<f64>>(f: F, at: &[f64]) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(at.len());
    for i in 0..at.len() {
        let h = 1e-5 * (1.0 + at[i].abs());
        let mut up = at.to_vec();
        let mut down = at.to_vec();
        up[i] += h;
        down[i] -= h;
        g[i] = (f(&up)? - f(&down)?) / (2.0 * h);
    }
    Ok(g)
}

/// Normal approximation to the power at a fixed alternative `θ*`.
///
/// `theta0` is the restricted limit under `θ*` (see [`restricted_population_fit`]).
/// The cross-covariance `A₁₂` of the two estimators is not determined by the
/// first-order theory; `None` takes it as zero.
pub fn power_approximation(
    spec: &TestSpec,
    theta_star: &[f64],
    theta0: &[f64],
    n: usize,
    a12: Option<&DMatrix<f64>>,
) -> Result<f64> {
    spec.validate()?;
    let model = spec.model.as_ref();
    let tp = spec.tuning()?;
    let p = model.dim();
    if spec.constraints.is_satisfied(theta_star, 1e-10) {
        return Err(SdtError::Domain(format!(
            "alternative {theta_star:?} satisfies the null restrictions"
        )));
    }
    if n == 0 {
        return Err(SdtError::Domain("sample size must be positive".into()));
    }
    let law = null_law(model, theta0, spec.beta, &tp, &spec.constraints).stage("null law")?;
    let t_alpha = law.mixture()?.quantile(spec.alpha_level).stage("critical value")?;
    let s = s_divergence_between_members(model, theta_star, theta0, &tp)?;
    let m1 = central_gradient(|t| s_divergence_between_members(model, t, theta0, &tp), theta_star)?;
    let m2 = central_gradient(|t| s_divergence_between_members(model, theta_star, t, &tp), theta0)?;
    let sigma_star = dpd_matrices(model, theta_star, spec.beta)?.sandwich()?;
    let m0 = dpd_matrices(model, theta0, spec.beta)?;
    let proj = restricted_projection(&m0.j, &spec.constraints.jacobian(theta0))?;
    let restricted_cov = &proj * &m0.k * &proj;
    let mut var = (m1.transpose() * &sigma_star * &m1)[0] + (m2.transpose() * restricted_cov * &m2)[0];
    if let Some(a12) = a12 {
        if a12.shape() != (p, p) {
            return Err(SdtError::Shape(format!("A12 must be {p}x{p}, got {:?}", a12.shape())));
        }
        var += 2.0 * (m1.transpose() * a12 * &m2)[0];
    }
    if !(var > 0.0 && var.is_finite()) {
        return Err(SdtError::Evaluation(format!(
            "power approximation has degenerate variance {var:.3e}"
        )));
    }
    let z = (n as f64).sqrt() / var.sqrt() * (t_alpha / (2.0 * n as f64) - s);
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(1.0 - std_normal.cdf(z))
}
