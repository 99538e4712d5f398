use std::f64::consts::PI;

use super::{Domain, ParametricModel, WINDOW_SCALES};
use crate::error::{Result, SdtError};
use crate::quadrature::{Grid, PANEL_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Gaussian,
}

impl Kernel {
    /// `W(x, y, h)`.
    pub fn weight(&self, x: f64, y: f64, h: f64) -> f64 {
        match self {
            Kernel::Gaussian => {
                let z = (x - y) / h;
                (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * h)
            }
        }
    }
}

/// A model family convolved with a kernel: `f*_θ(x) = ∫ W(x, y, h) f_θ(y) dy`.
#[derive(Debug, Clone)]
pub struct SmoothedModel<'a> {
    base: &'a dyn ParametricModel,
    kernel: Kernel,
    bandwidth: f64,
    numeric_only: bool,
}

pub fn smooth_model(model: &dyn ParametricModel, bandwidth: f64) -> Result<SmoothedModel<'_>> {
    if model.support().is_discrete() {
        return Err(SdtError::Unsupported(format!(
            "kernel smoothing needs a continuous support; {} is discrete",
            model.name()
        )));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(SdtError::Domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(SmoothedModel {
        base: model,
        kernel: Kernel::Gaussian,
        bandwidth,
        numeric_only: false,
    })
}

impl SmoothedModel<'_> {
    pub fn base(&self) -> &dyn ParametricModel {
        self.base
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Forces numeric convolution even when a closed form is registered.
    pub fn with_numeric_convolution(mut self) -> Self {
        self.numeric_only = true;
        self
    }

    pub fn density(&self, theta: &[f64], x: f64) -> f64 {
        self.evaluate(theta, &[x]).0[0]
    }

    /// Smoothed score `∇_θ log f*_θ(x)`.
    pub fn score(&self, theta: &[f64], x: f64) -> Vec<f64> {
        self.evaluate(theta, &[x]).1.remove(0)
    }

    /// Smoothed densities and scores at each point of `xs`.
    pub fn evaluate(&self, theta: &[f64], xs: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        if !self.numeric_only {
            let probe = self
                .base
                .smoothed_closed_form(self.kernel, self.bandwidth, theta, xs.first().copied().unwrap_or(0.0));
            if probe.is_some() {
                return xs
                    .iter()
                    .map(|&x| {
                        self.base
                            .smoothed_closed_form(self.kernel, self.bandwidth, theta, x)
                            .expect("closed form registered")
                    })
                    .unzip();
            }
        }
        self.convolve(theta, xs)
    }

    fn convolve(&self, theta: &[f64], xs: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let domain = self.base.domain(&[theta]);
        let p = self.base.dim();
        let nodes = domain.nodes();
        let weights = domain.weights();
        let base_f: Vec<f64> = nodes.iter().map(|&y| self.base.density(theta, y)).collect();
        let base_u: Vec<Vec<f64>> = nodes.iter().map(|&y| self.base.score(theta, y)).collect();
        let mut densities = Vec::with_capacity(xs.len());
        let mut scores = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut f = 0.0;
            let mut grad = vec![0.0; p];
            for i in 0..nodes.len() {
                let wk = weights[i] * self.kernel.weight(x, nodes[i], self.bandwidth) * base_f[i];
                f += wk;
                for (g, u) in grad.iter_mut().zip(&base_u[i]) {
                    *g += wk * u;
                }
            }
            let score = if f > 0.0 {
                grad.iter().map(|g| g / f).collect()
            } else {
                vec![0.0; p]
            };
            densities.push(f);
            scores.push(score);
        }
        (densities, scores)
    }

    /// Base integration window widened by the kernel reach.
    pub fn domain(&self, thetas: &[&[f64]]) -> Domain {
        match self.base.domain(thetas) {
            Domain::Continuous(g) => {
                let pad = WINDOW_SCALES * self.bandwidth;
                let width = g.upper() - g.lower();
                let count = ((g.len() as f64) * (width + 2.0 * pad) / width).ceil() as usize;
                let count = count.div_ceil(PANEL_ORDER) * PANEL_ORDER;
                Domain::Continuous(
                    Grid::gauss_legendre(g.lower() - pad, g.upper() + pad, count)
                        .expect("valid smoothed window"),
                )
            }
            d => d,
        }
    }
}

/// Whether a kernel leaves the asymptotic law of the smoothed estimator unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transparency {
    /// Certified by the model's registered closed form.
    Certified,
    /// Smoothing does not apply to the model (discrete support).
    NotApplicable,
    /// No certificate registered; treated as not transparent.
    Unknown,
}

impl Transparency {
    pub fn is_transparent(&self) -> bool {
        matches!(self, Transparency::Certified)
    }

    pub fn note(&self) -> &'static str {
        match self {
            Transparency::Certified => "transparent by registered closed form",
            Transparency::NotApplicable => "continuous smoothing does not apply to a discrete model",
            Transparency::Unknown => "no transparency certificate registered; reported as false",
        }
    }
}

/// Informational transparency check; `beta` does not enter the registered certificates.
pub fn is_transparent(model: &dyn ParametricModel, kernel: Kernel, _beta: f64) -> Transparency {
    if model.support().is_discrete() {
        return Transparency::NotApplicable;
    }
    match model.kernel_transparency(kernel) {
        Some(true) => Transparency::Certified,
        _ => Transparency::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_normal_model, make_poisson_model};

    #[test]
    fn gaussian_identity_and_mass() {
        let base = make_normal_model();
        let sm = smooth_model(&base, 0.5).unwrap();
        let v: f64 = 1.25;
        for x in [-3.0, -0.4, 0.0, 1.1, 4.0] {
            let expected = (-0.5 * x * x / v).exp() / (2.0 * PI * v).sqrt();
            assert!((sm.density(&[0.0, 1.0], x) - expected).abs() < 1e-10);
        }
        let dom = sm.domain(&[&[0.0, 1.0]]);
        let mass = dom.integrate_fn(|x| sm.density(&[0.0, 1.0], x));
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn numeric_convolution_matches_closed_form() {
        let base = make_normal_model();
        let closed = smooth_model(&base, 0.5).unwrap();
        let numeric = closed.clone().with_numeric_convolution();
        let theta = [0.3, 1.2];
        let xs = [-2.5, 0.0, 0.7, 3.0];
        let (fc, uc) = closed.evaluate(&theta, &xs);
        let (fnum, unum) = numeric.evaluate(&theta, &xs);
        for i in 0..xs.len() {
            assert!((fc[i] - fnum[i]).abs() < 1e-4);
            for k in 0..2 {
                assert!((uc[i][k] - unum[i][k]).abs() < 1e-4);
            }
        }
        let dom = numeric.domain(&[&theta]);
        let mass = dom.integrate_fn(|x| numeric.density(&theta, x));
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn discrete_and_bad_bandwidth_rejected() {
        assert!(matches!(
            smooth_model(&make_poisson_model(), 1.0),
            Err(SdtError::Unsupported(_))
        ));
        assert!(smooth_model(&make_normal_model(), 0.0).is_err());
    }

    #[test]
    fn transparency() {
        assert!(is_transparent(&make_normal_model(), Kernel::Gaussian, 0.3).is_transparent());
        let p = is_transparent(&make_poisson_model(), Kernel::Gaussian, 0.3);
        assert_eq!(p, Transparency::NotApplicable);
        assert!(!p.is_transparent());
    }
}
