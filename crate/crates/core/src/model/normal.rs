use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{Domain, Kernel, ParametricModel, Support, WINDOW_SCALES};
use crate::asymptotics::DpdMatrices;
use crate::divergence::TuningParams;
use crate::error::{Result, SdtError};
use crate::quadrature::{Grid, DEFAULT_NODES, PANEL_ORDER};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `N(μ, σ²)` parameterized by `(μ, σ)`, or by `μ` alone when `σ` is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalModel {
    fixed_sigma: Option<f64>,
}

pub fn make_normal_model() -> NormalModel {
    NormalModel { fixed_sigma: None }
}

/// One-parameter normal family with known standard deviation `sigma`.
pub fn make_normal_fixed_sigma(sigma: f64) -> Result<NormalModel> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(SdtError::Domain(format!("fixed sigma must be positive, got {sigma}")));
    }
    Ok(NormalModel {
        fixed_sigma: Some(sigma),
    })
}

impl NormalModel {
    pub fn fixed_sigma(&self) -> Option<f64> {
        self.fixed_sigma
    }

    #[inline]
    fn mu_sigma(&self, theta: &[f64]) -> (f64, f64) {
        match self.fixed_sigma {
            Some(s) => (theta[0], s),
            None => (theta[0], theta[1]),
        }
    }
}

/// `c_β = ∫ f^(1+β)` for `N(μ, σ²)`.
pub fn normal_power_integral(sigma: f64, beta: f64) -> f64 {
    (2.0 * PI).powf(-beta / 2.0) * sigma.powf(-beta) / (1.0 + beta).sqrt()
}

/// `S_(γ,λ)(g, f)` for `g = N(μ1, s1²)` and `f = N(μ2, s2²)`.
///
/// Written in terms of `t = log(s1/s2)` with `expm1`/`log1p` so that nearby
/// members do not lose precision to cancellation.
pub fn normal_pair_divergence(
    mu1: f64,
    s1: f64,
    mu2: f64,
    s2: f64,
    tp: &TuningParams,
) -> Result<f64> {
    let (gamma, a, b) = (tp.gamma(), tp.a(), tp.b());
    let one_g = 1.0 + gamma;
    let kappa = (2.0 * PI).powf(-gamma / 2.0) / one_g.sqrt();
    let t = (s1 / s2).ln();
    let d = mu1 - mu2;
    let value = if tp.a_is_zero() {
        kappa
            * s2.powf(-gamma)
            * ((-gamma * t).exp_m1() / one_g
                + t
                + (-2.0 * t).exp_m1() / (2.0 * one_g)
                + d * d / (2.0 * s1 * s1))
    } else if tp.b_is_zero() {
        kappa
            * s1.powf(-gamma)
            * ((gamma * t).exp_m1() / one_g - t
                + (2.0 * t).exp_m1() / (2.0 * one_g)
                + d * d / (2.0 * s2 * s2))
    } else {
        let spread = 1.0 + b * (2.0 * t).exp_m1() / one_g;
        if spread <= 0.0 {
            return Err(SdtError::Evaluation(format!(
                "S-divergence between N({mu1}, {s1}²) and N({mu2}, {s2}²) is infinite for A = {a}, B = {b}"
            )));
        }
        let q = a * b * d * d / (2.0 * s2 * s2 * (a + b * (2.0 * t).exp()));
        let log_ratio = (1.0 - a) * t - 0.5 * (spread - 1.0).ln_1p() - q;
        kappa * s2.powf(-gamma) * (a * (-gamma * t).exp_m1() - one_g * log_ratio.exp_m1()) / (a * b)
    };
    crate::divergence::clamp_divergence(value)
}

impl ParametricModel for NormalModel {
    fn name(&self) -> String {
        match self.fixed_sigma {
            Some(s) => format!("normal-fixed-sigma:{s}"),
            None => "normal".to_string(),
        }
    }

    fn param_names(&self) -> &[&'static str] {
        match self.fixed_sigma {
            Some(_) => &["mu"],
            None => &["mu", "sigma"],
        }
    }

    fn support(&self) -> Support {
        Support::ContinuousInterval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    fn in_parameter_space(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta[0].is_finite()
            && (self.fixed_sigma.is_some() || (theta[1].is_finite() && theta[1] > 0.0))
    }

    fn log_density(&self, theta: &[f64], x: f64) -> f64 {
        let (mu, s) = self.mu_sigma(theta);
        let z = (x - mu) / s;
        -LN_SQRT_2PI - s.ln() - 0.5 * z * z
    }

    fn score(&self, theta: &[f64], x: f64) -> Vec<f64> {
        let (mu, s) = self.mu_sigma(theta);
        let d = x - mu;
        match self.fixed_sigma {
            Some(_) => vec![d / (s * s)],
            None => vec![d / (s * s), (d * d - s * s) / (s * s * s)],
        }
    }

    fn to_free(&self, theta: &[f64]) -> Vec<f64> {
        match self.fixed_sigma {
            Some(_) => vec![theta[0]],
            None => vec![theta[0], theta[1].ln()],
        }
    }

    fn from_free(&self, z: &[f64]) -> Vec<f64> {
        match self.fixed_sigma {
            Some(_) => vec![z[0]],
            None => vec![z[0], z[1].exp()],
        }
    }

    fn free_derivative(&self, z: &[f64]) -> Vec<f64> {
        match self.fixed_sigma {
            Some(_) => vec![1.0],
            None => vec![1.0, z[1].exp()],
        }
    }

    fn initial_estimates(&self, atoms: &[f64], weights: &[f64]) -> Vec<Vec<f64>> {
        let total: f64 = weights.iter().sum();
        let mean = atoms.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
        let var = atoms
            .iter()
            .zip(weights)
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum::<f64>()
            / total;
        let sd = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
        let median = weighted_median(atoms, weights);
        let deviations: Vec<f64> = atoms.iter().map(|x| (x - median).abs()).collect();
        let mad = 1.482_602_218_505_602 * weighted_median(&deviations, weights);
        match self.fixed_sigma {
            Some(_) => vec![vec![mean], vec![median]],
            None => {
                let mut starts = vec![vec![mean, sd]];
                if mad > 0.0 && mad.is_finite() {
                    starts.push(vec![median, mad]);
                }
                starts
            }
        }
    }

    fn start_spread(&self, theta: &[f64]) -> Vec<f64> {
        let (_, s) = self.mu_sigma(theta);
        match self.fixed_sigma {
            Some(_) => vec![0.5 * s],
            None => vec![0.5 * s, std::f64::consts::LN_2],
        }
    }

    fn domain(&self, thetas: &[&[f64]]) -> Domain {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut smax: f64 = 0.0;
        let mut smin = f64::INFINITY;
        for t in thetas {
            let (mu, s) = self.mu_sigma(t);
            lo = lo.min(mu);
            hi = hi.max(mu);
            smax = smax.max(s);
            smin = smin.min(s);
        }
        let lower = lo - WINDOW_SCALES * smax;
        let upper = hi + WINDOW_SCALES * smax;
        // at least one panel per two standard deviations of the narrowest member
        let panels = ((upper - lower) / (2.0 * smin)).ceil() as usize;
        let count = (panels * PANEL_ORDER).clamp(DEFAULT_NODES, 64 * DEFAULT_NODES);
        let count = count.div_ceil(PANEL_ORDER) * PANEL_ORDER;
        Domain::Continuous(Grid::gauss_legendre(lower, upper, count).expect("valid normal window"))
    }

    fn draw(&self, theta: &[f64], rng: &mut dyn RngCore) -> f64 {
        let (mu, s) = self.mu_sigma(theta);
        let z: f64 = StandardNormal.sample(rng);
        mu + s * z
    }

    fn divergence_closed_form(
        &self,
        theta1: &[f64],
        theta2: &[f64],
        tp: &TuningParams,
    ) -> Option<Result<f64>> {
        let (m1, s1) = self.mu_sigma(theta1);
        let (m2, s2) = self.mu_sigma(theta2);
        Some(normal_pair_divergence(m1, s1, m2, s2, tp))
    }

    fn power_integral_closed_form(&self, theta: &[f64], beta: f64) -> Option<(f64, Vec<f64>)> {
        let (_, s) = self.mu_sigma(theta);
        let c = normal_power_integral(s, beta);
        let xi = match self.fixed_sigma {
            Some(_) => vec![0.0],
            None => vec![0.0, -c * beta / ((1.0 + beta) * s)],
        };
        Some((c, xi))
    }

    fn dpd_matrices_closed_form(&self, theta: &[f64], beta: f64) -> Option<DpdMatrices> {
        let (_, s) = self.mu_sigma(theta);
        let s2 = s * s;
        let j_diag = |b: f64| {
            let c = normal_power_integral(s, b);
            (
                c / ((1.0 + b) * s2),
                c * (2.0 + b * b) / ((1.0 + b) * (1.0 + b) * s2),
            )
        };
        let (j_mu, j_sigma) = j_diag(beta);
        let (k_mu, k_sigma) = j_diag(2.0 * beta);
        let c = normal_power_integral(s, beta);
        let xi_sigma = -c * beta / ((1.0 + beta) * s);
        let (j, xi, k) = match self.fixed_sigma {
            Some(_) => (
                DMatrix::from_element(1, 1, j_mu),
                DVector::from_element(1, 0.0),
                DMatrix::from_element(1, 1, k_mu),
            ),
            None => (
                DMatrix::from_diagonal(&DVector::from_vec(vec![j_mu, j_sigma])),
                DVector::from_vec(vec![0.0, xi_sigma]),
                DMatrix::from_diagonal(&DVector::from_vec(vec![
                    k_mu,
                    k_sigma - xi_sigma * xi_sigma,
                ])),
            ),
        };
        Some(DpdMatrices {
            j,
            xi,
            k,
            beta,
            theta: theta.to_vec(),
        })
    }

    fn smoothed_closed_form(
        &self,
        kernel: Kernel,
        bandwidth: f64,
        theta: &[f64],
        x: f64,
    ) -> Option<(f64, Vec<f64>)> {
        match kernel {
            Kernel::Gaussian => {
                let (mu, s) = self.mu_sigma(theta);
                let v = s * s + bandwidth * bandwidth;
                let d = x - mu;
                let density = (-LN_SQRT_2PI - 0.5 * v.ln() - 0.5 * d * d / v).exp();
                let score = match self.fixed_sigma {
                    Some(_) => vec![d / v],
                    None => vec![d / v, s * (d * d / (v * v) - 1.0 / v)],
                };
                Some((density, score))
            }
        }
    }

    fn kernel_transparency(&self, kernel: Kernel) -> Option<bool> {
        match kernel {
            Kernel::Gaussian => Some(true),
        }
    }
}

fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (pos, &i) in idx.iter().enumerate() {
        acc += weights[i];
        if acc >= 0.5 * total * (1.0 - 1e-12) {
            // exact half: average with the next value, as for an even sample
            if (acc - 0.5 * total).abs() <= 1e-12 * total && pos + 1 < idx.len() {
                return 0.5 * (values[i] + values[idx[pos + 1]]);
            }
            return values[i];
        }
    }
    values[idx[idx.len() - 1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::s_divergence_quadrature;
    use crate::model::test_support::{finite_difference_score, total_mass};
    use proptest::prelude::*;

    #[test]
    fn score_and_density_examples() {
        let m = make_normal_model();
        assert_eq!(m.score(&[0.0, 1.0], 0.0), vec![0.0, -1.0]);
        assert!((m.density(&[0.0, 1.0], 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let fd = finite_difference_score(&m, &[2.0, 3.0], 1.0);
        let an = m.score(&[2.0, 3.0], 1.0);
        for (a, b) in an.iter().zip(fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn weighted_median_even_and_odd() {
        assert_eq!(weighted_median(&[3.0, 1.0, 2.0], &[1.0; 3]), 2.0);
        assert_eq!(weighted_median(&[4.0, 1.0, 2.0, 3.0], &[1.0; 4]), 2.5);
    }

    #[test]
    fn fixed_sigma_member_matches_full_model() {
        let full = make_normal_model();
        let fixed = make_normal_fixed_sigma(2.0).unwrap();
        assert_eq!(fixed.dim(), 1);
        assert!((full.density(&[1.0, 2.0], 0.3) - fixed.density(&[1.0], 0.3)).abs() < 1e-16);
        assert_eq!(full.score(&[1.0, 2.0], 0.3)[0], fixed.score(&[1.0], 0.3)[0]);
        assert!(make_normal_fixed_sigma(0.0).is_err());
    }

    #[test]
    fn closed_form_divergence_matches_quadrature_across_branches() {
        let m = make_normal_model();
        let cases = [(0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (0.3, -1.0 / 0.7), (0.8, -0.5), (0.2, 0.6)];
        for (g, l) in cases {
            let tp = TuningParams::new(g, l).unwrap();
            for (t1, t2) in [([0.0, 1.0], [1.0, 1.0]), ([0.3, 1.3], [-0.2, 0.9]), ([1.0, 0.8], [0.5, 1.1])] {
                let closed = normal_pair_divergence(t1[0], t1[1], t2[0], t2[1], &tp).unwrap();
                let quad = s_divergence_quadrature(&m, &t1, &t2, &tp).unwrap();
                assert!(
                    (closed - quad).abs() <= 1e-9 * closed.max(1e-12),
                    "γ={g} λ={l} {t1:?} {t2:?}: {closed} vs {quad}"
                );
            }
        }
    }

    #[test]
    fn closed_form_power_integrals_and_smoothing() {
        let m = make_normal_model();
        let theta = [0.7, 1.6];
        for beta in [0.0, 0.3, 1.0] {
            let (c, xi) = m.power_integral_closed_form(&theta, beta).unwrap();
            let (cq, xiq) = crate::model::power_integral_quadrature(&m, &theta, beta);
            assert!((c - cq).abs() < 1e-12);
            for (a, b) in xi.iter().zip(xiq) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let h = 0.5;
        let (f, _) = m.smoothed_closed_form(Kernel::Gaussian, h, &[0.0, 1.0], 0.4).unwrap();
        let v: f64 = 1.25;
        let expected = (-0.5 * 0.16 / v).exp() / (2.0 * PI * v).sqrt();
        assert!((f - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn score_matches_finite_differences(mu in -5.0f64..5.0, s in 0.2f64..4.0, x in -10.0f64..10.0) {
            let m = make_normal_model();
            let fd = finite_difference_score(&m, &[mu, s], x);
            for (a, b) in m.score(&[mu, s], x).iter().zip(fd) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn integrates_to_one(mu in -50.0f64..50.0, s in 0.05f64..30.0) {
            let m = make_normal_model();
            prop_assert!((total_mass(&m, &[mu, s]) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn smoothed_score_is_log_derivative(mu in -3.0f64..3.0, s in 0.3f64..3.0, h in 0.1f64..2.0, x in -6.0f64..6.0) {
            let m = make_normal_model();
            let (_, score) = m.smoothed_closed_form(Kernel::Gaussian, h, &[mu, s], x).unwrap();
            for i in 0..2 {
                let e = 1e-6;
                let mut up = [mu, s];
                let mut dn = [mu, s];
                up[i] += e;
                dn[i] -= e;
                let fu = m.smoothed_closed_form(Kernel::Gaussian, h, &up, x).unwrap().0.ln();
                let fd = m.smoothed_closed_form(Kernel::Gaussian, h, &dn, x).unwrap().0.ln();
                prop_assert!((score[i] - (fu - fd) / (2.0 * e)).abs() < 1e-5 * (1.0 + score[i].abs()));
            }
        }
    }
}
