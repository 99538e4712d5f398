use rand::RngCore;
use rand_distr::{Distribution, Poisson};
use statrs::function::gamma::ln_gamma;

use super::{Domain, ParametricModel, Support, TRUNCATION_MASS};

/// Poisson mass function with mean `θ > 0` on the counting support.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoissonModel;

pub fn make_poisson_model() -> PoissonModel {
    PoissonModel
}

impl PoissonModel {
    /// Smallest `k` with `P(X > k) < TRUNCATION_MASS`.
    pub fn truncation_point(theta: f64) -> usize {
        let mut k = 0usize;
        let mut log_p = -theta;
        let mut cumulative = log_p.exp();
        while 1.0 - cumulative >= TRUNCATION_MASS || (k as f64) < theta {
            k += 1;
            log_p += theta.ln() - (k as f64).ln();
            cumulative += log_p.exp();
            if k > 100_000_000 {
                break;
            }
        }
        k
    }
}

impl ParametricModel for PoissonModel {
    fn name(&self) -> String {
        "poisson".to_string()
    }

    fn param_names(&self) -> &[&'static str] {
        &["theta"]
    }

    fn support(&self) -> Support {
        Support::DiscreteCounting
    }

    fn in_parameter_space(&self, theta: &[f64]) -> bool {
        theta.len() == 1 && theta[0].is_finite() && theta[0] > 0.0
    }

    fn log_density(&self, theta: &[f64], x: f64) -> f64 {
        if !Support::DiscreteCounting.contains(x) {
            return f64::NEG_INFINITY;
        }
        x * theta[0].ln() - theta[0] - ln_gamma(x + 1.0)
    }

    fn score(&self, theta: &[f64], x: f64) -> Vec<f64> {
        vec![x / theta[0] - 1.0]
    }

    fn to_free(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0].ln()]
    }

    fn from_free(&self, z: &[f64]) -> Vec<f64> {
        vec![z[0].exp()]
    }

    fn free_derivative(&self, z: &[f64]) -> Vec<f64> {
        vec![z[0].exp()]
    }

    fn initial_estimates(&self, atoms: &[f64], weights: &[f64]) -> Vec<Vec<f64>> {
        let total: f64 = weights.iter().sum();
        let mean = atoms.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
        vec![vec![mean.max(0.05)]]
    }

    fn start_spread(&self, _theta: &[f64]) -> Vec<f64> {
        vec![std::f64::consts::LN_2]
    }

    fn domain(&self, thetas: &[&[f64]]) -> Domain {
        let max = thetas
            .iter()
            .map(|t| Self::truncation_point(t[0]))
            .max()
            .unwrap_or(0);
        Domain::counting(max)
    }

    fn draw(&self, theta: &[f64], rng: &mut dyn RngCore) -> f64 {
        Poisson::new(theta[0]).expect("positive Poisson mean").sample(rng)
    }
}
