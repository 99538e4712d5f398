//! Samples, discrete probability measures and nonparametric density estimates.

use std::f64::consts::PI;

use crate::divergence::DensityRep;
use crate::error::{Result, SdtError};
use crate::model::{ParametricModel, Support};
use crate::quadrature::Grid;

/// Default node count of kernel density grids.
pub const KDE_NODES: usize = 1024;

/// An ordered list of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    observations: Vec<f64>,
}

impl Sample {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(SdtError::Data("sample is empty".into()));
        }
        if let Some((i, v)) = observations.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SdtError::Data(format!("observation {} is not finite ({v})", i + 1)));
        }
        Ok(Sample { observations })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn mean(&self) -> f64 {
        self.observations.iter().sum::<f64>() / self.n() as f64
    }

    /// Standard deviation with divisor `n − 1` (0 for a single observation).
    pub fn sd(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.observations.iter().map(|x| (x - m) * (x - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    /// Errors with the first observation outside the model support.
    pub fn check_support(&self, model: &dyn ParametricModel) -> Result<()> {
        let support = model.support();
        match self.observations.iter().find(|&&x| !support.contains(x)) {
            Some(x) => Err(SdtError::Data(format!(
                "observation {x} lies outside the support of {}",
                model.name()
            ))),
            None => Ok(()),
        }
    }

    /// Drops the observations at the given 0-based positions.
    pub fn without(&self, positions: &[usize]) -> Result<Sample> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.n()) {
            return Err(SdtError::Data(format!(
                "cannot drop observation {} of {}",
                p + 1,
                self.n()
            )));
        }
        Sample::new(
            self.observations
                .iter()
                .enumerate()
                .filter(|(i, _)| !positions.contains(i))
                .map(|(_, &x)| x)
                .collect(),
        )
    }
}

/// A finitely supported probability measure `Σ w_i δ_{x_i}`.
///
/// The empirical distribution of a sample, a model member discretized on its
/// quadrature nodes, and point-contaminated versions of either all share this form.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedMeasure {
    pub fn empirical(sample: &Sample) -> Self {
        let n = sample.n() as f64;
        WeightedMeasure {
            atoms: sample.observations().to_vec(),
            weights: vec![1.0 / n; sample.n()],
        }
    }

    /// `F_θ` discretized on the model's integration nodes.
    pub fn from_model(model: &dyn ParametricModel, theta: &[f64]) -> Self {
        let domain = model.domain(&[theta]);
        let mut atoms = Vec::with_capacity(domain.len());
        let mut weights = Vec::with_capacity(domain.len());
        for (&x, &w) in domain.nodes().iter().zip(domain.weights()) {
            let m = w * model.density(theta, x);
            if m > 0.0 {
                atoms.push(x);
                weights.push(m);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        WeightedMeasure { atoms, weights }
    }

    /// `(1 − ε)·self + ε·δ_y`, with `y` added as an extra atom.
    pub fn contaminate(&self, epsilon: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(SdtError::Domain(format!("contamination mass must lie in [0, 1], got {epsilon}")));
        }
        let mut atoms = self.atoms.clone();
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * (1.0 - epsilon)).collect();
        atoms.push(y);
        weights.push(epsilon);
        Ok(WeightedMeasure { atoms, weights })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Relative frequencies `r_n(x) = count(x)/n` on `{0, 1, ..., max}`.
pub fn relative_frequency(sample: &Sample, max: usize) -> Result<DensityRep> {
    let mut counts = vec![0usize; max + 1];
    for &x in sample.observations() {
        if !Support::DiscreteCounting.contains(x) || x > max as f64 {
            return Err(SdtError::Data(format!(
                "observation {x} is outside the support {{0, ..., {max}}}"
            )));
        }
        counts[x as usize] += 1;
    }
    let n = sample.n() as f64;
    let masses = counts.iter().map(|&c| c as f64 / n).collect();
    DensityRep::discrete((0..=max).map(|k| k as f64).collect(), masses)
}

/// Gaussian kernel density estimate `(1/n) Σ φ((x − X_i)/h)/h` on `grid`.
pub fn kernel_density(sample: &Sample, bandwidth: f64, grid: &Grid) -> Result<DensityRep> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(SdtError::Domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let norm = 1.0 / (sample.n() as f64 * bandwidth * (2.0 * PI).sqrt());
    let values = grid
        .nodes()
        .iter()
        .map(|&x| {
            norm * sample
                .observations()
                .iter()
                .map(|&xi| {
                    let z = (x - xi) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(DensityRep::grid_unchecked(grid.clone(), values))
}

/// `1.06 · min(sd, IQR/1.349) · n^(−1/5)`, or `n^(−1/5)` for a sample without spread.
pub fn default_bandwidth(sample: &Sample) -> Result<f64> {
    let n = sample.n();
    if n < 2 {
        return Err(SdtError::Data("bandwidth rule needs at least two observations".into()));
    }
    let shrink = (n as f64).powf(-0.2);
    let sd = sample.sd();
    let mut sorted = sample.observations().to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.349),
        (true, false) => sd,
        _ => return Ok(shrink),
    };
    Ok(1.06 * spread * shrink)
}

/// Inverse of the empirical CDF: the `ceil(n·q)`-th order statistic.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let k = (q * sorted.len() as f64).ceil() as usize;
    sorted[k.clamp(1, sorted.len()) - 1]
}

/// Equispaced window over mean ± 10·sd, widened to keep every observation 10 bandwidths inside.
pub fn default_kde_grid(sample: &Sample, bandwidth: f64) -> Result<Grid> {
    let m = sample.mean();
    let sd = sample.sd();
    let (lo, hi) = sample
        .observations()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let lower = (m - 10.0 * sd).min(lo - 10.0 * bandwidth);
    let upper = (m + 10.0 * sd).max(hi + 10.0 * bandwidth);
    Grid::uniform(lower, upper, KDE_NODES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    #[test]
    fn relative_frequency_examples() {
        let r = relative_frequency(&sample(&[0.0, 0.0, 1.0]), 3).unwrap();
        assert_eq!(r.values(), &[2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        let r = relative_frequency(&sample(&[5.0]), 6).unwrap();
        assert_eq!(r.values()[5], 1.0);
        let err = relative_frequency(&sample(&[1.5]), 3).unwrap_err();
        assert!(err.to_string().contains("1.5"));
    }

    #[test]
    fn kde_examples() {
        let grid = Grid::uniform(-10.0, 10.0, 1001).unwrap();
        let one = kernel_density(&sample(&[0.0]), 1.0, &grid).unwrap();
        for (x, v) in grid.nodes().iter().zip(one.values()) {
            let phi = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
            assert!((v - phi).abs() < 1e-10);
        }
        let two = kernel_density(&sample(&[-1.0, 1.0]), 1.0, &grid).unwrap();
        let v = two.values();
        for i in 0..v.len() {
            assert!((v[i] - v[v.len() - 1 - i]).abs() < 1e-12);
        }
        assert!(kernel_density(&sample(&[0.0]), 0.0, &grid).is_err());
    }

    #[test]
    fn bandwidth_examples() {
        let h = default_bandwidth(&sample(&[0.0, 1.0])).unwrap();
        let expected = 1.06 * 0.5f64.sqrt().min(1.0 / 1.349) * 2f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-15);
        assert_eq!(default_bandwidth(&sample(&[3.0; 5])).unwrap(), 5f64.powf(-0.2));
        assert!(default_bandwidth(&sample(&[1.0])).is_err());
    }

    #[test]
    fn measure_contamination() {
        let m = WeightedMeasure::empirical(&sample(&[1.0, 2.0]));
        let c = m.contaminate(0.2, 9.0).unwrap();
        assert_eq!(c.atoms(), &[1.0, 2.0, 9.0]);
        assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(m.contaminate(1.5, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn relative_frequency_sums_to_one(v in prop::collection::vec(0u8..20, 1..200)) {
            let s = sample(&v.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let r = relative_frequency(&s, 25).unwrap();
            let n = s.n() as f64;
            for m in r.values() {
                prop_assert!(((m * n).round() - m * n).abs() < 1e-9);
            }
            prop_assert!((r.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bandwidth_is_scale_equivariant(v in prop::collection::vec(-10.0f64..10.0, 3..40), c in 0.1f64..20.0) {
            let s = sample(&v);
            let scaled = sample(&v.iter().map(|x| c * x).collect::<Vec<_>>());
            let (h, hc) = (default_bandwidth(&s).unwrap(), default_bandwidth(&scaled).unwrap());
            prop_assume!(s.sd() > 1e-9);
            prop_assert!((hc - c * h).abs() <= 1e-9 * hc);
        }

        #[test]
        fn kde_is_permutation_invariant_and_normalized(mut v in prop::collection::vec(-5.0f64..5.0, 2..30)) {
            let s = sample(&v);
            let h = default_bandwidth(&s).unwrap();
            let grid = default_kde_grid(&s, h).unwrap();
            let a = kernel_density(&s, h, &grid).unwrap();
            v.reverse();
            let b = kernel_density(&sample(&v), h, &grid).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
                prop_assert!(*x >= 0.0);
            }
            prop_assert!((a.mass() - 1.0).abs() < 1e-4);
        }
    }
}
