//! Weighted sums of independent (noncentral) chi-square variables.
//!
//! Tail probabilities come from Imhof's inversion formula
//!
//! ```text
//! P(Q > x) = 1/2 + (1/π) ∫_0^∞ sin θ(u) / (u ρ(u)) du
//! ```
//!
//! integrated panel by panel over half-periods of the oscillation, with the
//! alternating panel sums accelerated by Wynn's epsilon algorithm.

use serde::Serialize;

use crate::error::{Result, SdtError};
use crate::quadrature::integrate_adaptive;

/// `Σ w_i χ²_{k_i}(δ_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareMixture {
    weights: Vec<f64>,
    dofs: Vec<u32>,
    noncentralities: Vec<f64>,
}

const PANEL_TOLERANCE: f64 = 1e-14;
const MAX_PANELS: usize = 4000;

impl ChiSquareMixture {
    pub fn new(weights: Vec<f64>, dofs: Vec<u32>, noncentralities: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != dofs.len() || weights.len() != noncentralities.len() {
            return Err(SdtError::Shape(format!(
                "mixture needs equal, nonzero lengths (weights {}, dofs {}, noncentralities {})",
                weights.len(),
                dofs.len(),
                noncentralities.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(SdtError::Domain(format!("mixture weights must be positive: {weights:?}")));
        }
        if dofs.iter().any(|&k| k == 0) {
            return Err(SdtError::Domain("degrees of freedom must be positive".into()));
        }
        if noncentralities.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(SdtError::Domain(format!(
                "noncentralities must be finite and nonnegative: {noncentralities:?}"
            )));
        }
        Ok(ChiSquareMixture {
            weights,
            dofs,
            noncentralities,
        })
    }

    /// `Σ ζ_i Z_i²` with independent standard normal `Z_i`.
    pub fn central(weights: &[f64]) -> Result<Self> {
        Self::new(weights.to_vec(), vec![1; weights.len()], vec![0.0; weights.len()])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dofs(&self) -> &[u32] {
        &self.dofs
    }

    pub fn noncentralities(&self) -> &[f64] {
        &self.noncentralities
    }

    pub fn with_noncentralities(&self, noncentralities: Vec<f64>) -> Result<Self> {
        Self::new(self.weights.clone(), self.dofs.clone(), noncentralities)
    }

    pub fn mean(&self) -> f64 {
        self.components().map(|(w, k, d)| w * (k + d)).sum()
    }

    pub fn variance(&self) -> f64 {
        self.components().map(|(w, k, d)| 2.0 * w * w * (k + 2.0 * d)).sum()
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.dofs)
            .zip(&self.noncentralities)
            .map(|((&w, &k), &d)| (w, k as f64, d))
    }

    /// `P(Q > x)`; a central mixture with one common weight is a scaled
    /// chi-square and is evaluated directly, anything else by inversion.
    pub fn tail(&self, x: f64) -> Result<f64> {
        match self.scaled_chi_square() {
            Some((w, k)) if !x.is_nan() => Ok(if x <= 0.0 { 1.0 } else { chi_square_sf(k, x / w) }),
            _ => mixture_tail(self, x),
        }
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        quantile_by(self, alpha, |x| self.tail(x))
    }

    fn scaled_chi_square(&self) -> Option<(f64, f64)> {
        let w = self.weights[0];
        let exact = self.noncentralities.iter().all(|&d| d == 0.0)
            && self.weights.iter().all(|&v| (v - w).abs() <= 1e-14 * w);
        exact.then(|| (w, self.dofs.iter().map(|&k| k as f64).sum()))
    }
}

fn chi_square_sf(k: f64, x: f64) -> f64 {
    statrs::function::gamma::gamma_ur(0.5 * k, 0.5 * x)
}

/// Imhof integrand for the mixture scaled so that the largest weight is 1.
struct Imhof {
    lambdas: Vec<f64>,
    dofs: Vec<f64>,
    deltas: Vec<f64>,
    x: f64,
}

impl Imhof {
    fn at(&self, u: f64) -> f64 {
        if u == 0.0 {
            let slope: f64 = self
                .lambdas
                .iter()
                .zip(&self.dofs)
                .zip(&self.deltas)
                .map(|((l, h), d)| l * (h + d))
                .sum();
            return 0.5 * (slope - self.x);
        }
        let mut theta = -0.5 * self.x * u;
        let mut log_rho = 0.0;
        for ((&l, &h), &d) in self.lambdas.iter().zip(&self.dofs).zip(&self.deltas) {
            let lu = l * u;
            let q = 1.0 + lu * lu;
            theta += 0.5 * (h * lu.atan() + d * lu / q);
            log_rho += 0.25 * h * q.ln() + 0.5 * d * lu * lu / q;
        }
        theta.sin() / (u * log_rho.exp())
    }
}

/// `P(Q > x)` for `Q` distributed as the mixture.
pub fn mixture_tail(m: &ChiSquareMixture, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(SdtError::Domain("tail probability requested at NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    let scale = m.weights.iter().fold(0.0f64, |a, &w| a.max(w));
    let xs = x / scale;
    let mean = m.mean() / scale;
    let sd = m.variance().sqrt() / scale;
    if xs > mean + 100.0 * sd.max(1.0) {
        return Ok(0.0);
    }
    let integrand = Imhof {
        lambdas: m.weights.iter().map(|w| w / scale).collect(),
        dofs: m.dofs.iter().map(|&k| k as f64).collect(),
        deltas: m.noncentralities.clone(),
        x: xs,
    };
    let f = |u: f64| integrand.at(u);
    let width = 2.0 * std::f64::consts::PI / xs;
    let mut partial = Vec::with_capacity(64);
    let mut sum = 0.0;
    let mut estimates: Vec<f64> = Vec::new();
    let mut small_run = 0;
    for k in 0..MAX_PANELS {
        let a = k as f64 * width;
        let piece = integrate_adaptive(&f, a, a + width, PANEL_TOLERANCE).map_err(|e| {
            SdtError::Integration(format!("Imhof panel [{a:.4e}, {:.4e}] at x = {x}: {e}", a + width))
        })?;
        sum += piece;
        partial.push(sum);
        small_run = if piece.abs() < 1e-17 { small_run + 1 } else { 0 };
        if small_run >= 3 {
            return finish(sum, x);
        }
        if partial.len() >= 6 {
            let window = &partial[partial.len().saturating_sub(40)..];
            let est = wynn_epsilon(window);
            estimates.push(est);
            let n = estimates.len();
            if n >= 3
                && (estimates[n - 1] - estimates[n - 2]).abs() < 1e-13
                && (estimates[n - 2] - estimates[n - 3]).abs() < 1e-13
            {
                return finish(estimates[n - 1], x);
            }
        }
    }
    Err(SdtError::Integration(format!(
        "Imhof integral at x = {x} did not converge within {MAX_PANELS} panels"
    )))
}

fn finish(integral: f64, x: f64) -> Result<f64> {
    let p = 0.5 + integral / std::f64::consts::PI;
    if !p.is_finite() || !(-1e-7..=1.0 + 1e-7).contains(&p) {
        return Err(SdtError::Integration(format!(
            "Imhof inversion at x = {x} produced {p}"
        )));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Wynn's epsilon extrapolation of a sequence of partial sums.
fn wynn_epsilon(s: &[f64]) -> f64 {
    let n = s.len();
    let mut prev = vec![0.0; n + 1];
    let mut cur = s.to_vec();
    let mut best = s[n - 1];
    for k in 1..n {
        let mut next = Vec::with_capacity(n - k);
        for i in 0..n - k {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 || !d.is_finite() {
                return if k % 2 == 1 { cur[i + 1] } else { best };
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        if k % 2 == 0 {
            best = *next.last().expect("nonempty column");
        }
        prev = cur;
        cur = next;
    }
    best
}

/// The upper `alpha` quantile: `t` with `P(Q > t) = alpha`, by bracketing and bisection.
pub fn mixture_quantile(m: &ChiSquareMixture, alpha: f64) -> Result<f64> {
    quantile_by(m, alpha, |x| mixture_tail(m, x))
}

fn quantile_by<T: Fn(f64) -> Result<f64>>(m: &ChiSquareMixture, alpha: f64, tail: T) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdtError::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut lo = 0.0;
    let mut hi = m.mean() + 5.0 * m.variance().sqrt();
    let mut expansions = 0;
    while tail(hi)? > alpha {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(SdtError::Integration("could not bracket mixture quantile".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-11 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
