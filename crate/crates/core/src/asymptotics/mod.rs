//! Asymptotic matrices of minimum-DPD estimators and the limiting laws of the test statistic.
//!
//! `J = ∫ u uᵀ f^(1+β)`, `ξ = ∫ u f^(1+β)` and `K = ∫ u uᵀ f^(1+2β) − ξξᵀ`.
//! The unrestricted estimator has covariance `J⁻¹ K J⁻¹`; the restricted one
//! `P K P` with `P = J⁻¹ − J⁻¹H(HᵀJ⁻¹H)⁻¹HᵀJ⁻¹`; their difference
//! `Σ̃ = (J⁻¹ − P) K (J⁻¹ − P)`.

mod mixture;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::divergence::{s_divergence_between_members, TuningParams};
use crate::error::{Result, SdtError, StageExt};
use crate::model::{ConstraintSet, ParametricModel};

pub use mixture::{mixture_quantile, mixture_tail, ChiSquareMixture};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DpdMatrices {
    pub j: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub k: DMatrix<f64>,
    pub beta: f64,
    pub theta: Vec<f64>,
}

impl DpdMatrices {
    pub fn j_inverse(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.j)
    }

    /// `J⁻¹ K J⁻¹`, the covariance of `√n(θ̂_β − θ)` at the model.
    pub fn sandwich(&self) -> Result<DMatrix<f64>> {
        let ji = self.j_inverse()?;
        Ok(symmetrize(&(&ji * &self.k * &ji)))
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SdtError::Shape(format!("expected a square matrix, got {:?}", m.shape())));
    }
    let chol = symmetrize(m).cholesky().ok_or_else(|| {
        SdtError::LinearAlgebra(format!("matrix is not positive definite: {:?}", m.as_slice()))
    })?;
    Ok(chol.inverse())
}

/// `J`, `ξ`, `K` from the registered closed form, else by quadrature.
pub fn dpd_matrices(model: &dyn ParametricModel, theta: &[f64], beta: f64) -> Result<DpdMatrices> {
    check_theta(model, theta)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(SdtError::Domain(format!("beta must be nonnegative, got {beta}")));
    }
    if let Some(m) = model.dpd_matrices_closed_form(theta, beta) {
        return Ok(m);
    }
    dpd_matrices_quadrature(model, theta, beta)
}

pub fn dpd_matrices_quadrature(
    model: &dyn ParametricModel,
    theta: &[f64],
    beta: f64,
) -> Result<DpdMatrices> {
    check_theta(model, theta)?;
    let p = model.dim();
    let domain = model.domain(&[theta]);
    let mut j = DMatrix::zeros(p, p);
    let mut k = DMatrix::zeros(p, p);
    let mut xi = DVector::zeros(p);
    for (&x, &w) in domain.nodes().iter().zip(domain.weights()) {
        let logf = model.log_density(theta, x);
        let f1 = (logf * (1.0 + beta)).exp();
        if f1 == 0.0 {
            continue;
        }
        let f2 = (logf * (1.0 + 2.0 * beta)).exp();
        let u = DVector::from_vec(model.score(theta, x));
        let uu = &u * u.transpose();
        j += &uu * (w * f1);
        k += &uu * (w * f2);
        xi += &u * (w * f1);
    }
    k -= &xi * xi.transpose();
    if j.iter().chain(k.iter()).any(|v| !v.is_finite()) {
        return Err(SdtError::Evaluation(format!(
            "non-finite DPD matrices at theta = {theta:?}, beta = {beta}"
        )));
    }
    Ok(DpdMatrices {
        j,
        xi,
        k,
        beta,
        theta: theta.to_vec(),
    })
}

fn check_theta(model: &dyn ParametricModel, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(SdtError::Shape(format!(
            "parameter has length {}, expected {}",
            theta.len(),
            model.dim()
        )));
    }
    if !model.in_parameter_space(theta) {
        return Err(SdtError::Domain(format!("{theta:?} is outside the parameter space")));
    }
    Ok(())
}

/// `P = J⁻¹ − J⁻¹H(HᵀJ⁻¹H)⁻¹HᵀJ⁻¹`.
pub fn restricted_projection(j: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if h.nrows() != j.nrows() {
        return Err(SdtError::Shape(format!(
            "J is {:?} but H is {:?}",
            j.shape(),
            h.shape()
        )));
    }
    let ji = spd_inverse(j)?;
    let jih = &ji * h;
    let middle = spd_inverse(&(h.transpose() * &jih))?;
    Ok(symmetrize(&(&ji - &jih * middle * jih.transpose())))
}

/// `(J⁻¹ − P) V (J⁻¹ − P)`.
pub fn sigma_tilde(j: &DMatrix<f64>, p: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if j.shape() != p.shape() || j.shape() != v.shape() {
        return Err(SdtError::Shape(format!(
            "J {:?}, P {:?} and V {:?} must share one square shape",
            j.shape(),
            p.shape(),
            v.shape()
        )));
    }
    let d = spd_inverse(j)? - p;
    Ok(symmetrize(&(&d * v * &d)))
}

/// Hessian in `θ₁` of `S_(γ,λ)(f_θ₁, f_θ)` at `θ₁ = θ`, by central second differences.
pub fn a_gamma_matrix(model: &dyn ParametricModel, theta: &[f64], tp: &TuningParams) -> Result<DMatrix<f64>> {
    check_theta(model, theta)?;
    let p = model.dim();
    let steps: Vec<f64> = theta.iter().map(|t| 1e-4 * (1.0 + t.abs())).collect();
    let s = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut t1 = theta.to_vec();
        for &(i, d) in shift {
            t1[i] += d;
        }
        s_divergence_between_members(model, &t1, theta, tp)
    };
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let h = steps[i];
        a[(i, i)] = (s(&[(i, h)])? + s(&[(i, -h)])?) / (h * h);
        for jdx in 0..i {
            let g = steps[jdx];
            let v = (s(&[(i, h), (jdx, g)])? - s(&[(i, h), (jdx, -g)])? - s(&[(i, -h), (jdx, g)])?
                + s(&[(i, -h), (jdx, -g)])?)
                / (4.0 * h * g);
            a[(i, jdx)] = v;
            a[(jdx, i)] = v;
        }
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.min() < -1e-6 * max.max(1e-300) {
        return Err(SdtError::Evaluation(format!(
            "divergence Hessian is not positive semidefinite (eigenvalues {:?}); try a smaller difference step",
            eig.eigenvalues.as_slice()
        )));
    }
    Ok(a)
}

fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// The limiting null law `Σ ζ_i Z_i²` and the matrices it comes from.
#[derive(Debug, Clone, Serialize)]
pub struct NullLawSpec {
    #[serde(serialize_with = "serialize_matrix")]
    pub a_gamma: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub sigma_tilde: DMatrix<f64>,
    pub zetas: Vec<f64>,
    pub r: usize,
    /// Columns `u_i` with `Σ̃^(1/2) A Σ̃^(1/2) u_i = ζ_i u_i`.
    #[serde(skip)]
    pub eigenvectors: DMatrix<f64>,
    #[serde(skip)]
    sigma_half: DMatrix<f64>,
    #[serde(skip)]
    sigma_half_pinv: DMatrix<f64>,
}

impl NullLawSpec {
    pub fn from_matrices(a_gamma: DMatrix<f64>, sigma_tilde: DMatrix<f64>) -> Result<Self> {
        if a_gamma.shape() != sigma_tilde.shape() || !a_gamma.is_square() {
            return Err(SdtError::Shape("A_γ and Σ̃ must be square of equal size".into()));
        }
        let p = a_gamma.nrows();
        let eig = symmetrize(&sigma_tilde).symmetric_eigen();
        let smax = eig.eigenvalues.amax();
        let mut half = DMatrix::zeros(p, p);
        let mut half_pinv = DMatrix::zeros(p, p);
        for i in 0..p {
            let v = eig.eigenvalues[i];
            if v > EIGEN_THRESHOLD * smax {
                let col = eig.eigenvectors.column(i);
                half += col * col.transpose() * v.sqrt();
                half_pinv += col * col.transpose() / v.sqrt();
            }
        }
        let m = symmetrize(&(&half * &a_gamma * &half));
        let meig = m.symmetric_eigen();
        let mmax = meig.eigenvalues.amax();
        let mut order: Vec<usize> = (0..p)
            .filter(|&i| mmax > 0.0 && meig.eigenvalues[i] > EIGEN_THRESHOLD * mmax)
            .collect();
        order.sort_by(|&a, &b| meig.eigenvalues[b].total_cmp(&meig.eigenvalues[a]));
        let zetas: Vec<f64> = order.iter().map(|&i| meig.eigenvalues[i]).collect();
        let cols: Vec<DVector<f64>> = order.iter().map(|&i| meig.eigenvectors.column(i).into_owned()).collect();
        let eigenvectors = if cols.is_empty() {
            DMatrix::zeros(p, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Ok(NullLawSpec {
            a_gamma,
            sigma_tilde,
            r: zetas.len(),
            zetas,
            eigenvectors,
            sigma_half: half,
            sigma_half_pinv: half_pinv,
        })
    }

    /// The central mixture `Σ ζ_i χ²_1`.
    pub fn mixture(&self) -> Result<ChiSquareMixture> {
        if self.zetas.is_empty() {
            return Err(SdtError::Evaluation(
                "null law is degenerate (no nonzero eigenvalues)".into(),
            ));
        }
        ChiSquareMixture::central(&self.zetas)
    }
}

/// Assembles `A_γ`, `Σ̃_β` and the eigenvalues `ζ_i` at a null parameter.
pub fn null_law(
    model: &dyn ParametricModel,
    theta0: &[f64],
    beta: f64,
    tp: &TuningParams,
    constraints: &ConstraintSet,
) -> Result<NullLawSpec> {
    check_theta(model, theta0)?;
    if constraints.p() != model.dim() {
        return Err(SdtError::Shape(format!(
            "constraints are for p = {}, model has p = {}",
            constraints.p(),
            model.dim()
        )));
    }
    let scale = theta0.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    if !constraints.is_satisfied(theta0, 1e-6 * scale) {
        return Err(SdtError::Constraint(format!(
            "null law requested at {theta0:?}, where h(θ) = {:?}",
            constraints.h(theta0).as_slice()
        )));
    }
    constraints.check_rank_at(theta0)?;
    let m = dpd_matrices(model, theta0, beta).stage("dpd matrices")?;
    let h = constraints.jacobian(theta0);
    let p = restricted_projection(&m.j, &h).stage("restricted projection")?;
    let st = sigma_tilde(&m.j, &p, &m.k)?;
    let a = a_gamma_matrix(model, theta0, tp).stage("divergence Hessian")?;
    NullLawSpec::from_matrices(a, st)
}

/// Noncentral law of `WᵀA_γW` for `W ~ N(Δ*, Σ̃)`.
pub fn noncentral_shift(spec: &NullLawSpec, delta_star: &[f64]) -> Result<ChiSquareMixture> {
    let p = spec.sigma_tilde.nrows();
    if delta_star.len() != p {
        return Err(SdtError::Shape(format!(
            "shift has length {}, expected {p}",
            delta_star.len()
        )));
    }
    let d = DVector::from_column_slice(delta_star);
    let m = &spec.sigma_half_pinv * &d;
    let back = &spec.sigma_half * &m;
    let miss = (&back - &d).amax();
    if miss > 1e-6 * d.amax().max(1e-12) {
        return Err(SdtError::Domain(format!(
            "shift {delta_star:?} lies outside the range of Σ̃ (residual {miss:.3e})"
        )));
    }
    let deltas: Vec<f64> = (0..spec.r)
        .map(|i| spec.eigenvectors.column(i).dot(&m).powi(2))
        .collect();
    spec.mixture()?.with_noncentralities(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_normal_model, make_poisson_model};
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn fisher_information_at_beta_zero() {
        let m = dpd_matrices(&make_normal_model(), &[0.0, 1.0], 0.0).unwrap();
        assert!((&m.j - diag(&[1.0, 2.0])).amax() < 1e-14);
        assert!(m.xi.amax() < 1e-14);
        let q = dpd_matrices_quadrature(&make_normal_model(), &[0.0, 1.0], 0.0).unwrap();
        assert!((&q.j - diag(&[1.0, 2.0])).amax() < 1e-8);
        assert!((&q.k - diag(&[1.0, 2.0])).amax() < 1e-8);
        assert!(q.xi.amax() < 1e-8);
        let pm = dpd_matrices(&make_poisson_model(), &[2.0], 0.0).unwrap();
        assert!((pm.j[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn closed_form_matrices_match_quadrature() {
        let model = make_normal_model();
        for beta in [0.1, 0.5, 1.0] {
            let c = dpd_matrices(&model, &[0.4, 1.7], beta).unwrap();
            let q = dpd_matrices_quadrature(&model, &[0.4, 1.7], beta).unwrap();
            assert!((&c.j - &q.j).amax() < 1e-8);
            assert!((&c.k - &q.k).amax() < 1e-8);
            assert!((&c.xi - &q.xi).amax() < 1e-8);
        }
    }

    #[test]
    fn projection_examples() {
        let j = diag(&[1.0, 2.0]);
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let p = restricted_projection(&j, &h).unwrap();
        assert!((&p - diag(&[0.0, 0.5])).amax() < 1e-15);
        let full = restricted_projection(&j, &DMatrix::identity(2, 2)).unwrap();
        assert!(full.amax() < 1e-15);
        let st = sigma_tilde(&j, &p, &diag(&[1.0, 0.5])).unwrap();
        assert!((&st - diag(&[1.0, 0.0])).amax() < 1e-15);
        let zero = sigma_tilde(&j, &spd_inverse(&j).unwrap(), &diag(&[3.0, 1.0])).unwrap();
        assert!(zero.amax() < 1e-15);
        assert!(restricted_projection(&diag(&[1.0, 0.0]), &h).is_err());
    }

    #[test]
    fn a_gamma_is_fisher_information_at_gamma_zero() {
        let tp = TuningParams::new(0.0, 0.0).unwrap();
        let a = a_gamma_matrix(&make_normal_model(), &[0.0, 1.0], &tp).unwrap();
        assert!((&a - diag(&[1.0, 2.0])).amax() < 1e-4);
    }

    #[test]
    fn a_gamma_does_not_depend_on_lambda() {
        let model = make_normal_model();
        let base = a_gamma_matrix(&model, &[0.3, 1.2], &TuningParams::new(0.4, 0.0).unwrap()).unwrap();
        for l in [-0.5, 1.0] {
            let a = a_gamma_matrix(&model, &[0.3, 1.2], &TuningParams::new(0.4, l).unwrap()).unwrap();
            assert!((&a - &base).amax() < 1e-4);
        }
    }

    #[test]
    fn noncentral_shift_rank_one() {
        let st = diag(&[2.0, 0.0]);
        let spec = NullLawSpec::from_matrices(diag(&[1.5, 3.0]), st).unwrap();
        assert_eq!(spec.r, 1);
        assert!((spec.zetas[0] - 3.0).abs() < 1e-12);
        let c = noncentral_shift(&spec, &[0.0, 0.0]).unwrap();
        assert_eq!(c.noncentralities(), &[0.0]);
        let s = noncentral_shift(&spec, &[0.7, 0.0]).unwrap();
        assert!((s.noncentralities()[0] - 0.49 / 2.0).abs() < 1e-12);
        assert!(noncentral_shift(&spec, &[0.0, 1.0]).is_err());
    }

    fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
            let b = DMatrix::from_vec(n, n, v);
            &b * b.transpose() + DMatrix::identity(n, n) * 0.5
        })
    }

    proptest! {
        #[test]
        fn projection_annihilates_constraints(j in spd(3), hv in prop::collection::vec(-1.0f64..1.0, 3)) {
            let h = DMatrix::from_column_slice(3, 1, &hv);
            prop_assume!(h.norm() > 0.1);
            let p = restricted_projection(&j, &h).unwrap();
            prop_assert!((&p * &h).amax() < 1e-12 * (1.0 + p.amax()));
            let eig = p.symmetric_eigen();
            prop_assert!(eig.eigenvalues.min() > -1e-10);
            let rank = eig.eigenvalues.iter().filter(|&&v| v > 1e-10 * eig.eigenvalues.amax()).count();
            prop_assert_eq!(rank, 2);
        }

        #[test]
        fn sigma_tilde_is_psd(j in spd(2), v in spd(2), hv in prop::collection::vec(-1.0f64..1.0, 2)) {
            let h = DMatrix::from_column_slice(2, 1, &hv);
            prop_assume!(h.norm() > 0.1);
            let p = restricted_projection(&j, &h).unwrap();
            let st = sigma_tilde(&j, &p, &v).unwrap();
            prop_assert!(st.clone().symmetric_eigen().eigenvalues.min() > -1e-10 * (1.0 + st.amax()));
        }
    }
}
