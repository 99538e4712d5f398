use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdtError};

type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Relative singular-value threshold for the rank condition on `H(θ)`.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// The restrictions `h(θ) = 0` defining the null parameter space.
#[derive(Clone)]
pub struct ConstraintSet {
    p: usize,
    r: usize,
    kind: Kind,
}

#[derive(Clone)]
enum Kind {
    /// `h(θ) = Cθ − target`.
    Affine { c: DMatrix<f64>, target: DVector<f64> },
    Nonlinear { h: VectorFn, jacobian: Option<JacobianFn> },
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Affine { c, target } => f
                .debug_struct("ConstraintSet")
                .field("p", &self.p)
                .field("r", &self.r)
                .field("c", &c.as_slice())
                .field("target", &target.as_slice())
                .finish(),
            Kind::Nonlinear { .. } => f
                .debug_struct("ConstraintSet")
                .field("p", &self.p)
                .field("r", &self.r)
                .field("kind", &"nonlinear")
                .finish(),
        }
    }
}

/// `h(θ) = Cθ − target` for an `r × p` matrix `C` of full row rank.
pub fn make_affine_constraint(c: DMatrix<f64>, target: Vec<f64>) -> Result<ConstraintSet> {
    let (r, p) = c.shape();
    if r == 0 || r > p {
        return Err(SdtError::Constraint(format!(
            "need 1 <= r <= p restrictions, got a {r}x{p} matrix"
        )));
    }
    if target.len() != r {
        return Err(SdtError::Shape(format!(
            "constraint matrix has {r} rows but target has {} entries",
            target.len()
        )));
    }
    if c.iter().chain(&target).any(|v| !v.is_finite()) {
        return Err(SdtError::Constraint("constraint entries must be finite".into()));
    }
    check_rank(&c.transpose())?;
    Ok(ConstraintSet {
        p,
        r,
        kind: Kind::Affine {
            c,
            target: DVector::from_vec(target),
        },
    })
}

fn check_rank(h: &DMatrix<f64>) -> Result<()> {
    let sv = h.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0 && min > RANK_TOLERANCE * max) {
        return Err(SdtError::Constraint(format!(
            "constraint Jacobian is rank deficient (singular values {:?})",
            sv.as_slice()
        )));
    }
    Ok(())
}

impl ConstraintSet {
    /// Fixes the listed coordinates of a `p`-dimensional parameter.
    pub fn fix(p: usize, fixings: &[(usize, f64)]) -> Result<Self> {
        let mut c = DMatrix::zeros(fixings.len(), p);
        for (row, &(idx, _)) in fixings.iter().enumerate() {
            if idx >= p {
                return Err(SdtError::Constraint(format!(
                    "coordinate {idx} out of range for p = {p}"
                )));
            }
            c[(row, idx)] = 1.0;
        }
        make_affine_constraint(c, fixings.iter().map(|f| f.1).collect())
    }

    /// General restrictions; without an analytic Jacobian, central differences are used.
    pub fn nonlinear<H>(p: usize, r: usize, h: H, jacobian: Option<JacobianFn>) -> Result<Self>
    where
        H: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if r == 0 || r > p {
            return Err(SdtError::Constraint(format!("need 1 <= r <= p, got r = {r}, p = {p}")));
        }
        Ok(ConstraintSet {
            p,
            r,
            kind: Kind::Nonlinear {
                h: Arc::new(h),
                jacobian,
            },
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, Kind::Affine { .. })
    }

    /// `(C, target)` for affine sets.
    pub fn affine_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &self.kind {
            Kind::Affine { c, target } => Some((c, target)),
            Kind::Nonlinear { .. } => None,
        }
    }

    pub fn h(&self, theta: &[f64]) -> DVector<f64> {
        match &self.kind {
            Kind::Affine { c, target } => c * DVector::from_column_slice(theta) - target,
            Kind::Nonlinear { h, .. } => DVector::from_vec(h(theta)),
        }
    }

    /// `H(θ)`, the `p × r` matrix of partials `∂h_j/∂θ_i`.
    pub fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            Kind::Affine { c, .. } => c.transpose(),
            Kind::Nonlinear { jacobian: Some(j), .. } => j(theta),
            Kind::Nonlinear { h, jacobian: None } => {
                let mut out = DMatrix::zeros(self.p, self.r);
                for i in 0..self.p {
                    let step = 1e-6 * (1.0 + theta[i].abs());
                    let mut up = theta.to_vec();
                    let mut dn = theta.to_vec();
                    up[i] += step;
                    dn[i] -= step;
                    let (hu, hd) = (h(&up), h(&dn));
                    for j in 0..self.r {
                        out[(i, j)] = (hu[j] - hd[j]) / (2.0 * step);
                    }
                }
                out
            }
        }
    }

    /// Rank check of `H(θ)` at a point.
    pub fn check_rank_at(&self, theta: &[f64]) -> Result<()> {
        check_rank(&self.jacobian(theta))
    }

    pub fn is_satisfied(&self, theta: &[f64], tolerance: f64) -> bool {
        self.h(theta).amax() <= tolerance
    }

    /// `(index, value)` pairs when every restriction fixes a single coordinate.
    pub fn fixed_coordinates(&self) -> Option<Vec<(usize, f64)>> {
        let (c, target) = self.affine_parts()?;
        let mut out = Vec::with_capacity(self.r);
        for row in 0..self.r {
            let nonzero: Vec<usize> = (0..self.p).filter(|&j| c[(row, j)] != 0.0).collect();
            if nonzero.len() != 1 {
                return None;
            }
            let j = nonzero[0];
            if out.iter().any(|&(k, _)| k == j) {
                return None;
            }
            out.push((j, target[row] / c[(row, j)]));
        }
        out.sort_by_key(|&(j, _)| j);
        Some(out)
    }

    /// Particular solution and orthonormal null-space basis of an affine set.
    pub(crate) fn affine_parameterization(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let (c, target) = self.affine_parts()?;
        let cct = c * c.transpose();
        let particular = c.transpose() * cct.cholesky()?.solve(target);
        let eig = (c.transpose() * c).symmetric_eigen();
        let scale = eig.eigenvalues.amax();
        let cols: Vec<DVector<f64>> = (0..self.p)
            .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect();
        let basis = if cols.is_empty() {
            DMatrix::zeros(self.p, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Some((particular, basis))
    }
}
