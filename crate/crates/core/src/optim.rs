//! Unconstrained smooth minimization: BFGS with backtracking, and a
//! Nelder–Mead fallback for starts where the quasi-Newton iteration stalls.

use nalgebra::{DMatrix, DVector};

/// A smooth objective on `ℝ^d`.
pub trait Problem {
    /// Value and gradient, or `None` outside the objective's domain.
    fn eval(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;

    /// Stationarity measure compared against the tolerance (default: max-norm of the gradient).
    fn measure(&self, _x: &[f64], grad: &[f64]) -> f64 {
        grad.iter().fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            tolerance: 1e-9,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub measure: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS from `x0`; on a stall, Nelder–Mead polishing followed by another BFGS pass.
pub fn minimize<P: Problem + ?Sized>(problem: &P, x0: &[f64], opts: &OptimOptions) -> Option<OptimOutcome> {
    let first = bfgs(problem, x0, opts.max_iterations, opts.tolerance)?;
    if first.converged {
        return Some(polish(problem, first, opts));
    }
    if first.iterations >= opts.max_iterations {
        return Some(first);
    }
    let remaining = opts.max_iterations - first.iterations;
    let (nm_x, nm_iter) = nelder_mead(problem, &first.x, remaining.max(50) * 4);
    let budget = remaining.saturating_sub(nm_iter / 4).max(1);
    let second = bfgs(problem, &nm_x, budget, opts.tolerance)?;
    let iterations = first.iterations + nm_iter / 4 + second.iterations;
    let best = if second.value <= first.value || second.converged {
        second
    } else {
        first
    };
    Some(OptimOutcome { iterations, ..best })
}

/// A short extra pass at a much tighter tolerance. The gradient test is not
/// scale free, so data on a large scale stop early without it.
fn polish<P: Problem + ?Sized>(problem: &P, done: OptimOutcome, opts: &OptimOptions) -> OptimOutcome {
    let rounding = 1e-12 * (1.0 + done.value.abs());
    match bfgs(problem, &done.x, 100, opts.tolerance * POLISH_FACTOR) {
        Some(p) if p.measure < done.measure && p.value <= done.value + rounding => OptimOutcome {
            iterations: done.iterations + p.iterations,
            converged: true,
            ..p
        },
        _ => done,
    }
}

const POLISH_FACTOR: f64 = 1e-4;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton iteration with an Armijo backtracking line search.
///
/// Near the optimum the objective difference drops below its rounding level;
/// a step is then also accepted when the value does not visibly increase and
/// the stationarity measure decreases.
pub fn bfgs<P: Problem + ?Sized>(
    problem: &P,
    x0: &[f64],
    max_iterations: usize,
    tolerance: f64,
) -> Option<OptimOutcome> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = problem.eval(&x)?;
    if !f.is_finite() {
        return None;
    }
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;
    let mut measure = problem.measure(&x, &g);
    let mut iterations = 0;
    while iterations < max_iterations {
        if measure <= tolerance {
            return Some(OptimOutcome { x, value: f, gradient: g, measure, iterations, converged: true });
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) || !slope.is_finite() {
            h = DMatrix::identity(d, d);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut alpha = 1.0;
        if fresh {
            // keep the first, unscaled steepest-descent step modest
            alpha = (1.0 / max_abs(&dir)).min(1.0);
        }
        let rounding = 1e-10 * (1.0 + f.abs());
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            if let Some((fnew, gnew)) = problem.eval(&xn) {
                if fnew.is_finite() && gnew.iter().all(|v| v.is_finite()) {
                    if fnew <= f + 1e-4 * alpha * slope {
                        accepted = Some((xn, fnew, gnew));
                        break;
                    }
                    if fnew <= f + rounding {
                        let mn = problem.measure(&xn, &gnew);
                        if mn < measure {
                            accepted = Some((xn, fnew, gnew));
                            break;
                        }
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if !fresh {
                h = DMatrix::identity(d, d);
                fresh = true;
                continue;
            }
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * yy.sqrt() && sy.is_finite() {
            if fresh {
                h = DMatrix::identity(d, d) * (sy / yy);
                fresh = false;
            }
            let sv = DVector::from_vec(s);
            let yv = DVector::from_vec(y);
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H − ρ(s·(Hy)ᵀ + (Hy)·sᵀ) + (ρ²·yᵀHy + ρ)·s·sᵀ
            h = &h - (&sv * hy.transpose() + &hy * sv.transpose()) * rho
                + (&sv * sv.transpose()) * (rho * rho * yhy + rho);
        }
        x = xn;
        f = fnew;
        g = gnew;
        measure = problem.measure(&x, &g);
    }
    let converged = measure <= tolerance;
    Some(OptimOutcome { x, value: f, gradient: g, measure, iterations, converged })
}

/// Derivative-free simplex search; returns the best vertex and the evaluation count.
pub fn nelder_mead<P: Problem + ?Sized>(problem: &P, x0: &[f64], max_evals: usize) -> (Vec<f64>, usize) {
    let d = x0.len();
    let value = |x: &[f64]| -> f64 {
        match problem.eval(x) {
            Some((v, _)) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), value(x0)));
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += 0.05 * (1.0 + x0[i].abs());
        let fv = value(&v);
        simplex.push((v, fv));
    }
    let mut evals = d + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-15 * (1.0 + best.abs()) && diameter <= 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(v, _)| v[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = value(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = value(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = along(0.5);
                let fc = value(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = value(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let b = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = vertex.0.iter().zip(&b).map(|(x, y)| y + 0.5 * (x - y)).collect();
                    let fv = value(&v);
                    *vertex = (v, fv);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex.swap_remove(0).0, evals)
}
