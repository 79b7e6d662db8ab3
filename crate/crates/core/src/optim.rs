//! Derivative-free Powell minimization and Levenberg–Marquardt least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN: f64 = 1.618_033_988_749_895;
const TINY: f64 = 1e-25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowellParams {
    /// Initial length of every search direction.
    pub step0: f64,
    /// Relative cost decrease per cycle below which the search stops.
    pub ftol: f64,
    /// Line-search bracket width, in parameter units, at which golden-section stops.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for PowellParams {
    fn default() -> Self {
        Self {
            step0: 0.01,
            ftol: 1e-8,
            xtol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowellResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        let v = (self.f)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteCost)
        }
    }

    fn along(&mut self, x: &[f64], d: &[f64], a: f64) -> Result<f64> {
        let p: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        self.eval(&p)
    }
}

/// Minimizes `f` along `x + a·d`. Returns the new point and its value.
fn line_minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    d: &[f64],
    xtol: f64,
) -> Result<(Vec<f64>, f64)> {
    let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dnorm == 0.0 {
        return Ok((x.to_vec(), fx));
    }

    // bracket: a < b < c (or reversed) with f(b) <= f(a), f(b) <= f(c)
    let (mut a, mut fa) = (0.0, fx);
    let (mut b, mut fb) = (1.0, f.along(x, d, 1.0)?);
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLDEN * (b - a);
    let mut fc = f.along(x, d, c)?;
    let mut expansions = 0;
    while fc < fb && expansions < 80 {
        a = b;
        b = c;
        fb = fc;
        c = b + GOLDEN * (b - a);
        fc = f.along(x, d, c)?;
        expansions += 1;
    }
    if fc < fb {
        // unbounded in this direction as far as we searched
        b = c;
        fb = fc;
    } else {
        // golden-section search on [a, c] keeping the best interior point b
        let r = 1.0 / GOLDEN;
        let (mut lo, mut hi) = if a < c { (a, c) } else { (c, a) };
        while (hi - lo) * dnorm > xtol {
            let (u, v) = if (b - lo) > (hi - b) {
                (lo + (b - lo) * r, b)
            } else {
                (b, b + (hi - b) * (1.0 - r))
            };
            let (fu, fv) = if u == b {
                (fb, f.along(x, d, v)?)
            } else {
                (f.along(x, d, u)?, fb)
            };
            if fu <= fv {
                hi = v;
                b = u;
                fb = fu;
            } else {
                lo = u;
                b = v;
                fb = fv;
            }
        }
    }
    let p = x.iter().zip(d).map(|(xi, di)| xi + b * di).collect();
    if fb <= fx {
        Ok((p, fb))
    } else {
        Ok((x.to_vec(), fx))
    }
}

/// Powell's conjugate-direction method.
///
/// Each cycle minimizes along every direction in turn, then replaces the
/// direction of largest decrease with the net displacement of the cycle
/// when the extrapolation test allows it. Convergence is only accepted
/// from a cycle that ran on the coordinate directions; otherwise the
/// direction set is reset and the search continues, which guards against
/// a set that has collapsed onto a subspace.
pub fn powell_minimize<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    params: &PowellParams,
) -> Result<PowellResult> {
    let n = x0.len();
    let mut f = Counted { f };
    let mut x = x0.to_vec();
    let mut fx = f.eval(&x)?;
    let axes = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut d = vec![0.0; n];
                d[i] = params.step0;
                d
            })
            .collect()
    };
    let mut dirs = axes();
    let mut fresh = true;

    for iter in 1..=params.max_iter {
        if fx == 0.0 {
            return Ok(PowellResult {
                x,
                f: fx,
                iterations: iter - 1,
                converged: true,
            });
        }
        let (x_start, f_start) = (x.clone(), fx);
        let (mut big, mut delta) = (0usize, 0.0f64);
        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            (x, fx) = line_minimize(&mut f, &x, fx, d, params.xtol)?;
            if before - fx > delta {
                delta = before - fx;
                big = i;
            }
        }
        if 2.0 * (f_start - fx) <= params.ftol * (f_start.abs() + fx.abs()) + TINY {
            if fresh {
                return Ok(PowellResult {
                    x,
                    f: fx,
                    iterations: iter,
                    converged: true,
                });
            }
            dirs = axes();
            fresh = true;
            continue;
        }
        let shift: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let extrapolated: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
        let fe = f.eval(&extrapolated)?;
        if fe < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - delta).powi(2)
                - delta * (f_start - fe).powi(2);
            if t < 0.0 {
                (x, fx) = line_minimize(&mut f, &x, fx, &shift, params.xtol)?;
                dirs[big] = dirs[n - 1].clone();
                dirs[n - 1] = shift;
                fresh = false;
            }
        }
    }
    Ok(PowellResult {
        x,
        f: fx,
        iterations: params.max_iter,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub lambda0: f64,
    pub fd_step: f64,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            fd_step: 1e-6,
            grad_tol: 1e-10,
            rel_tol: 1e-12,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// `½‖r‖²` at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub trace: Vec<f64>,
}

fn half_sq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn residual_vec<R>(residual: &R, x: &[f64]) -> Result<DVector<f64>>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let r = residual(x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCost);
    }
    Ok(DVector::from_vec(r))
}

/// Forward-difference Jacobian with absolute step `h`.
pub fn forward_jacobian<R>(residual: &R, x: &[f64], r0: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let rk = residual_vec(residual, &xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((rk - r0) / h));
    }
    Ok(jac)
}

/// Minimizes `½‖r(x)‖²` by damped Gauss–Newton steps
/// `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr`.
///
/// Hitting the iteration cap is not an error: the best iterate is returned
/// with `converged = false`.
pub fn levenberg_marquardt<R>(residual: R, x0: &[f64], params: &LmParams) -> Result<LmResult>
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residual_vec(&residual, &x)?;
    let mut cost = half_sq(&r);
    let mut trace = vec![cost];
    let mut lambda = params.lambda0;

    for iter in 0..params.max_iter {
        let jac = forward_jacobian(&residual, &x, &r, params.fd_step)?;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.norm() < params.grad_tol || cost == 0.0 {
            return Ok(LmResult { x, cost, iterations: iter, converged: true, trace });
        }
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = a.cholesky().map(|c| c.solve(&(-&grad)));
            if let Some(step) = step {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let rt = residual_vec(&residual, &trial);
                if let Ok(rt) = rt {
                    let ct = half_sq(&rt);
                    if ct < cost {
                        let rel = (cost - ct) / cost;
                        x = trial;
                        r = rt;
                        cost = ct;
                        trace.push(cost);
                        lambda = (lambda / 10.0).max(1e-15);
                        if rel < params.rel_tol {
                            return Ok(LmResult {
                                x,
                                cost,
                                iterations: iter + 1,
                                converged: true,
                                trace,
                            });
                        }
                        break;
                    }
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent step exists at machine precision
                return Ok(LmResult { x, cost, iterations: iter + 1, converged: true, trace });
            }
        }
    }
    Ok(LmResult {
        x,
        cost,
        iterations: params.max_iter,
        converged: false,
        trace,
    })
}
