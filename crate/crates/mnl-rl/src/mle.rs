//! Regularized maximum-likelihood estimation of stage parameters.
//!
//! Each stage keeps one [`SampleSet`]: the distinct (state, action) feature
//! blocks are registered once as contexts, and every observed transition is a
//! (context, outcome) pair. Loss, gradient and Hessian accumulate one
//! contribution per stored sample with per-context softmax caching, so a pass
//! stays linear in the sample count with a small constant.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Armijo slope fraction for the damped Newton line search.
const ARMIJO: f64 = 1e-4;
/// Backtracking factor for the line search.
const BACKTRACK: f64 = 0.5;
/// Relative rounding-noise allowance when comparing losses near convergence.
const LOSS_NOISE: f64 = 1e-10;
/// Multiplier turning the gradient-norm radius into an ellipsoid radius,
/// valid for self-concordant-like losses.
pub const SELF_CONCORDANCE_FACTOR: f64 = 5.242640687119286; // 1 + 3 sqrt(2)

/// Per-episode regularizer `d * log(k * horizon / delta)`, floored at 1e-8
/// so degenerate settings such as `delta = 1` stay positive definite.
pub fn lambda_mle(k: usize, horizon: usize, dim: usize, delta: f64) -> f64 {
    (dim as f64 * ((k * horizon) as f64 / delta).ln()).max(1e-8)
}

/// Confidence radius requiring the worst-case curvature constant `kappa`.
pub fn radius_baseline(k: usize, horizon: usize, dim: usize, delta: f64, kappa: f64) -> f64 {
    (dim as f64 * ((k * horizon) as f64 / delta).ln()).sqrt() / kappa
}

/// Curvature-free gradient-norm radius `(B + 3) sqrt(d log(k horizon / delta))`.
pub fn radius_mle(k: usize, horizon: usize, dim: usize, delta: f64, param_bound: f64) -> f64 {
    (param_bound + 3.0) * (dim as f64 * ((k * horizon) as f64 / delta).ln()).sqrt()
}

/// Ellipsoid radius for the fitted-Hessian confidence set.
pub fn radius_mle_ellipsoid(k: usize, horizon: usize, dim: usize, delta: f64, param_bound: f64) -> f64 {
    SELF_CONCORDANCE_FACTOR * radius_mle(k, horizon, dim, delta, param_bound)
}

/// An ellipsoid `{ theta : ||theta - center||_shape <= radius }`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub radius: f64,
}

impl Ellipsoid {
    /// Shape-norm distance from the center.
    pub fn mahalanobis(&self, theta: &DVector<f64>) -> f64 {
        let diff = theta - &self.center;
        (&self.shape * &diff).dot(&diff).max(0.0).sqrt()
    }

    /// Membership test with an absolute slack on the radius.
    pub fn contains(&self, theta: &DVector<f64>, tol: f64) -> bool {
        self.mahalanobis(theta) <= self.radius + tol
    }
}

/// Ellipsoid for the curvature-scaled design matrix
/// `gram + (lambda / kappa) I`.
pub fn baseline_ellipsoid(
    center: DVector<f64>,
    gram: &DMatrix<f64>,
    kappa_hat: f64,
    lambda: f64,
    radius: f64,
) -> Ellipsoid {
    let d = center.len();
    let shape = gram + DMatrix::identity(d, d) * (lambda / kappa_hat);
    Ellipsoid { center, shape, radius }
}

/// Ellipsoid shaped by the regularized likelihood Hessian at the fit.
///
/// `beta_hat` is the gradient-norm radius; the stored radius is
/// `SELF_CONCORDANCE_FACTOR * beta_hat`. A Hessian that fails to factor
/// gets one `1e-10` diagonal jitter before the construction gives up.
pub fn mle_ellipsoid(
    center: DVector<f64>,
    hessian: DMatrix<f64>,
    beta_hat: f64,
) -> Result<Ellipsoid> {
    let d = center.len();
    let shape = if Cholesky::new(hessian.clone()).is_some() {
        hessian
    } else {
        let jittered = hessian + DMatrix::identity(d, d) * 1e-10;
        if Cholesky::new(jittered.clone()).is_none() {
            return Err(Error::NotPositiveDefinite {
                context: "mle ellipsoid shape",
            });
        }
        jittered
    };
    Ok(Ellipsoid {
        center,
        shape,
        radius: SELF_CONCORDANCE_FACTOR * beta_hat,
    })
}

/// Result of a Newton fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: DVector<f64>,
    /// Regularized Hessian at the fitted parameters.
    pub hessian: DMatrix<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Passes over the samples that computed loss, gradient and Hessian.
    pub full_passes: usize,
    /// Loss-only passes spent in the line search.
    pub loss_passes: usize,
}

struct Context {
    /// Row-major feature block, one row per reachable state.
    feats: Vec<f64>,
    rows: usize,
}

/// Softmax cache for one context at a fixed parameter.
struct CtxCache {
    logits: Vec<f64>,
    log_z: f64,
    /// Mean feature under the softmax.
    mean: Vec<f64>,
    /// Covariance of the features under the softmax (the per-sample Hessian).
    cov: Vec<f64>,
}

/// Observed transitions of one stage, stored as (context, outcome) pairs.
pub struct SampleSet {
    dim: usize,
    contexts: Vec<Context>,
    counts: Vec<u32>,
    samples: Vec<(u32, u32)>,
}

impl SampleSet {
    pub fn new(dim: usize) -> Self {
        SampleSet { dim, contexts: Vec::new(), counts: Vec::new(), samples: Vec::new() }
    }

    /// Registers a feature block and returns its context id.
    pub fn add_context(&mut self, features: &[DVector<f64>]) -> u32 {
        let mut feats = Vec::with_capacity(features.len() * self.dim);
        for phi in features {
            debug_assert_eq!(phi.len(), self.dim);
            feats.extend_from_slice(phi.as_slice());
        }
        self.contexts.push(Context { feats, rows: features.len() });
        self.counts.push(0);
        (self.contexts.len() - 1) as u32
    }

    /// Records one observed transition.
    pub fn push(&mut self, context: u32, observed: u32) {
        debug_assert!((context as usize) < self.contexts.len());
        debug_assert!((observed as usize) < self.contexts[context as usize].rows);
        self.counts[context as usize] += 1;
        self.samples.push((context, observed));
    }

    /// Number of stored samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn cache_for(&self, ctx: &Context, theta: &DVector<f64>, with_moments: bool) -> CtxCache {
        let d = self.dim;
        let th = theta.as_slice();
        let mut logits = vec![0.0; ctx.rows];
        for (r, l) in logits.iter_mut().enumerate() {
            let row = &ctx.feats[r * d..(r + 1) * d];
            *l = row.iter().zip(th).map(|(x, t)| x * t).sum();
        }
        let shift = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut probs = vec![0.0; ctx.rows];
        for (p, l) in probs.iter_mut().zip(&logits) {
            *p = (l - shift).exp();
            z += *p;
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
        let log_z = shift + z.ln();
        let (mut mean, mut cov) = (vec![0.0; 0], vec![0.0; 0]);
        if with_moments {
            mean = vec![0.0; d];
            cov = vec![0.0; d * d];
            for (r, p) in probs.iter().enumerate() {
                let row = &ctx.feats[r * d..(r + 1) * d];
                for i in 0..d {
                    mean[i] += p * row[i];
                    for j in 0..d {
                        cov[i * d + j] += p * row[i] * row[j];
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] -= mean[i] * mean[j];
                }
            }
        }
        CtxCache { logits, log_z, mean, cov }
    }

    /// Negative log-likelihood plus ridge term, one pass over the samples.
    pub fn loss(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        let caches: Vec<Option<CtxCache>> = self
            .contexts
            .iter()
            .zip(&self.counts)
            .map(|(c, &n)| (n > 0).then(|| self.cache_for(c, theta, false)))
            .collect();
        let mut loss = 0.5 * lambda * theta.norm_squared();
        for &(ctx, obs) in &self.samples {
            let cache = caches[ctx as usize].as_ref().expect("counted context");
            loss += cache.log_z - cache.logits[obs as usize];
        }
        loss
    }

    /// Loss, gradient and regularized Hessian in a single fused pass.
    pub fn loss_grad_hess(
        &self,
        theta: &DVector<f64>,
        lambda: f64,
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let caches: Vec<Option<CtxCache>> = self
            .contexts
            .iter()
            .zip(&self.counts)
            .map(|(c, &n)| (n > 0).then(|| self.cache_for(c, theta, true)))
            .collect();
        let mut loss = 0.5 * lambda * theta.norm_squared();
        let mut grad = theta * lambda;
        let mut hess = DMatrix::identity(d, d) * lambda;
        let gs = grad.as_mut_slice();
        let hs = hess.as_mut_slice();
        for &(ctx, obs) in &self.samples {
            let cache = caches[ctx as usize].as_ref().expect("counted context");
            loss += cache.log_z - cache.logits[obs as usize];
            let row = {
                let c = &self.contexts[ctx as usize];
                &c.feats[obs as usize * d..(obs as usize + 1) * d]
            };
            for i in 0..d {
                gs[i] += cache.mean[i] - row[i];
            }
            // Column-major target, symmetric source: same layout either way.
            for (h, c) in hs.iter_mut().zip(&cache.cov) {
                *h += c;
            }
        }
        (loss, grad, hess)
    }

    /// Regularized Hessian alone, without touching stored outcomes.
    pub fn hessian(&self, theta: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
        self.loss_grad_hess(theta, lambda).2
    }

    /// Damped Newton minimization of the regularized negative log-likelihood.
    ///
    /// Starts from `warm` when given, otherwise from zero. Stops when the
    /// gradient norm reaches `tol`; exceeding `max_iter` returns a
    /// convergence error carrying the best iterate seen.
    pub fn fit(
        &self,
        lambda: f64,
        warm: Option<&DVector<f64>>,
        tol: f64,
        max_iter: usize,
    ) -> Result<FitResult> {
        let d = self.dim;
        let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(d));
        if theta.len() != d {
            return Err(Error::InvalidModel("warm start dimension mismatch".into()));
        }
        if !theta.iter().all(|x| x.is_finite()) || !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::NonFinite { what: "fit inputs" });
        }
        let (mut loss, mut grad, mut hess) = self.loss_grad_hess(&theta, lambda);
        let mut full_passes = 1;
        let mut loss_passes = 0;
        let mut best = (loss, theta.clone(), grad.norm());
        for iter in 0..=max_iter {
            let grad_norm = grad.norm();
            if loss < best.0 {
                best = (loss, theta.clone(), grad_norm);
            }
            if grad_norm <= tol {
                return Ok(FitResult {
                    theta,
                    hessian: hess,
                    loss,
                    grad_norm,
                    iterations: iter,
                    full_passes,
                    loss_passes,
                });
            }
            if iter == max_iter {
                break;
            }
            let chol = Cholesky::new(hess.clone())
                .ok_or(Error::NotPositiveDefinite { context: "newton step" })?;
            let mut dir = -&grad;
            chol.solve_mut(&mut dir);
            let slope = grad.dot(&dir);
            let mut alpha = 1.0;
            let cand = &theta + &dir;
            let (l2, g2, h2) = self.loss_grad_hess(&cand, lambda);
            full_passes += 1;
            // Near the optimum the true decrease sinks below the summation
            // noise of the loss, so the Armijo test goes blind. A full step
            // that keeps the loss flat up to noise while strictly shrinking
            // the gradient still makes progress and is accepted.
            let noise = LOSS_NOISE * (1.0 + loss.abs());
            let armijo_ok = l2 <= loss + ARMIJO * alpha * slope;
            let flat_ok = l2 <= loss + noise && g2.norm() < grad_norm;
            if l2.is_finite() && (armijo_ok || flat_ok) {
                theta = cand;
                loss = l2;
                grad = g2;
                hess = h2;
                continue;
            }
            loop {
                alpha *= BACKTRACK;
                if alpha < 1e-14 {
                    return Err(Error::Convergence {
                        iters: iter,
                        grad_norm: best.2,
                        best: best.1,
                    });
                }
                let cand = &theta + &dir * alpha;
                let l = self.loss(&cand, lambda);
                loss_passes += 1;
                if l.is_finite() && l <= loss + ARMIJO * alpha * slope {
                    theta = cand;
                    break;
                }
            }
            let (l3, g3, h3) = self.loss_grad_hess(&theta, lambda);
            full_passes += 1;
            loss = l3;
            grad = g3;
            hess = h3;
        }
        Err(Error::Convergence {
            iters: max_iter,
            grad_norm: best.2,
            best: best.1,
        })
    }
}

/// Cholesky factor wrapper for repeated inverse-norm queries.
pub struct ShapeFactor {
    chol: Cholesky<f64, Dyn>,
}

impl ShapeFactor {
    /// Factors a symmetric positive definite shape matrix.
    pub fn new(shape: &DMatrix<f64>) -> Result<Self> {
        Cholesky::new(shape.clone())
            .map(|chol| ShapeFactor { chol })
            .ok_or(Error::NotPositiveDefinite { context: "shape factor" })
    }

    /// Squared inverse-shape norm `x' M^{-1} x`.
    pub fn inv_norm_sq(&self, x: &DVector<f64>) -> f64 {
        self.chol.solve(x).dot(x).max(0.0)
    }

    /// Solves `M y = x`.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(x)
    }
}
