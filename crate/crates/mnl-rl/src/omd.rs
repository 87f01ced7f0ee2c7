//! Online mirror-descent parameter estimation with constant per-episode cost.
//!
//! Each stage keeps one estimate and one cumulative look-ahead Hessian. An
//! update consumes a single multinomial observation, takes one projected
//! quadratic step in the local norm, and folds the Hessian at the new iterate
//! back into the cumulative matrix, so storage and work per episode do not
//! grow with the episode count.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::log_sum_exp;
use crate::mle::Ellipsoid;

/// Bisection tolerance on the constraint norm when projecting onto the ball.
pub const PROJECTION_TOL: f64 = 1e-10;

/// Iteration cap for the projection bisection.
pub const PROJECTION_MAX_ITERS: usize = 200;

/// Default step size: log(1 + U)/2 + B + 1.
pub fn eta_default(max_reachable: usize, param_bound: f64) -> f64 {
    0.5 * (1.0 + max_reachable as f64).ln() + param_bound + 1.0
}

/// Default regularizer: 84 sqrt(2) eta (B + d).
pub fn lambda_default(eta: f64, param_bound: f64, dim: usize) -> f64 {
    84.0 * std::f64::consts::SQRT_2 * eta * (param_bound + dim as f64)
}

/// Confidence radius for the mirror-descent estimate after `k` episodes.
pub fn radius_omd(
    k: usize,
    horizon: usize,
    dim: usize,
    delta: f64,
    param_bound: f64,
    max_reachable: usize,
    eta: f64,
    lambda: f64,
) -> f64 {
    let k = k as f64;
    let tail_log = (2.0 * horizon as f64 * (1.0 + 2.0 * k).sqrt() / delta).ln();
    let head = 3.0 * (1.0 + (max_reachable as f64 + 1.0) * k).ln() + 3.0;
    let mid = 17.0 / 16.0 * lambda + 2.0 * lambda.sqrt() * tail_log + 16.0 * tail_log * tail_log;
    let drift = 6.0_f64.sqrt()
        * (7.0 * eta / 6.0)
        * dim as f64
        * (1.0 + (k + 1.0) / (2.0 * lambda)).ln();
    (2.0 * eta * (head * mid + 2.0 + drift) + 4.0 * lambda * param_bound).sqrt()
}

/// Loss, gradient, and Hessian of one multinomial observation.
///
/// `features` holds one vector per outcome and `observed` indexes the outcome
/// that occurred. The Hessian is the softmax covariance of the features, so it
/// is symmetric positive semidefinite.
pub fn per_episode_loss_grad_hess(
    theta: &DVector<f64>,
    features: &[DVector<f64>],
    observed: usize,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    assert!(!features.is_empty(), "empty outcome set");
    assert!(observed < features.len(), "observed outcome out of range");
    let dim = theta.len();
    let logits: Vec<f64> = features.iter().map(|phi| phi.dot(theta)).collect();
    let log_z = log_sum_exp(&logits);
    let probs: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();

    let loss = log_z - logits[observed];
    let mut mean = DVector::zeros(dim);
    for (phi, &p) in features.iter().zip(&probs) {
        mean.axpy(p, phi, 1.0);
    }
    let grad = &mean - &features[observed];
    let mut hess = DMatrix::zeros(dim, dim);
    for (phi, &p) in features.iter().zip(&probs) {
        hess.syger(p, phi, phi, 1.0);
    }
    hess.syger(-1.0, &mean, &mean, 1.0);
    hess.fill_upper_triangle_with_lower_triangle();
    (loss, grad, hess)
}

/// Projects `point` onto the Euclidean ball of radius `bound` in the norm
/// induced by the positive-definite matrix `shape`.
///
/// Inside the ball the point is returned unchanged. Otherwise the constrained
/// minimizer satisfies theta = (shape + mu I)^-1 shape point for a multiplier
/// mu >= 0, located by bisection on the constraint norm.
pub fn project_ball_hnorm(
    point: &DVector<f64>,
    bound: f64,
    shape: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if bound <= 0.0 {
        return Ok(DVector::zeros(point.len()));
    }
    if point.norm() <= bound {
        return Ok(point.clone());
    }
    let rhs = shape * point;
    let dim = point.len();
    let at = |mu: f64| -> Result<DVector<f64>> {
        let mut m = shape.clone();
        for i in 0..dim {
            m[(i, i)] += mu;
        }
        let chol = Cholesky::new(m).ok_or(Error::NotPositiveDefinite {
            context: "ball projection",
        })?;
        Ok(chol.solve(&rhs))
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut bracketing = 0;
    while at(hi)?.norm() > bound {
        lo = hi;
        hi *= 2.0;
        bracketing += 1;
        if bracketing > PROJECTION_MAX_ITERS {
            return Err(Error::Internal("ball projection failed to bracket"));
        }
    }

    let mut result = at(hi)?;
    for _ in 0..PROJECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let candidate = at(mid)?;
        let norm = candidate.norm();
        let done = (norm - bound).abs() <= PROJECTION_TOL;
        if norm > bound {
            lo = mid;
        } else {
            hi = mid;
        }
        if done || norm <= bound {
            result = candidate;
        }
        if done {
            break;
        }
    }
    Ok(result)
}

/// Per-stage online estimator: current iterate plus cumulative look-ahead
/// Hessian. Storage is one vector and one matrix regardless of how many
/// episodes have been absorbed.
#[derive(Debug, Clone)]
pub struct OmdState {
    theta: DVector<f64>,
    hessian_cum: DMatrix<f64>,
    eta: f64,
    lambda: f64,
    param_bound: f64,
    episodes: usize,
}

impl OmdState {
    /// Starts from the zero estimate with cumulative Hessian lambda I.
    pub fn new(dim: usize, eta: f64, lambda: f64, param_bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("estimator dimension must be positive".into()));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {eta}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "regularizer must be positive, got {lambda}"
            )));
        }
        if !(param_bound >= 0.0) || !param_bound.is_finite() {
            return Err(Error::Config(format!(
                "parameter bound must be nonnegative, got {param_bound}"
            )));
        }
        Ok(Self {
            theta: DVector::zeros(dim),
            hessian_cum: DMatrix::identity(dim, dim) * lambda,
            eta,
            lambda,
            param_bound,
            episodes: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn hessian_cum(&self) -> &DMatrix<f64> {
        &self.hessian_cum
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn param_bound(&self) -> f64 {
        self.param_bound
    }

    /// Number of observations absorbed so far.
    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Number of floats held by the state; independent of `episodes`.
    pub fn float_count(&self) -> usize {
        self.theta.len() + self.hessian_cum.len()
    }

    /// Ellipsoid centered at the current iterate in the cumulative-Hessian
    /// norm.
    pub fn confidence_set(&self, radius: f64) -> Ellipsoid {
        Ellipsoid {
            center: self.theta.clone(),
            shape: self.hessian_cum.clone(),
            radius,
        }
    }

    /// Absorbs one observation: a quadratic step in the blended local norm,
    /// projection onto the parameter ball, then look-ahead accumulation of
    /// the Hessian at the new iterate.
    pub fn omd_step(&mut self, features: &[DVector<f64>], observed: usize) -> Result<()> {
        if features.is_empty() {
            return Err(Error::Config("observation has no outcomes".into()));
        }
        if observed >= features.len() {
            return Err(Error::Config(format!(
                "observed outcome {observed} out of range for {} outcomes",
                features.len()
            )));
        }
        if features.iter().any(|phi| phi.len() != self.dim()) {
            return Err(Error::Config("feature dimension mismatch".into()));
        }
        let (_, grad, hess) = per_episode_loss_grad_hess(&self.theta, features, observed);
        let blended = &self.hessian_cum + &hess * self.eta;
        let chol = Cholesky::new(blended.clone()).ok_or(Error::NotPositiveDefinite {
            context: "omd step",
        })?;
        let unconstrained = &self.theta - chol.solve(&grad) * self.eta;
        let next = project_ball_hnorm(&unconstrained, self.param_bound, &blended)?;
        let (_, _, hess_next) = per_episode_loss_grad_hess(&next, features, observed);
        self.hessian_cum += hess_next;
        self.theta = next;
        self.episodes += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numdiff;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn random_outcomes(dim: usize, rows: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
        (0..rows).map(|_| rng::sample_in_ball(dim, 1.0, rng)).collect()
    }

    fn random_pd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1
    }

    #[test]
    fn identical_features_give_zero_grad_and_hess() {
        let phi = DVector::from_vec(vec![0.3, -0.4]);
        let features = vec![phi.clone(), phi.clone(), phi.clone()];
        let theta = DVector::from_vec(vec![1.0, 2.0]);
        let (loss, grad, hess) = per_episode_loss_grad_hess(&theta, &features, 1);
        assert_abs_diff_eq!(loss, 3.0_f64.ln(), epsilon = 1e-12);
        assert!(grad.norm() < 1e-14);
        assert!(hess.norm() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::stream(41, &[1]);
        for _ in 0..10 {
            let features = random_outcomes(3, 4, &mut rng);
            let observed = rng.random_range(0..4);
            let theta = rng::sample_in_ball(3, 2.0, &mut rng);
            let (_, grad, _) = per_episode_loss_grad_hess(&theta, &features, observed);
            let fd = numdiff::central_gradient(
                |t| per_episode_loss_grad_hess(t, &features, observed).0,
                &theta,
                1e-5,
            );
            let err = numdiff::max_relative_error(grad.as_slice(), fd.as_slice());
            assert!(err < 1e-6, "gradient error {err}");
        }
    }

    #[test]
    fn hessian_matches_covariance_form() {
        let mut rng = rng::stream(42, &[1]);
        for _ in 0..10 {
            let features = random_outcomes(3, 5, &mut rng);
            let theta = rng::sample_in_ball(3, 2.0, &mut rng);
            let (_, _, hess) = per_episode_loss_grad_hess(&theta, &features, 0);

            let mut logits: Vec<f64> =
                features.iter().map(|phi| phi.dot(&theta)).collect();
            crate::mdp::softmax_in_place(&mut logits);
            let mut mean = DVector::zeros(3);
            for (phi, &p) in features.iter().zip(&logits) {
                mean += phi * p;
            }
            let mut cov = DMatrix::zeros(3, 3);
            for (phi, &p) in features.iter().zip(&logits) {
                let centered = phi - &mean;
                cov += &centered * centered.transpose() * p;
            }
            assert!((hess - cov).norm() < 1e-12);
        }
    }

    #[test]
    fn hessian_matches_finite_difference_jacobian() {
        let mut rng = rng::stream(43, &[1]);
        let features = random_outcomes(3, 4, &mut rng);
        let theta = rng::sample_in_ball(3, 1.5, &mut rng);
        let (_, _, hess) = per_episode_loss_grad_hess(&theta, &features, 2);
        let fd = numdiff::central_jacobian(
            |t| per_episode_loss_grad_hess(t, &features, 2).1,
            &theta,
            1e-5,
        );
        let err = numdiff::max_relative_error(hess.as_slice(), fd.as_slice());
        assert!(err < 1e-5, "hessian error {err}");
    }

    #[test]
    fn fixed_point_leaves_state_unchanged() {
        let phi = DVector::from_vec(vec![0.5, 0.1]);
        let features = vec![phi.clone(), phi.clone()];
        let mut state = OmdState::new(2, 1.0, 2.0, 1.0).unwrap();
        state.theta = DVector::from_vec(vec![0.3, -0.2]);
        let before = state.clone();
        state.omd_step(&features, 0).unwrap();
        assert_eq!(state.theta, before.theta);
        assert_eq!(state.hessian_cum, before.hessian_cum);
        assert_eq!(state.episodes, 1);
    }

    #[test]
    fn interior_step_matches_closed_form() {
        let mut rng = rng::stream(44, &[1]);
        let features = random_outcomes(3, 3, &mut rng);
        let mut state = OmdState::new(3, 0.5, 50.0, 10.0).unwrap();
        let (_, grad, hess) = per_episode_loss_grad_hess(state.theta(), &features, 1);
        let blended = state.hessian_cum() + &hess * state.eta();
        let expected =
            state.theta() - Cholesky::new(blended).unwrap().solve(&grad) * state.eta();
        state.omd_step(&features, 1).unwrap();
        assert!((state.theta() - expected).norm() < 1e-12);
    }

    /// Projected gradient descent on the step's quadratic objective, sharing
    /// no code with the shipped update.
    fn projected_quadratic_oracle(
        grad: &DVector<f64>,
        blended: &DMatrix<f64>,
        center: &DVector<f64>,
        eta: f64,
        bound: f64,
    ) -> DVector<f64> {
        let lip = blended.symmetric_eigenvalues().max() / eta;
        let step = 1.0 / lip;
        let mut theta = DVector::zeros(center.len());
        for _ in 0..200_000 {
            let obj_grad = grad + blended * (&theta - center) / eta;
            let mut next = &theta - obj_grad * step;
            let norm = next.norm();
            if norm > bound {
                next *= bound / norm;
            }
            let moved = (&next - &theta).norm();
            theta = next;
            if moved < 1e-13 {
                break;
            }
        }
        theta
    }

    #[test]
    fn step_matches_projected_quadratic_solver() {
        let mut rng = rng::stream(45, &[1]);
        for case in 0..100 {
            let dim = 2 + case % 3;
            let rows = 2 + case % 4;
            let features = random_outcomes(dim, rows, &mut rng);
            let observed = rng.random_range(0..rows);
            let bound = 0.4 + rng.random::<f64>();
            let mut state = OmdState::new(dim, 1.5, 0.8, bound).unwrap();
            state.theta = rng::sample_in_ball(dim, bound, &mut rng);
            for _ in 0..3 {
                let warm = random_outcomes(dim, rows, &mut rng);
                state.omd_step(&warm, 0).unwrap();
            }

            let (_, grad, hess) =
                per_episode_loss_grad_hess(state.theta(), &features, observed);
            let blended = state.hessian_cum() + &hess * state.eta();
            let oracle = projected_quadratic_oracle(
                &grad,
                &blended,
                state.theta(),
                state.eta(),
                bound,
            );
            state.omd_step(&features, observed).unwrap();
            assert!(
                (state.theta() - &oracle).norm() < 1e-8,
                "case {case}: gap {:e}",
                (state.theta() - &oracle).norm()
            );
        }
    }

    #[test]
    fn projection_identity_inside_ball() {
        let mut rng = rng::stream(46, &[1]);
        let shape = random_pd(3, &mut rng);
        let point = rng::sample_in_ball(3, 0.9, &mut rng);
        let projected = project_ball_hnorm(&point, 1.0, &shape).unwrap();
        assert_eq!(projected, point);
    }

    #[test]
    fn projection_isotropic_is_radial() {
        let point = DVector::from_vec(vec![3.0, 4.0]);
        let shape = DMatrix::identity(2, 2) * 2.5;
        let projected = project_ball_hnorm(&point, 1.0, &shape).unwrap();
        let radial = &point / point.norm();
        assert!((projected - radial).norm() < 1e-9);
    }

    #[test]
    fn projection_zero_bound_returns_origin() {
        let point = DVector::from_vec(vec![1.0, -2.0]);
        let shape = DMatrix::identity(2, 2);
        let projected = project_ball_hnorm(&point, 0.0, &shape).unwrap();
        assert_eq!(projected, DVector::zeros(2));
    }

    #[test]
    fn projection_satisfies_kkt() {
        let mut rng = rng::stream(47, &[1]);
        for _ in 0..20 {
            let dim = 2 + rng.random_range(0..3);
            let shape = random_pd(dim, &mut rng);
            let point = rng::unit_vector(dim, &mut rng) * (1.5 + rng.random::<f64>());
            let bound = 1.0;
            let theta = project_ball_hnorm(&point, bound, &shape).unwrap();
            assert!((theta.norm() - bound).abs() <= 1e-9);

            let residual_dir = &shape * (&point - &theta);
            let mu = theta.dot(&residual_dir) / theta.norm_squared();
            assert!(mu >= -1e-9, "multiplier {mu}");
            let kkt = (&residual_dir - &theta * mu).norm() / residual_dir.norm().max(1e-12);
            assert!(kkt < 1e-8, "kkt residual {kkt}");
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = rng::stream(48, &[1]);
        let shape = random_pd(4, &mut rng);
        let point = rng::unit_vector(4, &mut rng) * 3.0;
        let once = project_ball_hnorm(&point, 1.0, &shape).unwrap();
        let twice = project_ball_hnorm(&once, 1.0, &shape).unwrap();
        assert!((once - twice).norm() < 1e-9);
    }

    #[test]
    fn iterates_stay_feasible_and_hessian_dominates_regularizer() {
        let mut rng = rng::stream(49, &[1]);
        let bound = 0.7;
        let mut state = OmdState::new(3, 2.0, 1.0, bound).unwrap();
        for step in 0..200 {
            let rows = 2 + step % 3;
            let features = random_outcomes(3, rows, &mut rng);
            let observed = rng.random_range(0..rows);
            state.omd_step(&features, observed).unwrap();
            assert!(state.theta().norm() <= bound + 1e-9);
            if step % 50 == 49 {
                let eig = state.hessian_cum().symmetric_eigenvalues();
                assert!(eig.iter().all(|&e| e >= state.lambda() - 1e-9));
            }
        }
        assert_eq!(state.episodes(), 200);
    }

    #[test]
    fn lookahead_bookkeeping_reconstructs_cumulative_hessian() {
        let mut rng = rng::stream(50, &[1]);
        let mut state = OmdState::new(3, 1.2, 0.9, 1.0).unwrap();
        let mut rebuilt = DMatrix::identity(3, 3) * state.lambda();
        for _ in 0..50 {
            let features = random_outcomes(3, 3, &mut rng);
            let observed = rng.random_range(0..3);
            state.omd_step(&features, observed).unwrap();
            let (_, _, hess) = per_episode_loss_grad_hess(state.theta(), &features, observed);
            rebuilt += hess;
        }
        assert!((state.hessian_cum() - rebuilt).norm() < 1e-10);
    }

    #[test]
    fn storage_is_constant_across_episode_counts() {
        let mut rng = rng::stream(51, &[1]);
        let mut short = OmdState::new(4, 1.0, 1.0, 1.0).unwrap();
        let mut long = short.clone();
        for _ in 0..10 {
            let features = random_outcomes(4, 3, &mut rng);
            short.omd_step(&features, 0).unwrap();
        }
        for _ in 0..10_000 {
            let features = random_outcomes(4, 3, &mut rng);
            long.omd_step(&features, 1).unwrap();
        }
        assert_eq!(short.float_count(), long.float_count());
        assert_eq!(short.float_count(), 4 + 16);
    }

    #[test]
    fn step_is_deterministic() {
        let mut rng = rng::stream(52, &[1]);
        let features = random_outcomes(3, 4, &mut rng);
        let mut a = OmdState::new(3, 1.0, 1.0, 0.5).unwrap();
        let mut b = OmdState::new(3, 1.0, 1.0, 0.5).unwrap();
        for _ in 0..5 {
            a.omd_step(&features, 2).unwrap();
            b.omd_step(&features, 2).unwrap();
        }
        assert_eq!(a.theta(), b.theta());
        assert_eq!(a.hessian_cum(), b.hessian_cum());
    }

    /// Solves the untruncated per-episode objective (exact loss rather than
    /// its quadratic model) to monitor how far the one-step update sits from
    /// the implicit solution. Logged, not asserted: no finite-sample bound on
    /// this gap is claimed.
    #[test]
    fn implicit_solution_gap_is_logged() {
        let mut rng = rng::stream(53, &[1]);
        let bound = 1.0;
        let mut state = OmdState::new(3, 1.5, 0.8, bound).unwrap();
        for _ in 0..5 {
            let features = random_outcomes(3, 3, &mut rng);
            state.omd_step(&features, 0).unwrap();
        }
        let features = random_outcomes(3, 3, &mut rng);
        let observed = 1;

        let center = state.theta().clone();
        let cum = state.hessian_cum().clone();
        let eta = state.eta();
        let lip = 1.0 + cum.symmetric_eigenvalues().max() / eta;
        let mut implicit = center.clone();
        for _ in 0..200_000 {
            let (_, grad, _) = per_episode_loss_grad_hess(&implicit, &features, observed);
            let obj_grad = grad + &cum * (&implicit - &center) / eta;
            let mut next = &implicit - obj_grad / lip;
            let norm = next.norm();
            if norm > bound {
                next *= bound / norm;
            }
            let moved = (&next - &implicit).norm();
            implicit = next;
            if moved < 1e-13 {
                break;
            }
        }

        let (_, grad, _) = per_episode_loss_grad_hess(&center, &features, observed);
        state.omd_step(&features, observed).unwrap();
        let gap = (state.theta() - &implicit).norm();
        eprintln!(
            "implicit-vs-one-step gap {:e} with gradient norm squared {:e}",
            gap,
            grad.norm_squared()
        );
        assert!(gap.is_finite());
    }

    #[test]
    fn radius_is_monotone_in_episode_count() {
        let eta = eta_default(3, 1.0);
        let lambda = lambda_default(eta, 1.0, 3);
        let mut prev = radius_omd(0, 3, 3, 0.1, 1.0, 3, eta, lambda);
        for k in [1, 2, 5, 10, 100, 1_000, 100_000] {
            let next = radius_omd(k, 3, 3, 0.1, 1.0, 3, eta, lambda);
            assert!(next >= prev, "radius dropped between episodes at k = {k}");
            prev = next;
        }
    }

    #[test]
    fn radius_tracks_root_dim_log_scaling() {
        let eta = eta_default(3, 1.0);
        let lambda = lambda_default(eta, 1.0, 3);
        let mut k = 10.0_f64;
        while k <= 1e6 {
            let ratio = radius_omd(k as usize, 3, 3, 0.1, 1.0, 3, eta, lambda)
                / (3.0_f64.sqrt() * 4.0_f64.ln() * (k * 3.0 / 0.1).ln());
            assert!((20.0..=32.0).contains(&ratio), "ratio {ratio} at k = {k}");
            k *= 1.9;
        }
    }

    #[test]
    fn frozen_default_and_radius_values() {
        let eta = eta_default(3, 1.0);
        let lambda = lambda_default(eta, 1.0, 3);
        assert_abs_diff_eq!(eta, 2.6931471805599454, epsilon = 1e-12);
        assert_abs_diff_eq!(lambda, 1279.7182501201519, epsilon = 1e-9);
        assert_abs_diff_eq!(
            radius_omd(500, 3, 3, 0.1, 1.0, 3, eta, lambda),
            629.2230861148911,
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(
            radius_omd(0, 3, 3, 0.1, 1.0, 3, eta, lambda),
            190.1803229268436,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            radius_omd(500, 3, 3, 0.1, 1.0, 3, 1.0, 1.0),
            219.06567229534542,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rejects_bad_configuration_and_observations() {
        assert!(OmdState::new(0, 1.0, 1.0, 1.0).is_err());
        assert!(OmdState::new(2, 0.0, 1.0, 1.0).is_err());
        assert!(OmdState::new(2, 1.0, -1.0, 1.0).is_err());
        assert!(OmdState::new(2, 1.0, 1.0, f64::NAN).is_err());

        let mut state = OmdState::new(2, 1.0, 1.0, 1.0).unwrap();
        assert!(state.omd_step(&[], 0).is_err());
        let features = vec![DVector::from_vec(vec![0.1, 0.2])];
        assert!(state.omd_step(&features, 1).is_err());
        let wrong_dim = vec![DVector::from_vec(vec![0.1, 0.2, 0.3])];
        assert!(state.omd_step(&wrong_dim, 0).is_err());
    }
}
