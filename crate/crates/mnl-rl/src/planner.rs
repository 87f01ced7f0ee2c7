//! Optimistic backward induction over transition confidence sets.
//!
//! Three planners share one output type. The bonus planner adds a closed-form
//! first-plus-second-order bonus to the plug-in continuation value. The
//! baseline planner adds the coarser design-matrix bonus. The max-set planner
//! maximizes the continuation value over the confidence ellipsoid directly by
//! multi-start projected gradient ascent.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::mdp::{MnlMdp, Policy};
use crate::mle::{Ellipsoid, ShapeFactor};

/// Ascent step cap per start in the inner maximization; a start exits early
/// once its objective stalls within relative 1e-12.
pub const MAXSET_ASCENT_STEPS: usize = 50;

/// Base step length of the inner maximization, as a fraction of the radius.
pub const MAXSET_STEP_SCALE: f64 = 0.1;

/// Optimistic action and state values with the applied bonuses.
#[derive(Debug, Clone)]
pub struct OptimisticValues {
    /// `q[h][s][a]`, clipped to `[0, H]`.
    pub q: Vec<Vec<Vec<f64>>>,
    /// `v[h][s] = max_a q[h][s][a]`, with `v[horizon]` all zero.
    pub v: Vec<Vec<f64>>,
    /// Action values before clipping.
    pub q_raw: Vec<Vec<Vec<f64>>>,
    /// Bonus added to each action value; for the max-set planner the gain of
    /// the inner maximum over the center evaluation.
    pub bonus: Vec<Vec<Vec<f64>>>,
}

impl OptimisticValues {
    fn with_shape(mdp: &MnlMdp) -> Self {
        let q: Vec<Vec<Vec<f64>>> = (0..mdp.horizon)
            .map(|h| vec![vec![0.0; mdp.num_actions]; mdp.states_per_stage[h]])
            .collect();
        let v: Vec<Vec<f64>> = (0..=mdp.horizon)
            .map(|h| vec![0.0; mdp.states_per_stage[h]])
            .collect();
        Self {
            q_raw: q.clone(),
            bonus: q.clone(),
            q,
            v,
        }
    }
}

/// Greedy action at `(h, s)`, ties broken by the smallest action index.
pub fn greedy_action(values: &OptimisticValues, h: usize, s: usize) -> usize {
    let row = &values.q[h][s];
    let mut best = 0;
    for (a, &q) in row.iter().enumerate().skip(1) {
        if q > row[best] {
            best = a;
        }
    }
    best
}

/// Deterministic greedy policy over all stages and states.
pub fn greedy_policy(values: &OptimisticValues) -> Policy {
    let actions = values
        .q
        .iter()
        .enumerate()
        .map(|(h, stage)| (0..stage.len()).map(|s| greedy_action(values, h, s)).collect())
        .collect();
    Policy::Deterministic(actions)
}

/// First- and second-order bonus for one `(h, s, a)` cell.
///
/// The first term weights the curvature-norm of centered features by the
/// predicted transition probabilities; the second is the worst-case squared
/// curvature-norm over the reachable features.
pub fn bonus_terms(
    features: &[DVector<f64>],
    theta: &DVector<f64>,
    shape: &ShapeFactor,
    beta: f64,
    horizon: usize,
) -> (f64, f64) {
    let mut probs: Vec<f64> = features.iter().map(|phi| phi.dot(theta)).collect();
    crate::mdp::softmax_in_place(&mut probs);
    let mut mean = DVector::zeros(theta.len());
    for (phi, &p) in features.iter().zip(&probs) {
        mean.axpy(p, phi, 1.0);
    }
    let h = horizon as f64;
    let mut first = 0.0;
    let mut worst = 0.0_f64;
    for (phi, &p) in features.iter().zip(&probs) {
        first += p * shape.inv_norm_sq(&(phi - &mean)).max(0.0).sqrt();
        worst = worst.max(shape.inv_norm_sq(phi));
    }
    (h * beta * first, 2.5 * h * beta * beta * worst)
}

/// Backward induction with the closed-form two-term bonus per cell.
pub fn backward_induction_bonus(mdp: &MnlMdp, sets: &[Ellipsoid]) -> Result<OptimisticValues> {
    induct(mdp, sets, |_h, features, set, shape, cont| {
        let (first, second) = bonus_terms(features, &set.center, shape, set.radius, mdp.horizon);
        let expected = expected_continuation(features, &set.center, cont);
        (expected, first + second)
    })
}

/// Backward induction with the design-matrix bonus
/// `2 H beta max ||phi||_{shape^-1}`.
pub fn backward_induction_baseline(mdp: &MnlMdp, sets: &[Ellipsoid]) -> Result<OptimisticValues> {
    induct(mdp, sets, |_h, features, set, shape, cont| {
        let worst = features
            .iter()
            .map(|phi| shape.inv_norm_sq(phi))
            .fold(0.0_f64, f64::max)
            .max(0.0)
            .sqrt();
        let bonus = 2.0 * mdp.horizon as f64 * set.radius * worst;
        let expected = expected_continuation(features, &set.center, cont);
        (expected, bonus)
    })
}

/// Backward induction maximizing the continuation value over each confidence
/// ellipsoid intersected with the parameter ball.
///
/// The inner maximum is approximated from below by projected gradient ascent
/// from the center and the `2d` boundary points along the ellipsoid axes, so
/// the reported value never exceeds the exact inner maximum.
pub fn backward_induction_maxset(mdp: &MnlMdp, sets: &[Ellipsoid]) -> Result<OptimisticValues> {
    let starts: Vec<Vec<DVector<f64>>> = sets.iter().map(ellipsoid_starts).collect();
    let mut scratch = AscentScratch::new(mdp.dim);
    induct(mdp, sets, move |h, features, set, _shape, cont| {
        let center_value = expected_continuation(features, &set.center, cont);
        let best =
            maximize_over_set(features, set, mdp.param_bound, cont, &starts[h], &mut scratch);
        (center_value, (best - center_value).max(0.0))
    })
}

fn expected_continuation(features: &[DVector<f64>], theta: &DVector<f64>, cont: &[f64]) -> f64 {
    let mut probs: Vec<f64> = features.iter().map(|phi| phi.dot(theta)).collect();
    crate::mdp::softmax_in_place(&mut probs);
    probs.iter().zip(cont).map(|(p, v)| p * v).sum()
}

fn induct(
    mdp: &MnlMdp,
    sets: &[Ellipsoid],
    mut cell: impl FnMut(usize, &[DVector<f64>], &Ellipsoid, &ShapeFactor, &[f64]) -> (f64, f64),
) -> Result<OptimisticValues> {
    assert_eq!(sets.len(), mdp.horizon, "one confidence set per stage");
    let mut out = OptimisticValues::with_shape(mdp);
    let horizon = mdp.horizon as f64;
    for h in (0..mdp.horizon).rev() {
        let shape = ShapeFactor::new(&sets[h].shape)?;
        for s in 0..mdp.states_per_stage[h] {
            for a in 0..mdp.num_actions {
                let sa = mdp.state_action(h, s, a)?;
                let cont: Vec<f64> =
                    sa.next_states.iter().map(|&ns| out.v[h + 1][ns]).collect();
                let (expected, bonus) = cell(h, &sa.features, &sets[h], &shape, &cont);
                let raw = sa.reward + expected + bonus;
                out.q_raw[h][s][a] = raw;
                out.bonus[h][s][a] = bonus;
                out.q[h][s][a] = raw.clamp(0.0, horizon);
            }
            out.v[h][s] = out.q[h][s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(out)
}

/// The ellipsoid center plus its `2d` boundary points along principal axes.
fn ellipsoid_starts(set: &Ellipsoid) -> Vec<DVector<f64>> {
    let mut starts = vec![set.center.clone()];
    if set.radius <= 0.0 {
        return starts;
    }
    let eigen = set.shape.clone().symmetric_eigen();
    for i in 0..set.center.len() {
        let scale = set.radius / eigen.eigenvalues[i].max(1e-12).sqrt();
        let axis = eigen.eigenvectors.column(i) * scale;
        starts.push(&set.center + &axis);
        starts.push(&set.center - &axis);
    }
    starts
}

fn maximize_over_set(
    features: &[DVector<f64>],
    set: &Ellipsoid,
    param_bound: f64,
    cont: &[f64],
    starts: &[DVector<f64>],
    scratch: &mut AscentScratch,
) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut any_feasible = false;
    for start in starts {
        scratch.point.copy_from(start);
        scratch.clamp_to_feasible(set, param_bound);
        if set.radius > 0.0 {
            let mut prev = f64::NEG_INFINITY;
            let mut stalled = 0;
            for step in 1..=MAXSET_ASCENT_STEPS {
                let value = scratch.continuation_gradient(features, cont);
                if (value - prev).abs() <= 1e-12 * (1.0 + value.abs()) {
                    stalled += 1;
                    if stalled == 2 {
                        break;
                    }
                } else {
                    stalled = 0;
                }
                prev = value;
                let shape_norm = scratch.grad_shape_norm(&set.shape);
                if shape_norm < 1e-12 {
                    break;
                }
                let stride = MAXSET_STEP_SCALE * set.radius / (step as f64).sqrt();
                scratch.point.axpy(stride / shape_norm, &scratch.grad, 1.0);
                scratch.clamp_to_feasible(set, param_bound);
            }
        }
        if scratch.point_is_feasible(set, param_bound) {
            any_feasible = true;
            best = best.max(scratch.point_value(features, cont));
        }
    }
    if !any_feasible {
        scratch.point.copy_from(&set.center);
        let norm = scratch.point.norm();
        if norm > param_bound {
            scratch.point *= param_bound / norm;
        }
        best = scratch.point_value(features, cont);
    }
    best
}

/// Reusable buffers for the inner ascent; one live point plus temporaries.
struct AscentScratch {
    point: DVector<f64>,
    grad: DVector<f64>,
    mean: DVector<f64>,
    shaped: DVector<f64>,
    diff: DVector<f64>,
    probs: Vec<f64>,
}

impl AscentScratch {
    fn new(dim: usize) -> Self {
        AscentScratch {
            point: DVector::zeros(dim),
            grad: DVector::zeros(dim),
            mean: DVector::zeros(dim),
            shaped: DVector::zeros(dim),
            diff: DVector::zeros(dim),
            probs: Vec::new(),
        }
    }

    /// Softmax transition probabilities at the live point.
    fn fill_probs(&mut self, features: &[DVector<f64>]) {
        self.probs.clear();
        self.probs
            .extend(features.iter().map(|phi| phi.dot(&self.point)));
        crate::mdp::softmax_in_place(&mut self.probs);
    }

    /// Expected continuation value at the live point.
    fn point_value(&mut self, features: &[DVector<f64>], cont: &[f64]) -> f64 {
        self.fill_probs(features);
        self.probs.iter().zip(cont).map(|(p, v)| p * v).sum()
    }

    /// Gradient of the expected continuation value at the live point, left
    /// in `grad`; returns the value itself.
    fn continuation_gradient(&mut self, features: &[DVector<f64>], cont: &[f64]) -> f64 {
        self.fill_probs(features);
        self.mean.fill(0.0);
        self.grad.fill(0.0);
        let mut value = 0.0;
        for ((phi, &p), &v) in features.iter().zip(&self.probs).zip(cont) {
            self.mean.axpy(p, phi, 1.0);
            self.grad.axpy(p * v, phi, 1.0);
            value += p * v;
        }
        self.grad.axpy(-value, &self.mean, 1.0);
        value
    }

    fn grad_shape_norm(&mut self, shape: &DMatrix<f64>) -> f64 {
        self.shaped.gemv(1.0, shape, &self.grad, 0.0);
        self.shaped.dot(&self.grad).max(0.0).sqrt()
    }

    /// Shape-norm distance of the live point from the set center; leaves the
    /// centered difference in `diff`.
    fn point_mahalanobis(&mut self, set: &Ellipsoid) -> f64 {
        self.diff.copy_from(&self.point);
        self.diff -= &set.center;
        self.shaped.gemv(1.0, &set.shape, &self.diff, 0.0);
        self.shaped.dot(&self.diff).max(0.0).sqrt()
    }

    /// Radially pulls the live point into the set, then into the ball.
    fn clamp_to_feasible(&mut self, set: &Ellipsoid, param_bound: f64) {
        let dist = self.point_mahalanobis(set);
        if dist > set.radius && dist > 0.0 {
            self.point.copy_from(&set.center);
            self.point.axpy(set.radius / dist, &self.diff, 1.0);
        }
        let norm = self.point.norm();
        if norm > param_bound {
            self.point *= param_bound / norm;
        }
    }

    fn point_is_feasible(&mut self, set: &Ellipsoid, param_bound: f64) -> bool {
        self.point.norm() <= param_bound + 1e-9
            && self.point_mahalanobis(set) <= set.radius + 1e-9 * (1.0 + set.radius)
    }
}
