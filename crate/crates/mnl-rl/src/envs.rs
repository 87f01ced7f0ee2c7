//! Instance generators: seeded random models, a block family with a known
//! closed-form optimal value, and a product-form chain.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{MnlMdp, StateAction};
use crate::rng;

/// Seeded random layered instance.
///
/// Every (state, action) pair reaches exactly `reach` next states. Raw
/// features are drawn from the half-unit ball and then anchored, so norms
/// stay at most 1 without rescaling and the requested parameter bound is
/// preserved exactly. Stage parameters are uniform in the `param_bound` ball
/// and rewards are uniform in [0, 1].
pub fn random_instance(
    dim: usize,
    horizon: usize,
    states: usize,
    num_actions: usize,
    reach: usize,
    param_bound: f64,
    seed: u64,
) -> Result<MnlMdp> {
    if reach == 0 || reach > states {
        return Err(Error::Config(format!(
            "reachable-set size {reach} must be between 1 and the {states} states per stage"
        )));
    }
    if dim == 0 || horizon == 0 || num_actions == 0 || states == 0 {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    if !(param_bound.is_finite() && param_bound >= 0.0) {
        return Err(Error::Config("param_bound must be finite and nonnegative".into()));
    }
    let mut rng = rng::stream(seed, &[rng::GEN_STREAM, dim as u64, horizon as u64]);
    let theta_star: Vec<DVector<f64>> = (0..horizon)
        .map(|_| rng::sample_in_ball(dim, param_bound, &mut rng))
        .collect();
    let mut ids: Vec<usize> = (0..states).collect();
    let stages = (0..horizon)
        .map(|_| {
            (0..states)
                .map(|_| {
                    (0..num_actions)
                        .map(|_| {
                            ids.shuffle(&mut rng);
                            let mut next_states: Vec<usize> = ids[..reach].to_vec();
                            next_states.sort_unstable();
                            let features = (0..reach)
                                .map(|_| rng::sample_in_ball(dim, 0.5, &mut rng))
                                .collect();
                            StateAction {
                                reward: rng.random::<f64>(),
                                next_states,
                                features,
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut mdp = MnlMdp::new(
        dim,
        horizon,
        param_bound,
        num_actions,
        vec![states; horizon + 1],
        0,
        theta_star,
        stages,
    )?;
    mdp.recenter_features();
    mdp.validate()?;
    Ok(mdp)
}

/// Deterministic arm vectors shared by every block of [`hard_instance`].
///
/// Fixed by (dim, num_actions) alone so closed-form values can be recomputed
/// without the instance.
pub fn hard_instance_arms(dim: usize, num_actions: usize) -> Vec<DVector<f64>> {
    let mut rng = rng::stream(0xA2B5, &[rng::GEN_STREAM, dim as u64, num_actions as u64]);
    (0..num_actions).map(|_| rng::unit_vector(dim, &mut rng)).collect()
}

/// Block-structured instance whose optimal value has a closed form.
///
/// The horizon must be even: each of the `horizon / 2` blocks spends one
/// stage choosing an arm from a single hub state, reaching either a rewarded
/// state (feature `x_a`, the arm vector) or an anchored dud (feature zero),
/// and one stage collapsing deterministically back to the next hub. The
/// optimal value is the sum over blocks of `max_a sigmoid(x_a' theta_block)`.
pub fn hard_instance(
    dim: usize,
    horizon: usize,
    num_actions: usize,
    theta_blocks: &[DVector<f64>],
) -> Result<MnlMdp> {
    if horizon == 0 || horizon % 2 != 0 {
        return Err(Error::Config(format!("horizon {horizon} must be even and positive")));
    }
    if theta_blocks.len() != horizon / 2 {
        return Err(Error::Config(format!(
            "expected {} block parameters, got {}",
            horizon / 2,
            theta_blocks.len()
        )));
    }
    if num_actions == 0 || dim == 0 {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    for th in theta_blocks {
        if th.len() != dim {
            return Err(Error::Config("block parameter dimension mismatch".into()));
        }
    }
    let arms = hard_instance_arms(dim, num_actions);
    let param_bound = theta_blocks
        .iter()
        .map(|t| t.norm())
        .fold(1.0f64, f64::max);
    let states_per_stage: Vec<usize> = (0..=horizon).map(|h| if h % 2 == 0 { 1 } else { 2 }).collect();
    let mut theta_star = Vec::with_capacity(horizon);
    let mut stages = Vec::with_capacity(horizon);
    for h in 0..horizon {
        if h % 2 == 0 {
            theta_star.push(theta_blocks[h / 2].clone());
            let actions = arms
                .iter()
                .map(|x| StateAction {
                    reward: 0.0,
                    // State 0 is the rewarded branch, state 1 the anchored dud.
                    next_states: vec![1, 0],
                    features: vec![DVector::zeros(dim), x.clone()],
                })
                .collect();
            stages.push(vec![actions]);
        } else {
            theta_star.push(DVector::zeros(dim));
            let collapse = |reward: f64| -> Vec<StateAction> {
                (0..num_actions)
                    .map(|_| StateAction {
                        reward,
                        next_states: vec![0],
                        features: vec![DVector::zeros(dim)],
                    })
                    .collect()
            };
            stages.push(vec![collapse(1.0), collapse(0.0)]);
        }
    }
    MnlMdp::new(
        dim,
        horizon,
        param_bound,
        num_actions,
        states_per_stage,
        0,
        theta_star,
        stages,
    )
}

/// Closed-form optimal value of [`hard_instance`] with the same inputs.
pub fn hard_instance_optimal_value(
    dim: usize,
    num_actions: usize,
    theta_blocks: &[DVector<f64>],
) -> f64 {
    let arms = hard_instance_arms(dim, num_actions);
    theta_blocks
        .iter()
        .map(|th| {
            arms.iter()
                .map(|x| sigmoid(x.dot(th)))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Two-state survival chain with one action and product-form optimal value.
///
/// State 0 survives to the next stage with probability `p_values[h]`; state 1
/// is absorbing. Only the final-stage survivor state pays reward 1, so the
/// optimal value is the product of the first `horizon - 1` survival
/// probabilities.
pub fn chain_instance(horizon: usize, p_values: &[f64]) -> Result<MnlMdp> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if p_values.len() != horizon {
        return Err(Error::Config(format!(
            "expected {horizon} survival probabilities, got {}",
            p_values.len()
        )));
    }
    if p_values.iter().any(|p| !(p.is_finite() && 0.0 < *p && *p < 1.0)) {
        return Err(Error::Config("survival probabilities must lie strictly in (0, 1)".into()));
    }
    let logits: Vec<f64> = p_values.iter().map(|p| (p / (1.0 - p)).ln()).collect();
    let param_bound = logits.iter().map(|l| l.abs()).fold(1.0f64, f64::max);
    let mut theta_star = Vec::with_capacity(horizon);
    let mut stages = Vec::with_capacity(horizon);
    for h in 0..horizon {
        theta_star.push(DVector::from_row_slice(&[logits[h]]));
        let survive = StateAction {
            reward: if h == horizon - 1 { 1.0 } else { 0.0 },
            // Anchored dead state first, survivor second.
            next_states: vec![1, 0],
            features: vec![DVector::zeros(1), DVector::from_row_slice(&[1.0])],
        };
        let absorbed = StateAction {
            reward: 0.0,
            next_states: vec![1],
            features: vec![DVector::zeros(1)],
        };
        stages.push(vec![vec![survive], vec![absorbed]]);
    }
    MnlMdp::new(1, horizon, param_bound, 1, vec![2; horizon + 1], 0, theta_star, stages)
}
