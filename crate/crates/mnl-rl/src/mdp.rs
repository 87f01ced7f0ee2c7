//! Episodic MDP with multinomial-logit transition kernels.
//!
//! States are layered per stage. Each (stage, state, action) triple has a
//! finite reachable set of next-stage states and one feature vector per
//! reachable state; transition probabilities are the softmax of the feature
//! logits `phi' * theta_h`. Rewards are deterministic and known.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Transition data for one (stage, state, action) triple.
#[derive(Debug, Clone)]
pub struct StateAction {
    /// Deterministic reward in [0, 1].
    pub reward: f64,
    /// Reachable next-stage state ids.
    pub next_states: Vec<usize>,
    /// One feature vector per reachable state, norms at most 1.
    pub features: Vec<DVector<f64>>,
}

/// Episodic MDP whose transitions follow a multinomial-logit model.
#[derive(Debug, Clone)]
pub struct MnlMdp {
    /// Feature dimension.
    pub dim: usize,
    /// Number of decision stages.
    pub horizon: usize,
    /// Euclidean norm bound on stage parameters.
    pub param_bound: f64,
    /// Number of actions, shared by every state.
    pub num_actions: usize,
    /// State counts per stage, `horizon + 1` entries including the terminal layer.
    pub states_per_stage: Vec<usize>,
    /// Fixed first-stage state.
    pub initial_state: usize,
    /// True stage parameters driving the transitions.
    pub theta_star: Vec<DVector<f64>>,
    pub(crate) stages: Vec<Vec<Vec<StateAction>>>,
}

/// Exact action values and state values from backward induction.
#[derive(Debug, Clone)]
pub struct ValueFunctions {
    /// `q[h][s][a]` for each decision stage.
    pub q: Vec<Vec<Vec<f64>>>,
    /// `v[h][s]`, with `v[horizon]` the all-zero terminal layer.
    pub v: Vec<Vec<f64>>,
}

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub h: usize,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
}

/// A full episode of `horizon` steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// Sum of rewards collected over the episode.
    pub fn return_total(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// A policy mapping (stage, state) to an action choice.
#[derive(Debug, Clone)]
pub enum Policy {
    /// One action per (stage, state), indexed `[h][s]`.
    Deterministic(Vec<Vec<usize>>),
    /// Uniform over all actions everywhere.
    Uniform,
    /// Explicit, possibly partial map; rollouts fail on missing entries.
    Partial(BTreeMap<(usize, usize), usize>),
}

/// Softmax in place with max-logit shift, safe for large magnitudes.
pub fn softmax_in_place(logits: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        z += *l;
    }
    for l in logits.iter_mut() {
        *l /= z;
    }
}

/// Log of the sum of exponentials with max-logit shift.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Index of the first cumulative probability exceeding `u`.
///
/// `u = 0` selects index 0; `u` close to 1 selects the last entry.
pub fn sample_next_state(dist: &DVector<f64>, u: f64) -> usize {
    let mut cum = 0.0;
    for (i, p) in dist.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    dist.len() - 1
}

const NORM_TOL: f64 = 1e-9;

impl MnlMdp {
    /// Builds a model and checks its structural invariants.
    pub fn new(
        dim: usize,
        horizon: usize,
        param_bound: f64,
        num_actions: usize,
        states_per_stage: Vec<usize>,
        initial_state: usize,
        theta_star: Vec<DVector<f64>>,
        stages: Vec<Vec<Vec<StateAction>>>,
    ) -> Result<Self> {
        let mdp = MnlMdp {
            dim,
            horizon,
            param_bound,
            num_actions,
            states_per_stage,
            initial_state,
            theta_star,
            stages,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Verifies layer sizes, norm bounds, reward ranges and index bounds.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        if self.num_actions == 0 {
            return Err(Error::InvalidModel("need at least one action".into()));
        }
        if self.states_per_stage.len() != self.horizon + 1 {
            return Err(Error::InvalidModel(format!(
                "states_per_stage has {} entries, expected {}",
                self.states_per_stage.len(),
                self.horizon + 1
            )));
        }
        if self.states_per_stage.iter().any(|&n| n == 0) {
            return Err(Error::InvalidModel("every stage needs a state".into()));
        }
        if self.initial_state >= self.states_per_stage[0] {
            return Err(Error::InvalidModel("initial state out of range".into()));
        }
        if self.theta_star.len() != self.horizon {
            return Err(Error::InvalidModel("one theta per stage required".into()));
        }
        for (h, th) in self.theta_star.iter().enumerate() {
            if th.len() != self.dim {
                return Err(Error::InvalidModel(format!("theta at stage {h} has wrong dim")));
            }
            if !th.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { what: "theta_star" });
            }
            if th.norm() > self.param_bound + NORM_TOL {
                return Err(Error::InvalidModel(format!(
                    "theta norm {} exceeds bound {} at stage {h}",
                    th.norm(),
                    self.param_bound
                )));
            }
        }
        if self.stages.len() != self.horizon {
            return Err(Error::InvalidModel("stage table length mismatch".into()));
        }
        for h in 0..self.horizon {
            if self.stages[h].len() != self.states_per_stage[h] {
                return Err(Error::InvalidModel(format!("state count mismatch at stage {h}")));
            }
            for (s, actions) in self.stages[h].iter().enumerate() {
                if actions.len() != self.num_actions {
                    return Err(Error::InvalidModel(format!(
                        "action count mismatch at stage {h} state {s}"
                    )));
                }
                for (a, sa) in actions.iter().enumerate() {
                    if sa.next_states.is_empty() {
                        return Err(Error::InvalidModel(format!(
                            "empty reachable set at stage {h} state {s} action {a}"
                        )));
                    }
                    if sa.next_states.len() != sa.features.len() {
                        return Err(Error::InvalidModel(format!(
                            "feature count mismatch at stage {h} state {s} action {a}"
                        )));
                    }
                    if !(0.0..=1.0).contains(&sa.reward) {
                        return Err(Error::InvalidModel(format!(
                            "reward {} outside [0, 1] at stage {h} state {s} action {a}",
                            sa.reward
                        )));
                    }
                    for (&ns, phi) in sa.next_states.iter().zip(&sa.features) {
                        if ns >= self.states_per_stage[h + 1] {
                            return Err(Error::InvalidModel(format!(
                                "next state {ns} out of range at stage {h} state {s} action {a}"
                            )));
                        }
                        if phi.len() != self.dim {
                            return Err(Error::InvalidModel("feature dimension mismatch".into()));
                        }
                        if !phi.iter().all(|x| x.is_finite()) {
                            return Err(Error::NonFinite { what: "feature" });
                        }
                        if phi.norm() > 1.0 + NORM_TOL {
                            return Err(Error::InvalidModel(format!(
                                "feature norm {} exceeds 1 at stage {h} state {s} action {a}",
                                phi.norm()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Transition data for one triple, with index checks.
    pub fn state_action(&self, h: usize, s: usize, a: usize) -> Result<&StateAction> {
        self.stages
            .get(h)
            .and_then(|st| st.get(s))
            .and_then(|ac| ac.get(a))
            .ok_or(Error::InvalidIndex { h, s, a })
    }

    /// Largest reachable-set size over all triples.
    pub fn max_reachable(&self) -> usize {
        self.stages
            .iter()
            .flatten()
            .flatten()
            .map(|sa| sa.next_states.len())
            .max()
            .unwrap_or(0)
    }

    /// True when every reachable set has exactly one zero feature vector.
    pub fn is_anchored(&self) -> bool {
        self.stages.iter().flatten().flatten().all(|sa| {
            sa.features.iter().filter(|phi| phi.norm() == 0.0).count() == 1
        })
    }

    /// Softmax transition distribution over the reachable set of (h, s, a).
    pub fn transition_probs(&self, h: usize, s: usize, a: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let sa = self.state_action(h, s, a)?;
        if theta.len() != self.dim {
            return Err(Error::InvalidModel("theta dimension mismatch".into()));
        }
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { what: "theta" });
        }
        let mut logits: Vec<f64> = sa.features.iter().map(|phi| phi.dot(theta)).collect();
        softmax_in_place(&mut logits);
        Ok(DVector::from_vec(logits))
    }

    /// Samples one episode under `policy`, drawing all noise from `rng`.
    pub fn rollout(&self, policy: &Policy, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        let mut steps = Vec::with_capacity(self.horizon);
        let mut s = self.initial_state;
        for h in 0..self.horizon {
            let a = match policy {
                Policy::Deterministic(map) => *map
                    .get(h)
                    .and_then(|row| row.get(s))
                    .ok_or(Error::PolicyUndefined { h, s })?,
                Policy::Uniform => rng.random_range(0..self.num_actions),
                Policy::Partial(map) => *map.get(&(h, s)).ok_or(Error::PolicyUndefined { h, s })?,
            };
            if a >= self.num_actions {
                return Err(Error::InvalidIndex { h, s, a });
            }
            let dist = self.transition_probs(h, s, a, &self.theta_star[h])?;
            let idx = sample_next_state(&dist, rng.random::<f64>());
            let sa = self.state_action(h, s, a)?;
            let next = sa.next_states[idx];
            steps.push(Step { h, state: s, action: a, next_state: next, reward: sa.reward });
            s = next;
        }
        Ok(Trajectory { steps })
    }

    /// Optimal values by backward induction under the true parameters.
    pub fn exact_value_functions(&self) -> ValueFunctions {
        let mut v: Vec<Vec<f64>> = (0..=self.horizon)
            .map(|h| vec![0.0; self.states_per_stage[h]])
            .collect();
        let mut q: Vec<Vec<Vec<f64>>> = (0..self.horizon)
            .map(|h| vec![vec![0.0; self.num_actions]; self.states_per_stage[h]])
            .collect();
        for h in (0..self.horizon).rev() {
            for s in 0..self.states_per_stage[h] {
                for a in 0..self.num_actions {
                    let sa = &self.stages[h][s][a];
                    let dist = self
                        .transition_probs(h, s, a, &self.theta_star[h])
                        .expect("validated model");
                    let cont: f64 = dist
                        .iter()
                        .zip(&sa.next_states)
                        .map(|(p, &ns)| p * v[h + 1][ns])
                        .sum();
                    q[h][s][a] = sa.reward + cont;
                }
                v[h][s] = q[h][s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        ValueFunctions { q, v }
    }

    /// Optimal first-stage value from the fixed initial state.
    pub fn optimal_value(&self) -> f64 {
        self.exact_value_functions().v[0][self.initial_state]
    }

    /// Exact expected return of `policy` from the fixed initial state.
    pub fn evaluate_policy(&self, policy: &Policy) -> Result<f64> {
        let mut v: Vec<f64> = vec![0.0; self.states_per_stage[self.horizon]];
        for h in (0..self.horizon).rev() {
            let mut v_h = vec![0.0; self.states_per_stage[h]];
            for (s, val) in v_h.iter_mut().enumerate() {
                let actions: Vec<(usize, f64)> = match policy {
                    Policy::Deterministic(map) => {
                        let a = *map
                            .get(h)
                            .and_then(|row| row.get(s))
                            .ok_or(Error::PolicyUndefined { h, s })?;
                        vec![(a, 1.0)]
                    }
                    Policy::Uniform => (0..self.num_actions)
                        .map(|a| (a, 1.0 / self.num_actions as f64))
                        .collect(),
                    Policy::Partial(map) => {
                        let a = *map.get(&(h, s)).ok_or(Error::PolicyUndefined { h, s })?;
                        vec![(a, 1.0)]
                    }
                };
                for (a, w) in actions {
                    if a >= self.num_actions {
                        return Err(Error::InvalidIndex { h, s, a });
                    }
                    let sa = &self.stages[h][s][a];
                    let dist = self.transition_probs(h, s, a, &self.theta_star[h])?;
                    let cont: f64 = dist
                        .iter()
                        .zip(&sa.next_states)
                        .map(|(p, &ns)| p * v[ns])
                        .sum();
                    *val += w * (sa.reward + cont);
                }
            }
            v = v_h;
        }
        Ok(v[self.initial_state])
    }

    /// Smallest product of the two smallest transition probabilities under the
    /// true parameters, over all triples with at least two reachable states.
    ///
    /// Returns 1 when every reachable set is a singleton.
    pub fn kappa_star(&self) -> f64 {
        self.min_pair_product(&self.theta_star)
    }

    fn min_pair_product(&self, thetas: &[DVector<f64>]) -> f64 {
        let mut best = 1.0f64;
        for h in 0..self.horizon {
            for s in 0..self.states_per_stage[h] {
                for a in 0..self.num_actions {
                    let dist = self
                        .transition_probs(h, s, a, &thetas[h])
                        .expect("validated model");
                    if dist.len() < 2 {
                        continue;
                    }
                    let (mut p1, mut p2) = (f64::INFINITY, f64::INFINITY);
                    for &p in dist.iter() {
                        if p < p1 {
                            p2 = p1;
                            p1 = p;
                        } else if p < p2 {
                            p2 = p;
                        }
                    }
                    best = best.min(p1 * p2);
                }
            }
        }
        best
    }

    /// Monte Carlo lower estimate of the worst-case pairwise probability
    /// product over the parameter ball.
    ///
    /// Samples `n_samples` points uniformly from the ball of radius
    /// `param_bound`, plus the origin and every signed axis boundary point;
    /// `include_theta_star` adds the true parameters as candidates. The
    /// estimate never falls below the closed-form floor from the norm bounds
    /// and, when the true parameters are included, never exceeds the value at
    /// the true parameters.
    pub fn estimate_kappa(&self, n_samples: usize, include_theta_star: bool, seed: u64) -> f64 {
        let mut rng = rng::stream(seed, &[rng::KAPPA_STREAM]);
        let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(n_samples + 2 * self.dim + 1);
        candidates.push(DVector::zeros(self.dim));
        for i in 0..self.dim {
            let mut e = DVector::zeros(self.dim);
            e[i] = self.param_bound;
            candidates.push(e.clone());
            e[i] = -self.param_bound;
            candidates.push(e);
        }
        for _ in 0..n_samples {
            candidates.push(rng::sample_in_ball(self.dim, self.param_bound, &mut rng));
        }
        let mut best = f64::INFINITY;
        for theta in &candidates {
            let per_stage = vec![theta.clone(); self.horizon];
            best = best.min(self.min_pair_product(&per_stage));
        }
        if include_theta_star {
            best = best.min(self.min_pair_product(&self.theta_star));
        }
        best
    }

    /// Shifts each reachable set so its first feature is the zero anchor,
    /// then rescales globally so feature norms stay at most 1.
    ///
    /// Transition probabilities are preserved; the parameter bound and the
    /// true parameters absorb the scaling factor. Returns the factor applied.
    pub fn recenter_features(&mut self) -> f64 {
        let mut max_norm = 0.0f64;
        for stage in &mut self.stages {
            for actions in stage {
                for sa in actions {
                    let anchor = sa.features[0].clone();
                    for phi in &mut sa.features {
                        *phi -= &anchor;
                        max_norm = max_norm.max(phi.norm());
                    }
                }
            }
        }
        let scale = if max_norm > 1.0 { max_norm } else { 1.0 };
        if scale > 1.0 {
            for stage in &mut self.stages {
                for actions in stage {
                    for sa in actions {
                        for phi in &mut sa.features {
                            *phi /= scale;
                        }
                    }
                }
            }
            for th in &mut self.theta_star {
                *th *= scale;
            }
            self.param_bound *= scale;
        }
        scale
    }

    /// Serializes to a stable JSON document that reloads bit-identically.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from(self))?)
    }

    /// Parses a model from its JSON form and validates it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_mdp()
    }

    /// Hex SHA-256 of the compact canonical serialization.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_string(&InstanceFile::from(self)).expect("serializable");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Serialized form of one action's transition data; features are row-major,
/// one row of `dim` entries per reachable state.
#[derive(Serialize, Deserialize)]
struct ActionFile {
    reward: f64,
    next_states: Vec<usize>,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    schema: String,
    dim: usize,
    horizon: usize,
    param_bound: f64,
    num_actions: usize,
    states_per_stage: Vec<usize>,
    initial_state: usize,
    theta_star: Vec<Vec<f64>>,
    stages: Vec<Vec<Vec<ActionFile>>>,
}

const SCHEMA: &str = "mnl-mdp-v1";

impl From<&MnlMdp> for InstanceFile {
    fn from(mdp: &MnlMdp) -> Self {
        InstanceFile {
            schema: SCHEMA.to_string(),
            dim: mdp.dim,
            horizon: mdp.horizon,
            param_bound: mdp.param_bound,
            num_actions: mdp.num_actions,
            states_per_stage: mdp.states_per_stage.clone(),
            initial_state: mdp.initial_state,
            theta_star: mdp.theta_star.iter().map(|t| t.iter().cloned().collect()).collect(),
            stages: mdp
                .stages
                .iter()
                .map(|stage| {
                    stage
                        .iter()
                        .map(|actions| {
                            actions
                                .iter()
                                .map(|sa| ActionFile {
                                    reward: sa.reward,
                                    next_states: sa.next_states.clone(),
                                    features: sa
                                        .features
                                        .iter()
                                        .flat_map(|phi| phi.iter().cloned())
                                        .collect(),
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl InstanceFile {
    fn into_mdp(self) -> Result<MnlMdp> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidModel(format!("unknown schema {}", self.schema)));
        }
        let dim = self.dim;
        let stages = self
            .stages
            .into_iter()
            .map(|stage| {
                stage
                    .into_iter()
                    .map(|actions| {
                        actions
                            .into_iter()
                            .map(|af| {
                                let n = af.next_states.len();
                                if af.features.len() != n * dim {
                                    return Err(Error::InvalidModel(
                                        "feature array length mismatch".into(),
                                    ));
                                }
                                let features = (0..n)
                                    .map(|i| {
                                        DVector::from_row_slice(
                                            &af.features[i * dim..(i + 1) * dim],
                                        )
                                    })
                                    .collect();
                                Ok(StateAction {
                                    reward: af.reward,
                                    next_states: af.next_states,
                                    features,
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        MnlMdp::new(
            self.dim,
            self.horizon,
            self.param_bound,
            self.num_actions,
            self.states_per_stage,
            self.initial_state,
            self.theta_star.into_iter().map(DVector::from_vec).collect(),
            stages,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Two stages, one then two states, two actions; handy for exact checks.
    pub(crate) fn tiny_mdp() -> MnlMdp {
        let phi = |v: &[f64]| DVector::from_row_slice(v);
        let sa = |reward: f64, feats: Vec<DVector<f64>>| StateAction {
            reward,
            next_states: (0..feats.len()).collect(),
            features: feats,
        };
        MnlMdp::new(
            2,
            2,
            1.0,
            2,
            vec![1, 2, 2],
            0,
            vec![phi(&[0.8, -0.2]), phi(&[0.3, 0.5])],
            vec![
                vec![vec![
                    sa(0.25, vec![phi(&[0.0, 0.0]), phi(&[0.6, 0.4])]),
                    sa(0.5, vec![phi(&[0.0, 0.0]), phi(&[-0.3, 0.9])]),
                ]],
                vec![
                    vec![
                        sa(1.0, vec![phi(&[0.0, 0.0]), phi(&[0.5, 0.5])]),
                        sa(0.0, vec![phi(&[0.0, 0.0]), phi(&[0.9, -0.1])]),
                    ],
                    vec![
                        sa(0.75, vec![phi(&[0.0, 0.0]), phi(&[0.2, -0.7])]),
                        sa(0.1, vec![phi(&[0.0, 0.0]), phi(&[-0.5, -0.5])]),
                    ],
                ],
            ],
        )
        .unwrap()
    }

    /// One stage, anchored two-state set with a single action and adjustable logit.
    fn two_state_mdp(logit: f64) -> MnlMdp {
        let b = logit.abs().max(1.0);
        MnlMdp::new(
            1,
            1,
            b,
            1,
            vec![1, 2],
            0,
            vec![DVector::from_row_slice(&[logit])],
            vec![vec![vec![StateAction {
                reward: 0.0,
                next_states: vec![0, 1],
                features: vec![
                    DVector::from_row_slice(&[0.0]),
                    DVector::from_row_slice(&[1.0]),
                ],
            }]]],
        )
        .unwrap()
    }

    #[test]
    fn softmax_matches_hand_values() {
        let mut logits = [0.0, 3.0f64.ln()];
        softmax_in_place(&mut logits);
        assert_relative_eq!(logits[0], 0.25, max_relative = 1e-14);
        assert_relative_eq!(logits[1], 0.75, max_relative = 1e-14);
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let mut logits = [1000.0, -1000.0, 999.0];
        softmax_in_place(&mut logits);
        assert!(logits.iter().all(|p| p.is_finite()));
        assert_relative_eq!(logits.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert!(logits[1] < 1e-300);
    }

    #[test]
    fn transition_probs_sum_to_one() {
        let mdp = tiny_mdp();
        for h in 0..mdp.horizon {
            for s in 0..mdp.states_per_stage[h] {
                for a in 0..mdp.num_actions {
                    let dist = mdp.transition_probs(h, s, a, &mdp.theta_star[h]).unwrap();
                    assert_relative_eq!(dist.sum(), 1.0, max_relative = 1e-12);
                    assert!(dist.iter().all(|&p| p > 0.0));
                }
            }
        }
    }

    #[test]
    fn transition_probs_rejects_bad_input() {
        let mdp = tiny_mdp();
        assert!(matches!(
            mdp.transition_probs(0, 0, 5, &mdp.theta_star[0]),
            Err(Error::InvalidIndex { .. })
        ));
        let bad = DVector::from_row_slice(&[f64::NAN, 0.0]);
        assert!(matches!(
            mdp.transition_probs(0, 0, 0, &bad),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn inverse_cdf_edges() {
        let dist = DVector::from_row_slice(&[0.2, 0.5, 0.3]);
        assert_eq!(sample_next_state(&dist, 0.0), 0);
        assert_eq!(sample_next_state(&dist, 0.19), 0);
        assert_eq!(sample_next_state(&dist, 0.21), 1);
        assert_eq!(sample_next_state(&dist, 0.999_999), 2);
        assert_eq!(sample_next_state(&dist, 1.0), 2);
    }

    #[test]
    fn sampling_frequencies_track_probabilities() {
        let mdp = two_state_mdp(3.0f64.ln());
        let dist = mdp.transition_probs(0, 0, 0, &mdp.theta_star[0]).unwrap();
        assert_relative_eq!(dist[1], 0.75, max_relative = 1e-12);
        let mut rng = rng::stream(5, &[rng::ENV_STREAM]);
        let n = 20_000;
        let mut hits = 0usize;
        for _ in 0..n {
            if sample_next_state(&dist, rng.random::<f64>()) == 1 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let sigma = (0.75 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() < 4.0 * sigma, "freq {freq} too far from 0.75");
    }

    #[test]
    fn backward_induction_matches_policy_enumeration() {
        let mdp = tiny_mdp();
        let vf = mdp.exact_value_functions();
        let mut best = f64::NEG_INFINITY;
        for a0 in 0..2 {
            for a10 in 0..2 {
                for a11 in 0..2 {
                    let policy = Policy::Deterministic(vec![vec![a0], vec![a10, a11]]);
                    best = best.max(mdp.evaluate_policy(&policy).unwrap());
                }
            }
        }
        assert_relative_eq!(vf.v[0][0], best, epsilon = 1e-10);
        let greedy: Vec<Vec<usize>> = vf
            .q
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|qs| {
                        qs.iter()
                            .enumerate()
                            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                            .unwrap()
                            .0
                    })
                    .collect()
            })
            .collect();
        let v_greedy = mdp.evaluate_policy(&Policy::Deterministic(greedy)).unwrap();
        assert_relative_eq!(v_greedy, vf.v[0][0], epsilon = 1e-10);
    }

    #[test]
    fn kappa_star_hand_cases() {
        let uniform = two_state_mdp(0.0);
        assert_relative_eq!(uniform.kappa_star(), 0.25, max_relative = 1e-12);
        let skewed = two_state_mdp(4.0f64.ln());
        assert_relative_eq!(skewed.kappa_star(), 0.16, max_relative = 1e-12);
    }

    #[test]
    fn kappa_star_ignores_singleton_sets() {
        let mut mdp = two_state_mdp(0.0);
        mdp.stages[0][0][0].next_states = vec![0];
        mdp.stages[0][0][0].features = vec![DVector::zeros(1)];
        assert_eq!(mdp.kappa_star(), 1.0);
    }

    #[test]
    fn kappa_estimate_is_sandwiched() {
        let mdp = tiny_mdp();
        let u = mdp.max_reachable() as f64;
        let b = mdp.param_bound;
        let kappa_hat = mdp.estimate_kappa(200, true, 9);
        let floor = 1.0 / (u * (2.0 * b).exp()).powi(2);
        assert!(kappa_hat >= floor - 1e-12, "{kappa_hat} below floor {floor}");
        assert!(kappa_hat <= mdp.kappa_star() + 1e-12);
        assert!(mdp.kappa_star() <= 1.0 / (u * u) + 1e-12);
    }

    #[test]
    fn kappa_estimate_degenerate_ball() {
        let mut mdp = two_state_mdp(0.0);
        mdp.param_bound = 0.0;
        mdp.theta_star = vec![DVector::zeros(1)];
        let est = mdp.estimate_kappa(50, false, 3);
        assert_relative_eq!(est, mdp.kappa_star(), max_relative = 1e-12);
    }

    #[test]
    fn recentering_preserves_probabilities() {
        let phi = |v: &[f64]| DVector::from_row_slice(v);
        let mut mdp = MnlMdp::new(
            2,
            1,
            1.0,
            1,
            vec![1, 3],
            0,
            vec![phi(&[0.5, -0.5])],
            vec![vec![vec![StateAction {
                reward: 0.3,
                next_states: vec![0, 1, 2],
                features: vec![phi(&[0.4, 0.6]), phi(&[-0.7, 0.1]), phi(&[0.2, -0.9])],
            }]]],
        )
        .unwrap();
        let before = mdp.transition_probs(0, 0, 0, &mdp.theta_star[0]).unwrap();
        assert!(!mdp.is_anchored());
        let scale = mdp.recenter_features();
        assert!(mdp.is_anchored());
        assert!(scale >= 1.0);
        mdp.validate().unwrap();
        let after = mdp.transition_probs(0, 0, 0, &mdp.theta_star[0]).unwrap();
        for i in 0..3 {
            assert_relative_eq!(before[i], after[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let mdp = tiny_mdp();
        let text = mdp.to_json_string().unwrap();
        let reloaded = MnlMdp::from_json_str(&text).unwrap();
        assert_eq!(text, reloaded.to_json_string().unwrap());
        for h in 0..mdp.horizon {
            assert_eq!(
                mdp.theta_star[h].as_slice(),
                reloaded.theta_star[h].as_slice()
            );
            for s in 0..mdp.states_per_stage[h] {
                for a in 0..mdp.num_actions {
                    let x = mdp.state_action(h, s, a).unwrap();
                    let y = reloaded.state_action(h, s, a).unwrap();
                    assert_eq!(x.reward.to_bits(), y.reward.to_bits());
                    for (p, q) in x.features.iter().zip(&y.features) {
                        assert_eq!(p.as_slice(), q.as_slice());
                    }
                }
            }
        }
        assert_eq!(mdp.content_hash(), reloaded.content_hash());
    }

    #[test]
    fn content_hash_tracks_changes() {
        let mdp = tiny_mdp();
        let mut other = mdp.clone();
        other.stages[0][0][0].reward = 0.26;
        assert_ne!(mdp.content_hash(), other.content_hash());
        assert_eq!(mdp.content_hash(), mdp.clone().content_hash());
    }

    #[test]
    fn validation_rejects_bad_models() {
        let mut m = tiny_mdp();
        m.stages[0][0][0].reward = 1.5;
        assert!(m.validate().is_err());

        let mut m = tiny_mdp();
        m.stages[1][0][1].features[1] *= 10.0;
        assert!(m.validate().is_err());

        let mut m = tiny_mdp();
        m.theta_star[0] *= 100.0;
        assert!(m.validate().is_err());

        let mut m = tiny_mdp();
        m.stages[1][1][0].next_states[1] = 7;
        assert!(m.validate().is_err());

        let mut m = tiny_mdp();
        m.stages[0][0][0].next_states.clear();
        m.stages[0][0][0].features.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn rollouts_are_reproducible() {
        let mdp = tiny_mdp();
        let policy = Policy::Deterministic(vec![vec![1], vec![0, 1]]);
        let t1 = mdp.rollout(&policy, &mut rng::stream(17, &[rng::ENV_STREAM])).unwrap();
        let t2 = mdp.rollout(&policy, &mut rng::stream(17, &[rng::ENV_STREAM])).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.steps.len(), 2);
        assert_relative_eq!(t1.return_total(), t1.steps[0].reward + t1.steps[1].reward);
    }

    #[test]
    fn partial_policy_must_cover_visited_states() {
        let mdp = tiny_mdp();
        let mut map = BTreeMap::new();
        map.insert((0, 0), 0);
        let policy = Policy::Partial(map);
        let err = mdp.rollout(&policy, &mut rng::stream(1, &[])).unwrap_err();
        assert!(matches!(err, Error::PolicyUndefined { h: 1, .. }));
    }

    #[test]
    fn uniform_policy_value_averages_actions() {
        let mdp = two_state_mdp(0.0);
        let v = mdp.evaluate_policy(&Policy::Uniform).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-15);
        let det = mdp.evaluate_policy(&Policy::Deterministic(vec![vec![0]])).unwrap();
        assert_relative_eq!(v, det, epsilon = 1e-15);
    }
}
