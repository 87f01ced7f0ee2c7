//! Episode-level agents wiring estimators to optimistic planners.
//!
//! All three agents expose the same interface: [`Agent::run_episode`] plays
//! one episode against the true model, records a [`Trajectory`] plus
//! [`EpisodeMetrics`], and updates the internal estimate. The two
//! sample-storing agents act greedily on the previous episode's optimistic
//! values, then refit their per-stage maximum-likelihood estimates and
//! rebuild values for the next episode. The mirror-descent agent plans from
//! its current state before acting and absorbs each observed transition into
//! a constant-size update during the forward pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_next_state, MnlMdp, Policy, Step, Trajectory};
use crate::mle::{
    baseline_ellipsoid, lambda_mle, mle_ellipsoid, radius_baseline, radius_mle, Ellipsoid,
    FitResult, SampleSet,
};
use crate::omd::{eta_default, lambda_default, radius_omd, OmdState};
use crate::planner::{
    backward_induction_baseline, backward_induction_bonus, backward_induction_maxset,
    greedy_action, greedy_policy, OptimisticValues,
};
use crate::rng;

/// Gradient tolerance for the per-episode Newton refits.
const NEWTON_TOL: f64 = 1e-8;
/// Iteration cap for the per-episode Newton refits.
const NEWTON_MAX_ITERS: usize = 100;
/// Seed of the one-time curvature estimate behind the design-bonus radius.
const KAPPA_SEED: u64 = 0x6B68_6174;

/// Algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    /// Design-matrix bonus planning over the regularized MLE; its radius
    /// needs a worst-case curvature constant.
    #[serde(rename = "baseline")]
    Baseline,
    /// Max-over-ellipsoid planning over the same MLE, curvature-free radius.
    #[serde(rename = "mle-maxset")]
    MleMaxSet,
    /// Constant-memory online mirror descent with closed-form bonuses.
    #[serde(rename = "omd")]
    OmdOneStep,
}

impl AgentKind {
    /// Every kind, in reporting order.
    pub const ALL: [AgentKind; 3] = [
        AgentKind::Baseline,
        AgentKind::MleMaxSet,
        AgentKind::OmdOneStep,
    ];

    /// Stable name used in CSV output and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Baseline => "baseline",
            AgentKind::MleMaxSet => "mle-maxset",
            AgentKind::OmdOneStep => "omd",
        }
    }

    /// Inverse of [`AgentKind::name`].
    pub fn parse(name: &str) -> Result<AgentKind> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown agent kind {name:?}")))
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared by every agent kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Confidence level: radii grow with `log(k * horizon / delta)`.
    pub delta: f64,
    /// Multiplier applied to every confidence radius.
    pub radius_scale: f64,
    /// Mirror-descent step size; derived from the instance when absent.
    pub eta: Option<f64>,
    /// Mirror-descent regularizer; derived from the step size when absent.
    pub lambda: Option<f64>,
    /// Draw budget for the one-time curvature estimate.
    pub kappa_samples: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            delta: 0.05,
            radius_scale: 1.0,
            eta: None,
            lambda: None,
            kappa_samples: 256,
        }
    }
}

impl AgentConfig {
    /// Radii exactly as analyzed, with all constants in place.
    pub fn theory() -> Self {
        AgentConfig::default()
    }

    /// Shrunk radii and unit mirror-descent constants. The analyzed
    /// guarantees do not cover this preset; it trades them for regret that
    /// is measurable at small episode budgets.
    pub fn practical() -> Self {
        AgentConfig {
            radius_scale: 0.1,
            eta: Some(1.0),
            lambda: Some(1.0),
            ..AgentConfig::default()
        }
    }

    /// Rejects non-positive or out-of-range hyperparameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(Error::Config(format!(
                "radius scale {} must be positive",
                self.radius_scale
            )));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta {eta} must be positive")));
            }
        }
        if let Some(lambda) = self.lambda {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::Config(format!("lambda {lambda} must be positive")));
            }
        }
        if self.kappa_samples == 0 {
            return Err(Error::Config("kappa sample budget must be positive".into()));
        }
        Ok(())
    }
}

/// Per-episode measurements reported by [`Agent::run_episode`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// One-based episode index.
    pub episode: usize,
    /// Sum of rewards along the realized trajectory.
    pub return_realized: f64,
    /// Parameter error per stage at acting time: the Euclidean distance
    /// between the estimate the policy was built from and the true stage
    /// parameter.
    pub theta_err: Vec<f64>,
    /// Transition samples held in memory while acting.
    pub stored_samples: u64,
    /// Estimator work units spent this episode: one per sample touched by a
    /// refit for the sample-storing agents, one per constant-size update for
    /// mirror descent. Planning work is excluded.
    pub op_count: u64,
    /// Wall-clock nanoseconds; zero unless the caller times the episode.
    pub wall_ns: u64,
}

/// Everything one episode produces.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    /// The greedy policy the episode was played with, for exact evaluation.
    pub policy: Policy,
    pub metrics: EpisodeMetrics,
}

/// One learning agent bound to a fixed problem instance shape.
pub struct Agent {
    kind: AgentKind,
    config: AgentConfig,
    dim: usize,
    horizon: usize,
    num_actions: usize,
    param_bound: f64,
    max_reachable: usize,
    kappa_hat: f64,
    eta: f64,
    lambda_omd: f64,
    episodes: usize,
    samples: Vec<SampleSet>,
    theta_hat: Vec<DVector<f64>>,
    gram: Vec<DMatrix<f64>>,
    omd: Vec<OmdState>,
    sets: Vec<Ellipsoid>,
    values: OptimisticValues,
}

impl Agent {
    /// Initializes an agent for `mdp`: zero parameter estimates, zero values
    /// for the sample-storing kinds, and a first planning pass for mirror
    /// descent, which acts on its bonuses from episode one.
    pub fn new(kind: AgentKind, config: AgentConfig, mdp: &MnlMdp) -> Result<Agent> {
        config.validate()?;
        let dim = mdp.dim;
        let horizon = mdp.horizon;
        let max_reachable = mdp.max_reachable();
        let kappa_hat = match kind {
            AgentKind::Baseline => mdp.estimate_kappa(config.kappa_samples, false, KAPPA_SEED),
            _ => 1.0,
        };
        let eta = config.eta.unwrap_or_else(|| eta_default(max_reachable, mdp.param_bound));
        let lambda_omd = config
            .lambda
            .unwrap_or_else(|| lambda_default(eta, mdp.param_bound, dim));
        let mut agent = Agent {
            kind,
            config,
            dim,
            horizon,
            num_actions: mdp.num_actions,
            param_bound: mdp.param_bound,
            max_reachable,
            kappa_hat,
            eta,
            lambda_omd,
            episodes: 0,
            samples: Vec::new(),
            theta_hat: Vec::new(),
            gram: Vec::new(),
            omd: Vec::new(),
            sets: Vec::new(),
            values: zero_values(mdp),
        };
        match kind {
            AgentKind::OmdOneStep => {
                for _ in 0..horizon {
                    agent.omd.push(OmdState::new(dim, eta, lambda_omd, mdp.param_bound)?);
                }
            }
            _ => {
                for h in 0..horizon {
                    let mut set = SampleSet::new(dim);
                    for s in 0..mdp.states_per_stage[h] {
                        for a in 0..mdp.num_actions {
                            set.add_context(&mdp.state_action(h, s, a)?.features);
                        }
                    }
                    agent.samples.push(set);
                    agent.theta_hat.push(DVector::zeros(dim));
                    agent.gram.push(DMatrix::zeros(dim, dim));
                }
            }
        }
        agent.rebuild_sets(mdp)?;
        if kind == AgentKind::OmdOneStep {
            agent.values = agent.plan_from_sets(mdp)?;
        }
        Ok(agent)
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Completed episodes.
    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Curvature estimate behind the design-bonus radius; 1 for other kinds.
    pub fn kappa_hat(&self) -> f64 {
        self.kappa_hat
    }

    /// Per-stage confidence sets the next episode will plan with.
    pub fn confidence_sets(&self) -> &[Ellipsoid] {
        &self.sets
    }

    /// Optimistic values the next episode will act on.
    pub fn values(&self) -> &OptimisticValues {
        &self.values
    }

    /// Greedy policy over the current optimistic values.
    pub fn current_policy(&self) -> Policy {
        greedy_policy(&self.values)
    }

    /// Current per-stage parameter estimates.
    pub fn theta_estimates(&self) -> Vec<DVector<f64>> {
        match self.kind {
            AgentKind::OmdOneStep => self.omd.iter().map(|st| st.theta().clone()).collect(),
            _ => self.theta_hat.clone(),
        }
    }

    /// Plays one episode and updates the estimate.
    ///
    /// Environment randomness comes from `(master_seed, episode, stage)`
    /// alone, so agents sharing a master seed face identical draws whenever
    /// they take identical actions.
    pub fn run_episode(&mut self, mdp: &MnlMdp, master_seed: u64) -> Result<EpisodeOutcome> {
        let k = self.episodes + 1;
        let policy = greedy_policy(&self.values);
        let theta_err = self.parameter_errors(mdp);
        let stored_samples = self.stored_samples();
        let mut steps = Vec::with_capacity(self.horizon);
        let mut forward_ops = 0u64;
        let mut return_realized = 0.0;
        let mut s = mdp.initial_state;
        for h in 0..self.horizon {
            let a = greedy_action(&self.values, h, s);
            let sa = mdp.state_action(h, s, a)?;
            let dist = mdp.transition_probs(h, s, a, &mdp.theta_star[h])?;
            let u = rng::env_uniform(master_seed, k as u64, h as u64);
            let idx = sample_next_state(&dist, u);
            let next = sa.next_states[idx];
            return_realized += sa.reward;
            steps.push(Step {
                h,
                state: s,
                action: a,
                next_state: next,
                reward: sa.reward,
            });
            match self.kind {
                AgentKind::OmdOneStep => {
                    self.omd[h].omd_step(&sa.features, idx)?;
                    forward_ops += 1;
                }
                _ => {
                    let ctx = (s * self.num_actions + a) as u32;
                    self.samples[h].push(ctx, idx as u32);
                    if self.kind == AgentKind::Baseline {
                        for phi in &sa.features {
                            self.gram[h] += phi * phi.transpose();
                        }
                    }
                }
            }
            s = next;
        }
        self.episodes = k;
        let refit_ops = self.rebuild_sets(mdp)?;
        self.values = self.plan_from_sets(mdp)?;
        let metrics = EpisodeMetrics {
            episode: k,
            return_realized,
            theta_err,
            stored_samples,
            op_count: forward_ops + refit_ops,
            wall_ns: 0,
        };
        Ok(EpisodeOutcome {
            trajectory: Trajectory { steps },
            policy,
            metrics,
        })
    }

    fn parameter_errors(&self, mdp: &MnlMdp) -> Vec<f64> {
        (0..self.horizon)
            .map(|h| match self.kind {
                AgentKind::OmdOneStep => (self.omd[h].theta() - &mdp.theta_star[h]).norm(),
                _ => (&self.theta_hat[h] - &mdp.theta_star[h]).norm(),
            })
            .collect()
    }

    fn stored_samples(&self) -> u64 {
        match self.kind {
            AgentKind::OmdOneStep => 0,
            _ => self.samples.iter().map(|s| s.len() as u64).sum(),
        }
    }

    /// Refits estimates where needed and rebuilds the per-stage confidence
    /// sets for the next episode. Returns the estimator work spent.
    fn rebuild_sets(&mut self, mdp: &MnlMdp) -> Result<u64> {
        let k_next = self.episodes + 1;
        let delta = self.config.delta;
        let scale = self.config.radius_scale;
        match self.kind {
            AgentKind::OmdOneStep => {
                let radius = scale
                    * radius_omd(
                        self.episodes,
                        self.horizon,
                        self.dim,
                        delta,
                        self.param_bound,
                        self.max_reachable,
                        self.eta,
                        self.lambda_omd,
                    );
                self.sets = self.omd.iter().map(|st| st.confidence_set(radius)).collect();
                Ok(0)
            }
            AgentKind::MleMaxSet => {
                let lambda = lambda_mle(k_next, self.horizon, self.dim, delta);
                let beta = scale * radius_mle(k_next, self.horizon, self.dim, delta, self.param_bound);
                let mut units = 0;
                let mut sets = Vec::with_capacity(self.horizon);
                for h in 0..self.horizon {
                    let fit = self.fit_stage(h, lambda)?;
                    units += self.samples[h].len() as u64;
                    sets.push(mle_ellipsoid(fit.theta.clone(), fit.hessian, beta)?);
                    self.theta_hat[h] = fit.theta;
                }
                self.sets = sets;
                let _ = mdp;
                Ok(units)
            }
            AgentKind::Baseline => {
                let lambda = lambda_mle(k_next, self.horizon, self.dim, delta);
                let beta =
                    scale * radius_baseline(k_next, self.horizon, self.dim, delta, self.kappa_hat);
                let mut units = 0;
                let mut sets = Vec::with_capacity(self.horizon);
                for h in 0..self.horizon {
                    let fit = self.fit_stage(h, lambda)?;
                    units += self.samples[h].len() as u64;
                    sets.push(baseline_ellipsoid(
                        fit.theta.clone(),
                        &self.gram[h],
                        self.kappa_hat,
                        lambda,
                        beta,
                    ));
                    self.theta_hat[h] = fit.theta;
                }
                self.sets = sets;
                Ok(units)
            }
        }
    }

    fn fit_stage(&self, h: usize, lambda: f64) -> Result<FitResult> {
        self.samples[h]
            .fit(lambda, Some(&self.theta_hat[h]), NEWTON_TOL, NEWTON_MAX_ITERS)
            .map_err(|source| Error::Estimator {
                episode: self.episodes,
                stage: h,
                source: Box::new(source),
            })
    }

    fn plan_from_sets(&self, mdp: &MnlMdp) -> Result<OptimisticValues> {
        match self.kind {
            AgentKind::Baseline => backward_induction_baseline(mdp, &self.sets),
            AgentKind::MleMaxSet => backward_induction_maxset(mdp, &self.sets),
            AgentKind::OmdOneStep => backward_induction_bonus(mdp, &self.sets),
        }
    }
}

fn zero_values(mdp: &MnlMdp) -> OptimisticValues {
    let q: Vec<Vec<Vec<f64>>> = (0..mdp.horizon)
        .map(|h| vec![vec![0.0; mdp.num_actions]; mdp.states_per_stage[h]])
        .collect();
    let v: Vec<Vec<f64>> = (0..=mdp.horizon)
        .map(|h| vec![0.0; mdp.states_per_stage[h]])
        .collect();
    OptimisticValues {
        q: q.clone(),
        v,
        q_raw: q.clone(),
        bonus: q,
    }
}

/// Cumulative expected regret of a sequence of executed policies.
///
/// Each increment is the optimal value minus the exact evaluation of that
/// episode's policy under the true transitions. Negative rounding residue is
/// clamped to zero, keeping the series nondecreasing.
pub fn regret_series(mdp: &MnlMdp, policies: &[Policy]) -> Result<Vec<f64>> {
    let v_star = mdp.optimal_value();
    let mut out = Vec::with_capacity(policies.len());
    let mut cum = 0.0;
    for policy in policies {
        cum += (v_star - mdp.evaluate_policy(policy)?).max(0.0);
        out.push(cum);
    }
    Ok(out)
}
