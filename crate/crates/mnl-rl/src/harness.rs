//! Experiment orchestration: agent-by-seed grids, regret and cost metrics,
//! coverage and optimism audits, and reproducible file output.
//!
//! Runs are embarrassingly parallel and deterministic: every run derives all
//! of its randomness from its seed, environment noise depends only on
//! `(seed, episode, stage)`, and result files are written atomically. Two
//! invocations of the same configuration produce byte-identical CSV output
//! as long as wall-clock timing stays disabled.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, AgentKind};
use crate::envs;
use crate::error::{Error, Result};
use crate::mdp::MnlMdp;
use crate::mle::ShapeFactor;
use crate::VERSION;

/// Draw budget for the curvature estimates recorded in manifests.
const MANIFEST_KAPPA_SAMPLES: usize = 1024;
/// Slack added to ellipsoid membership checks to absorb rounding.
const MEMBERSHIP_TOL: f64 = 1e-9;

/// Recipe for the problem instance an experiment runs on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum InstanceSpec {
    /// Seeded random layered instance.
    Random {
        dim: usize,
        horizon: usize,
        states: usize,
        num_actions: usize,
        reach: usize,
        param_bound: f64,
        seed: u64,
    },
    /// Block-structured instance with a closed-form optimal value.
    Hard {
        dim: usize,
        horizon: usize,
        num_actions: usize,
        theta_blocks: Vec<Vec<f64>>,
    },
    /// Two-state survival chain with a product-form optimal value.
    Chain { horizon: usize, p_values: Vec<f64> },
    /// Instance loaded from a JSON file.
    File { path: PathBuf },
}

impl InstanceSpec {
    /// Builds the instance this spec describes.
    pub fn build(&self) -> Result<MnlMdp> {
        match self {
            InstanceSpec::Random {
                dim,
                horizon,
                states,
                num_actions,
                reach,
                param_bound,
                seed,
            } => envs::random_instance(
                *dim,
                *horizon,
                *states,
                *num_actions,
                *reach,
                *param_bound,
                *seed,
            ),
            InstanceSpec::Hard {
                dim,
                horizon,
                num_actions,
                theta_blocks,
            } => {
                let blocks: Vec<DVector<f64>> = theta_blocks
                    .iter()
                    .map(|b| DVector::from_row_slice(b))
                    .collect();
                envs::hard_instance(*dim, *horizon, *num_actions, &blocks)
            }
            InstanceSpec::Chain { horizon, p_values } => {
                envs::chain_instance(*horizon, p_values)
            }
            InstanceSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                MnlMdp::from_json_str(&text)
            }
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    /// Agent kinds to run; each runs on every seed.
    pub agents: Vec<AgentKind>,
    /// Hyperparameters shared by all runs.
    pub agent_config: AgentConfig,
    /// Episodes per run.
    pub episodes: usize,
    /// One independent run per seed.
    pub seeds: Vec<u64>,
    /// Record a row every this many episodes; 0 picks `max(1, K / 1000)`.
    /// The final episode is always recorded.
    #[serde(default)]
    pub cadence: usize,
    /// Fill the wall-clock column. Leaving this off keeps output
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    /// Worker threads for the run grid; 0 uses the global default.
    #[serde(default)]
    pub workers: usize,
}

impl ExperimentConfig {
    /// Rejects empty or contradictory settings.
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("need at least one episode".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("need at least one agent".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.agent_config.validate()
    }

    /// Recording interval after applying the default rule.
    pub fn effective_cadence(&self) -> usize {
        if self.cadence == 0 {
            (self.episodes / 1000).max(1)
        } else {
            self.cadence
        }
    }
}

/// One CSV row of a run's metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub agent: String,
    pub seed: u64,
    pub k: usize,
    pub cum_regret: f64,
    /// Stage-mean parameter error at acting time.
    pub theta_err: f64,
    pub op_count: u64,
    pub stored_samples: u64,
    pub wall_ns: u64,
}

/// Result of one (agent, seed) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub agent: AgentKind,
    pub seed: u64,
    pub records: Vec<RegretRecord>,
    /// Populated when the run aborted; other runs proceed regardless.
    pub error: Option<String>,
}

/// Instance facts and configuration echo stored beside result CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    /// SHA-256 of the canonical instance serialization.
    pub instance_hash: String,
    /// Ball-wide curvature estimate, true parameters included.
    pub kappa_hat: f64,
    /// Curvature at the true parameters.
    pub kappa_star: f64,
    pub max_reachable: usize,
    pub param_bound: f64,
    pub dim: usize,
    pub horizon: usize,
    pub num_actions: usize,
    pub optimal_value: f64,
}

/// Everything [`run_experiment`] produces in memory.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentResult {
    /// All records of all successful runs, in grid order.
    pub fn records(&self) -> Vec<RegretRecord> {
        self.runs.iter().flat_map(|r| r.records.clone()).collect()
    }
}

fn build_manifest(config: &ExperimentConfig, mdp: &MnlMdp) -> Manifest {
    Manifest {
        config: config.clone(),
        version: VERSION.to_string(),
        instance_hash: mdp.content_hash(),
        kappa_hat: mdp.estimate_kappa(MANIFEST_KAPPA_SAMPLES, true, 0),
        kappa_star: mdp.kappa_star(),
        max_reachable: mdp.max_reachable(),
        param_bound: mdp.param_bound,
        dim: mdp.dim,
        horizon: mdp.horizon,
        num_actions: mdp.num_actions,
        optimal_value: mdp.optimal_value(),
    }
}

/// Runs the full agent-by-seed grid, optionally writing one CSV per run and
/// a manifest into `out_dir`.
///
/// Runs execute in parallel but the returned order and all file contents are
/// deterministic. A failed run carries its error message; the rest proceed.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let mdp = config.instance.build()?;
    let manifest = build_manifest(config, &mdp);
    let grid: Vec<(AgentKind, u64)> = config
        .agents
        .iter()
        .flat_map(|&kind| config.seeds.iter().map(move |&seed| (kind, seed)))
        .collect();
    let execute = || -> Vec<RunOutcome> {
        grid.par_iter()
            .map(|&(kind, seed)| {
                match run_one(&mdp, kind, &config.agent_config, config.episodes, seed, config.effective_cadence(), config.timing) {
                    Ok(records) => RunOutcome { agent: kind, seed, records, error: None },
                    Err(e) => RunOutcome { agent: kind, seed, records: Vec::new(), error: Some(e.to_string()) },
                }
            })
            .collect()
    };
    let runs = if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(execute)
    } else {
        execute()
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for run in &runs {
            let name = format!("{}_{}.csv", run.agent.name(), run.seed);
            write_records_csv(&dir.join(name), &run.records)?;
        }
        let manifest_json = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&dir.join("manifest.json"), manifest_json.as_bytes())?;
    }
    Ok(ExperimentResult { manifest, runs })
}

/// One full run: `episodes` episodes of `kind` with environment noise keyed
/// by `seed`, recording at the given cadence.
pub fn run_one(
    mdp: &MnlMdp,
    kind: AgentKind,
    agent_config: &AgentConfig,
    episodes: usize,
    seed: u64,
    cadence: usize,
    timing: bool,
) -> Result<Vec<RegretRecord>> {
    let cadence = cadence.max(1);
    let v_star = mdp.optimal_value();
    let mut agent = Agent::new(kind, agent_config.clone(), mdp)?;
    let mut records = Vec::new();
    let mut cum_regret = 0.0;
    for k in 1..=episodes {
        let started = timing.then(Instant::now);
        let out = agent.run_episode(mdp, seed)?;
        let wall_ns = started.map_or(0, |t| t.elapsed().as_nanos() as u64);
        cum_regret += (v_star - mdp.evaluate_policy(&out.policy)?).max(0.0);
        if k % cadence == 0 || k == episodes {
            let m = &out.metrics;
            records.push(RegretRecord {
                agent: kind.name().to_string(),
                seed,
                k,
                cum_regret,
                theta_err: mean(&m.theta_err),
                op_count: m.op_count,
                stored_samples: m.stored_samples,
                wall_ns,
            });
        }
    }
    Ok(records)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Serializes records in schema order and writes them atomically.
pub fn write_records_csv(path: &Path, records: &[RegretRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for record in records {
        writer.serialize(record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Config(format!("csv flush: {e}")))?;
    write_atomic(path, &bytes)
}

/// Reads records written by [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<RegretRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Reads every `.csv` file in a result directory, in file-name order.
pub fn read_records_dir(dir: &Path) -> Result<Vec<RegretRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        out.extend(read_records_csv(&path)?);
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| Error::Config(format!("no parent directory for {}", path.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Inputs for [`coverage_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub instance: InstanceSpec,
    pub agents: Vec<AgentKind>,
    pub agent_config: AgentConfig,
    pub episodes: usize,
    /// Independent runs per agent kind.
    pub runs: usize,
    /// Episode counts to check at; empty picks `{K/4, K/2, K}`.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    /// Master seed of run 0; run r uses `seed + r`.
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
}

/// Coverage fraction of one agent kind at one checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRow {
    pub agent: String,
    pub k: usize,
    pub covered: usize,
    pub runs: usize,
    pub fraction: f64,
    /// The nominal guarantee `1 - delta`.
    pub target: f64,
}

/// Empirical confidence-set coverage over independent runs.
///
/// A run covers a checkpoint when, right after that episode, the true
/// parameter of every stage lies in the agent's own confidence set: the set
/// the next episode would plan with.
pub fn coverage_experiment(config: &CoverageConfig) -> Result<Vec<CoverageRow>> {
    if config.episodes == 0 || config.runs == 0 {
        return Err(Error::Config("coverage needs episodes and runs".into()));
    }
    config.agent_config.validate()?;
    let mdp = config.instance.build()?;
    let checkpoints = if config.checkpoints.is_empty() {
        vec![
            (config.episodes / 4).max(1),
            (config.episodes / 2).max(1),
            config.episodes,
        ]
    } else {
        let mut cs = config.checkpoints.clone();
        cs.sort_unstable();
        if cs.iter().any(|&c| c == 0 || c > config.episodes) {
            return Err(Error::Config("checkpoints must lie in [1, episodes]".into()));
        }
        cs
    };
    let count_run = |kind: AgentKind, run_idx: usize| -> Result<Vec<bool>> {
        let seed = config.seed + run_idx as u64;
        let mut agent = Agent::new(kind, config.agent_config.clone(), &mdp)?;
        let mut hits = Vec::with_capacity(checkpoints.len());
        for k in 1..=config.episodes {
            agent.run_episode(&mdp, seed)?;
            if checkpoints.contains(&k) {
                let all_in = agent
                    .confidence_sets()
                    .iter()
                    .zip(&mdp.theta_star)
                    .all(|(set, theta)| set.contains(theta, MEMBERSHIP_TOL));
                hits.push(all_in);
            }
        }
        Ok(hits)
    };
    let run_grid = |states: &mut Vec<CoverageRow>| -> Result<()> {
        for &kind in &config.agents {
            let hits: Vec<Vec<bool>> = (0..config.runs)
                .into_par_iter()
                .map(|r| count_run(kind, r))
                .collect::<Result<_>>()?;
            for (idx, &k) in checkpoints.iter().enumerate() {
                let covered = hits.iter().filter(|h| h[idx]).count();
                states.push(CoverageRow {
                    agent: kind.name().to_string(),
                    k,
                    covered,
                    runs: config.runs,
                    fraction: covered as f64 / config.runs as f64,
                    target: 1.0 - config.agent_config.delta,
                });
            }
        }
        Ok(())
    };
    let mut rows = Vec::new();
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| run_grid(&mut rows))?;
    } else {
        run_grid(&mut rows)?;
    }
    Ok(rows)
}

/// Regret growth summary of one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub agent: String,
    /// Log-log regression exponent over the last decade of checkpoints.
    pub alpha: f64,
    /// Seed-mean regret at the last checkpoint over the checkpoint nearest
    /// to a quarter of it.
    pub ratio: f64,
    /// Seed-mean regret at the last checkpoint.
    pub final_regret: f64,
}

/// Fits growth exponents from recorded regret curves.
///
/// Records are grouped by agent, seed-averaged per checkpoint, and the
/// exponent comes from least squares on `log regret` against `log k`
/// restricted to the last decade `[k_max / 10, k_max]`.
pub fn scaling_report(records: &[RegretRecord]) -> Vec<ScalingSummary> {
    let mut agents: Vec<String> = records.iter().map(|r| r.agent.clone()).collect();
    agents.sort();
    agents.dedup();
    let mut out = Vec::new();
    for agent in agents {
        let mut by_k: std::collections::BTreeMap<usize, (f64, usize)> =
            std::collections::BTreeMap::new();
        for r in records.iter().filter(|r| r.agent == agent) {
            let slot = by_k.entry(r.k).or_insert((0.0, 0));
            slot.0 += r.cum_regret;
            slot.1 += 1;
        }
        let curve: Vec<(usize, f64)> = by_k
            .into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect();
        let Some(&(k_max, final_regret)) = curve.last() else {
            continue;
        };
        let quarter = k_max / 4;
        let near_quarter = curve
            .iter()
            .min_by_key(|(k, _)| k.abs_diff(quarter))
            .map(|&(_, reg)| reg)
            .unwrap_or(f64::NAN);
        let ratio = final_regret / near_quarter;
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .filter(|&&(k, reg)| k * 10 >= k_max && reg > 0.0)
            .map(|&(k, reg)| ((k as f64).ln(), reg.ln()))
            .collect();
        out.push(ScalingSummary {
            agent,
            alpha: slope(&pts),
            ratio,
            final_regret,
        });
    }
    out
}

/// Least-squares slope of `y` against `x`; NaN below two points.
fn slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Per-episode cost behavior of one agent kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostProfile {
    pub agent: String,
    pub episodes: usize,
    /// Least-squares slope of the per-episode operation counter against k.
    pub op_slope: f64,
    /// True when every episode reported the identical operation count.
    pub op_constant: bool,
    pub stored_slope: f64,
    pub stored_constant: bool,
}

/// Measures operation and storage counters for each kind over one run.
pub fn bench_cost_profile(
    mdp: &MnlMdp,
    agent_config: &AgentConfig,
    kinds: &[AgentKind],
    episodes: usize,
    seed: u64,
) -> Result<Vec<CostProfile>> {
    let mut out = Vec::new();
    for &kind in kinds {
        let mut agent = Agent::new(kind, agent_config.clone(), mdp)?;
        let mut ops = Vec::with_capacity(episodes);
        let mut stored = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let m = agent.run_episode(mdp, seed)?.metrics;
            ops.push(m.op_count);
            stored.push(m.stored_samples);
        }
        let series = |xs: &[u64]| -> (f64, bool) {
            let pts: Vec<(f64, f64)> = xs
                .iter()
                .enumerate()
                .map(|(i, &v)| ((i + 1) as f64, v as f64))
                .collect();
            (slope(&pts), xs.windows(2).all(|w| w[0] == w[1]))
        };
        let (op_slope, op_constant) = series(&ops);
        let (stored_slope, stored_constant) = series(&stored);
        out.push(CostProfile {
            agent: kind.name().to_string(),
            episodes,
            op_slope,
            op_constant,
            stored_slope,
            stored_constant,
        });
    }
    Ok(out)
}

/// Pass criterion for a cost benchmark: mirror-descent counters exactly
/// constant per episode, every sample-based agent's counters growing.
pub fn bench_gate(profiles: &[CostProfile]) -> bool {
    !profiles.is_empty()
        && profiles.iter().all(|p| {
            if p.agent == AgentKind::OmdOneStep.name() {
                p.op_constant && p.stored_constant
            } else {
                p.op_slope > 0.0 && p.stored_slope > 0.0
            }
        })
}

/// Outcome of [`optimism_audit`] for one agent kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimismAudit {
    pub agent: String,
    pub episodes: usize,
    /// (k, h, s, a) tuples inspected.
    pub checked: u64,
    /// Episodes where some true stage parameter left its confidence set;
    /// optimism is only asserted while membership holds.
    pub membership_failures: u64,
    /// Failures of `Q* <= Q` beyond tolerance while membership held.
    pub lower_violations: u64,
    /// Failures of `Q <= r + P V + 2 bonus` beyond tolerance while
    /// membership held.
    pub upper_violations: u64,
}

/// Checks the two-sided optimism inequality for the closed-form bonus
/// planners along a full run.
///
/// After each episode the audit takes the freshly planned values together
/// with the confidence sets they were planned from, verifies the true
/// parameters lie in those sets, then checks `Q*(h,s,a) <= Q(h,s,a)` and
/// `Q(h,s,a) <= r + P V(h+1) + 2 bonus` for every state-action pair, with
/// `P` the true transition law. The max-set planner is excluded: its inner
/// ascent yields a lower bound whose optimism is only grid-checkable in one
/// dimension.
pub fn optimism_audit(
    mdp: &MnlMdp,
    agent_config: &AgentConfig,
    kinds: &[AgentKind],
    episodes: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<OptimismAudit>> {
    if kinds.contains(&AgentKind::MleMaxSet) {
        return Err(Error::Config(
            "optimism audit covers the closed-form bonus planners only".into(),
        ));
    }
    let exact = mdp.exact_value_functions();
    let mut out = Vec::new();
    for &kind in kinds {
        let mut agent = Agent::new(kind, agent_config.clone(), mdp)?;
        let mut audit = OptimismAudit {
            agent: kind.name().to_string(),
            episodes,
            checked: 0,
            membership_failures: 0,
            lower_violations: 0,
            upper_violations: 0,
        };
        for _ in 0..episodes {
            agent.run_episode(mdp, seed)?;
            let member = agent
                .confidence_sets()
                .iter()
                .zip(&mdp.theta_star)
                .all(|(set, theta)| set.contains(theta, MEMBERSHIP_TOL));
            if !member {
                audit.membership_failures += 1;
                continue;
            }
            let values = agent.values();
            for h in 0..mdp.horizon {
                for s in 0..mdp.states_per_stage[h] {
                    for a in 0..mdp.num_actions {
                        audit.checked += 1;
                        let q = values.q[h][s][a];
                        if exact.q[h][s][a] > q + tol {
                            audit.lower_violations += 1;
                        }
                        let sa = mdp.state_action(h, s, a)?;
                        let probs = mdp.transition_probs(h, s, a, &mdp.theta_star[h])?;
                        let continuation: f64 = sa
                            .next_states
                            .iter()
                            .zip(probs.iter())
                            .map(|(&ns, p)| p * values.v[h + 1][ns])
                            .sum();
                        let upper = sa.reward + continuation + 2.0 * values.bonus[h][s][a];
                        if q > upper + tol {
                            audit.upper_violations += 1;
                        }
                    }
                }
            }
        }
        out.push(audit);
    }
    Ok(out)
}

/// Outcome of [`elliptical_audit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticalAudit {
    pub episodes: usize,
    pub kappa_star: f64,
    pub lambda: f64,
    /// Violations per statement, counted once per (episode, stage).
    pub violations: [u64; 5],
    /// Smallest observed bound-minus-sum slack per statement.
    pub min_slack: [f64; 5],
}

/// Accumulates the five elliptical-potential sums along one mirror-descent
/// run and checks them against their logarithmic bounds at every episode.
///
/// The five statements, per stage, with `p(theta)` the softmax over the
/// visited feature block, `phi_bar`/`phi_tilde` the features centered at the
/// true and at the freshly updated parameters, `Hstar` the cumulative
/// covariance matrix evaluated at the true parameters, and `Homd` the
/// agent's pre-update accumulated matrix:
///
/// 1. sums of `p(theta*)`-weighted `||phi_bar||^2` in `Hstar^-1`,
/// 2. sums of `p(tilde)`-weighted `||phi_tilde||^2` in `Homd^-1`,
/// 3. like 2 with weights `p(tilde) * p_anchor(tilde)` on raw features,
/// 4. sums of `max ||phi||^2` in `Hstar^-1`,
/// 5. sums of `max ||phi_tilde||^2` in `Homd^-1`.
///
/// Statements 1-3 compare against `2 d log(1 + k / (lambda d))`; statements
/// 4-5 divide that bound by the curvature at the true parameters. The run
/// must use a regularizer of at least 1 and an anchored instance.
pub fn elliptical_audit(
    mdp: &MnlMdp,
    agent_config: &AgentConfig,
    episodes: usize,
    seed: u64,
) -> Result<EllipticalAudit> {
    if !mdp.is_anchored() {
        return Err(Error::Config("elliptical audit needs an anchored instance".into()));
    }
    let mut agent = Agent::new(AgentKind::OmdOneStep, agent_config.clone(), mdp)?;
    let lambda = agent.confidence_sets()[0]
        .shape
        .diagonal()
        .min();
    if lambda < 1.0 {
        return Err(Error::Config(format!(
            "elliptical audit needs lambda >= 1, got {lambda}"
        )));
    }
    let kappa_star = mdp.kappa_star();
    let d = mdp.dim;
    let horizon = mdp.horizon;
    let mut hstar: Vec<DMatrix<f64>> =
        vec![DMatrix::identity(d, d) * lambda; horizon];
    let mut sums = vec![[0.0f64; 5]; horizon];
    let mut violations = [0u64; 5];
    let mut min_slack = [f64::INFINITY; 5];
    for k in 1..=episodes {
        let pre_shapes: Vec<DMatrix<f64>> = agent
            .confidence_sets()
            .iter()
            .map(|set| set.shape.clone())
            .collect();
        let outcome = agent.run_episode(mdp, seed)?;
        let post_thetas = agent.theta_estimates();
        for step in &outcome.trajectory.steps {
            let h = step.h;
            let sa = mdp.state_action(h, step.state, step.action)?;
            let omd_factor = ShapeFactor::new(&pre_shapes[h])?;
            let star_factor = ShapeFactor::new(&hstar[h])?;
            let p_star = mdp.transition_probs(h, step.state, step.action, &mdp.theta_star[h])?;
            let p_tilde = mdp.transition_probs(h, step.state, step.action, &post_thetas[h])?;
            let mean_of = |probs: &DVector<f64>| -> DVector<f64> {
                sa.features
                    .iter()
                    .zip(probs.iter())
                    .fold(DVector::zeros(d), |acc, (phi, p)| acc + phi * *p)
            };
            let mean_star = mean_of(&p_star);
            let mean_tilde = mean_of(&p_tilde);
            let anchor = sa
                .features
                .iter()
                .position(|phi| phi.norm() <= 1e-12)
                .ok_or(Error::Internal("anchored instance lost its anchor"))?;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut s3 = 0.0;
            let mut s4 = 0.0f64;
            let mut s5 = 0.0f64;
            for (i, phi) in sa.features.iter().enumerate() {
                let bar = phi - &mean_star;
                let tilde = phi - &mean_tilde;
                s1 += p_star[i] * star_factor.inv_norm_sq(&bar);
                s2 += p_tilde[i] * omd_factor.inv_norm_sq(&tilde);
                s3 += p_tilde[i] * p_tilde[anchor] * omd_factor.inv_norm_sq(phi);
                s4 = s4.max(star_factor.inv_norm_sq(phi));
                s5 = s5.max(omd_factor.inv_norm_sq(&tilde));
            }
            sums[h][0] += s1;
            sums[h][1] += s2;
            sums[h][2] += s3;
            sums[h][3] += s4;
            sums[h][4] += s5;
            for (i, phi) in sa.features.iter().enumerate() {
                let bar = phi - &mean_star;
                hstar[h] += &bar * bar.transpose() * p_star[i];
            }
        }
        let base = 2.0 * d as f64 * (1.0 + k as f64 / (lambda * d as f64)).ln();
        let bounds = [base, base, base, base / kappa_star, base / kappa_star];
        for h in 0..horizon {
            for stmt in 0..5 {
                let slack = bounds[stmt] - sums[h][stmt];
                if slack < min_slack[stmt] {
                    min_slack[stmt] = slack;
                }
                if slack < -1e-9 {
                    violations[stmt] += 1;
                }
            }
        }
    }
    Ok(EllipticalAudit {
        episodes,
        kappa_star,
        lambda,
        violations,
        min_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_random_spec(seed: u64) -> InstanceSpec {
        InstanceSpec::Random {
            dim: 2,
            horizon: 2,
            states: 3,
            num_actions: 2,
            reach: 2,
            param_bound: 1.0,
            seed,
        }
    }

    fn tiny_config(dir_independent: bool) -> ExperimentConfig {
        ExperimentConfig {
            instance: tiny_random_spec(5),
            agents: vec![AgentKind::OmdOneStep, AgentKind::MleMaxSet],
            agent_config: AgentConfig::practical(),
            episodes: 30,
            seeds: vec![1, 2],
            cadence: 5,
            timing: !dir_independent && false,
            workers: 0,
        }
    }

    #[test]
    fn instance_specs_build_and_files_round_trip() {
        let random = tiny_random_spec(7).build().unwrap();
        assert_eq!(random.dim, 2);
        let hard = InstanceSpec::Hard {
            dim: 2,
            horizon: 2,
            num_actions: 3,
            theta_blocks: vec![vec![0.5, -0.2]],
        }
        .build()
        .unwrap();
        assert_eq!(hard.horizon, 2);
        let chain = InstanceSpec::Chain {
            horizon: 2,
            p_values: vec![0.7, 0.4],
        }
        .build()
        .unwrap();
        assert_eq!(chain.dim, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instance.json");
        std::fs::write(&path, random.to_json_string().unwrap()).unwrap();
        let loaded = InstanceSpec::File { path }.build().unwrap();
        assert_eq!(loaded.content_hash(), random.content_hash());
    }

    #[test]
    fn config_validation_catches_duplicates_and_empties() {
        let mut config = tiny_config(true);
        assert!(config.validate().is_ok());
        config.seeds = vec![1, 1];
        assert!(config.validate().is_err());
        config.seeds = vec![];
        assert!(config.validate().is_err());
        config = tiny_config(true);
        config.agents.clear();
        assert!(config.validate().is_err());
        config = tiny_config(true);
        config.episodes = 0;
        assert!(config.validate().is_err());
        config = tiny_config(true);
        config.cadence = 0;
        assert_eq!(config.effective_cadence(), 1);
        config.episodes = 5000;
        assert_eq!(config.effective_cadence(), 5);
    }

    #[test]
    fn experiment_output_is_deterministic_and_well_formed() {
        let config = tiny_config(true);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let result_a = run_experiment(&config, Some(dir_a.path())).unwrap();
        let result_b = run_experiment(&config, Some(dir_b.path())).unwrap();
        assert_eq!(result_a.runs.len(), 4);
        for run in &result_a.runs {
            assert!(run.error.is_none(), "{:?}", run.error);
            assert_eq!(run.records.last().unwrap().k, 30);
            for pair in run.records.windows(2) {
                assert!(pair[1].cum_regret >= pair[0].cum_regret);
            }
        }
        for run in &result_a.runs {
            let name = format!("{}_{}.csv", run.agent.name(), run.seed);
            let bytes_a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let bytes_b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert!(!bytes_a.is_empty());
            assert_eq!(bytes_a, bytes_b, "file {name} differs between runs");
        }
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(dir_a.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.instance_hash, result_a.manifest.instance_hash);
        assert_eq!(manifest.version, crate::VERSION);
        assert!(manifest.kappa_hat <= manifest.kappa_star + 1e-12);
        let reread = read_records_dir(dir_a.path()).unwrap();
        assert_eq!(reread.len(), result_b.records().len());
    }

    #[test]
    fn csv_round_trips_records() {
        let records = vec![RegretRecord {
            agent: "omd".into(),
            seed: 3,
            k: 10,
            cum_regret: 1.25,
            theta_err: 0.5,
            op_count: 2,
            stored_samples: 0,
            wall_ns: 0,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "agent,seed,k,cum_regret,theta_err,op_count,stored_samples,wall_ns"
        ));
        assert_eq!(read_records_csv(&path).unwrap(), records);
    }

    #[test]
    fn huge_radius_gives_full_coverage() {
        let config = CoverageConfig {
            instance: tiny_random_spec(9),
            agents: vec![AgentKind::MleMaxSet, AgentKind::OmdOneStep],
            agent_config: AgentConfig {
                radius_scale: 100.0,
                ..AgentConfig::default()
            },
            episodes: 20,
            runs: 10,
            checkpoints: vec![],
            seed: 100,
            workers: 0,
        };
        let rows = coverage_experiment(&config).unwrap();
        assert_eq!(rows.len(), 6);
        for row in rows {
            assert_eq!(row.fraction, 1.0, "agent {} at k={}", row.agent, row.k);
            assert_relative_eq!(row.target, 0.95, max_relative = 1e-12);
        }
    }

    #[test]
    fn scaling_report_recovers_synthetic_exponents() {
        let mut records = Vec::new();
        for seed in 0..3u64 {
            for i in 1..=40usize {
                let k = 25 * i;
                records.push(RegretRecord {
                    agent: "sqrt".into(),
                    seed,
                    k,
                    cum_regret: (k as f64).sqrt(),
                    theta_err: 0.0,
                    op_count: 0,
                    stored_samples: 0,
                    wall_ns: 0,
                });
                records.push(RegretRecord {
                    agent: "linear".into(),
                    seed,
                    k,
                    cum_regret: k as f64,
                    theta_err: 0.0,
                    op_count: 0,
                    stored_samples: 0,
                    wall_ns: 0,
                });
            }
        }
        let report = scaling_report(&records);
        let sqrt = report.iter().find(|s| s.agent == "sqrt").unwrap();
        assert_relative_eq!(sqrt.alpha, 0.5, max_relative = 1e-10);
        assert_relative_eq!(sqrt.ratio, 2.0, max_relative = 1e-12);
        let linear = report.iter().find(|s| s.agent == "linear").unwrap();
        assert_relative_eq!(linear.alpha, 1.0, max_relative = 1e-10);
        assert_relative_eq!(linear.ratio, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn cost_profiles_separate_constant_from_growing() {
        let mdp = tiny_random_spec(3).build().unwrap();
        let profiles = bench_cost_profile(
            &mdp,
            &AgentConfig::practical(),
            &AgentKind::ALL,
            200,
            4,
        )
        .unwrap();
        let by_name = |name: &str| profiles.iter().find(|p| p.agent == name).unwrap();
        let omd = by_name("omd");
        assert!(omd.op_constant);
        assert!(omd.stored_constant);
        assert_eq!(omd.op_slope, 0.0);
        for name in ["baseline", "mle-maxset"] {
            let profile = by_name(name);
            assert!(!profile.op_constant);
            assert!(profile.op_slope > 0.0);
            assert!(profile.stored_slope > 0.0);
        }
        assert!(bench_gate(&profiles));
        let mut broken = profiles.clone();
        for profile in &mut broken {
            profile.op_slope = 0.0;
        }
        assert!(!bench_gate(&broken));
        assert!(!bench_gate(&[]));
    }

    #[test]
    fn optimism_holds_for_bonus_planners_on_small_run() {
        let mdp = tiny_random_spec(11).build().unwrap();
        let audits = optimism_audit(
            &mdp,
            &AgentConfig::theory(),
            &[AgentKind::OmdOneStep, AgentKind::Baseline],
            50,
            6,
            1e-8,
        )
        .unwrap();
        for audit in audits {
            assert_eq!(audit.membership_failures, 0, "agent {}", audit.agent);
            assert_eq!(audit.lower_violations, 0, "agent {}", audit.agent);
            assert_eq!(audit.upper_violations, 0, "agent {}", audit.agent);
            assert!(audit.checked > 0);
        }
        assert!(optimism_audit(
            &mdp,
            &AgentConfig::theory(),
            &[AgentKind::MleMaxSet],
            1,
            6,
            1e-8
        )
        .is_err());
    }

    #[test]
    fn elliptical_sums_stay_under_bounds() {
        let mdp = tiny_random_spec(13).build().unwrap();
        let audit = elliptical_audit(&mdp, &AgentConfig::theory(), 300, 8).unwrap();
        assert_eq!(audit.violations, [0; 5]);
        for slack in audit.min_slack {
            assert!(slack.is_finite());
            assert!(slack >= 0.0, "slack {slack}");
        }
        assert!(audit.lambda >= 1.0);
    }

    #[test]
    fn elliptical_audit_rejects_small_regularizer() {
        let mdp = tiny_random_spec(13).build().unwrap();
        let config = AgentConfig {
            lambda: Some(0.5),
            ..AgentConfig::default()
        };
        assert!(elliptical_audit(&mdp, &config, 5, 8).is_err());
    }
}
