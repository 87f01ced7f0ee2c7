//! Command-line front end: instance generation, experiment runs, coverage
//! measurement, cost benchmarks, instance validation, and scaling reports.
//!
//! Exit codes: 0 on success, 1 when a validation gate or a run fails,
//! 2 on usage errors such as unknown flags or an unreadable configuration.
//! Configuration comes from JSON files with flag overrides; flags win over
//! the file, the file wins over built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mnl_rl::agent::{AgentConfig, AgentKind};
use mnl_rl::harness::{
    self, CoverageConfig, ExperimentConfig, InstanceSpec, RegretRecord,
};
use mnl_rl::mdp::MnlMdp;

#[derive(Parser)]
#[command(name = "mnl-rl", version = mnl_rl::VERSION)]
#[command(about = "Experiments with online agents in multinomial-logit mixture MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Run an experiment grid and emit per-run CSV plus a manifest.
    Run(RunArgs),
    /// Measure empirical confidence-set coverage over repeated runs.
    Coverage(CoverageArgs),
    /// Compare per-episode cost counters across agents.
    Bench(BenchArgs),
    /// Check an instance against the model invariants.
    Validate(ValidateArgs),
    /// Summarize regret growth from result directories.
    Report(ReportArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum Generator {
    Random,
    Hard,
    Chain,
}

#[derive(Copy, Clone, ValueEnum)]
enum Preset {
    Theory,
    Practical,
}

impl Preset {
    fn config(self) -> AgentConfig {
        match self {
            Preset::Theory => AgentConfig::theory(),
            Preset::Practical => AgentConfig::practical(),
        }
    }
}

/// Source of a problem instance: a file, or a generator with parameters.
#[derive(Args, Clone)]
struct InstanceArgs {
    /// Instance file to load instead of generating one.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Generator used when no instance file is given.
    #[arg(long, value_enum, default_value_t = Generator::Random)]
    generator: Generator,
    /// Feature dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Decision stages per episode.
    #[arg(long, default_value_t = 2)]
    horizon: usize,
    /// States per intermediate stage (random generator).
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Actions per state.
    #[arg(long, default_value_t = 2)]
    actions: usize,
    /// Reachable next states per state-action pair (random generator).
    #[arg(long, default_value_t = 2)]
    reach: usize,
    /// Parameter norm bound.
    #[arg(long, default_value_t = 1.0)]
    param_bound: f64,
    /// Seed for the random generator.
    #[arg(long, default_value_t = 1)]
    gen_seed: u64,
    /// Hard-generator block parameters: blocks split by ';', entries by ','.
    #[arg(long)]
    theta: Option<String>,
    /// Chain-generator survival probabilities, comma separated.
    #[arg(long)]
    p: Option<String>,
}

impl InstanceArgs {
    fn to_spec(&self) -> Result<InstanceSpec, CliError> {
        if let Some(path) = &self.instance {
            return Ok(InstanceSpec::File { path: path.clone() });
        }
        match self.generator {
            Generator::Random => Ok(InstanceSpec::Random {
                dim: self.dim,
                horizon: self.horizon,
                states: self.states,
                num_actions: self.actions,
                reach: self.reach,
                param_bound: self.param_bound,
                seed: self.gen_seed,
            }),
            Generator::Hard => {
                let text = self.theta.as_deref().ok_or_else(|| {
                    CliError::Usage("the hard generator needs --theta".into())
                })?;
                let theta_blocks = text
                    .split(';')
                    .map(parse_floats)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(InstanceSpec::Hard {
                    dim: self.dim,
                    horizon: self.horizon,
                    num_actions: self.actions,
                    theta_blocks,
                })
            }
            Generator::Chain => {
                let text = self.p.as_deref().ok_or_else(|| {
                    CliError::Usage("the chain generator needs --p".into())
                })?;
                let p_values = parse_floats(text)?;
                Ok(InstanceSpec::Chain {
                    horizon: p_values.len(),
                    p_values,
                })
            }
        }
    }

    fn build(&self) -> Result<MnlMdp, CliError> {
        self.to_spec()?.build().map_err(usage)
    }
}

/// Overrides applied on top of a configuration file or the defaults.
#[derive(Args)]
struct OverrideArgs {
    /// Replace the configured instance with one loaded from this file.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Seeds, comma separated; one run per agent and seed.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Agents, comma separated: baseline, mle-maxset, omd.
    #[arg(long, value_delimiter = ',')]
    agents: Option<Vec<String>>,
    /// Episodes per run.
    #[arg(long = "K")]
    episodes: Option<usize>,
    /// Confidence level parameter.
    #[arg(long)]
    delta: Option<f64>,
    /// Multiplier on every confidence radius.
    #[arg(long)]
    radius_scale: Option<f64>,
    /// Hyperparameter preset, applied before the other overrides.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Worker threads; 0 uses one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Row recording interval; 0 targets about 1000 rows per run.
    #[arg(long)]
    cadence: Option<usize>,
    /// Fill the wall-clock column (breaks byte reproducibility).
    #[arg(long)]
    timing: bool,
}

impl OverrideArgs {
    fn agent_kinds(&self) -> Result<Option<Vec<AgentKind>>, CliError> {
        self.agents
            .as_ref()
            .map(|names| {
                names
                    .iter()
                    .map(|n| AgentKind::parse(n).map_err(usage))
                    .collect()
            })
            .transpose()
    }

    fn apply_agent_config(&self, config: &mut AgentConfig) {
        if let Some(preset) = self.preset {
            *config = preset.config();
        }
        if let Some(delta) = self.delta {
            config.delta = delta;
        }
        if let Some(scale) = self.radius_scale {
            config.radius_scale = scale;
        }
    }

    fn apply_experiment(&self, config: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(path) = &self.instance {
            config.instance = InstanceSpec::File { path: path.clone() };
        }
        if let Some(kinds) = self.agent_kinds()? {
            config.agents = kinds;
        }
        if let Some(seeds) = &self.seed {
            config.seeds = seeds.clone();
        }
        if let Some(k) = self.episodes {
            config.episodes = k;
        }
        if let Some(cadence) = self.cadence {
            config.cadence = cadence;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if self.timing {
            config.timing = true;
        }
        self.apply_agent_config(&mut config.agent_config);
        Ok(())
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for per-run CSV files and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct CoverageArgs {
    /// Coverage configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// File for the JSON coverage report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Independent runs per agent kind.
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Episodes to profile.
    #[arg(long = "K", default_value_t = 2000)]
    episodes: usize,
    /// Agents to profile, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["mle-maxset".to_string(), "omd".to_string()])]
    agents: Vec<String>,
    /// Hyperparameter preset.
    #[arg(long, value_enum, default_value_t = Preset::Practical)]
    preset: Preset,
    /// Environment seed for the profiled runs.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Result directories produced by `run`.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

enum CliError {
    /// The invocation itself was wrong; exits 2.
    Usage(String),
    /// The work ran and failed; exits 1.
    Failed(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn parse_floats(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad number {part:?}: {e}")))
        })
        .collect()
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("cannot parse {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => run(args),
        Command::Coverage(args) => coverage(args),
        Command::Bench(args) => bench(args),
        Command::Validate(args) => validate(args),
        Command::Report(args) => report(args),
    }
}

fn gen(args: GenArgs) -> Result<(), CliError> {
    let mdp = args.instance.build()?;
    let json = mdp.to_json_string().map_err(failed)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, json.as_bytes())
                .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {} (hash {})", path.display(), mdp.content_hash());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn default_experiment() -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSpec::Random {
            dim: 2,
            horizon: 2,
            states: 3,
            num_actions: 2,
            reach: 2,
            param_bound: 1.0,
            seed: 1,
        },
        agents: AgentKind::ALL.to_vec(),
        agent_config: AgentConfig::default(),
        episodes: 200,
        seeds: vec![1],
        cadence: 0,
        timing: false,
        workers: 0,
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => load_json::<ExperimentConfig>(path)?,
        None => default_experiment(),
    };
    args.overrides.apply_experiment(&mut config)?;
    config.validate().map_err(usage)?;
    let result = harness::run_experiment(&config, args.out.as_deref()).map_err(failed)?;
    println!(
        "instance hash {}  kappa* {:.6}  U {}  optimal value {:.6}",
        result.manifest.instance_hash,
        result.manifest.kappa_star,
        result.manifest.max_reachable,
        result.manifest.optimal_value,
    );
    let mut failures = 0;
    for run in &result.runs {
        match (&run.error, run.records.last()) {
            (Some(msg), _) => {
                failures += 1;
                println!("{} seed {}: FAILED: {msg}", run.agent.name(), run.seed);
            }
            (None, Some(last)) => println!(
                "{} seed {}: regret {:.4} over {} episodes",
                run.agent.name(),
                run.seed,
                last.cum_regret,
                last.k
            ),
            (None, None) => {}
        }
    }
    print_scaling(&result.records());
    if let Some(dir) = &args.out {
        println!("results in {}", dir.display());
    }
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} run(s) failed")));
    }
    Ok(())
}

fn default_coverage() -> CoverageConfig {
    CoverageConfig {
        instance: InstanceSpec::Random {
            dim: 2,
            horizon: 2,
            states: 3,
            num_actions: 2,
            reach: 2,
            param_bound: 1.0,
            seed: 1,
        },
        agents: vec![AgentKind::MleMaxSet, AgentKind::OmdOneStep],
        agent_config: AgentConfig::default(),
        episodes: 200,
        runs: 20,
        checkpoints: Vec::new(),
        seed: 1000,
        workers: 0,
    }
}

fn coverage(args: CoverageArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => load_json::<CoverageConfig>(path)?,
        None => default_coverage(),
    };
    let overrides = &args.overrides;
    if let Some(path) = &overrides.instance {
        config.instance = InstanceSpec::File { path: path.clone() };
    }
    if let Some(kinds) = overrides.agent_kinds()? {
        config.agents = kinds;
    }
    if let Some(seeds) = &overrides.seed {
        config.seed = seeds[0];
    }
    if let Some(k) = overrides.episodes {
        config.episodes = k;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(workers) = overrides.workers {
        config.workers = workers;
    }
    overrides.apply_agent_config(&mut config.agent_config);
    let rows = harness::coverage_experiment(&config).map_err(failed)?;
    for row in &rows {
        println!(
            "{} k {:>6}: {:>3}/{} covered ({:.3}, target {:.3})",
            row.agent, row.k, row.covered, row.runs, row.fraction, row.target
        );
    }
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&rows).map_err(failed)?;
        std::fs::write(path, json.as_bytes())
            .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let mdp = args.instance.build()?;
    let kinds = args
        .agents
        .iter()
        .map(|n| AgentKind::parse(n).map_err(usage))
        .collect::<Result<Vec<_>, _>>()?;
    let profiles = harness::bench_cost_profile(
        &mdp,
        &args.preset.config(),
        &kinds,
        args.episodes,
        args.seed,
    )
    .map_err(failed)?;
    for p in &profiles {
        println!(
            "{:<12} over {} episodes: op slope {:+.6} ({}), stored slope {:+.6} ({})",
            p.agent,
            p.episodes,
            p.op_slope,
            if p.op_constant { "constant" } else { "growing" },
            p.stored_slope,
            if p.stored_constant { "constant" } else { "growing" },
        );
    }
    if harness::bench_gate(&profiles) {
        println!("cost contract holds");
        Ok(())
    } else {
        Err(CliError::Failed("cost contract violated".into()))
    }
}

fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let spec = args.instance.to_spec()?;
    let mdp = match spec.build() {
        Ok(mdp) => mdp,
        Err(mnl_rl::Error::Json(e)) => {
            return Err(CliError::Usage(format!("cannot parse instance: {e}")))
        }
        Err(e) => {
            println!("structural validation: FAIL ({e})");
            return Err(CliError::Failed("instance is invalid".into()));
        }
    };
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        all_ok &= ok;
        println!("{name}: {} {detail}", if ok { "ok" } else { "FAIL" });
    };
    check("structural validation", mdp.validate().is_ok(), String::new());

    let mut prob_err = 0.0f64;
    let mut prob_min = f64::INFINITY;
    let thetas = probe_parameters(&mdp);
    for theta in &thetas {
        for h in 0..mdp.horizon {
            for s in 0..mdp.states_per_stage[h] {
                for a in 0..mdp.num_actions {
                    let p = mdp.transition_probs(h, s, a, theta).map_err(failed)?;
                    prob_err = prob_err.max((p.sum() - 1.0).abs());
                    prob_min = prob_min.min(p.min());
                }
            }
        }
    }
    check(
        "transition probabilities sum to 1",
        prob_err <= 1e-9,
        format!("(max error {prob_err:.2e})"),
    );
    check(
        "transition probabilities positive",
        prob_min > 0.0,
        format!("(min {prob_min:.2e})"),
    );

    let u = mdp.max_reachable();
    let kappa_hat = mdp.estimate_kappa(256, true, 0);
    let kappa_star = mdp.kappa_star();
    let lower = 1.0 / (u as f64 * (2.0 * mdp.param_bound).exp()).powi(2);
    let upper = if u >= 2 { 1.0 / (u as f64).powi(2) } else { 1.0 };
    check(
        "curvature sandwich",
        lower <= kappa_hat + 1e-12 && kappa_hat <= kappa_star + 1e-12 && kappa_star <= upper + 1e-12,
        format!("({lower:.3e} <= {kappa_hat:.3e} <= {kappa_star:.3e} <= {upper:.3e})"),
    );

    let exact = mdp.exact_value_functions();
    let v_star = mdp.optimal_value();
    check(
        "optimal value within horizon",
        (0.0..=mdp.horizon as f64 + 1e-9).contains(&v_star),
        format!("({v_star:.6})"),
    );
    let actions: Vec<Vec<usize>> = exact
        .q
        .iter()
        .map(|stage| {
            stage
                .iter()
                .map(|qs| {
                    qs.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map_or(0, |(a, _)| a)
                })
                .collect()
        })
        .collect();
    let greedy = mnl_rl::Policy::Deterministic(actions);
    let v_eval = mdp.evaluate_policy(&greedy).map_err(failed)?;
    check(
        "greedy policy evaluates to the optimal value",
        (v_eval - v_star).abs() <= 1e-10,
        format!("(gap {:.2e})", (v_eval - v_star).abs()),
    );

    let round_trip = mdp
        .to_json_string()
        .map_err(failed)
        .and_then(|json| MnlMdp::from_json_str(&json).map_err(failed))?;
    check(
        "serialization round trip preserves the hash",
        round_trip.content_hash() == mdp.content_hash(),
        String::new(),
    );

    if all_ok {
        Ok(())
    } else {
        Err(CliError::Failed("instance failed validation checks".into()))
    }
}

/// The true parameters plus a few deterministic probes inside the ball.
fn probe_parameters(mdp: &MnlMdp) -> Vec<nalgebra::DVector<f64>> {
    let mut out = vec![nalgebra::DVector::zeros(mdp.dim)];
    out.extend(mdp.theta_star.iter().cloned());
    for i in 0..mdp.dim {
        let mut e = nalgebra::DVector::zeros(mdp.dim);
        e[i] = mdp.param_bound / (i as f64 + 2.0).sqrt();
        out.push(e.clone());
        e[i] = -e[i];
        out.push(e);
    }
    out
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut records: Vec<RegretRecord> = Vec::new();
    for dir in &args.dirs {
        records.extend(harness::read_records_dir(dir).map_err(|e| {
            CliError::Usage(format!("cannot read {}: {e}", dir.display()))
        })?);
    }
    if records.is_empty() {
        return Err(CliError::Failed("no records found".into()));
    }
    print_scaling(&records);
    Ok(())
}

fn print_scaling(records: &[RegretRecord]) {
    for s in harness::scaling_report(records) {
        println!(
            "{:<12} alpha {:>7.4}  regret ratio {:>7.4}  final regret {:>10.4}",
            s.agent, s.alpha, s.ratio, s.final_regret
        );
    }
}
