//! The `gplan` command line: train, eval, plan, gen, bench-graph.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agent::{Agent, PolicyModel};
use crate::encoder::{encode, graph_stats, EncoderConfig};
use crate::grounding::{format_plan, ground_all, GroundTask};
use crate::pddl::{parse_domain, parse_problem, DomainDef};
use crate::search::{baseline_gbfs, gbfs_gnn, optimal_plan_length, validate_plan, OracleOutcome, SearchBudget};
use crate::training::{parallel_map, worker_threads, TrainConfig, TrainMode, Trainer, METRICS_HEADER};
use crate::worlds::{generate, DomainKind, InstanceSpec};

#[derive(Debug, Parser)]
#[command(name = "gplan", version, about = "Learned graph policies for grid planning domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the baseline) on generated instances.
    Eval(EvalArgs),
    /// Solve one problem file.
    Plan(PlanArgs),
    /// Write generated problem files.
    Gen(GenArgs),
    /// Dense vs sparse graph sizes per grid width.
    BenchGraph(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Simple,
    Scan,
}

impl From<DomainArg> for DomainKind {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Simple => DomainKind::Simple,
            DomainArg::Scan => DomainKind::Scan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Curriculum,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    /// Greedy best-first search guided by the policy and value.
    Gnn,
    /// Goal-count greedy best-first search.
    Baseline,
    /// Greedy policy rollout, no search.
    Policy,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Gnn => "gnn",
            Engine::Baseline => "baseline",
            Engine::Policy => "policy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-width network and 100 episodes per iteration.
    Full,
    /// Small network sized for a single CPU core.
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "simple")]
    pub domain: DomainArg,
    #[arg(long, value_enum, default_value = "curriculum")]
    pub mode: ModeArg,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// Start from a config snapshot instead of a preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any snapshot key, e.g. `--set lr=0.0003`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Required for the gnn and policy engines.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "simple")]
    pub domain: DomainArg,
    #[arg(long = "W", alias = "width")]
    pub width: usize,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0.0)]
    pub density: f64,
    #[arg(long, default_value_t = 2)]
    pub targets: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "gnn")]
    pub engine: Engine,
    #[arg(long, default_value_t = 50_000)]
    pub max_expansions: usize,
    /// Budget as a multiple of the optimal plan length (overrides --max-expansions).
    #[arg(long)]
    pub budget_factor: Option<usize>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    /// Also print one row per instance.
    #[arg(long)]
    pub per_instance: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Domain file, or `simple` / `scan` for the bundled domains. Inferred
    /// from the problem's `:domain` when omitted.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    pub max_expansions: usize,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long, value_enum, default_value = "gnn")]
    pub engine: Engine,
    /// Plan file to write; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "simple")]
    pub domain: DomainArg,
    #[arg(long = "W", alias = "width")]
    pub width: usize,
    #[arg(long, default_value_t = 0.0)]
    pub density: f64,
    #[arg(long, default_value_t = 2)]
    pub targets: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    pub min: usize,
    #[arg(long, default_value_t = 20)]
    pub max: usize,
    #[arg(long, value_enum, default_value = "simple")]
    pub domain: DomainArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

macro_rules! fail {
    ($($t:tt)*) => { CliError::Failed(format!($($t)*)) };
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| fail!("{}: {e}", path.display())
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `gplan --help` for usage");
            2
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

/// Runs one subcommand and returns what it prints on stdout.
pub fn dispatch(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::BenchGraph(a) => cmd_bench_graph(&a),
    }
}

/// Small network and batch that train 5×5 droneworld in minutes on one core.
pub fn desk_config(domain: DomainKind) -> TrainConfig {
    let mut c = TrainConfig::new(domain);
    c.model.hidden = vec![64];
    c.model.latent = 32;
    c.model.head_hidden = 64;
    c.ppo.lr = 3e-4;
    c.ppo.episodes_per_iter = 32;
    // With 32 episodes per iteration a 5-streak shows up at ~50% success, so
    // the size would grow before the smaller grid is mastered.
    c.threshold = 15;
    c
}

pub fn build_train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            TrainConfig::from_snapshot(&text).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => {
            let d = DomainKind::from(a.domain);
            match a.preset {
                Preset::Full => TrainConfig::new(d),
                Preset::Desk => desk_config(d),
            }
        }
    };
    if a.config.is_none() {
        c.mode = match a.mode {
            ModeArg::Curriculum => TrainMode::Curriculum,
            ModeArg::Random => TrainMode::Random,
        };
    }
    if let Some(v) = a.min_size {
        c.min_size = v;
    }
    if let Some(v) = a.max_size {
        c.max_size = v;
    }
    if let Some(v) = a.iters {
        c.iters = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        c.set(k.trim(), v.trim()).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn cmd_train(a: &TrainArgs) -> Result<String, CliError> {
    let cfg = build_train_config(a)?;
    let mut t = Trainer::with_run_dir(cfg, &a.out).map_err(|e| fail!("{e}"))?;
    if !a.quiet {
        eprintln!("{METRICS_HEADER}");
    }
    let start = Instant::now();
    while t.iterations_done() < t.config.iters {
        let s = t.run_iteration().map_err(|e| fail!("{e}"))?;
        if !a.quiet {
            eprintln!("{}  [{:.0}s]", s.csv_row(), start.elapsed().as_secs_f64());
        }
        if t.config.stop_at_eval_success.is_some_and(|x| s.eval_success >= x) {
            break;
        }
    }
    let final_path = a.out.join("final.ckpt");
    t.model.save(&final_path).map_err(|e| fail!("{e}"))?;
    Ok(format!("{}\n", final_path.display()))
}

fn load_model(path: &Option<PathBuf>, engine: Engine) -> Result<Option<PolicyModel>, CliError> {
    match (path, engine) {
        (_, Engine::Baseline) => Ok(None),
        (None, _) => Err(CliError::Usage(format!(
            "--checkpoint is required for engine {}",
            engine.name()
        ))),
        (Some(p), _) => PolicyModel::load(p)
            .map(Some)
            .map_err(|e| fail!("{}: {e}", p.display())),
    }
}

/// Outcome of one engine run on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub success: bool,
    pub plan: Option<Vec<usize>>,
    pub expanded: usize,
    pub generated: usize,
    pub elapsed_ms: f64,
}

/// Runs `engine` on `task`; policy rollouts count each step as one expansion.
pub fn solve(
    task: &GroundTask,
    model: Option<&PolicyModel>,
    engine: Engine,
    budget: SearchBudget,
) -> Result<RunOutcome, String> {
    let start = Instant::now();
    let (plan, expanded, generated) = match engine {
        Engine::Baseline => {
            let r = baseline_gbfs(task, budget);
            (r.plan, r.expanded, r.generated)
        }
        Engine::Gnn => {
            let model = model.ok_or("gnn engine needs a model")?;
            let agent = Agent::new(model, task).map_err(|e| e.to_string())?;
            let r = gbfs_gnn(task, &agent, budget);
            (r.plan, r.expanded, r.generated)
        }
        Engine::Policy => {
            let model = model.ok_or("policy engine needs a model")?;
            let ctx = std::sync::Arc::new(
                crate::agent::TaskContext::for_model(task, &model.spec).map_err(|e| e.to_string())?,
            );
            let reward = crate::training::RewardConfig {
                step_limit_factor: budget.max_expansions.div_ceil(ctx.encoder.width.max(1)),
                ..Default::default()
            };
            let ep = crate::training::rollout(model, task, ctx, &reward, None, false).map_err(|e| e.to_string())?;
            let n = ep.len();
            (ep.success.then_some(ep.plan), n, n)
        }
    };
    let success = plan.as_ref().is_some_and(|p| validate_plan(task, p).is_valid());
    Ok(RunOutcome {
        success,
        plan: if success { plan } else { None },
        expanded,
        generated,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub seed: u64,
    pub optimal: Option<usize>,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteSummary {
    pub count: usize,
    pub solved: usize,
    pub success_rate: f64,
    /// Means over all instances.
    pub mean_expanded: f64,
    /// Means over solved instances.
    pub mean_plan_len: f64,
    pub mean_optimal_len: f64,
    /// Mean of per-instance plan length / optimal length over solved instances.
    pub plan_len_ratio: f64,
    /// Every returned plan re-validated.
    pub all_valid: bool,
}

impl SuiteSummary {
    pub fn from_results(rs: &[InstanceResult]) -> Self {
        let mut s = SuiteSummary {
            count: rs.len(),
            all_valid: true,
            ..Default::default()
        };
        let (mut len, mut opt, mut ratio, mut nratio) = (0.0, 0.0, 0.0, 0usize);
        for r in rs {
            s.mean_expanded += r.outcome.expanded as f64;
            if let Some(p) = &r.outcome.plan {
                s.solved += 1;
                len += p.len() as f64;
                if let Some(o) = r.optimal {
                    opt += o as f64;
                    if o > 0 {
                        ratio += p.len() as f64 / o as f64;
                        nratio += 1;
                    }
                }
            }
        }
        if s.count > 0 {
            s.success_rate = s.solved as f64 / s.count as f64;
            s.mean_expanded /= s.count as f64;
        }
        if s.solved > 0 {
            s.mean_plan_len = len / s.solved as f64;
            s.mean_optimal_len = opt / s.solved as f64;
        }
        if nratio > 0 {
            s.plan_len_ratio = ratio / nratio as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSpec {
    pub domain: DomainKind,
    pub width: usize,
    pub count: usize,
    pub density: f64,
    pub targets: usize,
    pub seed: u64,
    pub engine: Engine,
    pub max_expansions: usize,
    pub budget_factor: Option<usize>,
    pub max_seconds: f64,
}

/// Generates `count` instances (seeds `seed..seed+count`), computes the
/// optimal length with the breadth-first oracle, and runs the engine.
pub fn evaluate_suite(spec: &SuiteSpec, model: Option<&PolicyModel>) -> Result<Vec<InstanceResult>, String> {
    let rs = parallel_map(spec.count, worker_threads(), |i| -> Result<InstanceResult, String> {
        let seed = spec.seed + i as u64;
        let ispec = match spec.domain {
            DomainKind::Simple => InstanceSpec::simple(spec.width, spec.density, seed),
            DomainKind::Scan => InstanceSpec::scan(spec.width, spec.density, spec.targets, seed),
        };
        let inst = generate(spec.domain, &ispec).map_err(|e| e.to_string())?;
        let optimal = match optimal_plan_length(&inst.task, 5_000_000) {
            Ok(OracleOutcome::Length(n)) => Some(n),
            _ => None,
        };
        let max_expansions = match (spec.budget_factor, optimal) {
            (Some(f), Some(o)) => f * o.max(1),
            _ => spec.max_expansions,
        };
        let budget = SearchBudget {
            max_expansions,
            max_seconds: spec.max_seconds,
        };
        let outcome = solve(&inst.task, model, spec.engine, budget)?;
        Ok(InstanceResult { seed, optimal, outcome })
    });
    rs.into_iter().collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<String, CliError> {
    let model = load_model(&a.checkpoint, a.engine)?;
    let spec = SuiteSpec {
        domain: a.domain.into(),
        width: a.width,
        count: a.count,
        density: a.density,
        targets: a.targets,
        seed: a.seed,
        engine: a.engine,
        max_expansions: a.max_expansions,
        budget_factor: a.budget_factor,
        max_seconds: a.max_seconds.unwrap_or(f64::INFINITY),
    };
    let rs = evaluate_suite(&spec, model.as_ref()).map_err(|e| fail!("{e}"))?;
    let s = SuiteSummary::from_results(&rs);
    let mut out = String::new();
    if a.per_instance {
        out.push_str("seed,success,expanded,plan_len,optimal_len\n");
        for r in &rs {
            let opt = r.optimal.map_or("unreachable".into(), |o| o.to_string());
            let len = r.outcome.plan.as_ref().map_or("-".into(), |p| p.len().to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.seed, r.outcome.success, r.outcome.expanded, len, opt
            );
        }
    }
    out.push_str("engine,W,count,success_rate,mean_expanded,mean_plan_len,mean_optimal_len,plan_len_ratio\n");
    let _ = writeln!(
        out,
        "{},{},{},{:.4},{:.2},{:.2},{:.2},{:.4}",
        a.engine.name(),
        a.width,
        s.count,
        s.success_rate,
        s.mean_expanded,
        s.mean_plan_len,
        s.mean_optimal_len,
        s.plan_len_ratio
    );
    Ok(out)
}

fn problem_domain_name(text: &str) -> Option<String> {
    let lower = text.to_ascii_lowercase();
    let i = lower.find("(:domain")?;
    let rest = &lower[i + "(:domain".len()..];
    let name: String = rest
        .trim_start()
        .chars()
        .take_while(|c| !c.is_whitespace() && *c != ')')
        .collect();
    (!name.is_empty()).then_some(name)
}

fn resolve_domain(arg: &Option<String>, problem_text: &str) -> Result<DomainDef, CliError> {
    match arg.as_deref() {
        Some("simple") => Ok(DomainKind::Simple.domain().clone()),
        Some("scan") => Ok(DomainKind::Scan.domain().clone()),
        Some(path) => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            parse_domain(&text).map_err(|e| fail!("{path}: {e}"))
        }
        None => {
            let name = problem_domain_name(problem_text)
                .ok_or_else(|| CliError::Usage("problem names no domain; pass --domain".into()))?;
            [DomainKind::Simple, DomainKind::Scan]
                .into_iter()
                .map(DomainKind::domain)
                .find(|d| d.name == name)
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("unknown domain `{name}`; pass --domain <file>")))
        }
    }
}

fn cmd_plan(a: &PlanArgs) -> Result<String, CliError> {
    let text = fs::read_to_string(&a.problem).map_err(io_err(&a.problem))?;
    let domain = resolve_domain(&a.domain, &text)?;
    let problem = parse_problem(&text, &domain).map_err(|e| fail!("{}: {e}", a.problem.display()))?;
    let task = ground_all(&domain, &problem);
    let model = load_model(&a.checkpoint, a.engine)?;
    let budget = SearchBudget {
        max_expansions: a.max_expansions,
        max_seconds: a.max_seconds.unwrap_or(f64::INFINITY),
    };
    let r = solve(&task, model.as_ref(), a.engine, budget).map_err(|e| fail!("{e}"))?;
    let mut out = String::new();
    if let Some(plan) = &r.plan {
        let text = format_plan(&task, plan);
        match &a.out {
            Some(p) => fs::write(p, &text).map_err(io_err(p))?,
            None => out.push_str(&text),
        }
    }
    let len = r.plan.as_ref().map_or(String::new(), |p| p.len().to_string());
    let _ = writeln!(
        out,
        "engine,success,expanded,generated,elapsed_ms,plan_len\n{},{},{},{},{:.3},{}",
        a.engine.name(),
        r.success,
        r.expanded,
        r.generated,
        r.elapsed_ms,
        len
    );
    if r.success {
        Ok(out)
    } else {
        print!("{out}");
        Err(fail!("no plan found within budget"))
    }
}

fn cmd_gen(a: &GenArgs) -> Result<String, CliError> {
    let kind = DomainKind::from(a.domain);
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let dpath = a.out.join("domain.pddl");
    fs::write(&dpath, kind.text()).map_err(io_err(&dpath))?;
    let mut out = String::new();
    for i in 0..a.count {
        let seed = a.seed + i as u64;
        let spec = match kind {
            DomainKind::Simple => InstanceSpec::simple(a.width, a.density, seed),
            DomainKind::Scan => InstanceSpec::scan(a.width, a.density, a.targets, seed),
        };
        let inst = generate(kind, &spec).map_err(|e| match e {
            crate::worlds::WorldError::InvalidSpec(m) => CliError::Usage(m),
            e => fail!("{e}"),
        })?;
        let p = a.out.join(format!("problem-{i}.pddl"));
        fs::write(&p, &inst.text).map_err(io_err(&p))?;
        let _ = writeln!(out, "{}", p.display());
    }
    Ok(out)
}

/// `W,mode,nodes,edges,feature_bytes` rows for the initial state of one
/// obstacle-free instance per width.
pub fn bench_graph_csv(domain: DomainKind, min: usize, max: usize) -> Result<String, String> {
    let mut out = String::from("W,mode,nodes,edges,feature_bytes\n");
    let targets = if domain == DomainKind::Scan { 2 } else { 0 };
    for w in min..=max {
        let spec = InstanceSpec::scan(w, 0.0, targets, 0);
        let inst = generate(domain, &spec).map_err(|e| e.to_string())?;
        for cfg in [
            EncoderConfig::dense(true, targets),
            EncoderConfig::sparse(true, targets),
        ] {
            let g = encode(&inst.task, &inst.task.init, cfg).map_err(|e| e.to_string())?;
            let s = graph_stats(&g);
            let _ = writeln!(
                out,
                "{w},{},{},{},{}",
                cfg.mode.name(),
                s.num_nodes,
                s.num_edges,
                s.feature_bytes
            );
        }
    }
    Ok(out)
}

fn cmd_bench_graph(a: &BenchArgs) -> Result<String, CliError> {
    if a.min < 3 || a.max < a.min {
        return Err(CliError::Usage("need 3 <= --min <= --max".into()));
    }
    let csv = bench_graph_csv(a.domain.into(), a.min, a.max).map_err(|e| fail!("{e}"))?;
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).map_err(io_err(p))?;
            Ok(String::new())
        }
        None => Ok(csv),
    }
}

#[cfg(test)]
mod tests;
