use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use causim::discovery::{discover, InterventionData};
use causim::graph_gen::{self, enumerate_all_dags, GraphSpec};
use causim::metrics::{self, RankingBatch};
use causim::planner::{fit_reward_predictor, plan_report, EvalProtocol, ReturnMode, RewardSource};
use causim::store::{self, generate_dataset, generate_episodes, load_dataset, Episode, Split};
use causim::world_models::{evaluate, fit_pairwise, fit_tabular, OracleModel, WorldModel, ALPHA};
use causim::{Dag, Env, EnvConfig, EnvState, Error};

/// Causal-induction environments: dataset generation, world-model evaluation,
/// structure discovery, planning and rendering.
#[derive(Parser)]
#[command(name = "causim", version)]
struct Cli {
    /// Worker threads (defaults to the number of cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an episode dataset.
    Gen(GenArgs),
    /// Evaluate a world model with ranking metrics.
    Eval(EvalArgs),
    /// Recover the causal graph of a chemistry environment.
    Discover(DiscoverArgs),
    /// Evaluate greedy planning and its baselines.
    Plan(PlanArgs),
    /// Render a state to PNG.
    Render(RenderArgs),
    /// Run invariant checks on tiny instances.
    Selfcheck,
}

#[derive(Args)]
struct ConfigArgs {
    /// Environment config: a JSON file path or inline JSON.
    #[arg(long)]
    config: String,
    /// Override a top-level config field, e.g. `--set M=4` or `--set graph=chain:4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// train, test or zeroshot.
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Oracle,
    Tabular,
    Pairwise,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Training dataset directory (tabular and pairwise models).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    model: ModelKind,
    /// Graph hypothesis for the tabular model; defaults to the true graph.
    #[arg(long)]
    graph: Option<String>,
    /// Prediction horizons.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long, default_value_t = ALPHA)]
    alpha: f64,
    /// Run seed; evaluation is deterministic given the datasets.
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Use this dataset instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardKind {
    Oracle,
    Learned,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReturnKind {
    Final,
    Sum,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Target distance in random actions.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, value_enum, default_value = "oracle")]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "oracle")]
    reward: RewardKind,
    /// Training episodes for learned models and rewards.
    #[arg(long, default_value_t = 200)]
    train_episodes: usize,
    #[arg(long, default_value_t = 10)]
    train_steps: usize,
    #[arg(long, value_enum, default_value = "final")]
    return_mode: ReturnKind,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Random steps taken from the initial state before rendering.
    #[arg(long, default_value_t = 0)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code for a failed command.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Corruption { .. } => 3,
        Error::Decode { .. } => 4,
        _ => 2,
    }
}

fn load_config(args: &ConfigArgs) -> causim::Result<EnvConfig> {
    let text = if args.config.trim_start().starts_with('{') {
        args.config.clone()
    } else {
        let path = Path::new(&args.config);
        std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?
    };
    if args.overrides.is_empty() {
        return EnvConfig::from_json(&text);
    }
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    let Value::Object(map) = &mut value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    for o in &args.overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), v);
    }
    EnvConfig::from_json(&value.to_string())
}

fn true_graph(config: &EnvConfig) -> causim::Result<Dag> {
    match config {
        EnvConfig::Chemistry(c) => graph_gen::generate(&c.graph),
        EnvConfig::Physics(c) => graph_gen::generate(&GraphSpec::full(c.num_objects)),
    }
}

fn print(value: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    // ignore a closed pipe
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn cmd_gen(a: &GenArgs) -> causim::Result<Value> {
    let config = load_config(&a.config)?;
    let split: Split = a.split.parse()?;
    let manifest = generate_dataset(&config, a.episodes, a.steps, split, a.seed, &a.out)?;
    Ok(serde_json::to_value(manifest)?)
}

fn train_episodes(path: &Option<PathBuf>) -> causim::Result<Vec<Episode>> {
    match path {
        Some(p) => Ok(load_dataset(p)?.episodes),
        None => Err(Error::Config("--train is required for learned models".into())),
    }
}

fn cmd_eval(a: &EvalArgs) -> causim::Result<Value> {
    let test = load_dataset(&a.dataset)?;
    let config = test.manifest.env;
    let env = Env::new(config)?;
    let truth = true_graph(&config)?;
    let (model, hypothesis): (Box<dyn WorldModel>, Option<Dag>) = match a.model {
        ModelKind::Oracle => (Box::new(OracleModel::new(config)?), None),
        ModelKind::Tabular => {
            let dag = match &a.graph {
                Some(g) => graph_gen::generate(&g.parse()?)?,
                None => truth.clone(),
            };
            let train = train_episodes(&a.train)?;
            (Box::new(fit_tabular(&config, &train, &dag, a.alpha)?), Some(dag))
        }
        ModelKind::Pairwise => (Box::new(fit_pairwise(&config, &train_episodes(&a.train)?, a.alpha)?), None),
    };
    let mut report = evaluate(model.as_ref(), &env, &test.episodes, &a.k)?;
    if let Some(h) = hypothesis {
        report.shd = Some(metrics::shd(&h, &truth)?);
    }
    Ok(serde_json::to_value(report)?)
}

fn cmd_discover(a: &DiscoverArgs) -> causim::Result<Value> {
    let (config, episodes) = match &a.dataset {
        Some(dir) => {
            let d = load_dataset(dir)?;
            (d.manifest.env, d.episodes)
        }
        None => {
            let config = load_config(&a.config)?;
            (config, generate_episodes(&config, a.episodes, a.steps, Split::Train, a.seed)?)
        }
    };
    let data = InterventionData::from_episodes(&config, &episodes)?;
    let best = discover(&data, a.alpha, a.lambda)?;
    let shd = metrics::shd(&best.dag, &true_graph(&config)?)?;
    Ok(json!({"dag": best.dag.edges(), "score": best.score, "shd": shd}))
}

fn cmd_plan(a: &PlanArgs) -> causim::Result<Value> {
    let config = load_config(&a.config)?;
    let env = Env::new(config)?;
    let needs_data = !matches!((a.model, a.reward), (ModelKind::Oracle, RewardKind::Oracle));
    let train = if needs_data {
        generate_episodes(&config, a.train_episodes, a.train_steps, Split::Train, a.seed)?
    } else {
        Vec::new()
    };
    let model: Box<dyn WorldModel> = match a.model {
        ModelKind::Oracle => Box::new(OracleModel::new(config)?),
        ModelKind::Tabular => Box::new(fit_tabular(&config, &train, &true_graph(&config)?, ALPHA)?),
        ModelKind::Pairwise => Box::new(fit_pairwise(&config, &train, ALPHA)?),
    };
    let learned = match a.reward {
        RewardKind::Learned => Some(fit_reward_predictor::<f64>(&env, &train)?),
        RewardKind::Oracle => None,
    };
    let reward = learned.as_ref().map_or(RewardSource::Oracle, RewardSource::Learned);
    let mut protocol = EvalProtocol::new(a.k, a.episodes, a.seed);
    protocol.return_mode = match a.return_mode {
        ReturnKind::Final => ReturnMode::Final,
        ReturnKind::Sum => ReturnMode::Sum,
    };
    Ok(serde_json::to_value(plan_report(&env, model.as_ref(), reward, &protocol)?)?)
}

fn cmd_render(a: &RenderArgs) -> causim::Result<Value> {
    let config = load_config(&a.config)?;
    let env = Env::new(config)?;
    let episode = store::generate_episode(&env, a.seed, a.steps)?;
    let frame = env.render(&episode.states[a.steps]);
    let bytes = frame.to_png()?;
    std::fs::write(&a.out, &bytes).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    Ok(json!({"path": a.out, "width": frame.width, "height": frame.height}))
}

fn check(name: &str, f: impl FnOnce() -> causim::Result<bool>) -> Value {
    let (pass, detail) = match f() {
        Ok(p) => (p, Value::Null),
        Err(e) => (false, Value::String(e.to_string())),
    };
    json!({"name": name, "pass": pass, "error": detail})
}

fn cmd_selfcheck() -> causim::Result<(Value, bool)> {
    let checks = vec![
        check("dag_counts", || {
            let counts: Vec<usize> = (1..=4).map(|n| enumerate_all_dags(n).map(|it| it.count())).collect::<causim::Result<_>>()?;
            Ok(counts == [1, 3, 25, 543])
        }),
        check("mrr_reference", || {
            let m = metrics::mrr_from_ranks::<f64>(&[1, 2, 4]);
            Ok((m - 7.0 / 12.0).abs() < 1e-12)
        }),
        check("hits_le_mrr", || {
            let b = RankingBatch::new(vec![vec![0.0], vec![2.0], vec![0.9]], vec![vec![0.0], vec![1.0], vec![2.0]])?;
            Ok(metrics::hits_at_1(&b) <= metrics::mrr(&b))
        }),
        check("episode_determinism", || {
            let config = EnvConfig::from_json(r#"{"env":"chemistry","M":3,"K":3,"graph":"chain:3","skewness":10.0,"seed":1}"#)?;
            let a = generate_episodes(&config, 4, 5, Split::Train, 9)?;
            let b = generate_episodes(&config, 4, 5, Split::Train, 9)?;
            Ok(a == b)
        }),
        check("render_round_trip", || {
            let config = EnvConfig::from_json(r#"{"env":"physics","M":3,"setting":"observed","seed":2}"#)?;
            let env = Env::new(config)?;
            let ep = store::generate_episode(&env, 3, 5)?;
            ep.states.iter().try_fold(true, |ok, s| {
                let EnvState::Physics(p) = s else { return Ok(false) };
                let back = causim::render::decode_physics(&env.render(s), causim::physics::PhysicsSetting::Observed)?;
                Ok(ok && back == *p)
            })
        }),
        check("oracle_replay", || {
            let config = EnvConfig::from_json(r#"{"env":"physics","M":3,"setting":"unobserved","seed":4}"#)?;
            let env = Env::new(config)?;
            let ep = store::generate_episode(&env, 5, 8)?;
            ep.replays(&env)
        }),
    ];
    let ok = checks.iter().all(|c| c["pass"] == Value::Bool(true));
    Ok((json!({"ok": ok, "checks": checks}), ok))
}

fn run(cli: &Cli) -> causim::Result<(Value, bool)> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|v| (v, true)),
        Command::Eval(a) => cmd_eval(a).map(|v| (v, true)),
        Command::Discover(a) => cmd_discover(a).map(|v| (v, true)),
        Command::Plan(a) => cmd_plan(a).map(|v| (v, true)),
        Command::Render(a) => cmd_render(a).map(|v| (v, true)),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok((value, ok)) => {
            print(&value);
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
