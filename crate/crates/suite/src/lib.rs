//! End-to-end acceptance checks. Each check runs a seeded experiment and
//! compares it with a pinned tolerance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use causim::chemistry::{ChemAction, ChemConfig, ChemState, ChemWorld, CptTable};
use causim::discovery::{discover, InterventionData};
use causim::graph_gen::{enumerate_all_dags, generate, GraphKind, GraphSpec};
use causim::metrics::{hits_at_1, mrr, mrr_from_ranks, shd, RankingBatch};
use causim::noise::{rng_for, NoiseCursor};
use causim::physics::{reset, Cell, ObjColor, PhysicsConfig, PhysicsSetting, PhysicsState};
use causim::planner::{evaluate_policy, evaluate_rl, EvalProtocol, Policy, RewardSource};
use causim::render::{decode_chem, decode_physics, render_chem, render_physics};
use causim::scm::descendants;
use causim::store::{generate_dataset, generate_episodes, load_dataset, Split};
use causim::world_models::{evaluate, fit_pairwise, fit_tabular, OracleModel, ALPHA};
use causim::{Env, EnvConfig, Error, Result};
use rand::Rng;

const GOLDEN_CPT: &str = include_str!("../../core/tests/fixtures/golden_cpt_chain3.json");
const GOLDEN_PNG: &[u8] = include_bytes!("../../core/tests/fixtures/golden_physics.png");

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { id, name, pass, detail, elapsed: start.elapsed() }
}

/// Runtime budget, shared by every check that has one.
fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed < Duration::from_secs(secs)
}

fn physics3() -> EnvConfig {
    EnvConfig::Physics(PhysicsConfig::new(3, PhysicsSetting::Observed, 7))
}

const PLAN_EPISODES: usize = 500;
const PLAN_SEED: u64 = 99;

fn success_rates(policy: &dyn Fn(&Env) -> Policy<'_>) -> Result<Vec<f64>> {
    let env = Env::new(physics3())?;
    [1, 5, 10]
        .into_iter()
        .map(|k| Ok(evaluate_policy(&env, &policy(&env), &EvalProtocol::new(k, PLAN_EPISODES, PLAN_SEED))?.success_rate))
        .collect()
}

pub fn greedy_baseline() -> Check {
    let start = Instant::now();
    let mut c = timed(1, "greedy-oracle baseline, physics M=3", || {
        let oracle = OracleModel::new(physics3())?;
        let env = Env::new(physics3())?;
        let s: Vec<f64> = [1, 5, 10]
            .into_iter()
            .map(|k| {
                let protocol = EvalProtocol::new(k, PLAN_EPISODES, PLAN_SEED);
                Ok(evaluate_rl(&env, &oracle, RewardSource::Oracle, &protocol)?.success_rate)
            })
            .collect::<Result<_>>()?;
        let pass = s[0] == 1.0 && s[1] >= 0.97 && s[2] >= 0.95;
        Ok((pass, format!("success k=1/5/10: {:.3} / {:.3} / {:.3}", s[0], s[1], s[2])))
    });
    c.pass &= within(start.elapsed(), 30);
    c
}

pub fn random_baseline() -> Check {
    let start = Instant::now();
    let mut c = timed(2, "random baseline, physics M=3", || {
        let s = success_rates(&|_| Policy::Random)?;
        let pass = (0.10..=0.35).contains(&s[0]) && s[2] <= 0.02;
        Ok((pass, format!("success k=1/5/10: {:.3} / {:.3} / {:.3}", s[0], s[1], s[2])))
    });
    c.pass &= within(start.elapsed(), 10);
    c
}

pub const DISCOVERY_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn structure_recovery() -> Check {
    let start = Instant::now();
    let mut c = timed(3, "structure recovery at 2000 steps", || {
        let mut pass = true;
        let mut parts = Vec::new();
        for spec in [GraphSpec::chain(3), GraphSpec::collider(3), GraphSpec::full(3)] {
            let truth = generate(&spec)?;
            let mut exact = 0;
            for seed in DISCOVERY_SEEDS {
                let config = EnvConfig::Chemistry(ChemConfig::new(spec, 5, 10.0, seed));
                let eps = generate_episodes(&config, 200, 10, Split::Train, seed)?;
                let best = discover(&InterventionData::from_episodes(&config, &eps)?, ALPHA, 1.0)?;
                exact += usize::from(shd(&best.dag, &truth)? == 0);
            }
            pass &= exact >= 4;
            parts.push(format!("{spec}: {exact}/5"));
        }
        Ok((pass, parts.join(", ")))
    });
    c.pass &= within(start.elapsed(), 60);
    c
}

fn chem5(graph: GraphSpec) -> EnvConfig {
    EnvConfig::Chemistry(ChemConfig::new(graph, 5, 10.0, 11))
}

/// Tabular (true graph) and pairwise H@1 at horizon `k`.
fn h1_pair(graph: GraphSpec, k: usize) -> Result<(f64, f64)> {
    let config = chem5(graph);
    let env = Env::new(config)?;
    let train = generate_episodes(&config, 1000, 10, Split::Train, 1)?;
    let test = generate_episodes(&config, 200, 10, Split::Test, 1)?;
    let key = k.to_string();
    let tab = evaluate(&fit_tabular(&config, &train, &generate(&graph)?, ALPHA)?, &env, &test, &[k])?;
    let pw = evaluate(&fit_pairwise(&config, &train, ALPHA)?, &env, &test, &[k])?;
    Ok((tab.h1[&key], pw.h1[&key]))
}

pub fn complexity_ordering() -> Check {
    timed(4, "complexity ordering of pairwise vs tabular", || {
        let (ct, cp) = h1_pair(GraphSpec::collider(5), 1)?;
        let (cht, chp) = h1_pair(GraphSpec::chain(5), 10)?;
        let (ft, fp) = h1_pair(GraphSpec::full(5), 10)?;
        let collider = (ct - cp).abs() <= 0.02;
        let deep = cht - chp >= 0.10 && ft - fp >= 0.10;
        Ok((
            collider && deep,
            format!(
                "collider:5 H@1(1) tabular {ct:.3} pairwise {cp:.3} (|gap| {:.3}, need <= 0.02); \
                 chain:5 H@1(10) {cht:.3} vs {chp:.3}; full:5 H@1(10) {ft:.3} vs {fp:.3} (need gap >= 0.10)",
                (ct - cp).abs()
            ),
        ))
    })
}

pub const INTERVENTION_CASES: usize = 10_000;

pub fn intervention_semantics() -> Check {
    timed(5, "intervention semantics", || {
        let kinds = [GraphKind::Chain, GraphKind::Collider, GraphKind::Full, GraphKind::Jungle];
        let mut passed = 0;
        for case in 0..INTERVENTION_CASES {
            let mut rng = rng_for(&[0x1a7e, case as u64]);
            let n = rng.gen_range(1..=6);
            let kind = if case % 5 == 4 {
                GraphKind::RandomDag { edge_prob: rng.gen_range(0.0..=1.0) }
            } else {
                kinds[case % 4]
            };
            let spec = GraphSpec { kind, n, seed: rng.gen() };
            let k = rng.gen_range(2..=6);
            let world = ChemWorld::new(ChemConfig::new(spec, k, rng.gen_range(0.5..20.0), rng.gen()))?;
            let (s, cursor) = world.reset(NoiseCursor::new(rng.gen()), &mut rng)?;
            let action = ChemAction { node: rng.gen_range(0..n), color: rng.gen_range(0..k) };
            let (next, _) = world.step(&s, action, cursor)?;
            let desc = descendants(&generate(&spec)?, action.node);
            let kept = (0..n).filter(|i| *i != action.node && !desc.contains(i)).all(|i| s.colors[i] == next.colors[i]);
            passed += usize::from(kept && next.colors[action.node] as usize == action.color);
        }
        Ok((passed == INTERVENTION_CASES, format!("{passed}/{INTERVENTION_CASES} cases")))
    })
}

pub const CPT_SAMPLES: usize = 100_000;

pub fn cpt_recovery() -> Check {
    timed(6, "empirical CPT recovery", || {
        let golden: CptTable = serde_json::from_str(GOLDEN_CPT)?;
        let world = ChemWorld::new(ChemConfig::new(GraphSpec::chain(3), 5, 10.0, 123))?;
        let k = 5;
        let mut worst: f64 = 0.0;
        let mut conditions = 0;
        let tv = |counts: &[usize], row: &[f64]| {
            counts.iter().zip(row).map(|(&c, p)| (c as f64 / CPT_SAMPLES as f64 - p).abs()).sum::<f64>() / 2.0
        };
        // root: reset draws
        let mut counts = vec![0; k];
        for i in 0..CPT_SAMPLES {
            let (s, _) = world.reset(NoiseCursor::new(i as u64), &mut rng_for(&[i as u64]))?;
            counts[s.colors[0] as usize] += 1;
        }
        worst = worst.max(tv(&counts, &golden.nodes[0].rows[0]));
        conditions += 1;
        // children: pin the parent and redraw the chain below it
        let start = ChemState { colors: vec![0; 3], positions: world.static_positions().to_vec(), shapes: world.shapes() };
        for node in 1..3 {
            for c in 0..k {
                let mut counts = vec![0; k];
                let mut cursor = NoiseCursor::new(0xc9_7000 + (node * k + c) as u64);
                for _ in 0..CPT_SAMPLES {
                    let (s, next) = world.step(&start, ChemAction { node: node - 1, color: c }, cursor)?;
                    cursor = next;
                    counts[s.colors[node] as usize] += 1;
                }
                worst = worst.max(tv(&counts, &golden.nodes[node].rows[c]));
                conditions += 1;
            }
        }
        Ok((worst <= 0.02, format!("max TV {worst:.4} over {conditions} conditions")))
    })
}

pub fn metrics_suite() -> Check {
    timed(7, "metrics unit suite", || {
        let m: f64 = mrr_from_ranks(&[1, 2, 4]);
        let mrr_ok = (m - 0.58333).abs() <= 1e-5 && (m - 7.0 / 12.0).abs() <= 1e-9;
        let mut ordered = 0;
        for b in 0..1000u64 {
            let mut rng = rng_for(&[0x3e7, b]);
            let n = rng.gen_range(1..20);
            let d = rng.gen_range(1..6);
            let mut draw = || (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect::<Vec<Vec<f64>>>();
            let batch = RankingBatch::new(draw(), draw())?;
            ordered += usize::from(hits_at_1(&batch) <= mrr(&batch));
        }
        let dags: Vec<_> = enumerate_all_dags(3)?.collect();
        let mut axioms = true;
        for a in &dags {
            for b in &dags {
                let ab = shd(a, b)?;
                axioms &= (ab == 0) == (a == b) && ab == shd(b, a)?;
                for c in &dags {
                    axioms &= shd(a, c)? <= ab + shd(b, c)?;
                }
            }
        }
        Ok((
            mrr_ok && ordered == 1000 && axioms && dags.len() == 25,
            format!("MRR([1,2,4]) = {m:.6}; H@1 <= MRR on {ordered}/1000 batches; SHD axioms on {} DAGs: {axioms}", dags.len()),
        ))
    })
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| Error::Config(e.to_string()))? {
        let p = e.map_err(|e| Error::Config(e.to_string()))?.path();
        let bytes = fs::read(&p).map_err(|e| Error::Config(e.to_string()))?;
        out.insert(p.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

pub fn determinism() -> Check {
    timed(8, "determinism and IO", || {
        let tmp = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
        let configs = [physics3(), EnvConfig::Chemistry(ChemConfig::new(GraphSpec::full(4), 5, 2.0, 3))];
        let mut pass = true;
        for (i, config) in configs.iter().enumerate() {
            let mut runs = Vec::new();
            for (run, jobs) in [1, 4, 4].into_iter().enumerate() {
                let dir = tmp.path().join(format!("{i}-{run}"));
                let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))?;
                pool.install(|| generate_dataset(config, 20, 10, Split::Train, 5, &dir))?;
                let loaded = load_dataset(&dir)?;
                pass &= loaded.episodes == generate_episodes(config, 20, 10, Split::Train, 5)?;
                runs.push(dir_bytes(&dir)?);
            }
            pass &= runs.windows(2).all(|w| w[0] == w[1]);
        }
        Ok((pass, "round trip and byte-identical regeneration for --jobs 1 and 4".into()))
    })
}

pub const RENDER_STATES: usize = 1000;

pub fn renderer_injectivity() -> Check {
    timed(9, "renderer injectivity", || {
        let settings = [PhysicsSetting::Observed, PhysicsSetting::Unobserved, PhysicsSetting::FixedUnobserved];
        let mut physics_ok = 0;
        for i in 0..RENDER_STATES {
            let setting = settings[i % 3];
            let m = 1 + i % 5;
            let s = reset(&PhysicsConfig::new(m, setting, i as u64), &mut rng_for(&[0x9e, i as u64]))?;
            physics_ok += usize::from(decode_physics(&render_physics(&s, 5), setting).ok() == Some(s));
        }
        let mut chem_ok = 0;
        for i in 0..RENDER_STATES {
            let mut rng = rng_for(&[0xc4e, i as u64]);
            let n = rng.gen_range(1..=5);
            let k = rng.gen_range(2..=8);
            let world = ChemWorld::new(ChemConfig::new(GraphSpec::full(n), k, 1.0, i as u64))?;
            let (s, c) = world.reset(NoiseCursor::new(i as u64), &mut rng)?;
            let (s, _) = world.step(&s, ChemAction { node: rng.gen_range(0..n), color: rng.gen_range(0..k) }, c)?;
            chem_ok += usize::from(decode_chem(&render_chem(&s, 5), world.static_positions()).ok() == Some(s));
        }
        let golden = PhysicsState {
            positions: vec![Cell::new(0, 0), Cell::new(2, 3), Cell::new(4, 1)],
            weights: vec![0.8, 0.5, 0.3],
            colors: vec![ObjColor::Intensity(160), ObjColor::Intensity(100), ObjColor::Intensity(60)],
            shapes: vec![0, 1, 2],
        };
        let png_ok = render_physics(&golden, 5).to_png()? == GOLDEN_PNG;
        Ok((
            physics_ok == RENDER_STATES && chem_ok == RENDER_STATES && png_ok,
            format!("physics {physics_ok}/{RENDER_STATES}, chemistry {chem_ok}/{RENDER_STATES}, golden PNG stable: {png_ok}"),
        ))
    })
}

pub fn zero_shot() -> Check {
    timed(10, "zero-shot intensities", || {
        let config = physics3();
        let train = generate_episodes(&config, 200, 10, Split::Train, 3)?;
        let model = fit_tabular(&config, &train, &generate(&GraphSpec::full(3))?, ALPHA)?;
        let test = generate_episodes(&config, 200, 10, Split::Zeroshot, 3)?;
        let env = Env::new(config.zero_shot()?)?;
        let h1 = evaluate(&model, &env, &test, &[1])?.h1["1"];
        Ok((h1 >= 0.95, format!("1-step H@1 {h1:.3} on novel intensities")))
    })
}

/// Every criterion, in order.
pub fn run_all() -> Vec<Check> {
    vec![
        greedy_baseline(),
        random_baseline(),
        structure_recovery(),
        complexity_ordering(),
        intervention_semantics(),
        cpt_recovery(),
        metrics_suite(),
        determinism(),
        renderer_injectivity(),
        zero_shot(),
    ]
}
