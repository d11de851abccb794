use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use phmcts::baselines::{
    alternating_best_response, exhaustive_stackelberg, general_mcts, proposed_mcts, AlternatingConfig, SolverOutcome,
    DEFAULT_ENUMERATION_CAP,
};
use phmcts::prediction::{load_predictions, predictions_to_string, synthetic_predict};
use phmcts::rng::derive_seed;
use phmcts::scenario::load_scenario;
use phmcts::search::{search, SearchStats};
use phmcts::simulator::{
    metrics, read_trace_csv, replay_inference, run_closed_loop, write_belief_csv, write_trace_csv, SimConfig,
};
use phmcts::{PredictionSet, Scenario, SearchConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{digest_inputs, OutputDir};
use crate::{BenchmarkArgs, CliError, InferArgs, OnOff, PlanArgs, SimulateArgs, Solver};

/// Sigma of the synthetic predictions when none is given.
pub const DEFAULT_SIGMA: f64 = 0.4;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn opponent_cruise(scenario: &Scenario) -> Vec<f64> {
    scenario.reference_ground_truth().iter().map(|x| x.s).collect()
}

fn synthetic(scenario: &Scenario, sigma: f64, root: u64, run: u64) -> Result<(PredictionSet, u64), CliError> {
    let seed = derive_seed(root, "predictions", run);
    Ok((
        synthetic_predict(&opponent_cruise(scenario), sigma, 1, None, seed)?,
        seed,
    ))
}

fn stats_csv(stats: &SearchStats) -> String {
    let mut out = String::from("depth,v_max,v_other,concentration,nodes,total_visits\n");
    for d in &stats.per_depth {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.depth,
            d.v_max,
            d.v_other,
            d.concentration(),
            d.nodes,
            d.total_visits
        );
    }
    out
}

fn curve_csv(stats: &SearchStats) -> String {
    let mut out = String::from("iteration,ego_reward,opp_reward\n");
    for c in &stats.curve {
        let _ = writeln!(out, "{},{},{}", c.iteration, c.ego_reward, c.opp_reward);
    }
    out
}

/// Plan file of the enumerating solvers; timing is left out so reruns are byte-identical.
#[derive(Debug, Serialize)]
struct SolverPlan<'a> {
    solver: &'static str,
    ego_actions: &'a [f64],
    opp_actions: &'a [f64],
    rewards: [f64; 2],
    work: u64,
    converged: bool,
}

fn plan_game(args: &PlanArgs, scenario_text: &str, scenario: &Scenario) -> Result<(), CliError> {
    let mut seeds = BTreeMap::from([("root".to_string(), args.seed)]);
    let outcome = if args.solver == Solver::Alternating {
        let seed = derive_seed(args.seed, "alternating", 0);
        seeds.insert("alternating".into(), seed);
        let config = AlternatingConfig {
            seed,
            ..AlternatingConfig::default()
        };
        alternating_best_response(&scenario.init, scenario, &scenario.rewards, &config)?
    } else {
        exhaustive_stackelberg(&scenario.init, scenario, &scenario.rewards, DEFAULT_ENUMERATION_CAP)?
    };
    let plan = SolverPlan {
        solver: args.solver.name(),
        ego_actions: &outcome.ego_actions,
        opp_actions: &outcome.opp_actions,
        rewards: outcome.rewards,
        work: outcome.work,
        converged: outcome.converged,
    };
    let digest = digest_inputs(&[
        ("scenario", scenario_text.as_bytes()),
        ("solver", args.solver.name().as_bytes()),
    ]);
    let mut out = OutputDir::create(&args.out_dir)?;
    out.write("plan.json", json(&plan).as_bytes())?;
    out.finish("plan", digest, seeds)?;
    println!("{} ego reward {:.6}", args.solver.name(), outcome.rewards[0]);
    Ok(())
}

pub fn plan(args: &PlanArgs) -> Result<(), CliError> {
    let scenario_text = read(&args.scenario)?;
    let scenario = load_scenario(&scenario_text)?;
    if matches!(args.solver, Solver::Alternating | Solver::Exhaustive) {
        return plan_game(args, &scenario_text, &scenario);
    }
    let heuristic = if args.solver == Solver::General {
        OnOff::Off
    } else {
        args.heuristic
    };
    let mut seeds = BTreeMap::from([("root".to_string(), args.seed)]);
    let search_seed = derive_seed(args.seed, "search", 0);
    seeds.insert("search".into(), search_seed);
    let mut config = SearchConfig {
        iterations: args.iterations,
        exploration_c: args.exploration_c,
        seed: search_seed,
        stats_stride: args.curve_stride,
        ..SearchConfig::default()
    };
    if heuristic == OnOff::Off {
        config = config.general();
    }
    config.validate()?;

    let (preds, pred_text) = match (&args.predictions, heuristic) {
        (_, OnOff::Off) => (None, String::new()),
        (Some(path), OnOff::On) => {
            let text = read(path)?;
            (Some(load_predictions(&text, scenario.horizon)?), text)
        }
        (None, OnOff::On) => {
            let (p, seed) = synthetic(&scenario, args.synthetic_sigma.unwrap_or(DEFAULT_SIGMA), args.seed, 0)?;
            seeds.insert("predictions".into(), seed);
            (Some(p), String::new())
        }
    };

    let outcome = search(&scenario.init, preds.as_ref(), &scenario, &scenario.rewards, &config)?;
    info!(
        "plan: depth {}, ego reward {:.4}, {} nodes",
        outcome.plan.depth, outcome.plan.rewards[0], outcome.stats.node_count
    );

    let settings = serde_json::to_string(&(&config, args.synthetic_sigma)).expect("settings serialize");
    let digest = digest_inputs(&[
        ("scenario", scenario_text.as_bytes()),
        ("predictions", pred_text.as_bytes()),
        ("settings", settings.as_bytes()),
    ]);
    let mut out = OutputDir::create(&args.out_dir)?;
    out.write("plan.json", json(&outcome.plan).as_bytes())?;
    out.write("stats.csv", stats_csv(&outcome.stats).as_bytes())?;
    out.write("curve.csv", curve_csv(&outcome.stats).as_bytes())?;
    if let Some(p) = &preds {
        out.write("predictions.json", predictions_to_string(p).as_bytes())?;
    }
    out.finish("plan", digest, seeds)?;
    println!(
        "depth {} ego reward {:.6} first action {:?}",
        outcome.plan.depth,
        outcome.plan.rewards[0],
        outcome.plan.first_action()
    );
    Ok(())
}

fn load_sim_config(path: Option<&Path>) -> Result<(SimConfig, String), CliError> {
    match path {
        Some(p) => {
            let text = read(p)?;
            let config = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Ok((config, text))
        }
        None => Ok((SimConfig::default(), String::new())),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let scenario_text = read(&args.scenario)?;
    let scenario = load_scenario(&scenario_text)?;
    let (mut config, config_text) = load_sim_config(args.config.as_deref())?;
    if let Some(s) = args.synthetic_sigma {
        config.prediction.sigma = s;
    }
    if let Some(n) = args.iterations {
        config.search.iterations = n;
    }
    if let Some(c) = args.exploration_c {
        config.search.exploration_c = c;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.heuristic == Some(OnOff::Off) {
        config.search = config.search.general();
    }
    config.validate(&scenario)?;

    let trace = run_closed_loop(&scenario, &config)?;
    let m = metrics(&trace, &scenario);

    let mut trace_csv = Vec::new();
    write_trace_csv(&trace, &mut trace_csv)?;
    let mut belief_csv = Vec::new();
    write_belief_csv(&trace.beliefs, &mut belief_csv)?;

    let settings = serde_json::to_string(&config).expect("settings serialize");
    let digest = digest_inputs(&[
        ("scenario", scenario_text.as_bytes()),
        ("config", config_text.as_bytes()),
        ("settings", settings.as_bytes()),
    ]);
    let mut out = OutputDir::create(&args.out_dir)?;
    out.write("trace.csv", &trace_csv)?;
    out.write("beliefs.csv", &belief_csv)?;
    out.write("replans.json", json(&trace.replans).as_bytes())?;
    out.write("metrics.json", json(&m).as_bytes())?;
    out.finish("simulate", digest, BTreeMap::from([("root".to_string(), config.seed)]))?;
    println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
    if let Some(f) = &m.failure {
        log::warn!("simulation stopped early: {f}");
    }
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<(), CliError> {
    let scenario_text = read(&args.scenario)?;
    let scenario = load_scenario(&scenario_text)?;
    let (config, config_text) = load_sim_config(args.config.as_deref())?;
    config.validate(&scenario)?;
    let trace_text = read(&args.trace)?;
    let rows = read_trace_csv(trace_text.as_bytes())?;
    let beliefs = replay_inference(
        &rows,
        config.steps_per_plan(&scenario)?,
        config.update_stride(&scenario)?,
        &scenario,
        &config.opp,
        &config.inference_config,
    )?;
    let mut belief_csv = Vec::new();
    write_belief_csv(&beliefs, &mut belief_csv)?;
    let digest = digest_inputs(&[
        ("scenario", scenario_text.as_bytes()),
        ("config", config_text.as_bytes()),
        ("trace", trace_text.as_bytes()),
    ]);
    let mut out = OutputDir::create(&args.out_dir)?;
    out.write("beliefs.csv", &belief_csv)?;
    out.finish("infer", digest, BTreeMap::new())?;
    match beliefs.last() {
        Some(b) => println!("{} updates, final gamma_hat {:.4}", beliefs.len(), b.gamma_hat),
        None => println!("0 updates"),
    }
    Ok(())
}

/// One (scenario, solver, budget) cell of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub solver: &'static str,
    pub budget: Option<usize>,
    pub runs: usize,
    pub failures: usize,
    pub mean_reward: Option<f64>,
    pub std_reward: Option<f64>,
    pub mean_max_depth: Option<f64>,
    pub mean_wall_s: Option<f64>,
    pub error: Option<String>,
}

struct Cell {
    scenario: usize,
    solver: Solver,
    budget: Option<usize>,
    runs: u64,
}

fn run_once(cell: &Cell, scenario: &Scenario, run: u64, args: &BenchmarkArgs) -> Result<SolverOutcome, CliError> {
    let x0 = &scenario.init;
    let search_config = |budget: usize| SearchConfig {
        iterations: budget,
        exploration_c: args.exploration_c,
        seed: derive_seed(args.seed, "search", run),
        stats_stride: 0,
        ..SearchConfig::default()
    };
    Ok(match (cell.solver, cell.budget) {
        (Solver::Proposed, Some(b)) => {
            let (preds, _) = synthetic(scenario, args.synthetic_sigma, args.seed, run)?;
            proposed_mcts(x0, &preds, scenario, &scenario.rewards, &search_config(b))?
        }
        (Solver::General, Some(b)) => general_mcts(x0, scenario, &scenario.rewards, &search_config(b))?,
        (Solver::Alternating, _) => {
            let config = AlternatingConfig {
                seed: derive_seed(args.seed, "alternating", run),
                ..AlternatingConfig::default()
            };
            alternating_best_response(x0, scenario, &scenario.rewards, &config)?
        }
        _ => exhaustive_stackelberg(x0, scenario, &scenario.rewards, DEFAULT_ENUMERATION_CAP)?,
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(name: &str, cell: &Cell, results: Vec<Result<SolverOutcome, CliError>>) -> BenchRow {
    let mut ok = Vec::new();
    let mut error = None;
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => error = error.or(Some(e.to_string())),
        }
    }
    let rewards: Vec<f64> = ok.iter().map(|o| o.rewards[0]).collect();
    let m = mean(&rewards);
    let std = m.map(|m| {
        if rewards.len() < 2 {
            0.0
        } else {
            (rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rewards.len() - 1) as f64).sqrt()
        }
    });
    let depths: Vec<f64> = ok.iter().filter_map(|o| o.max_depth.map(|d| d as f64)).collect();
    let walls: Vec<f64> = ok.iter().map(|o| o.wall_time_s).collect();
    BenchRow {
        scenario: name.to_string(),
        solver: cell.solver.name(),
        budget: cell.budget,
        runs: cell.runs as usize,
        failures: cell.runs as usize - ok.len(),
        mean_reward: m,
        std_reward: std,
        mean_max_depth: mean(&depths),
        mean_wall_s: mean(&walls),
        error,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    if args.iterations.contains(&0) {
        return Err(CliError::Config("iteration budgets must be at least 1".into()));
    }
    let mut texts = Vec::new();
    let mut scenarios = Vec::new();
    for path in &args.scenario {
        let text = read(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        scenarios.push((name, load_scenario(&text)?));
        texts.push(text);
    }

    let mut cells = Vec::new();
    for i in 0..scenarios.len() {
        for &solver in &args.solver {
            match solver {
                Solver::Proposed | Solver::General => {
                    for &b in &args.iterations {
                        cells.push(Cell {
                            scenario: i,
                            solver,
                            budget: Some(b),
                            runs: args.seeds,
                        });
                    }
                }
                Solver::Alternating => cells.push(Cell {
                    scenario: i,
                    solver,
                    budget: None,
                    runs: args.seeds,
                }),
                Solver::Exhaustive => cells.push(Cell {
                    scenario: i,
                    solver,
                    budget: None,
                    runs: 1,
                }),
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| (0..cell.runs).map(move |k| (c, k)))
        .collect();
    let results: Vec<Result<SolverOutcome, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, k)| run_once(&cells[c], &scenarios[cells[c].scenario].1, k, args))
            .collect()
    });
    let mut results = results.into_iter();
    let rows: Vec<BenchRow> = cells
        .iter()
        .map(|cell| {
            let chunk: Vec<_> = results.by_ref().take(cell.runs as usize).collect();
            summarize(&scenarios[cell.scenario].0, cell, chunk)
        })
        .collect();

    let mut table = String::from("scenario,solver,budget,runs,failures,mean_reward,std_reward,mean_max_depth,error\n");
    let mut timing = String::from("scenario,solver,budget,mean_wall_s\n");
    for r in &rows {
        let budget = r.budget.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.solver,
            budget,
            r.runs,
            r.failures,
            opt(r.mean_reward),
            opt(r.std_reward),
            opt(r.mean_max_depth),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
        let _ = writeln!(timing, "{},{},{},{}", r.scenario, r.solver, budget, opt(r.mean_wall_s));
    }

    let settings = serde_json::to_string(&(
        args.solver.iter().map(|s| s.name()).collect::<Vec<_>>(),
        &args.iterations,
        args.seeds,
        args.synthetic_sigma,
        args.exploration_c,
    ))
    .expect("settings serialize");
    let mut parts: Vec<(&str, &[u8])> = texts.iter().map(|t| ("scenario", t.as_bytes())).collect();
    parts.push(("settings", settings.as_bytes()));
    let digest = digest_inputs(&parts);

    let mut out = OutputDir::create(&args.out_dir)?;
    out.write("benchmark.csv", table.as_bytes())?;
    out.write_timing("timing.csv", timing.as_bytes())?;
    out.finish("benchmark", digest, BTreeMap::from([("root".to_string(), args.seed)]))?;

    println!(
        "{:<12} {:<12} {:>7} {:>5} {:>12} {:>10} {:>6}",
        "scenario", "solver", "budget", "fail", "mean_reward", "std", "depth"
    );
    for r in &rows {
        println!(
            "{:<12} {:<12} {:>7} {:>5} {:>12} {:>10} {:>6}",
            r.scenario,
            r.solver,
            r.budget.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            r.failures,
            r.mean_reward.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
            r.std_reward.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
            r.mean_max_depth
                .map(|x| format!("{x:.1}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    Ok(())
}
