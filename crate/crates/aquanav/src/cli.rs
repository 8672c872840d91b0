//! Command-line pipeline: train, verify, build-shield, run-shielded.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::bounds::Mode;
use crate::env::{Action, ArenaConfig, Env, Outcome};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::property::{builtin, DecisionProperty, Flavor};
use crate::shield::{build_index, safe_action, ViolationIndex};
use crate::train::{train_with, Algo, TrainConfig};
use crate::verify::{verify_property, VerificationReport, VerifyConfig};

#[derive(Parser)]
#[command(name = "aquanav", version, about = "Train, verify and shield aquatic navigation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and emit checkpoints plus a smoothed success-rate CSV.
    Train(TrainArgs),
    /// Verify checkpoints against decision properties.
    Verify(VerifyArgs),
    /// Build a runtime violation index from verification reports.
    BuildShield(BuildShieldArgs),
    /// Run shielded evaluation episodes and log every override.
    RunShielded(RunShieldedArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Algorithm: dqn, ppo, per or peppo.
    #[arg(long)]
    algo: String,
    /// Single training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated seed list for independent runs (overrides --seed).
    #[arg(long)]
    seeds: Option<String>,
    /// Epoch budget.
    #[arg(long, default_value_t = 2000)]
    epochs: u64,
    /// Arena config (TOML); defaults to the built-in arena.
    #[arg(long)]
    arena: Option<PathBuf>,
    /// Checkpoint period in epochs.
    #[arg(long, default_value_t = 100)]
    checkpoint_every: u64,
    /// Disable the early stop at 95% smoothed success.
    #[arg(long, default_value_t = false)]
    no_early_stop: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Checkpoint files to verify.
    #[arg(required_unless_present = "index")]
    checkpoints: Vec<PathBuf>,
    /// checkpoints.csv emitted by train; selects the best checkpoints.
    #[arg(long)]
    index: Option<PathBuf>,
    /// With --index: checkpoints per seed.
    #[arg(long, default_value_t = 5)]
    top_models: usize,
    /// With --index: best seeds to include.
    #[arg(long, default_value_t = 3)]
    top_seeds: usize,
    /// Property files.
    #[arg(long, num_args = 1..)]
    properties: Vec<PathBuf>,
    /// Use the built-in theta properties (flavor chosen per checkpoint).
    #[arg(long, conflicts_with = "properties")]
    builtin: bool,
    /// Threshold k for the built-in continuous constraints.
    #[arg(long, default_value_t = 0.1)]
    k: f64,
    /// Propagation mode: naive or symbolic.
    #[arg(long, default_value = "symbolic")]
    mode: String,
    /// Refinement depth limit.
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    /// Verification worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildShieldArgs {
    /// Verification report files (one network, any properties).
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Property files matching the reports.
    #[arg(long, num_args = 1..)]
    properties: Vec<PathBuf>,
    /// Resolve report properties against the built-in set.
    #[arg(long, conflicts_with = "properties")]
    builtin: bool,
    /// Threshold k for the built-in continuous constraints.
    #[arg(long, default_value_t = 0.1)]
    k: f64,
    /// Output index file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunShieldedArgs {
    /// Policy checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Violation index; omit for an unshielded reference run.
    #[arg(long)]
    shield: Option<PathBuf>,
    #[arg(long)]
    arena: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    episodes: u64,
    /// Output log file (CSV).
    #[arg(long)]
    out: PathBuf,
}

pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::BuildShield(args) => cmd_build_shield(&args),
        Command::RunShielded(args) => cmd_run_shielded(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn load_arena(path: &Option<PathBuf>) -> Result<ArenaConfig> {
    match path {
        Some(p) => ArenaConfig::load(p),
        None => Ok(ArenaConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn config_hash(parts: &[String]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

fn parse_seeds(args: &TrainArgs) -> Result<Vec<u64>> {
    match &args.seeds {
        None => Ok(vec![args.seed]),
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Usage(format!("invalid seed {:?} in --seeds", s)))
            })
            .collect(),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let algo = Algo::from_name(&args.algo)
        .ok_or_else(|| Error::Usage(format!("unknown algorithm {:?}; expected dqn, ppo, per or peppo", args.algo)))?;
    let arena = load_arena(&args.arena)?;
    match (arena.action_space.as_str(), algo.is_discrete()) {
        ("continuous", true) => {
            return Err(Error::Usage(format!(
                "algorithm {} is discrete but the arena demands continuous actions",
                algo.name()
            )))
        }
        ("discrete", false) => {
            return Err(Error::Usage(format!(
                "algorithm {} is continuous but the arena demands discrete actions",
                algo.name()
            )))
        }
        _ => {}
    }
    let seeds = parse_seeds(args)?;
    ensure_dir(&args.out)?;
    let mut cfg = TrainConfig::new(algo);
    cfg.epochs = args.epochs;
    if args.no_early_stop {
        cfg.early_stop = None;
    }
    let arena_text = toml::to_string(&arena).map_err(|e| Error::Validation(e.to_string()))?;
    let mut checkpoint_rows = vec!["algo,seed,epoch,smoothed_success,path".to_string()];
    let mut finals = Vec::new();
    for &seed in &seeds {
        let hash = config_hash(&[
            format!("algo {}", algo.name()),
            format!("seed {}", seed),
            format!("epochs {}", cfg.epochs),
            arena_text.clone(),
        ]);
        let mut csv = format!("# config {}\nepoch,success_rate,return,steps,epsilon,loss,outcome\n", hash);
        let out = args.out.clone();
        let every = args.checkpoint_every.max(1);
        let rows = std::cell::RefCell::new(Vec::new());
        let result = train_with(&cfg, &arena, seed, |stats, net| {
            csv.push_str(&format!(
                "{},{:.4},{:.6},{},{:.6},{:.6},{}\n",
                stats.epoch,
                stats.smoothed_success,
                stats.ret,
                stats.steps,
                stats.epsilon,
                stats.loss,
                stats.outcome.name()
            ));
            if (stats.epoch + 1) % every == 0 {
                let name = format!("ckpt_{}_s{}_e{}.net", algo.name(), seed, stats.epoch + 1);
                net.save(&out.join(&name))?;
                rows.borrow_mut().push(format!(
                    "{},{},{},{:.4},{}",
                    algo.name(),
                    seed,
                    stats.epoch + 1,
                    stats.smoothed_success,
                    name
                ));
            }
            Ok(())
        })?;
        checkpoint_rows.extend(rows.into_inner());
        write_file(&args.out.join(format!("train_{}_seed{}.csv", algo.name(), seed)), &csv)?;
        result.net.save(&args.out.join(format!("policy_{}_seed{}.net", algo.name(), seed)))?;
        let mut phase_log = format!("# config {}\nepoch,learner_fitness,child_fitness,winner_child,injected\n", hash);
        for p in &result.phases {
            phase_log.push_str(&format!(
                "{},{},{},{},{}\n",
                p.epoch,
                p.learner_fitness,
                p.child_fitness.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";"),
                p.winner_child.map_or("none".to_string(), |i| i.to_string()),
                p.injected
            ));
        }
        if algo.uses_population() {
            write_file(&args.out.join(format!("phases_{}_seed{}.csv", algo.name(), seed)), &phase_log)?;
        }
        finals.push((seed, result.final_success));
    }
    let ckpt_path = args.out.join(format!("checkpoints_{}.csv", algo.name()));
    write_file(&ckpt_path, &(checkpoint_rows.join("\n") + "\n"))?;
    if seeds.len() > 1 {
        let values: Vec<f64> = finals.iter().map(|&(_, f)| f).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        let mut agg = String::from("seed,final_success\n");
        for (seed, f) in &finals {
            agg.push_str(&format!("{},{:.4}\n", seed, f));
        }
        agg.push_str(&format!("mean,{:.4}\nstddev,{:.4}\n", mean, var.sqrt()));
        write_file(&args.out.join(format!("aggregate_{}.csv", algo.name())), &agg)?;
    }
    Ok(())
}

/// Pick checkpoints from a train-emitted index: best `top_seeds` seeds by
/// their best smoothed success, then `top_models` checkpoints per seed.
fn select_checkpoints(index: &Path, top_models: usize, top_seeds: usize) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let dir = index.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<(u64, f64, PathBuf)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Input(format!("{}: line {}: expected 5 columns", index.display(), n + 1)));
        }
        let seed: u64 = fields[1]
            .parse()
            .map_err(|_| Error::Input(format!("{}: line {}: bad seed", index.display(), n + 1)))?;
        let success: f64 = fields[3]
            .parse()
            .map_err(|_| Error::Input(format!("{}: line {}: bad success", index.display(), n + 1)))?;
        rows.push((seed, success, dir.join(fields[4])));
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.0).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut seed_best: Vec<(u64, f64)> = seeds
        .iter()
        .map(|&s| (s, rows.iter().filter(|r| r.0 == s).map(|r| r.1).fold(0.0, f64::max)))
        .collect();
    seed_best.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut picked = Vec::new();
    for &(seed, _) in seed_best.iter().take(top_seeds) {
        let mut of_seed: Vec<&(u64, f64, PathBuf)> = rows.iter().filter(|r| r.0 == seed).collect();
        of_seed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.cmp(&b.2)));
        picked.extend(of_seed.iter().take(top_models).map(|r| r.2.clone()));
    }
    Ok(picked)
}

fn load_properties(paths: &[PathBuf], use_builtin: bool, k: f64, net: Option<&Network>) -> Result<Vec<DecisionProperty>> {
    if use_builtin {
        match net {
            Some(net) if net.output_dim() == 2 => builtin(Flavor::Continuous, k),
            Some(_) => builtin(Flavor::Discrete, k),
            None => {
                let mut all = builtin(Flavor::Discrete, k)?;
                all.extend(builtin(Flavor::Continuous, k)?);
                Ok(all)
            }
        }
    } else if paths.is_empty() {
        Err(Error::Usage("no properties given; pass --properties or --builtin".into()))
    } else {
        paths.iter().map(|p| DecisionProperty::load(p)).collect()
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let mode = match args.mode.as_str() {
        "naive" => Mode::Naive,
        "symbolic" => Mode::Symbolic,
        other => return Err(Error::Usage(format!("unknown mode {:?}; expected naive or symbolic", other))),
    };
    let checkpoints = if let Some(index) = &args.index {
        select_checkpoints(index, args.top_models, args.top_seeds)?
    } else {
        args.checkpoints.clone()
    };
    if checkpoints.is_empty() {
        return Err(Error::Usage("no checkpoints to verify".into()));
    }
    for path in &checkpoints {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
        }
    }
    ensure_dir(&args.out)?;
    let cfg = VerifyConfig { mode, max_depth: args.max_depth, workers: args.workers };
    let hash = config_hash(&[
        format!("mode {}", args.mode),
        format!("max_depth {}", args.max_depth),
        format!("k {:?}", args.k),
        checkpoints.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
    ]);
    // property id -> violation metric per model
    let mut table: Vec<(String, Vec<f64>)> = Vec::new();
    for path in &checkpoints {
        let net = Network::load(path)?;
        let properties = load_properties(&args.properties, args.builtin, args.k, Some(&net))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        for property in &properties {
            let report = verify_property(&net, property, &cfg)?;
            let metric = report.violation_metric();
            report.save(&args.out.join(format!("report_{}_{}.txt", stem, property.id)))?;
            match table.iter_mut().find(|(id, _)| *id == property.id) {
                Some((_, col)) => col.push(metric),
                None => table.push((property.id.clone(), vec![metric])),
            }
        }
    }
    let mut out = format!("# config {}\nproperty,models,mean_violation_pct,stddev_violation_pct\n", hash);
    for (id, values) in &table {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        out.push_str(&format!("{},{},{:.3},{:.3}\n", id, values.len(), 100.0 * mean, 100.0 * var.sqrt()));
    }
    write_file(&args.out.join("violation_table.csv"), &out)?;
    Ok(())
}

fn cmd_build_shield(args: &BuildShieldArgs) -> Result<()> {
    let reports: Vec<VerificationReport> = args
        .reports
        .iter()
        .map(|p| VerificationReport::load(p))
        .collect::<Result<_>>()?;
    let properties = load_properties(&args.properties, args.builtin, args.k, None)?;
    let index = build_index(&reports, &properties)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    index.save(&args.out)
}

fn percentile(sorted: &[u128], p: f64) -> u128 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn cmd_run_shielded(args: &RunShieldedArgs) -> Result<()> {
    let net = Network::load(&args.checkpoint)?;
    let index = match &args.shield {
        Some(p) => {
            let idx = ViolationIndex::load(p)?;
            if !idx.net_hash.is_empty() && idx.net_hash != net.hash() {
                return Err(Error::Usage(format!(
                    "shield index was built for network {} but checkpoint is {}",
                    idx.net_hash,
                    net.hash()
                )));
            }
            Some(idx)
        }
        None => None,
    };
    let arena = load_arena(&args.arena)?;
    let mut env = Env::new(arena)?;
    let hash = config_hash(&[
        format!("checkpoint {}", net.hash()),
        format!("seed {}", args.seed),
        format!("episodes {}", args.episodes),
    ]);
    let mut log = format!("# config {}\nepisode,step,triggered,fallback,violated,action,reward,outcome\n", hash);
    let mut latencies: Vec<u128> = Vec::new();
    let mut overrides = 0u64;
    let mut outcomes = [0u64; 3]; // reached, crashed, timeout
    for episode in 0..args.episodes {
        let mut obs = env.reset(args.seed.wrapping_add(episode))?;
        let mut step = 0u64;
        loop {
            let vec = obs.to_vec();
            let t0 = Instant::now();
            let decision = match &index {
                Some(idx) => {
                    let ids = idx.check(&vec)?;
                    let violated: Vec<&DecisionProperty> = idx
                        .regions
                        .iter()
                        .filter(|r| ids.contains(&r.property.id))
                        .map(|r| &r.property)
                        .collect();
                    Some(safe_action(&net, &vec, &violated)?)
                }
                None => None,
            };
            latencies.push(t0.elapsed().as_micros());
            let (action, triggered, fallback, ids) = match &decision {
                Some(d) => (d.overridden, d.triggered, d.fallback, d.violated_ids.join(";")),
                None => {
                    let a = if net.output_dim() == 2 {
                        crate::train::net_action_continuous(&net, &obs)?
                    } else {
                        crate::train::net_action_discrete(&net, &obs)?
                    };
                    (a, false, false, String::new())
                }
            };
            if triggered {
                overrides += 1;
            }
            let r = env.step(&action)?;
            let action_str = match action {
                Action::Discrete(i) => i.to_string(),
                Action::Continuous { left, right } => format!("{:.4}|{:.4}", left, right),
            };
            log.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{}\n",
                episode, step, triggered, fallback, ids, action_str, r.reward, r.outcome.name()
            ));
            step += 1;
            obs = r.observation;
            if r.done {
                match r.outcome {
                    Outcome::Reached => outcomes[0] += 1,
                    Outcome::Crashed => outcomes[1] += 1,
                    _ => outcomes[2] += 1,
                }
                break;
            }
        }
    }
    latencies.sort_unstable();
    log.push_str(&format!(
        "# episodes {} reached {} crashed {} timeout {} overrides {}\n",
        args.episodes, outcomes[0], outcomes[1], outcomes[2], overrides
    ));
    log.push_str(&format!(
        "# shield_latency_us p50 {} p99 {} max {}\n",
        percentile(&latencies, 0.50),
        percentile(&latencies, 0.99),
        percentile(&latencies, 1.0)
    ));
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    write_file(&args.out, &log)
}
