use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use rand::SeedableRng;
use satnoma::baselines::{
    ddpg_single, evaluate, exhaustive_cache_oracle, facility_cache_capacities, format_placement,
    greedy_popularity_cache, random_policy, CacheRewardModel, CentralizedEnv,
};
use satnoma::checks::{self, CheckOutcome};
use satnoma::env::{CacheEnv, FrozenAllocation, MultiAgentEnv, ResourceEnv, World};
use satnoma::experiment::{
    cache_env, eval_seed, final_mean, nominal_allocation, policy_allocation, random_baseline,
    resource_env, score_cache_policy, CacheScore,
};
use satnoma::maddpg::{EpisodeLog, Role, TrainConfig, Trainer};
use satnoma::metrics::{metrics_sink, FileSink};
use satnoma::{NetworkConfig, Validated};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::{Algorithm, EvalPolicy, Stage};

/// Episodes averaged for the reported final reward.
const FINAL_WINDOW: usize = 100;

/// Runs `f` once per seed with the seed written into the training config.
pub fn per_seed(
    exp: &ExperimentConfig,
    out: &Path,
    seeds: &[u64],
    mut f: impl FnMut(&ExperimentConfig, &Path) -> Result<()>,
) -> Result<()> {
    for &seed in seeds {
        let dir = if seeds.len() > 1 {
            out.join(format!("seed-{seed}"))
        } else {
            out.to_path_buf()
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut e = exp.clone();
        e.train.seed = seed;
        write_json(&dir.join("config.resolved.json"), &e)?;
        info!("seed {seed} -> {}", dir.display());
        f(&e, &dir)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn validated(exp: &ExperimentConfig) -> Result<Validated> {
    let v = exp.network.validate()?;
    for w in &v.warnings {
        log::warn!("{w}");
    }
    Ok(v)
}

fn train_logged<E: MultiAgentEnv>(
    trainer: &mut Trainer<E>,
    sink: &mut FileSink,
) -> Result<Vec<EpisodeLog>> {
    let every = (trainer.config().episodes / 20).max(1);
    Ok(trainer.train(|log| {
        sink.write(log)?;
        if log.episode % every == 0 {
            info!(
                "episode {} reward {:.4} hit {:.3} critic {:.4} noise {:.3}",
                log.episode, log.mean_reward, log.hit_rate, log.critic_loss, log.noise_scale
            );
        }
        Ok(())
    })?)
}

fn final_hit(logs: &[EpisodeLog]) -> f64 {
    let tail = &logs[logs.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|l| l.hit_rate).sum::<f64>() / tail.len().max(1) as f64
}

pub fn train_resource(exp: &ExperimentConfig, algorithm: Algorithm, dir: &Path) -> Result<()> {
    let v = validated(exp)?;
    let env = resource_env(&v, exp.train.steps_per_episode)?;
    let hash = exp.network.hash_hex();
    let mut sink = metrics_sink(&dir.join("metrics.csv"))?;
    let start = Instant::now();
    let ckpt = dir.join("checkpoints");
    let (logs, violations) = match algorithm {
        Algorithm::Maddpg => {
            let mut t = Trainer::new(env.clone(), exp.train.clone(), Role::User)?;
            let logs = train_logged(&mut t, &mut sink)?;
            t.save_checkpoint(&ckpt, &hash)?;
            (logs, t.violations())
        }
        Algorithm::Ddpg => {
            let mut t = ddpg_single(env.clone(), exp.train.clone())?;
            let logs = train_logged(&mut t, &mut sink)?;
            t.save_checkpoint(&ckpt, &hash)?;
            (logs, t.violations())
        }
    };
    let random = random_baseline(&env, 10, eval_seed(exp.train.seed))?;
    let summary = json!({
        "command": "train-resource",
        "algorithm": algorithm,
        "seed": exp.train.seed,
        "episodes": logs.len(),
        "final_window": FINAL_WINDOW,
        "final_mean_reward": final_mean(&logs, FINAL_WINDOW),
        "random_mean_reward": random,
        "violations": violations,
        "config_hash": hash,
        "elapsed_secs": start.elapsed().as_secs_f64(),
    });
    println!(
        "seed {}: final mean reward {:.4} (random {:.4}), {} violations",
        exp.train.seed,
        final_mean(&logs, FINAL_WINDOW),
        random,
        violations
    );
    write_json(&dir.join("summary.json"), &summary)
}

/// Frozen allocation for the cache stage: a trained resource policy when a
/// checkpoint is given, else the nominal one.
fn frozen_allocation(
    exp: &ExperimentConfig,
    v: &Validated,
    checkpoint: Option<&Path>,
) -> Result<FrozenAllocation> {
    match checkpoint {
        Some(path) => {
            let mut t = Trainer::new(
                resource_env(v, exp.train.steps_per_episode)?,
                exp.train.clone(),
                Role::User,
            )?;
            t.load_checkpoint(path)
                .with_context(|| format!("loading resource checkpoint {}", path.display()))?;
            Ok(policy_allocation(&mut t, eval_seed(exp.train.seed))?)
        }
        None => Ok(nominal_allocation(&World::new(v)?, exp.cache.frozen_beta)),
    }
}

#[derive(Serialize)]
struct PlacementReport {
    hit_rate: f64,
    expected_ee: f64,
    placement: String,
}

impl PlacementReport {
    fn of(env: &CacheEnv, model: &CacheRewardModel, placement: &[BTreeSet<usize>]) -> Self {
        Self {
            hit_rate: env.expected_hit_rate(placement),
            expected_ee: model.expected_reward(placement),
            placement: format_placement(placement),
        }
    }

    fn learned(score: &CacheScore) -> Self {
        Self {
            hit_rate: score.hit_rate,
            expected_ee: score.expected_ee,
            placement: format_placement(&score.placement),
        }
    }
}

fn greedy_placement(cfg: &NetworkConfig, env: &CacheEnv) -> Vec<BTreeSet<usize>> {
    facility_cache_capacities(cfg)
        .into_iter()
        .map(|c| greedy_popularity_cache(env.world().popularity(), c))
        .collect()
}

struct CacheRun {
    logs: Vec<EpisodeLog>,
    trainer: Trainer<CacheEnv>,
    model: CacheRewardModel,
    score: CacheScore,
}

fn run_cache(
    exp: &ExperimentConfig,
    v: &Validated,
    allocation: Option<&Path>,
    dir: &Path,
) -> Result<CacheRun> {
    let alloc = frozen_allocation(exp, v, allocation)?;
    let env = cache_env(v, alloc, exp.train.steps_per_episode)?;
    let model = CacheRewardModel::estimate(&env, exp.cache.model_draws, eval_seed(exp.train.seed))?;
    let mut sink = metrics_sink(&dir.join("metrics.csv"))?;
    let mut trainer = Trainer::new(env, exp.train.clone(), Role::Facility)?;
    let logs = train_logged(&mut trainer, &mut sink)?;
    trainer.save_checkpoint(&dir.join("checkpoints"), &exp.network.hash_hex())?;
    let score = score_cache_policy(&mut trainer, &model, eval_seed(exp.train.seed))?;
    Ok(CacheRun {
        logs,
        trainer,
        model,
        score,
    })
}

pub fn train_cache(exp: &ExperimentConfig, allocation: Option<&Path>, dir: &Path) -> Result<()> {
    let v = validated(exp)?;
    let start = Instant::now();
    let run = run_cache(exp, &v, allocation, dir)?;
    let env = run.trainer.env();
    let greedy = PlacementReport::of(env, &run.model, &greedy_placement(&v, env));
    let learned = PlacementReport::learned(&run.score);
    println!(
        "seed {}: learned hit {:.4} ee {:.4} [{}]; greedy hit {:.4} ee {:.4}",
        exp.train.seed,
        learned.hit_rate,
        learned.expected_ee,
        learned.placement,
        greedy.hit_rate,
        greedy.expected_ee
    );
    let summary = json!({
        "command": "train-cache",
        "seed": exp.train.seed,
        "episodes": run.logs.len(),
        "final_window": FINAL_WINDOW,
        "final_mean_reward": final_mean(&run.logs, FINAL_WINDOW),
        "final_hit_rate": final_hit(&run.logs),
        "learned": learned,
        "greedy": greedy,
        "violations": run.trainer.violations(),
        "config_hash": exp.network.hash_hex(),
        "elapsed_secs": start.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("summary.json"), &summary)
}

pub fn oracle_compare(exp: &ExperimentConfig, dir: &Path) -> Result<()> {
    let v = validated(exp)?;
    let start = Instant::now();
    let run = run_cache(exp, &v, None, dir)?;
    let env = run.trainer.env();
    let model = &run.model;
    let oracle = exhaustive_cache_oracle(
        |p| model.expected_reward(p),
        v.library_size,
        &facility_cache_capacities(&v),
        exp.train.exec,
    )?;
    oracle.write_csv(fs::File::create(dir.join("oracle.csv"))?)?;
    let best = PlacementReport::of(env, model, &oracle.best);
    let greedy = PlacementReport::of(env, model, &greedy_placement(&v, env));
    let learned = PlacementReport::learned(&run.score);
    println!(
        "learned  hit {:.4}  ee {:.6}  [{}]",
        learned.hit_rate, learned.expected_ee, learned.placement
    );
    println!(
        "oracle   hit {:.4}  ee {:.6}  [{}]",
        best.hit_rate, best.expected_ee, best.placement
    );
    println!(
        "greedy   hit {:.4}  ee {:.6}  [{}]",
        greedy.hit_rate, greedy.expected_ee, greedy.placement
    );
    println!(
        "gap      hit {:.4}  ee {:.6}",
        best.hit_rate - learned.hit_rate,
        best.expected_ee - learned.expected_ee
    );
    let summary = json!({
        "command": "oracle-compare",
        "seed": exp.train.seed,
        "episodes": run.logs.len(),
        "placements": oracle.table.len(),
        "hit_gap": best.hit_rate - learned.hit_rate,
        "ee_gap": best.expected_ee - learned.expected_ee,
        "learned": learned,
        "oracle": best,
        "greedy": greedy,
        "violations": run.trainer.violations(),
        "config_hash": exp.network.hash_hex(),
        "elapsed_secs": start.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("summary.json"), &summary)
}

pub struct EvalRequest {
    pub stage: Stage,
    pub policy: EvalPolicy,
    pub checkpoint: Option<PathBuf>,
    pub algorithm: Algorithm,
    pub allocation: Option<PathBuf>,
    pub episodes: usize,
}

impl EvalRequest {
    fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .context("--policy checkpoint needs --checkpoint <dir>")
    }
}

/// Evaluates `policy` one episode at a time, writing a metrics row each.
fn eval_rows<E: MultiAgentEnv>(
    env: &mut E,
    episodes: usize,
    seed: u64,
    sink: &mut FileSink,
    mut policy: impl FnMut(&[Vec<f64>], &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>>,
) -> Result<(f64, f64, usize)> {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut ee, mut hit, mut violations) = (0.0, 0.0, 0);
    for episode in 1..=episodes {
        let s = evaluate(env, 1, rng.random(), &mut policy)?;
        sink.write(&EpisodeLog {
            episode,
            mean_reward: s.mean_ee,
            hit_rate: s.mean_hit_rate,
            ..EpisodeLog::default()
        })?;
        ee += s.mean_ee;
        hit += s.mean_hit_rate;
        violations += s.violations;
    }
    let n = episodes.max(1) as f64;
    Ok((ee / n, hit / n, violations))
}

fn greedy_actions_of<E: MultiAgentEnv>(t: &Trainer<E>, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    t.greedy_actions(obs)
        .expect("observation shape fixed by the environment")
}

pub fn eval(exp: &ExperimentConfig, req: &EvalRequest, dir: &Path) -> Result<()> {
    let v = validated(exp)?;
    let steps = exp.train.steps_per_episode;
    let seed = eval_seed(exp.train.seed);
    let mut sink = metrics_sink(&dir.join("metrics.csv"))?;
    let n = req.episodes;
    let (ee, hit, violations) = match (req.stage, req.policy) {
        (Stage::Resource, EvalPolicy::Random) => {
            let env = resource_env(&v, steps)?;
            eval_rows(&mut env.clone(), n, seed, &mut sink, |_, rng| {
                random_policy(&env, rng)
            })?
        }
        (Stage::Resource, EvalPolicy::Checkpoint) => {
            let env = resource_env(&v, steps)?;
            match req.algorithm {
                Algorithm::Maddpg => {
                    let mut t =
                        Trainer::<ResourceEnv>::new(env.clone(), exp.train.clone(), Role::User)?;
                    t.load_checkpoint(req.checkpoint()?)?;
                    eval_rows(&mut env.clone(), n, seed, &mut sink, |o, _| {
                        greedy_actions_of(&t, o)
                    })?
                }
                Algorithm::Ddpg => {
                    let mut t = ddpg_single(env.clone(), exp.train.clone())?;
                    t.load_checkpoint(req.checkpoint()?)?;
                    let mut central = CentralizedEnv::new(env);
                    eval_rows(&mut central, n, seed, &mut sink, |o, _| {
                        greedy_actions_of(&t, o)
                    })?
                }
            }
        }
        (Stage::Resource, EvalPolicy::Greedy) => {
            bail!("the greedy policy only exists for the cache stage")
        }
        (Stage::Cache, policy) => {
            let alloc = frozen_allocation(exp, &v, req.allocation.as_deref())?;
            let env = cache_env(&v, alloc, steps)?;
            match policy {
                EvalPolicy::Random => eval_rows(&mut env.clone(), n, seed, &mut sink, |_, rng| {
                    random_policy(&env, rng)
                })?,
                EvalPolicy::Greedy => {
                    let actions: Vec<Vec<f64>> = greedy_placement(&v, &env)
                        .iter()
                        .map(|files| {
                            (1..=v.library_size)
                                .map(|f| f64::from(u8::from(files.contains(&f))))
                                .collect()
                        })
                        .collect();
                    eval_rows(&mut env.clone(), n, seed, &mut sink, |_, _| actions.clone())?
                }
                EvalPolicy::Checkpoint => {
                    let mut t = Trainer::new(env.clone(), exp.train.clone(), Role::Facility)?;
                    t.load_checkpoint(req.checkpoint()?)?;
                    eval_rows(&mut env.clone(), n, seed, &mut sink, |o, _| {
                        greedy_actions_of(&t, o)
                    })?
                }
            }
        }
    };
    println!("mean reward {ee:.4}, hit rate {hit:.4} over {n} episodes, {violations} violations");
    let summary = json!({
        "command": "eval",
        "stage": format!("{:?}", req.stage).to_lowercase(),
        "policy": format!("{:?}", req.policy).to_lowercase(),
        "seed": exp.train.seed,
        "episodes": n,
        "mean_reward": ee,
        "hit_rate": hit,
        "violations": violations,
        "config_hash": exp.network.hash_hex(),
    });
    write_json(&dir.join("summary.json"), &summary)
}

pub fn gradcheck(exp: &ExperimentConfig, tolerance: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (name, sizes, r) in checks::gradcheck_shapes(&exp.network, &exp.train)? {
        println!(
            "{name:<24} {:<22} checked {:>6} skipped {:>3} max rel error {:.3e}",
            format!("{sizes:?}"),
            r.checked,
            r.skipped,
            r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
    }
    if worst > tolerance {
        bail!("gradient check failed: max relative error {worst:.3e} exceeds {tolerance:.1e}");
    }
    println!("gradient check passed (max relative error {worst:.3e} <= {tolerance:.1e})");
    Ok(())
}

fn report(c: &CheckOutcome) -> bool {
    let verdict = if c.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict} {:<22} {:.3e} (bound {:.1e})",
        c.name, c.value, c.bound
    );
    c.passed()
}

pub fn selfcheck(exp: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let cfg = &exp.network;
    let mut outcomes = vec![
        checks::zipf_normalization(),
        checks::boresight_gain(cfg),
        checks::bessel_recurrence(),
        checks::doppler_invariance(cfg),
        checks::adam_first_step(exp.train.actor_lr),
        checks::replay_fifo(),
    ];
    let worst = checks::gradcheck_shapes(cfg, &exp.train)?
        .iter()
        .map(|(_, _, r)| r.max_rel_error)
        .fold(0.0, f64::max);
    outcomes.push(CheckOutcome {
        name: "gradcheck".into(),
        value: worst,
        bound: 1e-4,
    });
    outcomes.push(checks::overfit_one_batch(cfg, &exp.train, 200)?);
    let short = TrainConfig {
        episodes: 3,
        steps_per_episode: 20,
        ..exp.train.clone()
    };
    outcomes.push(checks::determinism(&NetworkConfig::tiny_cache(), &short)?);
    let failed = outcomes.iter().map(report).filter(|ok| !ok).count();
    println!(
        "{} checks in {:.1}s",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        bail!("{failed} self-check(s) failed");
    }
    Ok(())
}
