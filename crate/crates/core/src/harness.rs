//! Monte Carlo experiment drivers, statistical privacy tests and report emission.
//!
//! Every trial derives its own seed from the master seed and its index, runs
//! independently (in parallel when a rayon pool is available) and returns a
//! small record. Records are collected in trial order and aggregated
//! sequentially, so reports do not depend on the thread count.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{eavesdropper_cancel_group, eavesdropper_cancel_own, transmit_mac, ChannelRealization, Role};
use crate::error::{invalid, Error, Result};
use crate::field::{compute_answer, gen_query_pair, MessageStore};
use crate::lattice::{center, coset_second_moment, sampler_support, NestedLatticePair};
use crate::protocol::{
    answer_block, plan_round, run_retrieval_observed, simulate_block, Group, Mode, PartitionPlan, PartitionSource,
    RoundPlan,
};
use crate::rate::{
    check_design_conditions, optimize_partition_bruteforce, optimize_partition_greedy_from, rate_theorem3,
    sigma_tilde_w, GoodnessReport, SECRECY_GOOD_THRESHOLD,
};
use crate::seed::{self, label};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959963984540054;
/// Largest p^k the MAP adversary will enumerate.
pub const MAP_MAX_COSETS: usize = 10_000;
/// Largest M for the query contingency tables (2^M cells).
pub const QUERY_TEST_MAX_MESSAGES: usize = 16;
/// The sweep switches from brute force to greedy above this many servers.
pub const SWEEP_BRUTE_FORCE_MAX: usize = 12;
/// Statistical tests pass when p > this.
pub const P_VALUE_THRESHOLD: f64 = 0.01;

/// Environment variable holding the worker count (0 or unset = all cores).
pub const THREADS_ENV: &str = "PIR_SIM_THREADS";

/// What the colluding server may subtract from its eavesdropper observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKnowledge {
    /// Only its own transmitted signal.
    OwnSignal,
    /// The whole codeword of its group, as every member draws the same dither.
    #[default]
    FullGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(alias = "N")]
    pub servers: usize,
    #[serde(alias = "M")]
    pub messages: usize,
    #[serde(alias = "L")]
    pub message_len: usize,
    pub p: u32,
    pub k: usize,
    pub n: usize,
    pub gamma: f64,
    #[serde(alias = "P")]
    pub power: f64,
    pub sigma_y2: f64,
    pub sigma_w2: f64,
    pub mode: Mode,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub adversary_knowledge: AdversaryKnowledge,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_code: Option<Vec<Vec<u32>>>,
    /// Defaults to random halves in non-fading mode and the optimizer in fading mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSource>,
}

impl ScenarioConfig {
    /// Desk-scale decoding configuration: n=8, p=5, k=1, pγ = √P = 1.
    pub fn desk() -> Self {
        Self {
            servers: 2,
            messages: 4,
            message_len: 1,
            p: 5,
            k: 1,
            n: 8,
            gamma: 0.2,
            power: 1.0,
            sigma_y2: 0.0025,
            sigma_w2: 1.0,
            mode: Mode::NonFading,
            trials: 1000,
            master_seed: 0,
            adversary_knowledge: AdversaryKnowledge::FullGroup,
            g_code: None,
            partition: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Check every parameter and build the lattice pair.
    pub fn validate(&self) -> Result<NestedLatticePair> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.servers < 2 {
            return Err(invalid(format!("need at least 2 servers, got {}", self.servers)));
        }
        if self.messages == 0 || self.message_len == 0 {
            return Err(invalid("messages and message_len must be at least 1"));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(invalid(format!("power must be positive, got {}", self.power)));
        }
        for (name, v) in [("sigma_y2", self.sigma_y2), ("sigma_w2", self.sigma_w2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        NestedLatticePair::new(self.n, self.p, self.k, self.gamma, self.g_code.clone())
    }

    pub fn partition_source(&self) -> PartitionSource {
        self.partition.clone().unwrap_or(match self.mode {
            Mode::NonFading => PartitionSource::Random,
            Mode::Fading => PartitionSource::Optimized,
        })
    }

    /// Number of servers per group in non-fading mode, ⌊N/2⌋.
    pub fn half(&self) -> usize {
        self.servers / 2
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// A point estimate with its 95% interval and the number of trials behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: u64,
}

impl Estimate {
    /// Wilson score interval for a binomial proportion.
    pub fn proportion(name: &str, successes: u64, trials: u64) -> Self {
        let (lo, hi) = wilson_interval(successes, trials);
        Self {
            name: name.into(),
            value: successes as f64 / trials as f64,
            ci_low: lo,
            ci_high: hi,
            trials,
        }
    }

    /// Sample mean with a normal-approximation interval.
    pub fn mean(name: &str, samples: &[f64]) -> Self {
        let (m, half) = mean_ci(samples);
        Self {
            name: name.into(),
            value: m,
            ci_low: m - half,
            ci_high: m + half,
            trials: samples.len() as u64,
        }
    }

    fn shifted(mut self, name: &str, by: f64) -> Self {
        self.name = name.into();
        self.value += by;
        self.ci_low += by;
        self.ci_high += by;
        self
    }
}

pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let ph = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let mid = (ph + z2 / (2.0 * n)) / denom;
    let half = Z_95 / denom * (ph * (1.0 - ph) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (mid - half).max(0.0) };
    let hi = if successes == trials {
        1.0
    } else {
        (mid + half).min(1.0)
    };
    (lo, hi)
}

/// Mean and half-width Z_95·s/√n, summed in slice order.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z_95 * (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Less,
    Greater,
    Equal,
    /// |measured/target − 1| ≤ tolerance.
    RelativeWithin,
}

/// Pass/fail of one measured quantity against a declared tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub target: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn less(name: &str, measured: f64, target: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: Relation::Less,
            target,
            tolerance: None,
            pass: measured < target,
        }
    }

    pub fn greater(name: &str, measured: f64, target: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: Relation::Greater,
            target,
            tolerance: None,
            pass: measured > target,
        }
    }

    pub fn equal(name: &str, measured: f64, target: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: Relation::Equal,
            target,
            tolerance: None,
            pass: measured == target,
        }
    }

    pub fn relative(name: &str, measured: f64, target: f64, tolerance: f64) -> Self {
        let pass = (measured / target - 1.0).abs() <= tolerance;
        Self {
            name: name.into(),
            measured,
            relation: Relation::RelativeWithin,
            target,
            tolerance: Some(tolerance),
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    fn new(experiment: &str, config: serde_json::Value) -> Self {
        Self {
            experiment: experiment.into(),
            config,
            estimates: vec![],
            checks: vec![],
            notes: vec![],
        }
    }

    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Thread pool sized from `PIR_SIM_THREADS` (0 or unset = automatic).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("{THREADS_ENV} must be an integer, got {v:?}")))?,
        Err(_) => 0,
    };
    build_pool(threads)
}

pub fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("cannot build thread pool: {e}")))
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    seed::derive(master_seed, label::TRIAL, trial as u64)
}

/// Store, desired index and channel of one trial.
struct TrialSetup {
    store: MessageStore,
    index: usize,
    channel: ChannelRealization,
}

fn trial_setup(cfg: &ScenarioConfig, ts: u64) -> Result<TrialSetup> {
    let store = MessageStore::random(cfg.p, cfg.messages, cfg.message_len, ts)?;
    let index = 1 + seed::rng(seed::derive(ts, label::INDEX, 0)).random_range(0..cfg.messages);
    let channel = match cfg.mode {
        Mode::NonFading => ChannelRealization::non_fading(cfg.servers, cfg.sigma_y2, cfg.sigma_w2)?,
        Mode::Fading => {
            let mut rng = seed::rng(seed::derive(ts, label::CHANNEL, 0));
            ChannelRealization::draw(cfg.servers, cfg.sigma_y2, cfg.sigma_w2, &mut rng)?
        }
    };
    Ok(TrialSetup { store, index, channel })
}

/// Query, partition and both groups' answers for a single-block trial.
struct BlockTrial<'a> {
    setup: TrialSetup,
    plan: RoundPlan<'a>,
    answers: [crate::field::AnswerVector; 2],
}

fn block_trial<'a>(cfg: &ScenarioConfig, pair: &'a NestedLatticePair, ts: u64) -> Result<BlockTrial<'a>> {
    let setup = trial_setup(cfg, ts)?;
    let query = gen_query_pair(
        setup.index,
        cfg.messages,
        &mut seed::rng(seed::derive(ts, label::QUERY, 0)),
    )?;
    let mut prng = seed::rng(seed::derive(ts, label::PARTITION, 0));
    let plan = plan_round(
        &setup.channel,
        pair,
        cfg.power,
        cfg.mode,
        &cfg.partition_source(),
        [query.seed1, query.seed2],
        &mut prng,
    )?;
    let a1 = compute_answer(&query.q1, &setup.store)?;
    let a2 = compute_answer(&query.q2, &setup.store)?;
    Ok(BlockTrial {
        setup,
        plan,
        answers: [a1, a2],
    })
}

/// Design-condition evaluation of a non-fading configuration.
pub fn design_report(cfg: &ScenarioConfig, pair: &NestedLatticePair) -> GoodnessReport {
    let half = cfg.half() as f64;
    let eff = cfg.sigma_y2 / (half * half);
    let (_, st2) = crate::rate::alpha_opt(cfg.power, eff);
    let sw = sigma_tilde_w(cfg.power, cfg.sigma_w2, half);
    check_design_conditions(pair, st2.sqrt(), &[sw], cfg.power, None)
}

fn design_notes(report: &mut ExperimentReport, g: &GoodnessReport) {
    report.notes.push(format!(
        "design conditions (non-fading equivalents): vnr_fine={:.6} awgn_good={}, vnr_coarse={:?} secrecy_good={}, power_cond1={}",
        g.vnr_fine, g.awgn_good, g.vnr_coarse, g.secrecy_good, g.power_cond1
    ));
}

struct ErrorTrial {
    symbol_errors: u64,
    /// Mean over the trial of e²/σ̃², e = (α/h̃₁)·y − (x₁ + x₂).
    noise_ratio: Option<f64>,
    noise_var: f64,
    sigma_tilde2: f64,
}

/// Message and symbol error rates of `trials` independent retrievals.
pub fn estimate_error_prob(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let pair = cfg.validate()?;
    let source = cfg.partition_source();
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let ts = trial_seed(cfg.master_seed, t);
            let s = trial_setup(cfg, ts)?;
            let (mut sq, mut count, mut st2) = (0.0, 0usize, 0.0);
            let tr = run_retrieval_observed(
                &s.store,
                s.index,
                &s.channel,
                &pair,
                cfg.power,
                cfg.mode,
                &source,
                ts,
                |plan, out| {
                    let c = plan.receiver_scale();
                    for j in 0..pair.n() {
                        let e = c * out.y.samples[j] - (out.x1.x[j] + out.x2.x[j]);
                        sq += e * e;
                    }
                    count += pair.n();
                    st2 = plan.sigma_tilde2;
                },
            )?;
            let noise_var = sq / count as f64;
            Ok(ErrorTrial {
                symbol_errors: tr.result.symbol_errors as u64,
                noise_ratio: (st2 > 0.0).then(|| noise_var / st2),
                noise_var,
                sigma_tilde2: st2,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let trials = cfg.trials as u64;
    let symbols = trials * cfg.message_len as u64;
    let sym_err: u64 = outcomes.iter().map(|o| o.symbol_errors).sum();
    let msg_err = outcomes.iter().filter(|o| o.symbol_errors > 0).count() as u64;
    let mut report = ExperimentReport::new("error_probability", cfg.echo());
    report
        .estimates
        .push(Estimate::proportion("message_error_rate", msg_err, trials));
    report
        .estimates
        .push(Estimate::proportion("symbol_error_rate", sym_err, symbols));
    let vars: Vec<f64> = outcomes.iter().map(|o| o.noise_var).collect();
    report.estimates.push(Estimate::mean("equivalent_noise_var", &vars));
    let st2: Vec<f64> = outcomes.iter().map(|o| o.sigma_tilde2).collect();
    report.estimates.push(Estimate::mean("sigma_tilde2_opt", &st2));
    let ser = sym_err as f64 / symbols as f64;
    report.checks.push(Check::less("symbol_error_rate", ser, 1e-3));
    let ratios: Vec<f64> = outcomes.iter().filter_map(|o| o.noise_ratio).collect();
    if ratios.len() == outcomes.len() {
        let est = Estimate::mean("equivalent_noise_ratio", &ratios);
        report
            .checks
            .push(Check::relative("equivalent_noise_ratio", est.value, 1.0, 0.03));
        report.estimates.push(est);
    }
    if cfg.mode == Mode::NonFading {
        let g = design_report(cfg, &pair);
        let sigma = crate::rate::alpha_opt(cfg.power, cfg.sigma_y2 / (cfg.half() * cfg.half()) as f64)
            .1
            .sqrt();
        report.checks.push(Check::greater(
            "half_coarse_step_over_sigma_tilde",
            pair.coarse_step() / 2.0 / sigma,
            6.0,
        ));
        design_notes(&mut report, &g);
    }
    Ok(report)
}

/// Per-residue log-likelihood table for one coordinate: entry r is
/// log P(z_j | u-symbol r) under x = γ·center(r) + pγ·Z drawn by the coset
/// sampler and z_j = gain·x + N(0, σ_w²).
fn coordinate_log_likelihoods(pair: &NestedLatticePair, zj: f64, gain: f64, power: f64, sigma_w: f64) -> Vec<f64> {
    let step = pair.coarse_step();
    let sigma = power.sqrt();
    (0..pair.p())
        .map(|r| {
            let lambda = pair.gamma() * center(r, pair.p()) as f64;
            let (lo, hi) = sampler_support(lambda, step, sigma);
            let mut prior = Vec::with_capacity((hi - lo + 1) as usize);
            let mut joint = Vec::with_capacity(prior.capacity());
            for z in lo..=hi {
                let x = lambda + step * z as f64;
                let lp = -x * x / (2.0 * power);
                let d = zj - gain * x;
                prior.push(lp);
                joint.push(lp - d * d / (2.0 * sigma_w * sigma_w));
            }
            log_sum_exp(&joint) - log_sum_exp(&prior)
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact MAP estimate of the coset index of x from z = gain·x + N(0, σ_w²)
/// with x drawn by the coset sampler at σ = √P and a uniform coset prior.
/// Ties go to the lowest index.
pub fn map_coset_decode(pair: &NestedLatticePair, z: &[f64], gain: f64, power: f64, sigma_w: f64) -> Result<usize> {
    if pair.coset_count() > MAP_MAX_COSETS {
        return Err(Error::SizeLimit(format!(
            "p^k = {} exceeds {MAP_MAX_COSETS}",
            pair.coset_count()
        )));
    }
    if z.len() != pair.n() {
        return Err(invalid("observation length differs from n"));
    }
    if gain == 0.0 {
        return Ok(0);
    }
    if sigma_w == 0.0 {
        let x: Vec<f64> = z.iter().map(|v| v / gain).collect();
        let u = pair.decode_coset(&pair.mod_coarse(&pair.quantize_fine(&x)))?;
        return Ok(pair.coset_index(&u));
    }
    let table: Vec<Vec<f64>> = z
        .iter()
        .map(|&zj| coordinate_log_likelihoods(pair, zj, gain, power, sigma_w))
        .collect();
    let mut best = (f64::NEG_INFINITY, 0);
    for idx in 0..pair.coset_count() {
        let cw = pair.codeword(idx);
        let score: f64 = table.iter().zip(cw).map(|(row, &r)| row[r as usize]).sum();
        if score > best.0 {
            best = (score, idx);
        }
    }
    Ok(best.1)
}

/// Which group the colluding server belongs to: the one whose opponent
/// reaches the eavesdropper with the larger effective amplitude.
fn adversary_group(plan: &PartitionPlan, g: &[f64]) -> (Group, f64) {
    let gain = |grp: Group| plan.members(grp).iter().map(|&k| g[k] * plan.tx_factor(k)).sum::<f64>();
    let (to_two, to_one) = (gain(Group::Two), gain(Group::One));
    if to_two.abs() >= to_one.abs() {
        (Group::One, to_two)
    } else {
        (Group::Two, to_one)
    }
}

/// MAP success of a colluding server at recovering the other group's coset,
/// reported as advantage over the chance level 1/p^k.
pub fn estimate_eavesdropper_advantage(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let pair = cfg.validate()?;
    if pair.coset_count() > MAP_MAX_COSETS {
        return Err(Error::SizeLimit(format!(
            "p^k = {} exceeds {MAP_MAX_COSETS}",
            pair.coset_count()
        )));
    }
    let sigma_w = cfg.sigma_w2.sqrt();
    let hits = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let ts = trial_seed(cfg.master_seed, t);
            let bt = block_trial(cfg, &pair, ts)?;
            let mut noise = seed::rng(seed::derive(ts, label::NOISE_USER, 0));
            let out = simulate_block(
                &bt.plan,
                &bt.setup.channel,
                &bt.answers[0],
                &bt.answers[1],
                0,
                &mut noise,
            )?;
            let g = &bt.setup.channel.g;
            let mut eve_noise = seed::rng(seed::derive(ts, label::NOISE_EVE, 0));
            let w = transmit_mac(&out.signals, g, cfg.sigma_w2, Role::Eavesdropper, &mut eve_noise)?;
            let (own, gain) = adversary_group(&bt.plan.partition, g);
            let members = bt.plan.partition.members(own);
            let z = match cfg.adversary_knowledge {
                AdversaryKnowledge::FullGroup => {
                    let sig: Vec<Vec<f64>> = members.iter().map(|&k| out.signals[k].clone()).collect();
                    let gains: Vec<f64> = members.iter().map(|&k| g[k]).collect();
                    eavesdropper_cancel_group(&w, &sig, &gains)?
                }
                AdversaryKnowledge::OwnSignal => {
                    let me = members[0];
                    eavesdropper_cancel_own(&w, &out.signals[me], g[me])?
                }
            };
            let target = own.other();
            let truth = pair.coset_index(&answer_block(
                &bt.answers[match target {
                    Group::One => 0,
                    Group::Two => 1,
                }],
                0,
                pair.k(),
            ));
            let guess = map_coset_decode(&pair, &z.samples, gain, cfg.power, sigma_w)?;
            Ok(guess == truth)
        })
        .collect::<Result<Vec<bool>>>()?;

    let trials = cfg.trials as u64;
    let successes = hits.iter().filter(|&&h| h).count() as u64;
    let chance = 1.0 / pair.coset_count() as f64;
    let success = Estimate::proportion("map_success_rate", successes, trials);
    let advantage = success.clone().shifted("advantage", -chance);
    let mut report = ExperimentReport::new("eavesdropper_advantage", cfg.echo());
    report.checks.push(Check::less("advantage", advantage.value, 0.05));
    report.estimates.push(success);
    report.estimates.push(advantage);
    report.notes.push(format!("chance level 1/p^k = {chance}"));
    report.notes.push(
        "MAP success advantage is an operational surrogate for the leakage; it is weaker than a mutual-information bound".into(),
    );
    if cfg.mode == Mode::NonFading {
        let g = design_report(cfg, &pair);
        report
            .checks
            .push(Check::less("vnr_coarse", g.vnr_coarse[0], SECRECY_GOOD_THRESHOLD));
        design_notes(&mut report, &g);
    }
    Ok(report)
}

#[derive(Default)]
struct QueryCounts {
    q1: Vec<u64>,
    q2: Vec<u64>,
    q2_first_neg: u64,
    support_violations: u64,
}

fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    chi_square_sf(stat, (counts.len() - 1) as f64)
}

fn chi_square_sf(stat: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive df").sf(stat)
}

/// Homogeneity of several count vectors over the same cells.
fn chi_square_homogeneity(rows: &[&[u64]]) -> f64 {
    let cells = rows[0].len();
    let col: Vec<u64> = (0..cells).map(|c| rows.iter().map(|r| r[c]).sum()).collect();
    let row: Vec<u64> = rows.iter().map(|r| r.iter().sum()).collect();
    let total: u64 = row.iter().sum();
    let used = col.iter().filter(|&&c| c > 0).count();
    let mut stat = 0.0;
    for (r, rt) in rows.iter().zip(&row) {
        for c in 0..cells {
            if col[c] == 0 {
                continue;
            }
            let e = *rt as f64 * col[c] as f64 / total as f64;
            stat += (r[c] as f64 - e).powi(2) / e;
        }
    }
    chi_square_sf(stat, ((rows.len() - 1) * (used.max(1) - 1)) as f64)
}

/// Distribution tests of the two queries: per desired index, goodness of fit
/// of Q1 to uniform on {0,1}^M and of Q2 to uniform on {0,−1}^M, plus
/// homogeneity of each across indices.
pub fn query_privacy_test(messages: usize, trials: usize, master_seed: u64) -> Result<ExperimentReport> {
    if messages == 0 || messages > QUERY_TEST_MAX_MESSAGES {
        return Err(Error::SizeLimit(format!(
            "M must be in 1..={QUERY_TEST_MAX_MESSAGES}, got {messages}"
        )));
    }
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let cells = 1usize << messages;
    let per_index = (1..=messages)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(master_seed, label::INDEX, i as u64));
            let mut c = QueryCounts {
                q1: vec![0; cells],
                q2: vec![0; cells],
                ..Default::default()
            };
            for _ in 0..trials {
                let q = gen_query_pair(i, messages, &mut rng)?;
                let (mut m1, mut m2) = (0usize, 0usize);
                for j in 0..messages {
                    match q.q1[j] {
                        1 => m1 |= 1 << j,
                        0 => {}
                        _ => c.support_violations += 1,
                    }
                    match q.q2[j] {
                        -1 => m2 |= 1 << j,
                        0 => {}
                        _ => c.support_violations += 1,
                    }
                }
                c.q1[m1] += 1;
                c.q2[m2] += 1;
                c.q2_first_neg += (m2 & 1) as u64;
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let config = serde_json::json!({ "messages": messages, "trials": trials, "master_seed": master_seed });
    let mut report = ExperimentReport::new("query_privacy", config);
    for (idx, c) in per_index.iter().enumerate() {
        let i = idx + 1;
        report.checks.push(Check::greater(
            &format!("q1_uniform_p_value_i{i}"),
            chi_square_uniform(&c.q1),
            P_VALUE_THRESHOLD,
        ));
        report.checks.push(Check::greater(
            &format!("q2_uniform_p_value_i{i}"),
            chi_square_uniform(&c.q2),
            P_VALUE_THRESHOLD,
        ));
    }
    if messages > 1 {
        let q1: Vec<&[u64]> = per_index.iter().map(|c| c.q1.as_slice()).collect();
        let q2: Vec<&[u64]> = per_index.iter().map(|c| c.q2.as_slice()).collect();
        report.checks.push(Check::greater(
            "q1_homogeneity_p_value",
            chi_square_homogeneity(&q1),
            P_VALUE_THRESHOLD,
        ));
        report.checks.push(Check::greater(
            "q2_homogeneity_p_value",
            chi_square_homogeneity(&q2),
            P_VALUE_THRESHOLD,
        ));
    }
    let violations: u64 = per_index.iter().map(|c| c.support_violations).sum();
    report
        .checks
        .push(Check::equal("support_violations", violations as f64, 0.0));
    let total = (messages * trials) as u64;
    let neg: u64 = per_index.iter().map(|c| c.q2_first_neg).sum();
    let freq = Estimate::proportion("q2_first_coordinate_negative", neg, total);
    let sd = (0.25 / total as f64).sqrt();
    report.checks.push(Check {
        name: "q2_first_coordinate_negative".into(),
        measured: freq.value,
        relation: Relation::RelativeWithin,
        target: 0.5,
        tolerance: Some(3.0 * sd / 0.5),
        pass: (freq.value - 0.5).abs() <= 3.0 * sd,
    });
    report.estimates.push(freq);
    Ok(report)
}

struct PowerSample {
    /// Per server: (‖x_k‖²/n, P·factor², exact coset moment·factor²).
    servers: Vec<[f64; 3]>,
}

/// Empirical per-server transmit power against the power-alignment target
/// P·(sign·scale)² and the exact truncated-series moment of the sampler.
pub fn power_check(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    let pair = cfg.validate()?;
    let n = pair.n() as f64;
    let step = pair.coarse_step();
    let sigma = cfg.power.sqrt();
    let samples = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let ts = trial_seed(cfg.master_seed, t);
            let bt = block_trial(cfg, &pair, ts)?;
            let mut noise = seed::rng(seed::derive(ts, label::NOISE_USER, 0));
            let out = simulate_block(
                &bt.plan,
                &bt.setup.channel,
                &bt.answers[0],
                &bt.answers[1],
                0,
                &mut noise,
            )?;
            let exact = |x: &crate::lattice::LatticeCodeword| {
                let lambda = pair.encode_symbols(&x.coset).expect("valid coset");
                lambda
                    .0
                    .iter()
                    .map(|&l| coset_second_moment(l, step, sigma))
                    .sum::<f64>()
                    / n
            };
            let (e1, e2) = (exact(&out.x1), exact(&out.x2));
            let servers = (0..cfg.servers)
                .map(|k| {
                    let f = bt.plan.partition.tx_factor(k);
                    let emp = out.signals[k].iter().map(|v| v * v).sum::<f64>() / n;
                    let ex = match bt.plan.partition.group_of(k) {
                        Some(Group::One) => e1,
                        Some(Group::Two) => e2,
                        None => 0.0,
                    };
                    [emp, cfg.power * f * f, ex * f * f]
                })
                .collect();
            Ok(PowerSample { servers })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ExperimentReport::new("power_check", cfg.echo());
    for k in 0..cfg.servers {
        let col = |c: usize| samples.iter().map(|s| s.servers[k][c]).collect::<Vec<f64>>();
        let emp = Estimate::mean(&format!("power_server{k}"), &col(0));
        let target = col(1).iter().sum::<f64>() / samples.len() as f64;
        let exact = col(2).iter().sum::<f64>() / samples.len() as f64;
        if target > 0.0 {
            report.checks.push(Check::relative(
                &format!("power_server{k}_vs_target"),
                emp.value,
                target,
                0.05,
            ));
            report.checks.push(Check::relative(
                &format!("power_server{k}_vs_exact_moment"),
                emp.value,
                exact,
                0.05,
            ));
        } else {
            report
                .checks
                .push(Check::equal(&format!("power_server{k}_idle"), emp.value, 0.0));
        }
        report.notes.push(format!(
            "server {k}: target {target}, exact truncated-series moment {exact}"
        ));
        report.estimates.push(emp);
    }
    report
        .notes
        .push(format!("{} coordinate samples per server", cfg.trials * pair.n()));
    Ok(report)
}

/// One row of the average-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub sigma_w: f64,
    pub mean_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Plans of one channel draw for every (σ_w, N), optimized so that the
/// rate is non-decreasing in N and in σ_w for this draw.
fn sweep_draw(h: &[f64], g: &[f64], ns: &[usize], sigmas: &[f64], power: f64, sigma_y2: f64) -> Result<Vec<Vec<f64>>> {
    let mut plans: Vec<Vec<Option<PartitionPlan>>> = vec![vec![None; ns.len()]; sigmas.len()];
    let mut rates = vec![vec![0.0; ns.len()]; sigmas.len()];
    for (si, &sw) in sigmas.iter().enumerate() {
        let sw2 = sw * sw;
        for (ni, &n) in ns.iter().enumerate() {
            let (hn, gn) = (&h[..n], &g[..n]);
            let plan = if n <= SWEEP_BRUTE_FORCE_MAX {
                optimize_partition_bruteforce(hn, gn, power, sigma_y2, sw2)?
            } else {
                let mut starts: Vec<(&[usize], &[usize])> = Vec::new();
                if ni > 0 {
                    let p = plans[si][ni - 1].as_ref().expect("filled");
                    starts.push((&p.s1, &p.s2));
                }
                if si > 0 {
                    let p = plans[si - 1][ni].as_ref().expect("filled");
                    starts.push((&p.s1, &p.s2));
                }
                optimize_partition_greedy_from(hn, gn, power, sigma_y2, sw2, &starts)?
            };
            rates[si][ni] = rate_theorem3(&plan, power, sigma_y2, sw2)?.rate_nats;
            plans[si][ni] = Some(plan);
        }
    }
    Ok(rates)
}

/// Average optimized fading rate over `draws` channel realizations for each
/// (N, σ_w). The same draws are reused across all cells: draw d fixes
/// h, g ∈ R^{N_max} and N servers use the first N entries.
pub fn sweep_average_rate(
    n_range: &[usize],
    sigma_w_list: &[f64],
    power: f64,
    sigma_y2: f64,
    draws: usize,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if n_range.is_empty() || sigma_w_list.is_empty() {
        return Err(invalid("N range and sigma_w list must be non-empty"));
    }
    if let Some(&n) = n_range.iter().find(|&&n| n < 2) {
        return Err(invalid(format!("need at least 2 servers, got {n}")));
    }
    if let Some(&s) = sigma_w_list.iter().find(|&&s| !(s.is_finite() && s > 0.0)) {
        return Err(invalid(format!("sigma_w must be positive, got {s}")));
    }
    if draws == 0 {
        return Err(invalid("draws must be at least 1"));
    }
    let mut ns = n_range.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut sigmas = sigma_w_list.to_vec();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let n_max = *ns.last().expect("non-empty");

    let per_draw = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = seed::rng(seed::derive(master_seed, label::CHANNEL, d as u64));
            let ch = ChannelRealization::draw(n_max, sigma_y2, 1.0, &mut rng)?;
            sweep_draw(&ch.h, &ch.g, &ns, &sigmas, power, sigma_y2)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(n_range.len() * sigma_w_list.len());
    for &n in n_range {
        let ni = ns.binary_search(&n).expect("present");
        for &sw in sigma_w_list {
            let si = sigmas.binary_search_by(|v| v.total_cmp(&sw)).expect("present");
            let vals: Vec<f64> = per_draw.iter().map(|r| r[si][ni]).collect();
            let (m, half) = mean_ci(&vals);
            rows.push(SweepRow {
                n,
                sigma_w: sw,
                mean_rate: m,
                ci_low: m - half,
                ci_high: m + half,
            });
        }
    }
    Ok(rows)
}

/// Lexicographic comparison helper for callers sorting sweep rows.
pub fn sweep_row_order(a: &SweepRow, b: &SweepRow) -> Ordering {
    a.n.cmp(&b.n).then(a.sigma_w.total_cmp(&b.sigma_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(cfg: ScenarioConfig, trials: usize) -> ScenarioConfig {
        ScenarioConfig { trials, ..cfg }
    }

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, 0.036994, epsilon = 1e-5);
        let (lo, hi) = wilson_interval(50, 100);
        assert_relative_eq!(lo, 0.40383, epsilon = 1e-5);
        assert_relative_eq!(hi, 0.59617, epsilon = 1e-5);
    }

    #[test]
    fn mean_ci_matches_hand_computation() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(h, Z_95 * (5.0f64 / 3.0 / 4.0).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn config_json_round_trip_and_aliases() {
        let cfg = ScenarioConfig::desk();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&text).unwrap(), cfg);
        let short = r#"{"N":3,"M":2,"L":5,"p":3,"k":1,"n":4,"gamma":0.5,"P":2.0,
            "sigma_y2":0.1,"sigma_w2":1.0,"mode":"fading","trials":10,"master_seed":1,
            "adversary_knowledge":"own-signal"}"#;
        let c: ScenarioConfig = serde_json::from_str(short).unwrap();
        assert_eq!((c.servers, c.messages, c.message_len, c.power), (3, 2, 5, 2.0));
        assert_eq!(c.adversary_knowledge, AdversaryKnowledge::OwnSignal);
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"servers":2,"bogus":1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::desk().validate().is_ok());
        for bad in [
            ScenarioConfig {
                trials: 0,
                ..ScenarioConfig::desk()
            },
            ScenarioConfig {
                servers: 1,
                ..ScenarioConfig::desk()
            },
            ScenarioConfig {
                p: 4,
                ..ScenarioConfig::desk()
            },
            ScenarioConfig {
                power: 0.0,
                ..ScenarioConfig::desk()
            },
            ScenarioConfig {
                sigma_w2: -1.0,
                ..ScenarioConfig::desk()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn noiseless_error_rate_is_zero() {
        let cfg = ScenarioConfig {
            sigma_y2: 0.0,
            message_len: 3,
            ..small(ScenarioConfig::desk(), 200)
        };
        let r = estimate_error_prob(&cfg).unwrap();
        assert_eq!(r.estimate("symbol_error_rate").unwrap().value, 0.0);
        assert_eq!(r.estimate("message_error_rate").unwrap().value, 0.0);
    }

    #[test]
    fn error_report_is_thread_independent() {
        let cfg = small(
            ScenarioConfig {
                sigma_y2: 0.05,
                ..ScenarioConfig::desk()
            },
            300,
        );
        let a = build_pool(1).unwrap().install(|| estimate_error_prob(&cfg).unwrap());
        let b = build_pool(3).unwrap().install(|| estimate_error_prob(&cfg).unwrap());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn map_decoder_recovers_unmasked_coset() {
        let pair = NestedLatticePair::new(4, 3, 1, 0.5, None).unwrap();
        for idx in 0..3 {
            let lambda = pair.encode_symbols(&pair.coset_symbols(idx)).unwrap();
            let x = pair.sample_coset_gaussian(&lambda, 1.0, idx as u64).unwrap();
            let z: Vec<f64> = x.x.iter().map(|v| 1.5 * v).collect();
            assert_eq!(map_coset_decode(&pair, &z, 1.5, 1.0, 0.0).unwrap(), idx);
            assert_eq!(map_coset_decode(&pair, &z, 1.5, 1.0, 1e-3).unwrap(), idx);
        }
        assert_eq!(map_coset_decode(&pair, &[0.3; 4], 0.0, 1.0, 1.0).unwrap(), 0);
    }

    #[test]
    fn log_likelihoods_normalize_without_noise_information() {
        // With σ_w huge every residue explains z equally.
        let pair = NestedLatticePair::new(2, 5, 1, 0.2, None).unwrap();
        let row = coordinate_log_likelihoods(&pair, 0.1, 1.0, 1.0, 1e6);
        for v in &row {
            assert_relative_eq!(*v, row[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_eavesdropper_noise_gives_full_advantage() {
        let cfg = ScenarioConfig {
            sigma_w2: 0.0,
            messages: 8,
            ..small(ScenarioConfig::desk(), 400)
        };
        let r = estimate_eavesdropper_advantage(&cfg).unwrap();
        let adv = r.estimate("advantage").unwrap();
        assert!(adv.value > 0.7, "{adv:?}");
    }

    #[test]
    fn query_test_small() {
        let r = query_privacy_test(2, 2000, 5).unwrap();
        assert!(r.check("support_violations").unwrap().pass);
        assert!(r.check("q2_homogeneity_p_value").is_some());
        assert!(query_privacy_test(17, 10, 0).is_err());
        assert!(query_privacy_test(0, 10, 0).is_err());
    }

    #[test]
    fn degenerate_sampler_power_is_coset_norm() {
        let cfg = ScenarioConfig {
            power: 1e-6,
            ..small(ScenarioConfig::desk(), 50)
        };
        let r = power_check(&cfg).unwrap();
        for k in 0..2 {
            let c = r.check(&format!("power_server{k}_vs_exact_moment")).unwrap();
            assert_relative_eq!(c.measured, c.target, max_relative = 1e-12);
        }
    }

    #[test]
    fn sweep_shape_and_order() {
        let rows = sweep_average_rate(&[2, 3, 4], &[2.0, 0.5], 1.0, 1.0, 20, 3).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[0].n, rows[0].sigma_w), (2, 2.0));
        assert_eq!((rows[1].n, rows[1].sigma_w), (2, 0.5));
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,sigma_w,mean_rate,ci_low,ci_high\n"));
        assert_eq!(text.lines().count(), 7);
        assert!(sweep_average_rate(&[], &[1.0], 1.0, 1.0, 1, 0).is_err());
    }
}
