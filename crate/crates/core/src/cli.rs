//! Command-line front end. Reports go to stdout as JSON, tables as CSV.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{invalid, Error, Result};
use crate::harness::{
    estimate_eavesdropper_advantage, estimate_error_prob, power_check, query_privacy_test, sweep_average_rate,
    thread_pool, write_sweep_csv, AdversaryKnowledge, ExperimentReport, ScenarioConfig, QUERY_TEST_MAX_MESSAGES,
};
use crate::protocol::PartitionPlan;
use crate::rate::{
    optimize_partition_bruteforce, optimize_partition_greedy, rate_theorem1, rate_theorem2, rate_theorem3,
    BRUTE_FORCE_MAX_SERVERS,
};

#[derive(Debug, Parser)]
#[command(
    name = "pir-sim",
    version,
    about = "Private information retrieval over public AWGN channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate an achievable-rate formula.
    Rate(RateArgs),
    /// Choose server groups for a fading realization.
    Partition(PartitionArgs),
    /// Monte Carlo decoding error probability.
    Simulate(ScenarioArgs),
    /// Query distribution tests and the eavesdropper MAP advantage.
    PrivacyTest(PrivacyArgs),
    /// Empirical per-server transmit power.
    PowerCheck(ScenarioArgs),
    /// Average optimized fading rate versus the number of servers.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long = "P", default_value_t = 1.0)]
    power: f64,
    #[arg(long)]
    sigma_y2: f64,
    #[arg(long)]
    sigma_w2: f64,
}

#[derive(Debug, Args)]
struct RateArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    theorem: u8,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Number of servers (theorem 2).
    #[arg(long, default_value_t = 2)]
    servers: usize,
    /// User-side gains, comma separated (theorem 3).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    h: Vec<f64>,
    /// Eavesdropper-side gains, comma separated (theorem 3).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    g: Vec<f64>,
    /// 0-based servers of the first group; omit both groups to optimize.
    #[arg(long, value_delimiter = ',')]
    s1: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    s2: Vec<usize>,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    h: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    g: Vec<f64>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// ScenarioConfig JSON file; the desk configuration is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the estimates as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrivacyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Override the adversary knowledge level.
    #[arg(long, value_parser = parse_knowledge)]
    knowledge: Option<AdversaryKnowledge>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Server counts: an inclusive range "a..b" or a comma list.
    #[arg(long, value_parser = parse_servers)]
    n: ServerList,
    /// Eavesdropper noise standard deviations.
    #[arg(long, value_delimiter = ',', required = true)]
    sigma_w: Vec<f64>,
    #[arg(long = "P", default_value_t = 1.0)]
    power: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_y2: f64,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct ServerList(Vec<usize>);

fn parse_servers(s: &str) -> std::result::Result<ServerList, String> {
    let bad = |_| format!("invalid server list {s:?}");
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(bad)?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(bad)?;
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        return Ok(ServerList((a..=b).collect()));
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(bad))
        .collect::<std::result::Result<_, _>>()
        .map(ServerList)
}

fn parse_knowledge(s: &str) -> std::result::Result<AdversaryKnowledge, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected own-signal or full-group, got {s:?}"))
}

fn load_scenario(a: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &a.config {
        Some(p) => ScenarioConfig::from_json_file(p).map_err(|e| match e {
            Error::Json(j) => invalid(format!("{}: {j}", p.display())),
            other => other,
        })?,
        None => ScenarioConfig::desk(),
    };
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn write_estimates_csv(reports: &[&ExperimentReport], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wtr.write_record(["experiment", "name", "value", "ci_low", "ci_high", "trials"])?;
    for r in reports {
        for e in &r.estimates {
            wtr.write_record([
                r.experiment.clone(),
                e.name.clone(),
                e.value.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
                e.trials.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn plan_json(plan: &PartitionPlan, noise: &NoiseArgs) -> Result<serde_json::Value> {
    let r = rate_theorem3(plan, noise.power, noise.sigma_y2, noise.sigma_w2)?;
    Ok(json!({ "plan": plan, "rate_nats": r.rate_nats, "rate_bits": r.rate_bits() }))
}

fn run_rate(a: &RateArgs) -> Result<serde_json::Value> {
    let n = &a.noise;
    let mut out = serde_json::Map::new();
    out.insert("theorem".into(), json!(a.theorem));
    let report = match a.theorem {
        1 => rate_theorem1(n.power, n.sigma_y2, n.sigma_w2)?,
        2 => {
            out.insert("servers".into(), json!(a.servers));
            rate_theorem2(a.servers, n.power, n.sigma_y2, n.sigma_w2)?
        }
        _ => {
            if a.h.len() != a.g.len() || a.h.len() < 2 {
                return Err(invalid("theorem 3 needs --h and --g of equal length ≥ 2"));
            }
            let plan = if a.s1.is_empty() && a.s2.is_empty() {
                optimize(&a.h, &a.g, n)?
            } else {
                PartitionPlan::new(a.s1.clone(), a.s2.clone(), &a.h, &a.g)?
            };
            let r = rate_theorem3(&plan, n.power, n.sigma_y2, n.sigma_w2)?;
            out.insert("partition".into(), serde_json::to_value(&plan)?);
            r
        }
    };
    out.insert("rate_bits".into(), json!(report.rate_bits()));
    out.insert("report".into(), serde_json::to_value(&report)?);
    Ok(serde_json::Value::Object(out))
}

fn optimize(h: &[f64], g: &[f64], n: &NoiseArgs) -> Result<PartitionPlan> {
    if h.len() <= BRUTE_FORCE_MAX_SERVERS {
        optimize_partition_bruteforce(h, g, n.power, n.sigma_y2, n.sigma_w2)
    } else {
        optimize_partition_greedy(h, g, n.power, n.sigma_y2, n.sigma_w2)
    }
}

fn run_partition(a: &PartitionArgs) -> Result<serde_json::Value> {
    let n = &a.noise;
    let greedy = optimize_partition_greedy(&a.h, &a.g, n.power, n.sigma_y2, n.sigma_w2)?;
    let brute = if a.h.len() <= BRUTE_FORCE_MAX_SERVERS {
        Some(optimize_partition_bruteforce(
            &a.h, &a.g, n.power, n.sigma_y2, n.sigma_w2,
        )?)
    } else {
        None
    };
    let chosen = brute.as_ref().unwrap_or(&greedy);
    Ok(json!({
        "chosen": plan_json(chosen, n)?,
        "greedy": plan_json(&greedy, n)?,
        "brute_force": brute.as_ref().map(|b| plan_json(b, n)).transpose()?,
    }))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, v)?;
    writeln!(lock)?;
    Ok(())
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Rate(a) => print_json(&run_rate(a)?),
        Command::Partition(a) => print_json(&run_partition(a)?),
        Command::Simulate(a) => {
            let report = estimate_error_prob(&load_scenario(a)?)?;
            if let Some(p) = &a.out {
                write_estimates_csv(&[&report], p)?;
            }
            print_json(&report)
        }
        Command::PowerCheck(a) => {
            let report = power_check(&load_scenario(a)?)?;
            if let Some(p) = &a.out {
                write_estimates_csv(&[&report], p)?;
            }
            print_json(&report)
        }
        Command::PrivacyTest(a) => {
            let mut cfg = load_scenario(&a.scenario)?;
            if let Some(k) = a.knowledge {
                cfg.adversary_knowledge = k;
            }
            let mut reports = Vec::new();
            if cfg.messages <= QUERY_TEST_MAX_MESSAGES {
                cfg.validate()?;
                reports.push(query_privacy_test(cfg.messages, cfg.trials, cfg.master_seed)?);
            }
            reports.push(estimate_eavesdropper_advantage(&cfg)?);
            if let Some(p) = &a.scenario.out {
                write_estimates_csv(&reports.iter().collect::<Vec<_>>(), p)?;
            }
            print_json(&reports)
        }
        Command::Sweep(a) => {
            let rows = sweep_average_rate(&a.n.0, &a.sigma_w, a.power, a.sigma_y2, a.draws, a.seed)?;
            match &a.out {
                Some(p) => write_sweep_csv(&rows, BufWriter::new(File::create(p)?)),
                None => write_sweep_csv(&rows, io::stdout().lock()),
            }
        }
    }
}

/// Exit code for a failed run: 1 for invalid input, 2 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Csv(_) => 2,
        _ => 1,
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let start = Instant::now();
    let result = thread_pool().and_then(|pool| pool.install(|| execute(&cli.command)));
    match result {
        Ok(()) => {
            eprintln!("runtime: {:.3}s", start.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
