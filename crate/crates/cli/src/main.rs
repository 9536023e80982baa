//! `sfcm` command line: generate traces, run scheduling policies over a
//! horizon, and project stored Pareto archives for plotting.
//!
//! Exit codes: 0 success, 1 usage, 2 config/input, 3 capacity.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::AppConfig;
use sfcm_core::cluster::plan_to_json;
use sfcm_core::harness::{project_front, Axis};
use sfcm_core::optimizer::weighted_sum;
use sfcm_core::workload::{generate_trace, ingest_trace, write_trace_csv};
use sfcm_core::{EnvSchedule, ObjectiveVector, Policy, RunSettings, Trace};

#[derive(Parser)]
#[command(name = "sfcm", version, about = "FaaS cluster simulator and plan optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace (functions.csv + arrivals.csv)
    Generate {
        /// JSON config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the trace seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run scheduling policies over a trace and write result CSVs
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the search seed
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding functions.csv + arrivals.csv
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated policies: score, hybrid, sfcm-slo, sfcm-carbon,
        /// sfcm-water, sfcm-balance
        #[arg(long, default_value = "score,hybrid,sfcm-balance")]
        policies: String,
        /// Limit the horizon to this many epochs
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a stored epoch archive onto two objective axes
    Pareto {
        /// Output directory of a previous run
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        epoch: usize,
        /// Two of: slo, carbon, water (comma separated)
        #[arg(long, default_value = "slo,carbon")]
        axes: String,
        #[arg(long, default_value = "sfcm-balance")]
        policy: String,
        /// Output CSV path; defaults into the run directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Config(String),
    Capacity(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Capacity(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Capacity(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out } => cmd_generate(config.as_deref(), seed, &out),
        Command::Run {
            config,
            seed,
            trace,
            policies,
            epochs,
            out,
        } => cmd_run(config.as_deref(), seed, &trace, &policies, epochs, &out),
        Command::Pareto {
            run,
            epoch,
            axes,
            policy,
            out,
        } => cmd_pareto(&run, epoch, &axes, &policy, out.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    let cfg = AppConfig::load(path).map_err(CliError::Config)?;
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn cmd_generate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.trace.seed = seed;
    }
    let trace = generate_trace(&cfg.trace).map_err(|e| CliError::Config(e.to_string()))?;
    write_trace_csv(&trace, cfg.trace.epoch_length_s, out)
        .map_err(|e| CliError::Config(e.to_string()))?;
    log::info!(
        "wrote {} functions, {} epochs, {} arrivals to {}",
        trace.specs.len(),
        trace.epochs.len(),
        trace.total_requests(),
        out.display()
    );
    Ok(())
}

fn parse_policies(raw: &str) -> Result<Vec<Policy>, CliError> {
    let mut policies = Vec::new();
    for name in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let policy = Policy::parse(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown policy `{name}` (expected one of: {})",
                Policy::ALL.map(|p| p.name()).join(", ")
            ))
        })?;
        if !policies.contains(&policy) {
            policies.push(policy);
        }
    }
    if policies.is_empty() {
        return Err(CliError::Usage("no policies requested".into()));
    }
    Ok(policies)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(header)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_run(
    config: Option<&Path>,
    seed: Option<u64>,
    trace_dir: &Path,
    policies_raw: &str,
    epochs: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.budget.seed = seed;
    }
    let policies = parse_policies(policies_raw)?;
    let mut trace: Trace = ingest_trace(trace_dir, cfg.trace.epoch_length_s)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(n) = epochs {
        if n > trace.epochs.len() {
            return Err(CliError::Config(format!(
                "trace has {} epochs, --epochs asked for {n}",
                trace.epochs.len()
            )));
        }
        if n < trace.epochs.len() {
            log::info!("truncating trace from {} to {n} epochs", trace.epochs.len());
            trace.epochs.truncate(n);
        }
    }

    let envs = match cfg.env_schedule.clone() {
        Some(list) => EnvSchedule::PerEpoch(list),
        None => EnvSchedule::Uniform(cfg.env.clone()),
    };
    let settings = RunSettings {
        epoch_length_s: cfg.trace.epoch_length_s,
        budget: cfg.budget.clone(),
        balance_weights: cfg.weights.balance,
        baseline: cfg.baselines.clone(),
    };
    let result = sfcm_core::harness::run_horizon(&trace, &policies, &cfg.cluster, &envs, &settings)
        .map_err(|e| CliError::Config(e.to_string()))?;

    std::fs::create_dir_all(out).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
    let plans_dir = out.join("plans");
    std::fs::create_dir_all(&plans_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", plans_dir.display())))?;

    // per-epoch objectives, epoch-major, policies in requested order
    let mut rows = Vec::new();
    for e in 0..trace.epochs.len() {
        for pr in &result.policies {
            let rec = &pr.per_epoch[e];
            rows.push(vec![
                e.to_string(),
                pr.policy.name().to_string(),
                rec.objectives.slo_violation_rate.to_string(),
                rec.objectives.carbon_g.to_string(),
                rec.objectives.water_l.to_string(),
            ]);
        }
    }
    write_csv(
        &out.join("epochs.csv"),
        &["epoch", "policy", "slo_rate", "carbon_g", "water_l"],
        &rows,
    )?;

    let rows: Vec<Vec<String>> = result
        .policies
        .iter()
        .map(|pr| {
            vec![
                pr.policy.name().to_string(),
                pr.aggregate.slo_rate.to_string(),
                pr.aggregate.carbon_g.to_string(),
                pr.aggregate.water_l.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("aggregate.csv"),
        &["policy", "agg_slo", "agg_carbon_g", "agg_water_l"],
        &rows,
    )?;

    for pr in &result.policies {
        for (e, rec) in pr.per_epoch.iter().enumerate() {
            if let Some((archive, norms)) = &pr.archives[e] {
                let rows: Vec<Vec<String>> = archive
                    .entries()
                    .iter()
                    .enumerate()
                    .map(|(i, entry)| {
                        let wb = weighted_sum(&entry.objectives, &settings.balance_weights, norms);
                        vec![
                            i.to_string(),
                            entry.objectives.slo_violation_rate.to_string(),
                            entry.objectives.carbon_g.to_string(),
                            entry.objectives.water_l.to_string(),
                            wb.to_string(),
                        ]
                    })
                    .collect();
                write_csv(
                    &out.join(format!("pareto_epoch{e}_{}.csv", pr.policy.name())),
                    &["plan_id", "slo_rate", "carbon_g", "water_l", "weighted_balance"],
                    &rows,
                )?;
            }
            let plan_path = plans_dir.join(format!("{}_epoch{e}.json", pr.policy.name()));
            let json = plan_to_json(&rec.plan, &trace.specs);
            std::fs::write(&plan_path, format!("{:#}\n", json))
                .map_err(|err| CliError::Config(format!("{}: {err}", plan_path.display())))?;
        }
        log::info!(
            "{}: aggregate slo={} carbon_g={} water_l={}",
            pr.policy.name(),
            pr.aggregate.slo_rate,
            pr.aggregate.carbon_g,
            pr.aggregate.water_l
        );
    }

    // outputs are on disk either way; a policy that never placed a single
    // epoch means the cluster cannot host this workload at all
    for pr in &result.policies {
        if pr.per_epoch.iter().all(|r| r.failed) {
            return Err(CliError::Capacity(format!(
                "policy {} failed every epoch: cluster capacity is insufficient",
                pr.policy.name()
            )));
        }
    }
    Ok(())
}

fn parse_axes(raw: &str) -> Result<(Axis, Axis), CliError> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!(
            "expected two comma-separated axes, got `{raw}`"
        )));
    }
    let parse = |name: &str| {
        Axis::parse(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown axis `{name}` (expected slo, carbon, or water)"
            ))
        })
    };
    let a = parse(parts[0])?;
    let b = parse(parts[1])?;
    if a == b {
        return Err(CliError::Usage("axes must differ".into()));
    }
    Ok((a, b))
}

fn cmd_pareto(
    run_dir: &Path,
    epoch: usize,
    axes_raw: &str,
    policy_raw: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let axes = parse_axes(axes_raw)?;
    let policy = Policy::parse(policy_raw)
        .ok_or_else(|| CliError::Usage(format!("unknown policy `{policy_raw}`")))?;
    let archive_path = run_dir.join(format!("pareto_epoch{epoch}_{}.csv", policy.name()));
    let mut rdr = csv::Reader::from_path(&archive_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", archive_path.display())))?;
    let mut points: Vec<ObjectiveVector> = Vec::new();
    for record in rdr.records() {
        let record =
            record.map_err(|e| CliError::Config(format!("{}: {e}", archive_path.display())))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "{}: bad row `{}`",
                        archive_path.display(),
                        record.iter().collect::<Vec<_>>().join(",")
                    ))
                })
        };
        points.push(ObjectiveVector {
            slo_violation_rate: parse(1)?,
            carbon_g: parse(2)?,
            water_l: parse(3)?,
        });
    }
    let front = project_front(&points, axes);
    let default_path = run_dir.join(format!(
        "front_epoch{epoch}_{}_{}_{}.csv",
        policy.name(),
        axes.0.column(),
        axes.1.column()
    ));
    let out_path = out.unwrap_or(&default_path);
    let rows: Vec<Vec<String>> = front
        .iter()
        .map(|(x, y)| vec![x.to_string(), y.to_string()])
        .collect();
    write_csv(out_path, &[axes.0.column(), axes.1.column()], &rows)?;
    log::info!(
        "projected {} archive points to a {}-point 2-D front at {}",
        points.len(),
        front.len(),
        out_path.display()
    );
    Ok(())
}
