use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use thermpc::config::{load_scenario, ScenarioConfig};
use thermpc::harness::{compare, read_records, run_closed_loop, write_comparison, write_run, ControllerVariant, LoopRecord};
use thermpc::metrics::{compute_metrics, to_markdown};
use thermpc::planner::{ccp_solve, feasible_start, nlp_solve, PlanInstance};
use thermpc::power::qhvac;
use thermpc::sysid::{identify, IdDataset};

#[derive(Parser)]
#[command(name = "thermpc", version, about = "Adaptive MPC for a single-zone VAV box: simulate, identify, plan, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Override the simulated span in weeks.
    #[arg(long)]
    weeks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock budget of the non-convex solver per plan, ms.
    #[arg(long)]
    budget_ms: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut sc = load_scenario(&self.config)?;
        if let Some(w) = self.weeks {
            sc.simulation.weeks = w;
        }
        if let Some(s) = self.seed {
            sc.simulation.seed = s;
        }
        if self.budget_ms.is_some() {
            sc.nlp.budget_ms = self.budget_ms;
        }
        sc.validate().context("invalid scenario after overrides")?;
        Ok(sc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller in closed loop and write its records.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "adapt-cvx")]
        variant: ControllerVariant,
    },
    /// Identify a model from a records CSV.
    Identify {
        #[arg(long)]
        config: PathBuf,
        /// Records CSV as written by `simulate`.
        #[arg(long)]
        records: PathBuf,
        /// First and one-past-last step of the identification window.
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        to: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Solve one planning instance from a snapshot and print the solver trace.
    Plan {
        #[arg(long)]
        config: PathBuf,
        /// `snapshot.json` as written by `simulate`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Planner variant; the non-convex ones use the NLP solver.
        #[arg(long, default_value = "adapt-cvx")]
        variant: ControllerVariant,
        #[arg(long)]
        budget_ms: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run several controllers on the same realization.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Controllers to run; all of them by default.
        #[arg(long, value_delimiter = ',')]
        variant: Vec<ControllerVariant>,
    },
    /// Recompute metrics from stored records.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Label of the row; defaults to the parent directory name.
        #[arg(long)]
        variant: Option<String>,
        /// Leading weeks to skip; defaults to the scenario warm-up.
        #[arg(long)]
        warmup_weeks: Option<usize>,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn simulate(common: &Common, variant: ControllerVariant) -> Result<()> {
    let sc = common.scenario()?;
    let exo = sc.exogenous_trace()?;
    let run = run_closed_loop(variant, &sc, &exo)?;
    let dir = common.out_dir.join(variant.name());
    write_run(&dir, &sc, &run)?;
    println!("{}", serde_json::to_string_pretty(&run.metrics)?);
    log::info!("wrote {}", dir.display());
    Ok(())
}

fn id_dataset(records: &[LoopRecord], sc: &ScenarioConfig) -> IdDataset {
    let cpa = sc.constants.cpa;
    IdDataset {
        u: records.iter().map(|r| [qhvac(r.mdot, r.tsa, r.y, cpa), r.toa, r.eta]).collect(),
        y: records.iter().map(|r| r.y).collect(),
        dt: sc.constants.dt,
    }
}

fn identify_cmd(config: &Path, records: &Path, from: Option<usize>, to: Option<usize>, out_dir: Option<&Path>) -> Result<()> {
    let sc = load_scenario(config)?;
    let recs = read_records(records)?;
    let from = from.unwrap_or(0);
    let to = to.unwrap_or(recs.len()).min(recs.len());
    if from >= to {
        bail!("empty identification window {from}..{to} over {} records", recs.len());
    }
    let data = id_dataset(&recs[from..to], &sc);
    let (model, dist) = identify(&data, sc.sysid.lambda)?;
    println!("{}", model.to_json());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("model.json"), model.to_json())?;
        write_json(&dir.join("disturbance.json"), &dist)?;
    }
    Ok(())
}

fn plan_cmd(config: &Path, snapshot: &Path, variant: ControllerVariant, budget_ms: Option<u64>, out_dir: Option<&Path>) -> Result<()> {
    if !variant.uses_planner() {
        bail!("{variant} does not plan");
    }
    let sc = load_scenario(config)?;
    let text = std::fs::read_to_string(snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
    let inst: PlanInstance = serde_json::from_str(&text).with_context(|| format!("parsing {}", snapshot.display()))?;
    let (z, trace) = if variant.uses_nlp() {
        let mut nlp = sc.nlp;
        if budget_ms.is_some() {
            nlp.budget_ms = budget_ms;
        }
        let (z, rep) = nlp_solve(&inst, Some(&feasible_start(&inst)), &nlp)?;
        (z, serde_json::to_value(rep)?)
    } else {
        let (z, tr) = ccp_solve(&inst, None, &sc.planner)?;
        (z, serde_json::to_value(tr)?)
    };
    println!("{}", serde_json::to_string_pretty(&trace)?);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("trace.json"), &trace)?;
        write_json(&dir.join("plan.json"), &inst.commands(&z))?;
    }
    Ok(())
}

fn compare_cmd(common: &Common, variants: &[ControllerVariant]) -> Result<()> {
    let sc = common.scenario()?;
    let variants = if variants.is_empty() { ControllerVariant::ALL.to_vec() } else { variants.to_vec() };
    let runs = compare(&variants, &sc)?;
    write_comparison(&common.out_dir, &sc, &runs)?;
    let reports: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
    print!("{}", to_markdown(&reports));
    Ok(())
}

fn report_cmd(config: &Path, records: &Path, variant: Option<String>, warmup_weeks: Option<usize>) -> Result<()> {
    let sc = load_scenario(config)?;
    let recs = read_records(records)?;
    let warm = warmup_weeks.unwrap_or(sc.simulation.metrics_warmup_weeks) * sc.steps_per_week();
    if warm >= recs.len() {
        bail!("warm-up of {warm} steps leaves none of the {} records", recs.len());
    }
    let label = variant.unwrap_or_else(|| {
        records.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    });
    let report = compute_metrics(&label, &recs[warm..], sc.building.floor_area, &sc.schedule, sc.constants.dt)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate { common, variant } => simulate(&common, variant),
        Command::Identify { config, records, from, to, out_dir } => identify_cmd(&config, &records, from, to, out_dir.as_deref()),
        Command::Plan { config, snapshot, variant, budget_ms, out_dir } => plan_cmd(&config, &snapshot, variant, budget_ms, out_dir.as_deref()),
        Command::Compare { common, variant } => compare_cmd(&common, &variant),
        Command::Report { config, records, variant, warmup_weeks } => report_cmd(&config, &records, variant, warmup_weeks),
    }
}
