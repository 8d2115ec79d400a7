//! `blowup`: analytic bounds, Monte Carlo campaigns and the built-in
//! validation suite, driven by JSON config files.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 validation failure,
//! 3 runtime fault.

mod bounds;
mod config;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use blowup_core::mc::{run_campaign_with_records, write_path_records, CampaignReport, FaultInjection};
use blowup_core::validation::run_validation;
use clap::{Parser, Subcommand, ValueEnum};

use config::{ConfigError, LoadedConfig, OutputConfig};
use table::{cell, Table};

const EXIT_CONFIG: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "blowup",
    version,
    about = "Blow-up bounds and Monte Carlo campaigns for coupled stochastic heat systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo work.
    #[arg(long, global = true, env = "BLOWUP_THREADS")]
    threads: Option<usize>,
    /// Master seed; campaign `i` uses `seed + i`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Deliberate defect to show that the checks can fail.
    #[arg(long, global = true, hide = true, value_enum)]
    inject_fault: Option<Fault>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate analytic constants, thresholds and tail bounds.
    Bounds,
    /// Run the configured Monte Carlo campaigns.
    Simulate,
    /// Run the reduced validation suite.
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    NegateRho2,
}

impl From<Fault> for FaultInjection {
    fn from(f: Fault) -> Self {
        match f {
            Fault::NegateRho2 => FaultInjection::NegateRho2InUpper,
        }
    }
}

enum Failure {
    Config(String),
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("runtime fault: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    let config = match &cli.config {
        Some(p) => Some(LoadedConfig::read(p)?),
        None => None,
    };
    let require = || {
        config
            .as_ref()
            .ok_or_else(|| Failure::Config("this command needs --config <FILE>".into()))
    };
    match cli.command {
        Command::Bounds => cmd_bounds(cli, require()?),
        Command::Simulate => cmd_simulate(cli, require()?),
        Command::Validate => cmd_validate(cli, config.as_ref()),
    }
}

fn output(cli: &Cli, config: Option<&LoadedConfig>) -> OutputConfig {
    let mut o = config.map(|c| c.config.output.clone()).unwrap_or_default();
    if let Some(d) = &cli.out {
        o.dir = d.clone();
    }
    o
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_table(t: &Table, out: &OutputConfig, stem: &str) -> anyhow::Result<()> {
    if out.csv {
        let p = out.dir.join(format!("{stem}.csv"));
        t.write_csv(&p).with_context(|| format!("writing {}", p.display()))?;
    }
    if out.text {
        let p = out.dir.join(format!("{stem}.txt"));
        t.write_text(&p).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_bounds(cli: &Cli, config: &LoadedConfig) -> Result<(), Failure> {
    let params = config.params()?;
    let cfg = config.bounds_config()?;
    let lines = bounds::bound_lines(params, cfg).map_err(|e| Failure::Config(format!("{}: {e}", config.file)))?;
    let t = bounds::bounds_table(&lines);
    let out = output(cli, Some(config));
    create_dir(&out.dir)?;
    write_table(&t, &out, "bounds")?;
    print!("{}", t.to_text());
    Ok(())
}

fn stopping_table(name: &str, rep: &CampaignReport, t: &mut Table) {
    for s in &rep.stopping {
        t.push(vec![
            name.into(),
            s.pipeline.name().into(),
            s.n.to_string(),
            s.crossed.to_string(),
            s.censored.to_string(),
            s.failed.to_string(),
            cell(Some(s.p_crossed)),
            cell(Some(s.se)),
            cell(s.mean_time),
        ]);
    }
}

fn check_table(name: &str, rep: &CampaignReport, t: &mut Table) {
    for c in &rep.checks {
        t.push(vec![
            name.into(),
            c.name.clone(),
            c.compared.to_string(),
            c.violations.to_string(),
            if c.passed { "pass" } else { "FAIL" }.into(),
            c.detail.clone(),
        ]);
    }
}

fn cmd_simulate(cli: &Cli, config: &LoadedConfig) -> Result<(), Failure> {
    let specs = config.campaign_specs(cli.seed, cli.inject_fault.map(Into::into))?;
    let out = output(cli, Some(config));
    create_dir(&out.dir)?;
    let mut stopping = Table::new(&[
        "campaign",
        "pipeline",
        "n",
        "crossed",
        "censored",
        "failed",
        "p_crossed",
        "se",
        "mean_time",
    ]);
    let mut checks = Table::new(&["campaign", "check", "compared", "violations", "status", "detail"]);
    let mut failed = Vec::new();
    for (c, spec) in &specs {
        let (rep, records) = run_campaign_with_records(spec).with_context(|| format!("campaign `{}`", c.name))?;
        let dir = out.dir.join(&c.name);
        create_dir(&dir)?;
        if out.json {
            write_json(&rep, &dir.join("report.json"))?;
        }
        if out.csv {
            rep.write_summary_csv(dir.join("summary.csv"))
                .with_context(|| format!("writing summary for `{}`", c.name))?;
        }
        if c.dump_paths {
            write_path_records(&records, dir.join("paths.csv"))
                .with_context(|| format!("writing path records for `{}`", c.name))?;
        }
        stopping_table(&c.name, &rep, &mut stopping);
        check_table(&c.name, &rep, &mut checks);
        failed.extend(
            rep.checks
                .iter()
                .filter(|k| !k.passed)
                .map(|k| format!("{}/{}", c.name, k.name)),
        );
        for n in &rep.notes {
            println!("note [{}]: {n}", c.name);
        }
    }
    write_table(&stopping, &out, "stopping")?;
    write_table(&checks, &out, "checks")?;
    print!("{}\n{}", stopping.to_text(), checks.to_text());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("violated checks: {}", failed.join(", "))))
    }
}

fn cmd_validate(cli: &Cli, config: Option<&LoadedConfig>) -> Result<(), Failure> {
    let mut profile = config.and_then(|c| c.config.validation).unwrap_or_default();
    if let Some(s) = cli.seed {
        profile.seed = s;
    }
    if let Some(f) = cli.inject_fault {
        profile.fault = Some(f.into());
    }
    let rep = run_validation(&profile).context("running validation")?;
    let mut t = Table::new(&["check", "status", "value", "tolerance", "detail"]);
    for c in &rep.checks {
        t.push(vec![
            c.name.clone(),
            if c.passed { "pass" } else { "FAIL" }.into(),
            cell(Some(c.value)),
            cell(Some(c.tolerance)),
            c.detail.clone(),
        ]);
    }
    if config.is_some() || cli.out.is_some() {
        let out = output(cli, config);
        create_dir(&out.dir)?;
        write_table(&t, &out, "validation")?;
        if out.json {
            write_json(&rep, &out.dir.join("validation.json"))?;
        }
    }
    print!("{}", t.to_text());
    if rep.passed {
        Ok(())
    } else {
        let bad: Vec<&str> = rep
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(Failure::Validation(format!("failed checks: {}", bad.join(", "))))
    }
}
