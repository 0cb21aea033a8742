use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use pulsestream::experiments::{
    run_admissibility, run_bound, run_certificate_study, run_demo_1d, run_demo_2d, run_sweep, write_bound_csv, ExperimentConfig,
    ExperimentResult,
};

#[derive(Parser)]
#[command(name = "pulsestream", version, about = "Pulse-stream recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// One 1D recovery at the first r and delta.
    Demo1d,
    /// One 2D recovery at the first r and delta.
    Demo2d,
    /// Localization error over the delta grid, r values and programs.
    Sweep,
    /// Minimal separation search for each study kernel.
    Certify,
    /// Predicted error bound for every r and delta.
    Bound,
    /// Admissibility checks for each study kernel.
    Admissibility,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Simplex,
    Splitting,
}

#[derive(Args)]
struct Overrides {
    /// JSON file merged over the subcommand's preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out/<subcommand>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Noise levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    delta: Option<Vec<f64>>,
    /// Rayleigh regularity values, comma separated.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    r: Option<Vec<usize>>,
    #[arg(long, global = true)]
    nu: Option<f64>,
    /// Grid density N.
    #[arg(long = "grid-n", global = true)]
    grid_n: Option<usize>,
    /// Trials per sweep cell.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Demo1d => "demo1d",
            Command::Demo2d => "demo2d",
            Command::Sweep => "sweep",
            Command::Certify => "certify",
            Command::Bound => "bound",
            Command::Admissibility => "admissibility",
        }
    }

    fn preset(self) -> ExperimentConfig {
        match self {
            Command::Demo2d => ExperimentConfig::demo2d(),
            Command::Sweep => ExperimentConfig::sweep(),
            Command::Bound => ExperimentConfig { r: vec![1, 2, 3, 4], ..ExperimentConfig::sweep() },
            _ => ExperimentConfig::demo1d(),
        }
    }
}

impl Overrides {
    fn patch(&self) -> Value {
        let mut m = Map::new();
        if let Some(v) = self.seed {
            m.insert("seed".into(), json!(v));
        }
        if let Some(v) = self.backend {
            let name = match v {
                BackendArg::Simplex => "simplex",
                BackendArg::Splitting => "splitting",
            };
            m.insert("backend".into(), json!(name));
        }
        if let Some(v) = self.sigma {
            m.insert("sigma".into(), json!(v));
        }
        if let Some(v) = &self.delta {
            m.insert("deltas".into(), json!(v));
        }
        if let Some(v) = &self.r {
            m.insert("r".into(), json!(v));
        }
        if let Some(v) = self.nu {
            m.insert("nu".into(), json!(v));
        }
        if let Some(v) = self.grid_n {
            m.insert("N".into(), json!(v));
        }
        if let Some(v) = self.trials {
            m.insert("trials".into(), json!(v));
        }
        Value::Object(m)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.4}"))
}

fn print_aggregates(res: &ExperimentResult) {
    println!("{:>8} {:>3} {:>8} {:>7} {:>9} {:>10} {:>10}", "delta", "r", "positive", "trials", "failures", "loc_mean", "h_l1");
    for a in &res.aggregates {
        println!(
            "{:>8} {:>3} {:>8} {:>7} {:>9} {:>10} {:>10}{}",
            a.delta,
            a.r,
            a.positive,
            a.trials,
            a.failures,
            opt(a.loc_mean_mean),
            opt(a.h_l1_mean),
            if a.flagged { "  (flagged)" } else { "" }
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cmd = cli.command;
    let mut cfg = cmd.preset();
    if let Some(path) = &cli.opts.config {
        cfg = ExperimentConfig::from_json_file(&cfg, path).with_context(|| format!("reading config {}", path.display()))?;
    }
    cfg = cfg.overlay(&cli.opts.patch()).context("applying command-line overrides")?;
    let out = cli.opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    match cmd {
        Command::Demo1d => {
            let demo = run_demo_1d(&cfg)?;
            demo.write(&out)?;
            let row = &demo.result.trials[0];
            if let Some(e) = &row.error {
                anyhow::bail!("demo failed: {e}");
            }
            println!(
                "demo1d: status {:?}, spikes {}, recovered {}, |h|_1 = {}, loc mean = {}",
                row.status.unwrap_or(pulsestream::linprog::LpStatus::Numerical),
                row.spikes,
                row.recovered.unwrap_or(0),
                opt(row.h_l1),
                opt(row.loc_mean)
            );
        }
        Command::Demo2d => {
            let demo = run_demo_2d(&cfg)?;
            demo.write(&out)?;
            let row = &demo.result.trials[0];
            if let Some(e) = &row.error {
                anyhow::bail!("demo failed: {e}");
            }
            println!(
                "demo2d: status {:?} after {} iterations, spikes {}, recovered points {}, worst nearest distance = {}",
                row.status.unwrap_or(pulsestream::linprog::LpStatus::Numerical),
                row.iterations.unwrap_or(0),
                row.spikes,
                demo.recovered_support().len(),
                opt(row.loc_max_nearest)
            );
        }
        Command::Sweep => {
            let res = run_sweep(&cfg)?;
            res.write(&out)?;
            print_aggregates(&res);
        }
        Command::Certify => {
            let study = run_certificate_study(&cfg)?;
            study.write(&out)?;
            cfg.write_json(&out.join("config.json"))?;
            for row in &study.rows {
                match (&row.nu_star, &row.error) {
                    (Some(nu), _) => println!("{}: nu* = {nu:.3} (margin {:.2e})", row.kernel, row.margin.unwrap_or(f64::NAN)),
                    (None, e) => println!("{}: no passing nu ({})", row.kernel, e.as_deref().unwrap_or("unknown")),
                }
            }
        }
        Command::Bound => {
            let rows = run_bound(&cfg)?;
            write_bound_csv(&out.join("bound.csv"), &rows)?;
            cfg.write_json(&out.join("config.json"))?;
            for b in &rows {
                println!(
                    "r={} nu={} delta={}: C = {:.3e}, gamma = {}, bound = {:.3e}, valid = {}",
                    b.r, b.nu, b.delta, b.c, b.gamma, b.bound, b.valid
                );
            }
        }
        Command::Admissibility => {
            let reports = run_admissibility(&cfg)?;
            fs::write(out.join("admissibility.json"), serde_json::to_string_pretty(&reports)?)?;
            cfg.write_json(&out.join("config.json"))?;
            for r in &reports {
                let failed: Vec<&str> = r.conditions.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                println!(
                    "{} (eps = {}, beta = {:.4}): {}",
                    r.kernel,
                    r.eps,
                    r.beta,
                    if r.passed { "admissible".to_string() } else { format!("fails {}", failed.join(", ")) }
                );
            }
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
