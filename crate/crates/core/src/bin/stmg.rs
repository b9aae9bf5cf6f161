//! Command line driver for the numerical studies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stmg::experiments::{self, condx_violations, ExperimentConfig, Study};

#[derive(Parser, Debug)]
#[command(name = "stmg", version, about = "Space-time multigrid studies")]
struct Cli {
    /// condx, mineig, minres, mg or convergence
    study: Study,
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Degree(s), comma separated
    #[arg(long)]
    p: Option<String>,
    /// Diffusion-weight parameter(s), comma separated
    #[arg(long)]
    theta: Option<String>,
    /// direct, diag, cschur or rschur
    #[arg(long)]
    strategy: Option<String>,
    /// CSV output; a `.meta.json` sidecar is written next to it
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit
    #[arg(long)]
    print_config: bool,
}

fn configure(cli: &Cli) -> stmg::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path, cli.study)?,
        None => ExperimentConfig::defaults(cli.study),
    };
    if cfg.study != cli.study {
        return Err(stmg::Error::Config(format!(
            "config file is for study '{}', command line asks for '{}'",
            cfg.study, cli.study
        )));
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(v) = &cli.p {
        pairs.push(("p".into(), v.clone()));
    }
    if let Some(v) = &cli.theta {
        pairs.push(("theta".into(), v.clone()));
    }
    if let Some(v) = &cli.strategy {
        pairs.push(("strategy".into(), v.clone()));
    }
    if let Some(v) = &cli.out {
        pairs.push(("out".into(), v.display().to_string()));
    }
    if let Some(v) = cli.jobs {
        pairs.push(("jobs".into(), v.to_string()));
    }
    if let Some(v) = cli.seed {
        pairs.push(("seed".into(), v.to_string()));
    }
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| stmg::Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        pairs.push((k.into(), v.into()));
    }
    for (k, v) in pairs {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("stmg: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_text());
        return ExitCode::SUCCESS;
    }
    let table = match experiments::run(&cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("stmg: {e}");
            return ExitCode::FAILURE;
        }
    };
    print!("{table}");
    if cfg.study == Study::Condx {
        let v = condx_violations(&table);
        if v.is_empty() {
            println!("monotone in p and nel");
        } else {
            println!("monotonicity violations:");
            for line in v {
                println!("  {line}");
            }
        }
    }
    if let Some(out) = &cfg.out {
        if let Err(e) = experiments::write_outputs(&cfg, &table, out) {
            eprintln!("stmg: {e}");
            return ExitCode::FAILURE;
        }
        eprintln!("wrote {} and {}", out.display(), experiments::meta_path(out).display());
    }
    ExitCode::SUCCESS
}
