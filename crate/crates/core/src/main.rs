use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use caplab::calculus::{anchor_check, Calibration};
use caplab::capacity::{at_capacity, bt_capacity, functional_capacity};
use caplab::config::{parse_shape, ExperimentConfig, Format, Spacing, EXPERIMENTS};
use caplab::envelope::relative_extremal_report;
use caplab::experiments::{default_config, describe, run_with_workers};
use caplab::grid::{build_domain_dim, rasterize_set, ShapeSpec};
use caplab::{CapError, Result};

#[derive(Parser)]
#[command(name = "caplab", version, about = "Capacities and complex Sobolev norms on lattice domains")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a TOML file or by registered name.
    Run {
        /// Config path or experiment name.
        target: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exit with status 1 if any claim fails.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $CAPLAB_OUT/<name>, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of csv,json,svg.
        #[arg(long, value_delimiter = ',')]
        format: Vec<Format>,
    },
    /// Compute one capacity and print it as JSON.
    Capacity {
        #[arg(value_enum)]
        kind: CapKind,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_parser = parse_shape)]
        set: ShapeSpec,
        /// Radius R of the Alexander-Taylor ball (default: domain radius).
        #[arg(long)]
        outer_radius: Option<f64>,
        #[arg(long, default_value_t = std::f64::consts::E.powi(3))]
        outer_factor: f64,
    },
    /// Relative extremal function of a set; prints a summary as JSON.
    Envelope {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_parser = parse_shape)]
        set: ShapeSpec,
        /// Write the field in binary form to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List registered experiments.
    ListExperiments,
    /// Print the calibration constants and the numerical anchor check.
    Calibrate {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value = "1/64")]
        spacing: Spacing,
    },
}

#[derive(clap::Args)]
struct GridArgs {
    #[arg(long, value_parser = parse_shape, default_value = "ball:1")]
    domain: ShapeSpec,
    #[arg(long, default_value = "1/64")]
    spacing: Spacing,
    /// Complex dimension.
    #[arg(long, default_value_t = 1)]
    dim: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CapKind {
    Bt,
    Functional,
    At,
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

fn load_config(target: Option<String>, config: Option<PathBuf>) -> Result<ExperimentConfig> {
    if let Some(p) = config {
        return ExperimentConfig::load(&p);
    }
    let Some(t) = target else {
        return Err(CapError::Config { path: "<args>".into(), msg: "give a config path or experiment name".into() });
    };
    let p = PathBuf::from(&t);
    if p.exists() {
        ExperimentConfig::load(&p)
    } else if EXPERIMENTS.contains(&t.as_str()) {
        default_config(&t)
    } else {
        Err(CapError::Config { path: "<args>".into(), msg: format!("`{t}` is neither a file nor an experiment") })
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { target, config, strict, workers, seed, out, format } => {
            let mut cfg = load_config(target, config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if !format.is_empty() {
                cfg.formats = format;
            }
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| {
                let base = std::env::var_os("CAPLAB_OUT").map(PathBuf::from).unwrap_or_else(|| "out".into());
                base.join(&cfg.name)
            });
            let rep = run_with_workers(&cfg, workers)?;
            let files = rep.write(&dir, &cfg.formats)?;
            for r in rep.rows.iter().filter(|r| !r.pass) {
                info!("FAIL {} [{}]: {} vs {}", r.claim, r.instance, r.lhs, r.rhs);
            }
            println!(
                "{}: {} claims, {} failing; {} files in {}",
                rep.name,
                rep.rows.len(),
                rep.failures(),
                files.len(),
                dir.display()
            );
            Ok(!strict || rep.all_pass())
        }
        Cmd::Capacity { kind, grid, set, outer_radius, outer_factor } => {
            let dom = build_domain_dim(&grid.domain, grid.spacing.0, grid.dim)?;
            let cal = Calibration::analytic(grid.dim)?;
            let e = rasterize_set(&set, &dom);
            let opts = Default::default();
            let res = match kind {
                CapKind::Bt => bt_capacity(&e, &dom, &cal, &opts)?,
                CapKind::Functional => functional_capacity(&e, &dom, &cal, &Default::default())?,
                CapKind::At => {
                    let r = outer_radius.unwrap_or(match &grid.domain {
                        ShapeSpec::Ball { radius, .. } => *radius,
                        _ => 1.0,
                    });
                    at_capacity(&e, r, outer_factor, &opts)?
                }
            };
            print_json(&json!({
                "value": res.value,
                "method": res.method,
                "converged": res.converged,
                "residuals": res.residuals,
                "grid": res.grid_meta,
            }));
            Ok(true)
        }
        Cmd::Envelope { grid, set, out } => {
            let dom = build_domain_dim(&grid.domain, grid.spacing.0, grid.dim)?;
            let e = rasterize_set(&set, &dom);
            let rep = relative_extremal_report(&e, &dom, &Default::default())?;
            let inside: Vec<bool> = (0..dom.len()).map(|i| dom.is_inside(i)).collect();
            if let Some(p) = &out {
                rep.field.write_binary(p)?;
            }
            print_json(&json!({
                "converged": rep.converged,
                "iterations": rep.iterations,
                "residual": rep.residual,
                "min": rep.field.map(|x| -x).max_on(&inside).map(|m| -m),
                "max": rep.field.max_on(&inside),
            }));
            Ok(true)
        }
        Cmd::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name:<22} {}", describe(name));
            }
            Ok(true)
        }
        Cmd::Calibrate { dim, spacing } => {
            let cal = Calibration::analytic(dim)?;
            let dom = build_domain_dim(&ShapeSpec::Ball { center: vec![], radius: 1.0 }, spacing.0, dim)?;
            let a = anchor_check(&dom, 4.0 * spacing.0)?;
            print_json(&json!({ "calibration": cal, "anchor": a }));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CapError::Config { .. }) | Err(e @ CapError::UnknownExperiment(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
