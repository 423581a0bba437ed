use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use vfgl_core::models::gradcheck::run_suite;
use vfgl_lab::{compare_methods, run_experiment, worker_limit, LabError, RunConfig};

/// Largest relative error the gradient check accepts.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "vfgl-lab", version, about = "Attack simulator for vertically federated graph learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration over its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Config overrides as `--key value` or `--key=value`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Run several configurations and write a summary table.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        instances: u64,
    },
}

/// Applies `--key value` pairs. `--seed` and `--out` may also appear among
/// them since clap stops parsing at the first unknown flag.
fn apply_overrides(
    cfg: &mut RunConfig,
    args: &[String],
    seed: &mut Option<u64>,
    out: &mut PathBuf,
) -> Result<(), LabError> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(LabError::Config(format!("unexpected argument {arg:?}")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| LabError::Config(format!("--{flag} needs a value")))?;
                (flag, v.clone())
            }
        };
        match key {
            "seed" => {
                *seed = Some(
                    value
                        .parse()
                        .map_err(|_| LabError::Config(format!("bad seed {value:?}")))?,
                )
            }
            "out" => *out = PathBuf::from(value),
            _ => cfg.set(key, &value)?,
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), LabError> {
    match cli.command {
        Command::Run {
            config,
            mut seed,
            mut out,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            apply_overrides(&mut cfg, &overrides, &mut seed, &mut out)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            cfg.validate()?;
            let workers = worker_limit()?;
            let start = Instant::now();
            let runs = run_experiment(&cfg, &out, workers)?;
            for r in &runs {
                let rec = &r.record;
                println!(
                    "seed {:>3}  acc {:.3}  asr {:>5.1}  aq {:>6.2}  cs_m {:.3}  queries {}",
                    r.seed, rec.clean_acc, rec.asr, rec.aq, rec.cs_malicious, r.malicious_queries
                );
            }
            eprintln!(
                "{} seed(s) in {:.1}s, results in {}",
                runs.len(),
                start.elapsed().as_secs_f64(),
                out.join("results.csv").display()
            );
        }
        Command::Compare { configs, out } => {
            let cfgs = configs
                .iter()
                .map(RunConfig::load)
                .collect::<Result<Vec<_>, _>>()?;
            let rows = compare_methods(&cfgs, &out, worker_limit()?)?;
            println!("{:<12} {:<10} {:>8} {:>8} {:>8}", "method", "attack", "asr", "impv", "aq");
            for r in &rows {
                let impv = r.impv.map_or("-".to_string(), |v| format!("{v:.2}"));
                println!("{:<12} {:<10} {:>8.2} {:>8} {:>8.2}", r.method, r.attack, r.asr, impv, r.aq);
            }
        }
        Command::Gradcheck { instances } => {
            let start = Instant::now();
            let reports = run_suite(instances);
            let mut worst: f64 = 0.0;
            for r in &reports {
                println!("{:<16} {:>6} checks  max rel err {:.3e}", r.name, r.checked, r.max_rel_err);
                worst = worst.max(r.max_rel_err);
            }
            println!("worst {worst:.3e} in {:.2}s", start.elapsed().as_secs_f64());
            if worst > GRADCHECK_TOL {
                return Err(LabError::Runtime(format!(
                    "relative error {worst:.3e} exceeds {GRADCHECK_TOL:e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vfgl-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
