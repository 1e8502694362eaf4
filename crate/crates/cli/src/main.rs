use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctrlcert::area::area_property_test;
use ctrlcert::goldfish::goldfish;
use ctrlcert::scenario::{builtin_scenario, BUILTINS, BUILTIN_SCENARIOS};
use ctrlcert::{run_scenario, CertifyOptions, OdeOptions, Scenario};
use log::info;

const THREADS_VAR: &str = "CTRLCERT_THREADS";

/// Certificates of constrained controllability for control-affine systems.
#[derive(Debug, Parser)]
#[command(name = "ctrlcert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the checks of a scenario and write its certificates.
    Certify(RunArgs),
    /// Run a scenario including its Monte-Carlo reach probe.
    Reach(RunArgs),
    /// Build the closed two-period loop and check it both ways.
    Goldfish {
        #[arg(long, default_value_t = 0.5)]
        eps2: f64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
    },
    /// Random nonnegative closed loops must not lose area over one turn.
    AreaTest {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the built-in systems and scenarios.
    ListBuiltins,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario JSON file, or `builtin:<name>`.
    config: String,
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Record wall-clock time in certificates (breaks byte reproducibility).
    #[arg(long)]
    timings: bool,
}

fn load(config: &str) -> Result<Scenario> {
    if let Some(name) = config.strip_prefix("builtin:") {
        return builtin_scenario(name).with_context(|| format!("unknown built-in scenario {name:?}"));
    }
    let path = Path::new(config);
    if !path.is_file() {
        bail!("config file {} not found", path.display());
    }
    Ok(Scenario::load(path)?)
}

fn run(args: &RunArgs, with_mc: bool) -> Result<()> {
    let mut s = load(&args.config)?;
    if with_mc && s.mc.is_none() {
        bail!("scenario {:?} has no `mc` section", s.name);
    }
    if !with_mc {
        s.mc = None;
    }
    let opts = CertifyOptions {
        timings: args.timings,
        ..CertifyOptions::default()
    };
    info!("running {} into {}", s.name, args.out.display());
    let report = run_scenario(&s, &args.out, &opts)?;
    print!("{}", report.summary());
    Ok(())
}

fn threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.parse().with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    threads()?;
    match cli.command {
        Command::Certify(a) => run(&a, false)?,
        Command::Reach(a) => run(&a, true)?,
        Command::Goldfish { eps2, eps, out } => {
            let r = goldfish(eps2, eps, [0.0; 4], OdeOptions::with_tol(1e-12))?;
            fs::create_dir_all(&out)?;
            let path = out.join("goldfish.json");
            fs::write(&path, serde_json::to_string_pretty(&r)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            let l = r.levels;
            println!("levels      eps1={:.12} eps2={} eps3={:.12} eps={}", l.eps1, l.eps2, l.eps3, l.eps);
            println!("closure     closed form {:.3e}, numeric {:.3e}", r.closure_closed_form, r.closure_numeric);
            println!("agreement   max gap {:.3e} over {} checkpoints", r.max_gap, r.checkpoints.len());
            println!("area test   {} closed, {} violations", r.area.closed, r.area.violations);
        }
        Command::AreaTest { trials, seed } => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let s = area_property_test(trials, seed);
            println!(
                "trials {} closed {} discarded {} violations {} min gain {:.6e}",
                s.trials, s.closed, s.discarded, s.violations, s.min_gain
            );
            if s.violations > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::ListBuiltins => {
            println!("systems:");
            for (name, what) in BUILTINS {
                println!("  {name:<16} {what}");
            }
            println!("scenarios (use builtin:<name>):");
            for name in BUILTIN_SCENARIOS {
                println!("  {name}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
