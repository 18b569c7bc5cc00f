use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nkmpc::harness::{
    run_benchmark, run_scaling, run_simulate, write_benchmark_csv, write_scaling_csv,
    BenchmarkCase, BENCHMARK_FILE, DEFAULT_SCALING_NS, SCALING_FILE, SUMMARY_FILE, TRAJECTORY_FILE,
};

mod settings;

use settings::{apply_overrides, Scenario};

#[derive(Parser, Debug)]
#[command(
    name = "nkmpc",
    version,
    about = "Receding-horizon minimum-time control with a preconditioned Newton-Krylov solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop simulation
    Simulate {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare configurations against a baseline
    Benchmark {
        #[command(flatten)]
        scenario: Scenario,
        /// Variant as comma-separated overrides of the baseline, e.g.
        /// `precond=on` or `shift=on,refinements=2`; repeatable
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time preconditioner setup and application against the horizon size
    Scaling {
        /// Horizon sizes
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCALING_NS)]
        ns: Vec<usize>,
        /// Timed repetitions per size; the median is reported
        #[arg(long, default_value_t = 7)]
        repeats: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn simulate(scenario: Scenario, out: PathBuf) -> anyhow::Result<ExitCode> {
    let config = scenario.resolve()?.to_config()?;
    let rec = run_simulate(config, &out)?;
    let a = &rec.aggregates;
    println!("steps completed     {}", a.steps_completed);
    println!("avg gmres per step  {:.3}", a.avg_gmres_per_step);
    println!("avg wall ms / step  {:.4}", a.avg_wall_ms_per_step);
    println!("total wall time s   {:.4}", a.total_wall_time_s);
    if let Some(n) = a.final_state_norm {
        println!("final state norm    {n:.6e}");
    }
    println!(
        "wrote {} and {}",
        out.join(TRAJECTORY_FILE).display(),
        out.join(SUMMARY_FILE).display()
    );
    match &rec.failure {
        None => Ok(ExitCode::SUCCESS),
        Some(msg) => {
            eprintln!("simulation failed: {msg}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn benchmark(scenario: Scenario, variants: Vec<String>, out: PathBuf) -> anyhow::Result<ExitCode> {
    let base = scenario.resolve()?;
    let (base, variants) = if variants.is_empty() {
        (
            apply_overrides(&base, "precond=off")?,
            vec!["precond=on".to_string()],
        )
    } else {
        (base, variants)
    };
    let mut cases = vec![BenchmarkCase {
        id: "baseline".into(),
        config: base.to_config()?,
    }];
    for v in &variants {
        let s = apply_overrides(&base, v)?;
        cases.push(BenchmarkCase {
            id: v.clone(),
            config: s.to_config().with_context(|| format!("variant '{v}'"))?,
        });
    }
    let (rows, _) = run_benchmark(&cases)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join(BENCHMARK_FILE);
    write_benchmark_csv(&rows, File::create(&path)?)?;
    write_benchmark_csv(&rows, std::io::stdout())?;
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn scaling(ns: Vec<usize>, repeats: usize, out: PathBuf) -> anyhow::Result<ExitCode> {
    let report = run_scaling(&ns, repeats)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join(SCALING_FILE);
    write_scaling_csv(&report, File::create(&path)?)?;
    write_scaling_csv(&report, std::io::stdout())?;
    match report.slope {
        Some(s) => println!("log-log slope {s:.4}"),
        None => println!("log-log slope n/a (single horizon size)"),
    }
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, out } => simulate(scenario, out),
        Command::Benchmark {
            scenario,
            variants,
            out,
        } => benchmark(scenario, variants, out),
        Command::Scaling { ns, repeats, out } => scaling(ns, repeats, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
