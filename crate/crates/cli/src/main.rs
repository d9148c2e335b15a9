//! `infassess`: run assessments of inference methods from the command line.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use infassess::engine::{run_assessment, run_power, worst_case_sweep, AssessmentReport};
use infassess::error::ExitClass;
use infassess::presets::{experiments, find_experiment};
use infassess::report::{render_table, to_json, write_report};
use infassess::{Error, Result};

use args::AssessArgs;

#[derive(Debug, Parser)]
#[command(name = "infassess", version, about = "Assess inference methods by simulation on a fixed design")]
struct Cli {
    /// Worker threads (default: INFASSESS_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rejection rates of a method on regenerated outcomes
    Assess(AssessArgs),
    /// Run a named experiment and compare with its published number
    Replicate {
        /// Experiment name
        name: Option<String>,
        #[arg(long)]
        list: bool,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst case over two-group variance ratios σ₁²/σ₀²
    Sweep {
        #[command(flatten)]
        args: AssessArgs,
        /// Ratios, comma separated
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// File with one ratio per line
        #[arg(long)]
        grid_file: Option<PathBuf>,
    },
    /// Rejection rates when outcomes are generated under an alternative
    Power {
        #[command(flatten)]
        args: AssessArgs,
        #[arg(long)]
        alternative: f64,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("INFASSESS_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("INFASSESS_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn print_report(report: &AssessmentReport, dir: &Path) {
    print!("{}", render_table(report));
    println!("wall time  {:.3} s", report.wall_seconds);
    println!("wrote {}", dir.display());
}

fn assess(args: AssessArgs) -> Result<()> {
    let args = args.resolve()?;
    let (ds, h) = args.dataset()?;
    let spec = args.spec(h)?;
    let report = run_assessment(&ds, &spec)?;
    let dir = args.out_dir();
    write_report(&dir, &report)?;
    print_report(&report, &dir);
    Ok(())
}

fn power(args: AssessArgs, alternative: f64) -> Result<()> {
    let args = args.resolve()?;
    let (ds, h) = args.dataset()?;
    let spec = args.spec(h)?.with_alternative(alternative);
    let report = run_power(&ds, &spec)?;
    let dir = args.out_dir();
    write_report(&dir, &report)?;
    print_report(&report, &dir);
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    ratio: f64,
    rate_05: f64,
    max_over_rejection: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    points: Vec<SweepRow>,
    worst_ratio: f64,
    max_rate: f64,
}

fn read_grid(path: &Path) -> Result<Vec<f64>> {
    std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: "ratio".into(),
                message: format!("not a number: {l:?}"),
            })
        })
        .collect()
}

fn sweep(args: AssessArgs, grid: Option<Vec<f64>>, grid_file: Option<PathBuf>) -> Result<()> {
    let mut args = args.resolve()?;
    if args.shocks.unwrap_or(false) || args.errors.is_some_and(|e| e != args::ErrorsArg::TwoGroup) {
        return Err(Error::Config("sweep always draws two-group errors; drop --errors/--shocks".into()));
    }
    args.errors = None;
    let grid = match (grid, grid_file) {
        (Some(_), Some(_)) => return Err(Error::Config("give --grid or --grid-file, not both".into())),
        (Some(g), None) => g,
        (None, Some(p)) => read_grid(&p)?,
        (None, None) => vec![0.01, 1.0, 100.0],
    };
    let (ds, h) = args.dataset()?;
    let spec = args.spec(h)?;
    let sw = worst_case_sweep(&ds, &spec, &grid)?;
    let dir = args.out_dir();
    std::fs::create_dir_all(&dir)?;
    println!("{:>10}  {:>8}  {:>8}", "ratio", "reject", "max_over");
    let mut rows = Vec::new();
    for (i, p) in sw.points.iter().enumerate() {
        let r5 = p.report.rate(0.05).expect("sweep checks alphas");
        let flag = if i == sw.worst { "  <- max" } else { "" };
        println!("{:>10}  {:>8.4}  {:>8.4}{flag}", p.ratio, r5, p.report.max_over_rejection);
        rows.push(SweepRow {
            ratio: p.ratio,
            rate_05: r5,
            max_over_rejection: p.report.max_over_rejection,
        });
        write_report(dir.join(format!("ratio-{i}")), &p.report)?;
    }
    let summary = SweepSummary {
        points: rows,
        worst_ratio: sw.points[sw.worst].ratio,
        max_rate: sw.max_rate,
    };
    std::fs::write(dir.join("sweep.json"), to_json(&summary)?)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn replicate(name: Option<String>, list: bool, reps: Option<usize>, seed: u64, out: Option<PathBuf>) -> Result<()> {
    if list || name.is_none() {
        for e in experiments() {
            println!("{:<36} {}", e.name, e.description);
        }
        if name.is_none() && !list {
            return Err(Error::Config("replicate needs an experiment name".into()));
        }
        return Ok(());
    }
    let exp = find_experiment(name.as_deref().expect("checked"))?;
    let outcome = exp.run(reps, seed)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("infassess-out").join(&exp.name));
    std::fs::create_dir_all(&dir)?;
    if let Some(r) = &outcome.report {
        write_report(&dir, r)?;
        print!("{}", render_table(r));
    }
    std::fs::write(dir.join("outcome.json"), to_json(&outcome)?)?;
    let band = outcome.tolerance.map_or(String::new(), |t| format!(" ± {t:.4}"));
    println!(
        "{}  value {:.4}  check {:?}{}  {}",
        outcome.preset,
        outcome.value,
        outcome.check,
        band,
        outcome.verdict()
    );
    for (k, v) in &outcome.details {
        println!("  {k} = {v:.4}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let work = move || match cli.command {
        Command::Assess(a) => assess(a),
        Command::Replicate { name, list, reps, seed, out } => replicate(name, list, reps, seed, out),
        Command::Sweep { args, grid, grid_file } => sweep(args, grid, grid_file),
        Command::Power { args, alternative } => power(args, alternative),
    };
    match thread_count(cli.threads)? {
        Some(0) => Err(Error::Config("thread count must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.exit_class() {
                ExitClass::Config => 2,
                ExitClass::Data => 3,
                ExitClass::Numerical => 4,
            })
        }
    }
}
