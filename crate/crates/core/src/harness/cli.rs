//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::analysis::{analyze, l_threshold, theorem1_bound, theorem2_bound, InstanceAnalysis};
use crate::error::Result;
use crate::harness::config::{load_config, ExperimentConfig};
use crate::harness::output::{sweep_csv, write_run, OUT_DIR_ENV};
use crate::harness::run::{run_with, Execution};
use crate::policies::{ExplorationSchedule, PolicySpec};

#[derive(Parser, Debug)]
#[command(name = "mlmr", version, about = "Combinatorial bandits with rested Markovian rewards")]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print mean rewards, the optimal matching, gaps and the L threshold.
    Analyze {
        config: PathBuf,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate the regret upper bounds at horizon n.
    Bound {
        config: PathBuf,
        #[arg(long = "L")]
        l: f64,
        #[arg(long)]
        n: f64,
        /// Also evaluate the sequence bound for this schedule, e.g. "log_log(200)".
        #[arg(long)]
        schedule: Option<ExplorationSchedule>,
    },
    /// Run the configured experiment and write trace and counts CSVs.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run replications on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the index policy once per constant L and write one comparison CSV.
    Sweep {
        config: PathBuf,
        #[arg(long = "L", value_delimiter = ',', required = true)]
        l: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Analyze { config, json } => {
            let cfg = load(&config, cli.seed)?;
            let a = analyze(&cfg.instance, cfg.enumeration_cap)?;
            if json {
                let mut v = serde_json::to_value(&a).expect("analysis serializes");
                v["l_threshold"] = l_threshold(&a).into();
                writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("valid json"))?;
            } else {
                print_analysis(out, &a)?;
            }
        }
        Command::Bound {
            config,
            l,
            n,
            schedule,
        } => {
            let cfg = load(&config, cli.seed)?;
            let a = analyze(&cfg.instance, cfg.enumeration_cap)?;
            let b = theorem1_bound(&a, l, n)?;
            writeln!(out, "constant L = {l}, n = {n}")?;
            writeln!(out, "  bound (with A)    = {:.6}", b.total())?;
            writeln!(out, "  bound (without A) = {:.6}", b.bracket)?;
            writeln!(out, "  A bound           = {:.6}", b.a_bound)?;
            let schedule = schedule.or(match cfg.policy {
                PolicySpec::Mlmr { schedule } if !schedule.is_constant() => Some(schedule),
                _ => None,
            });
            if let Some(s) = schedule {
                let r = theorem2_bound(&a, &s, n)?;
                writeln!(out, "schedule {s}, n = {n}")?;
                writeln!(out, "  t1                = {}", r.t1)?;
                writeln!(out, "  B                 = {:.6}", r.b)?;
                writeln!(out, "  bound (with A)    = {:.6}", r.bound.total())?;
                writeln!(out, "  bound (without A) = {:.6}", r.bound.bracket)?;
            }
        }
        Command::Run {
            config,
            out: dir,
            sequential,
        } => {
            let cfg = load(&config, cli.seed)?;
            let trace = run_with(&cfg, execution(sequential))?;
            let dir = out_dir(dir);
            let files = write_run(&dir, &trace)?;
            if let Some(last) = trace.rows.last() {
                writeln!(
                    out,
                    "{} replications, horizon {}: mean regret {:.4} (se {:.4}), regret/ln n {:.4}",
                    trace.replications, last.step, last.regret_mean, last.regret_se, last.regret_per_ln_n
                )?;
            }
            writeln!(out, "wrote {} files to {}", files.len(), dir.display())?;
        }
        Command::Sweep {
            config,
            l,
            out: dir,
            sequential,
        } => {
            let cfg = load(&config, cli.seed)?;
            let mut runs = Vec::with_capacity(l.len());
            for &value in &l {
                let schedule = ExplorationSchedule::Constant(value);
                schedule.validate()?;
                let trace = run_with(
                    &cfg.with_policy(PolicySpec::Mlmr { schedule }),
                    execution(sequential),
                )?;
                if let Some(last) = trace.rows.last() {
                    writeln!(out, "L = {value}: mean regret {:.4} at step {}", last.regret_mean, last.step)?;
                }
                runs.push((value, trace));
            }
            let dir = out_dir(dir);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("sweep.csv");
            std::fs::write(&path, sweep_csv(&runs))?;
            writeln!(out, "wrote {}", path.display())?;
        }
    }
    Ok(())
}

fn print_analysis(out: &mut dyn Write, a: &InstanceAnalysis) -> std::io::Result<()> {
    writeln!(out, "users M = {}, resources N = {}", a.users, a.resources)?;
    writeln!(out, "mean rewards mu:")?;
    for row in &a.mu {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.4}")).collect();
        writeln!(out, "  {}", cells.join("  "))?;
    }
    writeln!(out, "optimal matching = {}", a.optimal_matching)?;
    writeln!(out, "mu* = {:.4}", a.mu_star)?;
    writeln!(out, "delta_min = {:.4}", a.delta_min)?;
    writeln!(out, "delta_max = {:.4}", a.delta_max)?;
    writeln!(out, "pi_min = {:.6}", a.pi_min)?;
    writeln!(out, "s_max = {}, s_min = {}", a.s_max, a.s_min)?;
    writeln!(out, "theta_max = {}, theta_min = {}", a.theta_max, a.theta_min)?;
    writeln!(out, "eps_max = {:.6}, eps_min = {:.6}", a.eps_max, a.eps_min)?;
    writeln!(out, "A bound = {:.6}", a.a_bound)?;
    let l = l_threshold(a);
    writeln!(out, "L threshold = {l:.6} (ceil {})", l.ceil())
}
