use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use safelink::bench::bench_update;
use safelink::config::load_config;
use safelink::sim::{run, SimConfig};
use safelink::sweep::{summarize, sweep_c1, to_csv};
use safelink::verify::run_checks;
use safelink::workflow::{train_with_reports, write_json_file, write_sim_outputs, write_train_outputs, Format};

/// Learned control barrier functions with incremental RVFL updates.
#[derive(Parser, Debug)]
#[command(name = "safelink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides both the sampling seed and the RVFL seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the unsafe-misclassification cost.
    #[arg(long, global = true)]
    c1: Option<f64>,
    /// Overrides the safe-misclassification cost.
    #[arg(long, global = true)]
    c2: Option<f64>,
    /// Table format for trajectory and sweep outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the offline sample; write model.bin and reports/*.json.
    Train,
    /// Run the closed loop; write trajectory, summary.json and events.json.
    Simulate {
        /// Never update the model at region expansions.
        #[arg(long)]
        no_updates: bool,
    },
    /// Sign-rule confusion over a c1 grid and several seeds.
    SweepC1 {
        #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5,2.0")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19")]
        seeds: Vec<u64>,
    },
    /// Time incremental updates against batch retraining.
    BenchUpdate {
        /// Offline sizes; one report per size.
        #[arg(long, value_delimiter = ',', default_value = "50000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        delta: usize,
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
        scaling: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Finite-difference and oracle self-checks.
    Verify,
}

fn load(common: &Common) -> safelink::Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => {
            let mut c = SimConfig::default();
            c.mpc = c.planner_config();
            c
        }
    };
    if let Some(s) = common.seed {
        cfg.scenario.seed = s;
        cfg.rvfl.seed = s;
    }
    if let Some(c1) = common.c1 {
        cfg.cost.c1 = c1;
    }
    if let Some(c2) = common.c2 {
        cfg.cost.c2 = c2;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> safelink::Result<bool> {
    let cfg = load(&cli.common)?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Train => {
            let report = train_with_reports(&cfg)?;
            write_train_outputs(&report, out)?;
            let ok = report.invariants_hold();
            println!(
                "trained on {} samples; l_b = {:.6}, coverage violations = {}, conservative = {}",
                report.model.sample_count(),
                report.lipschitz.l_b,
                report.coverage.violations,
                report.conservativeness.covered
            );
            Ok(ok)
        }
        Command::Simulate { no_updates } => {
            let mut cfg = cfg;
            if *no_updates {
                cfg.sim.updates_enabled = false;
            }
            let log = run(&cfg)?;
            write_sim_outputs(&log, out, cli.common.format)?;
            for w in &log.warnings {
                eprintln!("warning: {w}");
            }
            let s = &log.summary;
            println!(
                "reached = {}, final error = {:.4} m, violations = {}, steps = {}, min B = {:.4}",
                s.reached, s.final_error_m, s.true_region_violations, s.total_steps, s.min_b
            );
            Ok(s.reached && s.true_region_violations == 0)
        }
        Command::SweepC1 { grid, seeds } => {
            let rows = sweep_c1(&cfg, grid, seeds)?;
            std::fs::create_dir_all(out)?;
            match cli.common.format {
                Format::Csv => std::fs::write(out.join("sweep.csv"), to_csv(&rows))?,
                Format::Json => write_json_file(&out.join("sweep.json"), &rows)?,
            }
            for s in summarize(&rows) {
                println!(
                    "c1 = {}: median N_u->s = {}, zero in {:.0}% of seeds, median accuracy = {:.4}",
                    s.c1,
                    s.median_unsafe_as_safe,
                    100.0 * s.zero_unsafe_as_safe_fraction,
                    s.median_accuracy
                );
            }
            Ok(true)
        }
        Command::BenchUpdate { sizes, delta, scaling, repeats } => {
            let mut reports = Vec::new();
            for &n in sizes {
                let r = bench_update(&cfg, n, *delta, scaling, *repeats)?;
                println!(
                    "N = {n}, dN = {delta}: incremental {:.3} ms, batch {:.3} ms, speedup {:.1}x, scaling exponent {:.2}",
                    r.median_incremental_ms, r.median_batch_ms, r.speedup, r.scaling_exponent
                );
                reports.push(r);
            }
            if reports.len() == 1 {
                write_json_file(&out.join("bench.json"), &reports[0])?;
            } else {
                write_json_file(&out.join("bench.json"), &reports)?;
            }
            Ok(true)
        }
        Command::Verify => {
            let checks = run_checks(&cfg.rvfl, &cfg.cost, cfg.scenario.seed)?;
            write_json_file(&out.join("reports").join("verify.json"), &checks)?;
            for c in &checks {
                println!("{} {:<36} {:.3e} (tol {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
