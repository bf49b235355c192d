use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambdaflow_core::campaign::{
    brd4_fixture, compare, create_file, render_table, render_validation, run_mode, sweep, termination_report,
    ttx_spread, validation_cells, write_run_outputs, write_sweep_csv, write_table_csv, CampaignConfig, CampaignMode,
    RunError, SweepKind, COMPARISON_CSV_HEADER, TERMINATION_HEADER, VALIDATION_HEADER,
};

#[derive(Debug, Parser)]
#[command(name = "lambdaflow", version, about = "Run simulated free-energy campaigns and print their reports")]
struct Cli {
    /// Campaign configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured mode.
    #[arg(long, global = true)]
    mode: Option<CampaignMode>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured campaign and write timeline, overheads and per-system results.
    Run,
    /// Run a weak or strong scaling ladder.
    Sweep {
        #[arg(value_parser = parse_sweep_kind)]
        kind: SweepKind,
    },
    /// Reference, non-adaptive and adaptive-quadrature runs side by side.
    Compare,
    /// Published BRD4 values against their references.
    Validate,
    /// Fixed-length against adaptively terminated production.
    TermReport,
}

fn parse_sweep_kind(s: &str) -> Result<SweepKind, String> {
    s.parse()
}

fn load(cli: &Cli) -> Result<CampaignConfig, RunError> {
    let path = cli.config.as_deref().ok_or_else(|| lambdaflow_core::campaign::ConfigError::Invalid {
        field: "--config".into(),
        reason: "this command needs a configuration file".into(),
    })?;
    let mut cfg = CampaignConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
    write_table_csv(create_file(path)?, header, rows)
        .map_err(|e| RunError::Output { path: path.display().to_string(), reason: e.to_string() })
}

fn cmd_run(cfg: &CampaignConfig) -> Result<(), RunError> {
    let out = run_mode(cfg, cfg.mode)?;
    write_run_outputs(&cfg.output_dir, &out, cfg.pilot.total_cores)?;
    let rows: Vec<Vec<String>> = out
        .results
        .iter()
        .map(|r| {
            vec![
                r.system.clone(),
                r.n_windows.to_string(),
                r.replicas.to_string(),
                format!("{:.3} ± {:.3}", r.delta_g, r.stderr),
                format!("{:.1}", r.production_ns),
                format!("{:.1}", r.simulated_ns),
                format!("{:.0}", r.ttx_s),
            ]
        })
        .collect();
    println!("mode {}", out.mode);
    print!(
        "{}",
        render_table(&["system", "windows", "replicas", "ddg", "production_ns", "simulated_ns", "task_time_s"], &rows)
    );
    let b = out.outcome.overheads;
    println!(
        "ttc {:.1} s = ttx {:.1} + framework {:.1} + runtime {:.1} + launch {:.1}",
        b.total_time_to_completion, b.task_execution_time, b.framework_overhead, b.runtime_overhead, b.launch_overhead
    );
    println!("{LAUNCH_NOTE}");
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

const LAUNCH_NOTE: &str = "launch overhead is modelled (per-task delay plus retry penalty), not measured";

fn cmd_sweep(cfg: &CampaignConfig, kind: SweepKind) -> Result<(), RunError> {
    let points = sweep(cfg, kind)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let b = p.breakdown;
            vec![
                p.rung.protocols.to_string(),
                p.rung.total_cores.to_string(),
                p.tasks.to_string(),
                p.generations.to_string(),
                p.peak_concurrency.to_string(),
                p.failed_attempts.to_string(),
                format!("{:.1}", b.task_execution_time),
                format!("{:.1}", b.framework_overhead),
                format!("{:.1}", b.runtime_overhead),
                format!("{:.1}", b.launch_overhead),
                format!("{:.1}", b.total_time_to_completion),
            ]
        })
        .collect();
    print!(
        "{}",
        render_table(
            &[
                "protocols", "cores", "tasks", "generations", "peak", "failed", "ttx_s", "framework_s", "runtime_s",
                "launch_s", "ttc_s",
            ],
            &rows
        )
    );
    match kind {
        SweepKind::Weak => println!("ttx spread {:.2}%", 100.0 * ttx_spread(&points)),
        SweepKind::Strong => {
            let base = points.first().map_or(1.0, |p| p.ttx());
            let ratios: Vec<String> = points.iter().map(|p| format!("{:.2}", p.ttx() / base)).collect();
            println!("ttx ratios {}", ratios.join(" : "));
        }
    }
    println!("{LAUNCH_NOTE}");
    let name = match kind {
        SweepKind::Weak => "sweep_weak.csv",
        SweepKind::Strong => "sweep_strong.csv",
    };
    let path = cfg.output_dir.join(name);
    write_sweep_csv(create_file(&path)?, cfg, &points)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(cfg: &CampaignConfig) -> Result<(), RunError> {
    let report = compare(cfg)?;
    print!("{}", report.render());
    let path = cfg.output_dir.join("comparison.csv");
    write_csv(&path, &COMPARISON_CSV_HEADER, &report.csv_rows())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_term_report(cfg: &CampaignConfig) -> Result<(), RunError> {
    let report = termination_report(cfg)?;
    print!("{}", report.render());
    let path = cfg.output_dir.join("termination.csv");
    write_csv(&path, &TERMINATION_HEADER, &report.cells())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(out: &Path) -> Result<(), RunError> {
    let rows = brd4_fixture();
    print!("{}", render_validation(&rows));
    let path = out.join("validation.csv");
    write_csv(&path, &VALIDATION_HEADER, &validation_cells(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), RunError> {
    if let Command::Validate = cli.command {
        // Fixture-driven; a config only matters for its output directory.
        let out = match (&cli.out, &cli.config) {
            (Some(o), _) => o.clone(),
            (None, Some(_)) => load(cli)?.output_dir,
            (None, None) => PathBuf::from("out"),
        };
        return cmd_validate(&out);
    }
    let cfg = load(cli)?;
    match &cli.command {
        Command::Run => cmd_run(&cfg),
        Command::Sweep { kind } => cmd_sweep(&cfg, *kind),
        Command::Compare => cmd_compare(&cfg),
        Command::TermReport => cmd_term_report(&cfg),
        Command::Validate => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
