use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use multifreq::{run, HarnessError, RunContext, ScenarioConfig, Subcommand};

/// Phaseless near-field measurement experiments.
#[derive(Debug, Parser)]
#[command(name = "multifreq", version)]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,

    /// Scenario file (TOML). Required by everything except `report`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, env = "MULTIFREQ_SEED")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Measurement CSV for `retrieve`, or run directory for `report`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "MULTIFREQ_THREADS", default_value_t = 0)]
    threads: usize,

    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let mut config = cli.config.as_deref().map(ScenarioConfig::load).transpose()?;
    if let (Some(c), Some(seed)) = (config.as_mut(), cli.seed) {
        c.seed = seed;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| HarnessError::Usage(format!("--threads: {e}")))?;
    let ctx = RunContext {
        config,
        out_dir: cli.out.clone(),
        input: cli.input.clone(),
    };
    let record = run(cli.command, &ctx)?;
    println!("{} ({})", cli.command.name(), record.config_hash);
    for (key, value) in &record.metrics {
        println!("  {key} = {value}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
