use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use invsel::harness::{
    generate_dataset, replicate_error_rates, run_experiment, write_run_dir, ExperimentConfig,
    Scenario,
};
use invsel::irmcmc::ChainConfig;
use invsel::random::SeededStream;
use invsel::testing::beta_sweep;
use invsel::Result;

#[derive(Parser)]
#[command(name = "invsel", about = "Inverse regression model selection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Single,
    Two,
}

#[derive(Parser)]
struct CommonArgs {
    /// JSON experiment configuration; field names mirror the config type.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Chain budget preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Drop the data-generating model from the roster.
    #[arg(long)]
    misspecified: bool,
    /// Scenario when no config file is given.
    #[arg(long, value_enum, default_value = "single")]
    scenario: ScenarioArg,
    /// Output directory.
    #[arg(long, default_value = "invsel-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its truth record.
    Generate(CommonArgs),
    /// Run the full selection pipeline and write the run directory.
    Run(CommonArgs),
    /// Recompute the decision table from a cached run directory.
    Sweep {
        /// Existing run directory holding summary.json and config.json.
        #[arg(long, default_value = "invsel-out")]
        out: PathBuf,
    },
    /// Replicate-averaged pBFDR/pBFNR estimates.
    Replicate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of replicates (defaults to the config value).
        #[arg(long)]
        replicates: Option<usize>,
    },
}

fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => {
            let scenario = match args.scenario {
                ScenarioArg::Single => Scenario::SingleCovariate,
                ScenarioArg::Two => Scenario::TwoCovariate,
            };
            ExperimentConfig::new(scenario)
        }
    };
    if let Some(seed) = args.seed {
        config.root_seed = seed;
    }
    if let Some(preset) = args.preset {
        config.chain = match preset {
            Preset::Paper => ChainConfig::paper(),
            Preset::Desk => ChainConfig::desk(),
        };
    }
    if args.misspecified {
        config.misspecified = true;
    }
    config.validate()?;
    Ok(config)
}

fn write_pretty(path: &Path, text: String) -> Result<()> {
    fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_generate(args: &CommonArgs) -> Result<ExitCode> {
    let config = resolve_config(args)?;
    let root = SeededStream::root(config.root_seed);
    let (data, truth) = generate_dataset(&config, &root.derive("data")?)?;
    fs::create_dir_all(&args.out)?;
    write_pretty(&args.out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    write_pretty(&args.out.join("dataset.json"), data.to_json()?)?;
    write_pretty(&args.out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    println!(
        "generated dataset: n={} m={} -> {}",
        data.n(),
        data.m(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: &CommonArgs) -> Result<ExitCode> {
    let config = resolve_config(args)?;
    let (data, output) = run_experiment(&config)?;
    write_run_dir(&args.out, &config, &data, &output)?;
    println!(
        "selected model {} (posterior {:.3}); reference {}",
        output.summary.selected,
        output.evidence.model_posterior[&output.summary.selected],
        output.summary.reference
    );
    if output.summary.failures.is_empty() {
        println!("run complete -> {}", args.out.display());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &output.summary.failures {
            eprintln!("partial failure: {f}");
        }
        eprintln!("partial results written -> {}", args.out.display());
        Ok(ExitCode::from(2))
    }
}

fn cmd_sweep(out: &Path) -> Result<ExitCode> {
    let config: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(out.join("config.json"))?)?;
    let summary: invsel::harness::RunSummary =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json"))?)?;
    let table_t1 = beta_sweep(&summary.v_t1, &config.beta_grid)?;
    let table_t2 = beta_sweep(&summary.v_t2, &config.beta_grid)?;
    let mut wtr = csv::Writer::from_path(out.join("decisions.csv"))?;
    wtr.write_record(["beta", "cfdr_t1", "cfnr_t1", "cfdr_t2", "cfnr_t2"])?;
    for (i, &beta) in table_t1.beta_grid.iter().enumerate() {
        wtr.write_record([
            format!("{beta:.2}"),
            format!("{:.17e}", table_t1.cfdr[i]),
            format!("{:.17e}", table_t1.cfnr[i]),
            format!("{:.17e}", table_t2.cfdr[i]),
            format!("{:.17e}", table_t2.cfnr[i]),
        ])?;
    }
    wtr.flush().map_err(|e| invsel::Error::Io(e.into()))?;
    println!("decision table rebuilt -> {}", out.join("decisions.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_replicate(common: &CommonArgs, replicates: Option<usize>) -> Result<ExitCode> {
    let config = resolve_config(common)?;
    let s = replicates.unwrap_or(config.replicates);
    let rates = replicate_error_rates(&config, s, false)?;
    fs::create_dir_all(&common.out)?;
    write_pretty(
        &common.out.join("replicates.json"),
        serde_json::to_string_pretty(&rates)?,
    )?;
    let mut wtr = csv::Writer::from_path(common.out.join("replicates.csv"))?;
    wtr.write_record([
        "beta",
        "pbfdr_t1",
        "se_pbfdr_t1",
        "pbfnr_t1",
        "se_pbfnr_t1",
        "pbfdr_t2",
        "se_pbfdr_t2",
        "pbfnr_t2",
        "se_pbfnr_t2",
    ])?;
    for i in 0..rates.beta_grid.len() {
        wtr.write_record([
            format!("{:.2}", rates.beta_grid[i]),
            format!("{:.17e}", rates.pbfdr_t1[i]),
            format!("{:.17e}", rates.se_pbfdr_t1[i]),
            format!("{:.17e}", rates.pbfnr_t1[i]),
            format!("{:.17e}", rates.se_pbfnr_t1[i]),
            format!("{:.17e}", rates.pbfdr_t2[i]),
            format!("{:.17e}", rates.se_pbfdr_t2[i]),
            format!("{:.17e}", rates.pbfnr_t2[i]),
            format!("{:.17e}", rates.se_pbfnr_t2[i]),
        ])?;
    }
    wtr.flush().map_err(|e| invsel::Error::Io(e.into()))?;
    println!(
        "averaged {s} replicates -> {}",
        common.out.join("replicates.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep { out } => cmd_sweep(out),
        Command::Replicate { common, replicates } => cmd_replicate(common, *replicates),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
