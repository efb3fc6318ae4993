use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uavbs::agent::Variant;
use uavbs::harness::{self, Profile, RunConfig};
use uavbs::traffic::LoadMode;
use uavbs::Result;

#[derive(Parser, Debug)]
#[command(name = "uavbs", version, about = "UAV base station simulator and DQN controller")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Full)]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every candidate state of one phase.
    Sweep {
        #[arg(long)]
        phase: usize,
        #[arg(long, value_enum)]
        load: LoadArg,
    },
    /// Train and validate over all phases, then write the reward and KPI tables.
    Train {
        /// Defaults to the configured variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Defaults to the configured load.
        #[arg(long, value_enum)]
        load: Option<LoadChoice>,
    },
    /// Phase-0 tilt or position sweep.
    Analyze {
        #[arg(value_enum)]
        kind: AnalysisKind,
    },
    /// Load, validate and print the effective configuration.
    ValidateConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Full,
    Fast,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LoadArg {
    Light,
    Heavy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LoadChoice {
    Light,
    Heavy,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    AeVas,
    VasRetrained,
    Baseline,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnalysisKind {
    Tilt,
    Position,
}

impl From<LoadArg> for LoadMode {
    fn from(l: LoadArg) -> Self {
        match l {
            LoadArg::Light => LoadMode::Light,
            LoadArg::Heavy => LoadMode::Heavy,
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => harness::load_config(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_profile(match cli.profile {
        ProfileArg::Full => Profile::Full,
        ProfileArg::Fast => Profile::Fast,
    });
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if let Command::ValidateConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    fs::create_dir_all(&cli.out)?;
    let ev = cfg.evaluator()?;
    let bounds = harness::resolve_bounds(&cfg, &ev)?;
    harness::write_effective_config(&cfg, &bounds, &cli.out)?;

    match &cli.command {
        Command::Sweep { phase, load } => {
            let load = LoadMode::from(*load);
            let sweep = harness::oracle_sweep(&ev, bounds.for_load(load), *phase, load)?;
            let path = cli.out.join(sweep.file_name());
            sweep.write_csv(fs::File::create(&path)?)?;
            let best = sweep.best();
            println!(
                "phase {} {}: {} states, best reward {:.4} at tilt {} x {} y {} z {}",
                phase,
                load.name(),
                sweep.rows.len(),
                sweep.max_reward(),
                best.values[0],
                best.values[1],
                best.values[2],
                best.values[3]
            );
            println!("wrote {}", path.display());
        }
        Command::Train { variant, load } => {
            let variants = match variant {
                None => vec![cfg.variant],
                Some(VariantArg::AeVas) => vec![Variant::AeVas],
                Some(VariantArg::VasRetrained) => vec![Variant::VasRetrained],
                Some(VariantArg::Baseline) => vec![Variant::Baseline],
                Some(VariantArg::All) => Variant::ALL.to_vec(),
            };
            let loads = match load {
                None => vec![cfg.load],
                Some(LoadChoice::Light) => vec![LoadMode::Light],
                Some(LoadChoice::Heavy) => vec![LoadMode::Heavy],
                Some(LoadChoice::Both) => LoadMode::ALL.to_vec(),
            };
            let exp = harness::run_experiment_with(&ev, &cfg.agent, cfg.seed, &bounds, &variants, &loads)?;
            for row in exp.table3() {
                println!("{:>14} {:>5}: mean validation reward {:.4}", row.label, row.load.name(), row.reward);
            }
            for path in exp.write_all(&cli.out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Analyze { kind } => {
            let path = match kind {
                AnalysisKind::Tilt => {
                    let rows = harness::tilt_sweep(&ev, &bounds)?;
                    let path = cli.out.join("tilt_sweep.csv");
                    harness::write_tilt_csv(&rows, fs::File::create(&path)?)?;
                    path
                }
                AnalysisKind::Position => {
                    let rows = harness::position_sweep(&ev, &bounds)?;
                    let path = cli.out.join("position_sweep.csv");
                    harness::write_position_csv(&rows, fs::File::create(&path)?)?;
                    path
                }
            };
            println!("wrote {}", path.display());
        }
        Command::ValidateConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
