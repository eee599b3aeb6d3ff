use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use misalign_core::coverage::{count_captions, load_taxonomy, CoverageCounts, CoverageReport, Taxonomy, TOY_TAXONOMY};
use misalign_core::harness::{
    run_experiment, sweep, CovarianceRegime, ExperimentConfig, HarnessError, Profile, Stages, SweepSpec,
    MODEL_FILE,
};
use misalign_core::{BiasConfig, LatentSpec};

#[derive(Parser)]
#[command(name = "misalign", version, about = "Contrastive learning under cross-modal misalignment")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (JSON). Without it a preset is built from the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Selection code θ (preset only).
    #[arg(long, default_value_t = 1023)]
    theta: u64,
    /// Perturbation code ρ (preset only).
    #[arg(long, default_value_t = 1)]
    rho: u64,
    /// Draw Σ_s from a Wishart instead of using the identity (preset only).
    #[arg(long)]
    dependent: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    /// The ten selection settings.
    Selection,
    /// The ten perturbation settings.
    Perturbation,
    /// Selection [8] with perturbation [2].
    Joint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    Independent,
    Dependent,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved experiment config as JSON.
    Config(RunArgs),
    /// Draw generative models and write them to the run directory.
    GenModel(RunArgs),
    /// Train encoders (drawing models first if none exist yet).
    Train(RunArgs),
    /// Probe trained encoders.
    Probe(RunArgs),
    /// Evaluate downstream tasks on trained encoders.
    Downstream(RunArgs),
    /// Check the analytic optimum (alignment and uniformity).
    Oracle(RunArgs),
    /// Run every stage.
    Run(RunArgs),
    /// Sweep over bias settings.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Axis::Selection)]
        axis: Axis,
        #[arg(long, value_enum, default_value_t = Regime::Both)]
        regime: Regime,
    },
    /// Concept coverage of a caption corpus.
    Coverage {
        /// Taxonomy JSON; the bundled toy taxonomy when omitted.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Caption files, one caption per line.
        #[arg(long, required = true, num_args = 1..)]
        captions: Vec<PathBuf>,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let profile = match args.profile {
                ProfileArg::Desk => Profile::Desk,
                ProfileArg::Paper => Profile::Paper,
            };
            let latent = if args.dependent {
                LatentSpec::dependent()
            } else {
                LatentSpec::independent()
            };
            let mut c = ExperimentConfig::preset(profile, latent, BiasConfig::from_codes(args.theta, args.rho));
            let b = c.resolve_bias()?;
            c.setting_id = format!(
                "{}_theta{}_rho{}",
                if args.dependent { "dependent" } else { "independent" },
                b.theta.index,
                b.rho.index
            );
            c
        }
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn models_exist(cfg: &ExperimentConfig) -> bool {
    cfg.seeds.iter().all(|s| {
        cfg.output_dir
            .join(&cfg.setting_id)
            .join(format!("seed_{s}"))
            .join(MODEL_FILE)
            .exists()
    })
}

fn run_stages(mut cfg: ExperimentConfig, stages: Stages) -> Result<()> {
    cfg.stages = stages;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .ok();
    match run_experiment(&cfg) {
        Ok(record) => {
            info!("run complete: {}", record.dir.display());
            println!("{}", record.dir.display());
            Ok(())
        }
        Err(HarnessError::RunFailed(record)) => {
            for s in record.failures() {
                eprintln!("seed {} failed: {}", s.plan.master, s.failure.as_deref().unwrap_or(""));
            }
            bail!("{} seed(s) failed; partial artifacts in {}", record.failures().count(), record.dir.display())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_coverage(taxonomy: Option<&Path>, captions: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let taxonomy = match taxonomy {
        Some(p) => load_taxonomy(p).with_context(|| format!("loading {}", p.display()))?,
        None => Taxonomy::from_json(TOY_TAXONOMY)?,
    };
    let mut counts = CoverageCounts::zero(&taxonomy);
    for path in captions {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        counts.merge(&count_captions(BufReader::new(f), &taxonomy)?)?;
    }
    let report = CoverageReport::from_counts(&taxonomy, &counts)?;
    match out {
        Some(p) => report.write_csv(File::create(p)?)?,
        None => report.write_csv(std::io::stdout().lock())?,
    }
    for g in &report.groups {
        eprintln!("{:<12} {:>8.4}%", g.group, 100.0 * g.mean_rate);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let only = |f: fn(&mut Stages)| {
        let mut s = Stages::NONE;
        f(&mut s);
        s
    };
    match cli.command {
        Command::Config(args) => {
            println!("{}", build_config(&args)?.to_json()?);
            Ok(())
        }
        Command::GenModel(args) => run_stages(build_config(&args)?, only(|s| s.generate = true)),
        Command::Train(args) => {
            let cfg = build_config(&args)?;
            let generate = !models_exist(&cfg);
            let mut stages = only(|s| s.train = true);
            stages.generate = generate;
            run_stages(cfg, stages)
        }
        Command::Probe(args) => run_stages(build_config(&args)?, only(|s| s.probe = true)),
        Command::Downstream(args) => run_stages(build_config(&args)?, only(|s| s.downstream = true)),
        Command::Oracle(args) => {
            let cfg = build_config(&args)?;
            let generate = !models_exist(&cfg);
            let mut stages = only(|s| s.oracle = true);
            stages.generate = generate;
            run_stages(cfg, stages)
        }
        Command::Run(args) => run_stages(build_config(&args)?, Stages::ALL),
        Command::Sweep { run, axis, regime } => {
            let base = build_config(&run)?;
            let mut spec = match axis {
                Axis::Selection => SweepSpec::selection(base),
                Axis::Perturbation => SweepSpec::perturbation(base),
                Axis::Joint => SweepSpec::joint(base),
            };
            spec.covariances = match regime {
                Regime::Independent => vec![CovarianceRegime::Independent],
                Regime::Dependent => vec![CovarianceRegime::Dependent],
                Regime::Both => vec![CovarianceRegime::Independent, CovarianceRegime::Dependent],
            };
            let out = sweep(&spec)?;
            let failed = out.status.iter().filter(|r| r.status != "ok").count();
            println!("{}", out.probe_csv.display());
            println!("{}", out.downstream_csv.display());
            println!("{}", out.status_csv.display());
            if failed > 0 {
                eprintln!("{failed} (setting, seed) pairs failed; see {}", out.status_csv.display());
            }
            Ok(())
        }
        Command::Coverage {
            taxonomy,
            captions,
            out,
        } => run_coverage(taxonomy.as_deref(), &captions, out.as_deref()),
    }
}
