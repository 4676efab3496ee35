use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use l0dict_cli::commands::{export_patch_lp, oracle_report, random_instance, PatchSelection};
use l0dict_cli::dictionary_io::parse_dictionary;
use l0dict_cli::{compare_report, parse_table, run_denoise, ExperimentConfig};

/// Worker threads for column-parallel sparse coding.
const THREADS_ENV: &str = "L0DICT_THREADS";

#[derive(Parser)]
#[command(name = "l0dict", version, about = "Exact l0 sparse coding and dictionary learning for patch denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run denoising experiments from a config file and flag overrides.
    Denoise(DenoiseArgs),
    /// Merge results tables and mark the best method per cell.
    Report(ReportArgs),
    /// Write one patch's MIQP instance in LP format.
    ExportLp(ExportLpArgs),
    /// Compare branch and bound with exhaustive search on a random instance.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct DenoiseArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile: desk or paper.
    #[arg(long)]
    profile: Option<String>,
    /// Comma-separated PGM paths; `card` is the built-in scene.
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    crop: Option<String>,
    #[arg(long)]
    sigmas: Option<String>,
    /// Comma-separated: miqp, proximal, ksvd.
    #[arg(long)]
    methods: Option<String>,
    /// Dictionary update for miqp and proximal: ls or ksvd.
    #[arg(long)]
    updater: Option<String>,
    #[arg(long)]
    atoms: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    patch_size: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    /// Patches drawn for learning (0 = all).
    #[arg(long)]
    subsample: Option<String>,
    /// `auto` (30 / sigma) or a number.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    remove_mean: Option<String>,
    /// Seconds per MIQP column.
    #[arg(long)]
    time_limit: Option<String>,
    #[arg(long)]
    node_limit: Option<String>,
    #[arg(long)]
    gap_tolerance: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    output: Option<String>,
}

impl DenoiseArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 19] {
        [
            ("images", &self.images),
            ("crop", &self.crop),
            ("sigmas", &self.sigmas),
            ("methods", &self.methods),
            ("updater", &self.updater),
            ("atoms", &self.atoms),
            ("budget", &self.budget),
            ("iterations", &self.iterations),
            ("alpha", &self.alpha),
            ("patch_size", &self.patch_size),
            ("stride", &self.stride),
            ("subsample", &self.subsample),
            ("lambda", &self.lambda),
            ("remove_mean", &self.remove_mean),
            ("time_limit", &self.time_limit),
            ("node_limit", &self.node_limit),
            ("gap_tolerance", &self.gap_tolerance),
            ("seed", &self.seed),
            ("output", &self.output),
        ]
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::parse_onto(self.profile.as_deref(), &text)?
            }
            None => ExperimentConfig::profile(self.profile.as_deref().unwrap_or("desk"))?,
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(config)
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Results tables (`results.tsv`) to merge.
    #[arg(required = true)]
    tables: Vec<PathBuf>,
    /// Method whose gain over the others is averaged.
    #[arg(long, default_value = "miqp")]
    reference: String,
    /// Write the markdown here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportLpArgs {
    #[arg(long, default_value = "card")]
    image: String,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, default_value_t = 50.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Patch index in row-major grid order.
    #[arg(long, default_value_t = 0)]
    patch: usize,
    /// Dictionary file written by `denoise`; otherwise one is drawn from the patches.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    atoms: usize,
    #[arg(long, default_value_t = 5)]
    budget: usize,
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    /// Leave out the l1 and l-infinity tightening rows.
    #[arg(long)]
    no_tightening: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Big-M as a multiple of the largest atom correlation.
    #[arg(long, default_value_t = 10.0)]
    m_factor: f64,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV} must be a positive integer"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Denoise(args) => {
            let config = args.resolve()?;
            config.validate()?;
            if config.profile == "paper" {
                eprintln!(
                    "warning: profile `paper` may need up to {:.0} hours of MIQP time",
                    config.worst_case_hours()
                );
            }
            let summary = run_denoise(&config)?;
            println!("wrote {}", summary.output.join("results.tsv").display());
            if summary.failures > 0 {
                eprintln!("{} run(s) failed", summary.failures);
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report(args) => {
            let mut rows = Vec::new();
            for path in &args.tables {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                rows.extend(parse_table(&text).with_context(|| format!("parsing {}", path.display()))?);
            }
            let cmp = compare_report(&rows, &args.reference)?;
            emit(&cmp.to_markdown(), args.output.as_ref())?;
        }
        Command::ExportLp(args) => {
            let dictionary = match &args.dictionary {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    Some(parse_dictionary(&text).map_err(anyhow::Error::msg)?)
                }
                None => None,
            };
            let sel = PatchSelection {
                image: args.image,
                crop: args.crop,
                sigma: args.sigma,
                seed: args.seed,
                patch_size: args.patch_size,
                stride: args.stride,
                patch: args.patch,
            };
            let lp = export_patch_lp(&sel, dictionary, args.atoms, args.budget, args.alpha, !args.no_tightening)?;
            emit(&lp, args.output.as_ref())?;
        }
        Command::Oracle(args) => {
            let problem = random_instance(args.n, args.p, args.budget, args.m_factor, args.seed)?;
            print!("{}", oracle_report(&problem)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
