use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tree_shrink::measurement::InferenceMethod;
use tree_shrink::model::PriorStructure;
use tree_shrink_cli::{
    cmd_check, cmd_cs, cmd_denoise, cmd_prior_sample, BasisChoice, CheckOptions, CliError, CliResult, Fault,
    ModelChoice, PriorSampleConfig, RunConfig, RunManifest, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "tree-shrink", version, about = "Tree-structured Bayesian shrinkage experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compressive-sensing recovery of an image from Gaussian projections.
    Cs(RunArgs),
    /// Remove Gaussian plus spiky noise from an image.
    Denoise(RunArgs),
    /// Draw images and gamma trees from the prior.
    PriorSample(PriorArgs),
    /// Run the fast invariant suite.
    Check {
        /// Test hook: inject a deliberate fault.
        #[arg(long, hide = true, value_parser = ["corrupt-filter"])]
        inject_fault: Option<String>,
    },
    /// Re-run the experiment recorded in a manifest.
    Replay { manifest: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "daub4")]
    basis: BasisChoice,
    /// Wavelet levels (default: 8x8 scaling block).
    #[arg(long)]
    levels: Option<usize>,
    /// Measurements per pixel (cs only).
    #[arg(long)]
    csr: Option<f64>,
    /// Gaussian noise std (default 0 for cs, 0.02 for denoise).
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Fraction of pixels hit by spikes (default 0.032, denoise only).
    #[arg(long)]
    spike_rate: Option<f64>,
    /// Spike amplitude range as `lo,hi`.
    #[arg(long, default_value = "0,1")]
    spike_range: String,
    /// mcmc, avb, vb:<s> or em.
    #[arg(long, default_value = "avb")]
    method: String,
    /// MCMC samples including burn-in, or VB/EM iterations (default 5000 / 100).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tree")]
    model: ModelChoice,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
    /// Parallel MCMC chains.
    #[arg(long, default_value_t = 1)]
    chains: usize,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value = "daub4")]
    basis: BasisChoice,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value = "tree")]
    model: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
}

fn run_config(a: RunArgs, denoise: bool) -> CliResult<RunConfig> {
    let method: InferenceMethod = a.method.parse()?;
    let mut cfg = RunConfig::new(a.image, method, a.out_dir);
    let e = &mut cfg.experiment;
    if denoise {
        if a.csr.is_some_and(|c| c != 1.0) {
            return Err(CliError::User("--csr does not apply to denoising".into()));
        }
        e.csr = 1.0;
        e.noise_sigma = a.noise_sigma.unwrap_or(0.02);
        e.spike_rate = a.spike_rate.unwrap_or(0.032);
    } else {
        if a.spike_rate.is_some_and(|r| r != 0.0) {
            return Err(CliError::User("--spike-rate applies to denoising only".into()));
        }
        e.csr = a.csr.unwrap_or(0.4);
        e.noise_sigma = a.noise_sigma.unwrap_or(0.0);
    }
    let range = a
        .spike_range
        .split_once(',')
        .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
    e.spike_range = range.ok_or_else(|| CliError::User(format!("bad --spike-range {:?}", a.spike_range)))?;
    if let Some(n) = a.iters {
        e.iterations = n;
    }
    e.burn_in = a.burnin;
    e.seed = a.seed;
    cfg.basis = a.basis;
    cfg.levels = a.levels;
    cfg.model = a.model;
    cfg.chains = a.chains;
    Ok(cfg)
}

fn report(manifests: &[RunManifest]) {
    for m in manifests {
        let e = &m.config.experiment;
        let mut line = format!(
            "{} {} {}: psnr {:.2} dB, noise std {:.4}",
            m.command, m.config.model, e.method, m.metrics.psnr, m.metrics.noise_std
        );
        if let Some(p) = m.metrics.input_psnr {
            line += &format!(", input {p:.2} dB");
        }
        if let Some(a) = m.metrics.acceptance_rate {
            line += &format!(", acceptance {a:.3}");
        }
        if let Some(r) = m.metrics.spike_recall {
            line += &format!(", spike recall {r:.3}");
        }
        println!("{line}");
        if let Some(p) = m.outputs.last() {
            println!("  manifest {}", p.display());
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Cmd::Cs(a) => report(&cmd_cs(&run_config(a, false)?)?),
        Cmd::Denoise(a) => report(&cmd_denoise(&run_config(a, true)?)?),
        Cmd::Replay { manifest } => report(&RunManifest::read(&manifest)?.replay()?),
        Cmd::PriorSample(a) => {
            let structure: PriorStructure = a.model.parse()?;
            let r = cmd_prior_sample(&PriorSampleConfig {
                height: a.size,
                width: a.size,
                basis: a.basis,
                levels: a.levels,
                structure,
                count: a.count,
                seed: a.seed,
                out_dir: a.out_dir,
            })?;
            for (band, depth, k) in &r.kurtosis {
                println!("{} level {depth}: excess kurtosis {k:.2}", band.name());
            }
            println!("wrote {} files", r.outputs.len());
        }
        Cmd::Check { inject_fault } => {
            let fault = inject_fault.map(|_| Fault::CorruptFilter);
            let r = cmd_check(&CheckOptions { fault })?;
            println!("{r}");
            if !r.all_passed() {
                return Err(CliError::Internal("self-check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are user errors (1); --help and --version succeed
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
