use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tree_shrink::measurement::{
    add_gaussian_noise, add_spiky_noise, make_gaussian_operator, make_identity_operator, measurement_count, psnr,
    read_image, write_image, InferenceMethod, SensingOperator,
};
use tree_shrink::model::PriorStructure;
use tree_shrink::randmath::RngHandle;
use tree_shrink::sampler::{run_chain, run_chains, ChainConfig};
use tree_shrink::transform::ImageGrid;
use tree_shrink::variational::{run_solver, SolverConfig, SolverMethod};

use crate::config::{ModelChoice, RunConfig};
use crate::manifest::{Command, Metrics, RunManifest};
use crate::{CliError, CliResult};

// Stream ids under the experiment seed.
const OPERATOR_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const INFERENCE_STREAM: u64 = 2;

struct Fit {
    mean: Vec<f64>,
    noise_std: f64,
    acceptance: Option<f64>,
    spiky_mean: Option<Vec<f64>>,
    iterations: usize,
}

fn infer(
    y: &[f64],
    op: &SensingOperator,
    cfg: &RunConfig,
    structure: PriorStructure,
    spiky: bool,
    trace: &Path,
) -> CliResult<Fit> {
    let e = &cfg.experiment;
    if e.method == InferenceMethod::Mcmc {
        let chain = ChainConfig {
            n_samples: e.iterations,
            burn_in: e.burn_in,
            seed: e.seed,
            stream: INFERENCE_STREAM,
            spiky,
            structure,
            ..ChainConfig::default()
        };
        let s = if cfg.chains > 1 {
            run_chains(y, op, &chain, cfg.chains)?
        } else {
            run_chain(y, op, &chain)?
        };
        s.write_trace_csv(trace)?;
        return Ok(Fit {
            noise_std: s.noise_std,
            acceptance: Some(s.acceptance_rate()),
            iterations: e.iterations,
            mean: s.mean,
            spiky_mean: s.spiky_mean,
        });
    }
    let solver = SolverConfig {
        method: SolverMethod::try_from(e.method)?,
        max_iterations: e.iterations,
        seed: e.seed,
        stream: INFERENCE_STREAM,
        spiky,
        structure,
        ..SolverConfig::default()
    };
    let s = run_solver(y, op, &solver)?;
    s.write_diagnostics_csv(trace)?;
    Ok(Fit {
        noise_std: s.noise_std,
        acceptance: None,
        iterations: s.iterations,
        mean: s.mean,
        spiky_mean: s.spiky_mean,
    })
}

fn load(cfg: &RunConfig) -> CliResult<ImageGrid> {
    cfg.validate()?;
    let img = read_image(&cfg.experiment.image)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::User(format!("{}: {e}", cfg.out_dir.display())))?;
    Ok(img)
}

fn write_metrics(path: &Path, m: &Metrics) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "metric,value")?;
    writeln!(f, "psnr,{}", m.psnr)?;
    if let Some(v) = m.input_psnr {
        writeln!(f, "input_psnr,{v}")?;
    }
    writeln!(f, "noise_std,{}", m.noise_std)?;
    if let Some(v) = m.acceptance_rate {
        writeln!(f, "acceptance_rate,{v}")?;
    }
    if let Some(v) = m.spike_recall {
        writeln!(f, "spike_recall,{v}")?;
    }
    writeln!(f, "iterations,{}", m.iterations)?;
    f.flush()?;
    Ok(())
}

struct Run<'a> {
    command: Command,
    cfg: &'a RunConfig,
    structure: PriorStructure,
    started: Instant,
}

impl Run<'_> {
    fn path(&self, what: &str) -> PathBuf {
        self.cfg.out_dir.join(format!("{}-{}-{what}", self.command, self.structure))
    }

    fn finish(self, metrics: Metrics, mut outputs: Vec<PathBuf>) -> CliResult<RunManifest> {
        let metrics_path = self.path("metrics.csv");
        write_metrics(&metrics_path, &metrics)?;
        outputs.push(metrics_path);
        let manifest_path = self.path("manifest.txt");
        outputs.push(manifest_path.clone());
        let model = match self.structure {
            PriorStructure::Tree => ModelChoice::Tree,
            PriorStructure::Flat => ModelChoice::Flat,
        };
        let manifest = RunManifest {
            command: self.command,
            config: RunConfig { model, ..self.cfg.clone() },
            version: env!("CARGO_PKG_VERSION").to_string(),
            elapsed_secs: self.started.elapsed().as_secs_f64(),
            metrics,
            outputs,
        };
        manifest.write(&manifest_path)?;
        manifest.verify_outputs()?;
        Ok(manifest)
    }
}

/// Compressive sensing: Gaussian `H` with `floor(csr * n)` rows, optional
/// Gaussian noise on `y`, then recovery under each requested structure.
pub fn cmd_cs(cfg: &RunConfig) -> CliResult<Vec<RunManifest>> {
    let img = load(cfg)?;
    let basis = cfg.make_basis(img.height, img.width)?;
    let e = &cfg.experiment;
    let m = measurement_count(e.csr, img.len())?;
    let mut op_rng = RngHandle::new(e.seed, OPERATOR_STREAM);
    let op = make_gaussian_operator(m, basis.clone(), &mut op_rng)?;
    let clean = op.apply_h(&img.values)?;
    let y = add_gaussian_noise(&clean, e.noise_sigma, &mut RngHandle::new(e.seed, NOISE_STREAM))?;

    let mut manifests = Vec::new();
    for structure in cfg.model.structures() {
        let run = Run { command: Command::Cs, cfg, structure, started: Instant::now() };
        let trace = run.path("trace.csv");
        let fit = infer(&y, &op, cfg, structure, false, &trace)?;
        let rec = ImageGrid::new(img.height, img.width, basis.synthesize_vec(&fit.mean)?)?;
        let rec_path = run.path("recon.pgm");
        write_image(&rec_path, &rec)?;
        let metrics = Metrics {
            psnr: psnr(&img, &rec)?,
            input_psnr: None,
            noise_std: fit.noise_std,
            acceptance_rate: fit.acceptance,
            spike_recall: None,
            iterations: fit.iterations,
        };
        manifests.push(run.finish(metrics, vec![rec_path, trace])?);
    }
    Ok(manifests)
}

/// Fraction of injected spikes found among the `round(rate * n)` largest
/// entries of `|w|`; `None` when nothing was injected.
pub fn spike_recall(w: &[f64], mask: &[bool], rate: f64) -> Option<f64> {
    let injected = mask.iter().filter(|&&b| b).count();
    if injected == 0 || w.len() != mask.len() {
        return None;
    }
    let k = ((rate * w.len() as f64).round() as usize).min(w.len());
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    let hits = order[..k].iter().filter(|&&i| mask[i]).count();
    Some(hits as f64 / injected as f64)
}

/// Denoising: identity sensing, Gaussian then spiky noise, inference with
/// the spiky-noise model (Gaussian-only when the spike rate is zero).
pub fn cmd_denoise(cfg: &RunConfig) -> CliResult<Vec<RunManifest>> {
    let img = load(cfg)?;
    let e = &cfg.experiment;
    if e.csr != 1.0 {
        return Err(CliError::User(format!("denoising observes every pixel; CS ratio must be 1, got {}", e.csr)));
    }
    let basis = cfg.make_basis(img.height, img.width)?;
    let op = make_identity_operator(basis.clone());
    let mut rng = RngHandle::new(e.seed, NOISE_STREAM);
    let gaussian = ImageGrid::new(img.height, img.width, add_gaussian_noise(&img.values, e.noise_sigma, &mut rng)?)?;
    let (noisy, mask) = add_spiky_noise(&gaussian, e.spike_rate, e.spike_range, &mut rng)?;
    let input_psnr = psnr(&img, &noisy)?;
    let noisy_path = cfg.out_dir.join("denoise-noisy.pgm");
    write_image(&noisy_path, &noisy)?;

    // Without injected spikes the spike component would only soak up edges.
    let spiky = e.spike_rate > 0.0;
    let mut manifests = Vec::new();
    for structure in cfg.model.structures() {
        let run = Run { command: Command::Denoise, cfg, structure, started: Instant::now() };
        let trace = run.path("trace.csv");
        let fit = infer(&noisy.values, &op, cfg, structure, spiky, &trace)?;
        let rec = ImageGrid::new(img.height, img.width, basis.synthesize_vec(&fit.mean)?)?;
        let rec_path = run.path("recon.pgm");
        write_image(&rec_path, &rec)?;
        let w = fit.spiky_mean.unwrap_or_else(|| vec![0.0; img.len()]);
        let spike_map = ImageGrid::new(img.height, img.width, w.iter().map(|v| v.abs()).collect())?;
        let spike_path = run.path("spikes.pgm");
        write_image(&spike_path, &spike_map)?;
        let metrics = Metrics {
            psnr: psnr(&img, &rec)?,
            input_psnr: Some(input_psnr),
            noise_std: fit.noise_std,
            acceptance_rate: fit.acceptance,
            spike_recall: spike_recall(&w, &mask, e.spike_rate),
            iterations: fit.iterations,
        };
        manifests.push(run.finish(metrics, vec![noisy_path.clone(), rec_path, spike_path, trace])?);
    }
    Ok(manifests)
}
