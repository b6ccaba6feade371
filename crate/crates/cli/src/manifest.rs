use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tree_shrink::measurement::ExperimentSpec;

use crate::config::{BasisChoice, ModelChoice, RunConfig};
use crate::{cmd_cs, cmd_denoise, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Cs,
    Denoise,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Cs => "cs",
            Command::Denoise => "denoise",
        })
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "cs" => Ok(Command::Cs),
            "denoise" => Ok(Command::Denoise),
            _ => Err(CliError::User(format!("unknown command {s:?} in manifest"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Reconstruction against the clean image.
    pub psnr: f64,
    /// Corrupted input against the clean image (denoising only).
    pub input_psnr: Option<f64>,
    /// Estimated Gaussian noise standard deviation.
    pub noise_std: f64,
    /// Gamma-update acceptance (MCMC only).
    pub acceptance_rate: Option<f64>,
    /// Fraction of injected spikes among the largest `|w|` (denoising only).
    pub spike_recall: Option<f64>,
    /// Sweeps or iterations actually run.
    pub iterations: usize,
}

/// Record of one run: the resolved configuration (enough to repeat it), the
/// metrics and the files written. One manifest per prior structure.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    /// `model` is always a single structure here.
    pub config: RunConfig,
    pub version: String,
    pub elapsed_secs: f64,
    pub metrics: Metrics,
    pub outputs: Vec<PathBuf>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let e = &self.config.experiment;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("command", self.command.to_string());
        kv("version", self.version.clone());
        kv("image", e.image.display().to_string());
        kv("basis", self.config.basis.to_string());
        kv("levels", self.config.levels.map_or_else(|| "auto".into(), |l| l.to_string()));
        kv("csr", e.csr.to_string());
        kv("noise_sigma", e.noise_sigma.to_string());
        kv("spike_rate", e.spike_rate.to_string());
        kv("spike_range", format!("{},{}", e.spike_range.0, e.spike_range.1));
        kv("seed", e.seed.to_string());
        kv("method", e.method.to_string());
        kv("iterations", e.iterations.to_string());
        kv("burn_in", e.burn_in.to_string());
        kv("model", self.config.model.to_string());
        kv("chains", self.config.chains.to_string());
        kv("out_dir", self.config.out_dir.display().to_string());
        kv("elapsed_secs", format!("{:.3}", self.elapsed_secs));
        kv("psnr", self.metrics.psnr.to_string());
        kv("input_psnr", opt(self.metrics.input_psnr));
        kv("noise_std", self.metrics.noise_std.to_string());
        kv("acceptance_rate", opt(self.metrics.acceptance_rate));
        kv("spike_recall", opt(self.metrics.spike_recall));
        kv("iterations_run", self.metrics.iterations.to_string());
        for o in &self.outputs {
            kv("output", o.display().to_string());
        }
        s
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut map = std::collections::HashMap::new();
        let mut outputs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once(" = ") else {
                return Err(CliError::User(format!("manifest line {}: expected `key = value`", n + 1)));
            };
            if k == "output" {
                outputs.push(PathBuf::from(v));
            } else {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| CliError::User(format!("manifest is missing {k:?}")))
        };
        fn num<T: FromStr>(k: &str, v: String) -> CliResult<T> {
            v.parse()
                .map_err(|_| CliError::User(format!("manifest field {k:?}: cannot parse {v:?}")))
        }
        let num_opt = |k: &str| -> CliResult<Option<f64>> {
            let v = get(k)?;
            if v == "none" {
                Ok(None)
            } else {
                num(k, v).map(Some)
            }
        };
        let range = get("spike_range")?;
        let Some((lo, hi)) = range.split_once(',') else {
            return Err(CliError::User(format!("manifest field \"spike_range\": {range:?}")));
        };
        let levels = get("levels")?;
        let config = RunConfig {
            experiment: ExperimentSpec {
                image: PathBuf::from(get("image")?),
                csr: num("csr", get("csr")?)?,
                noise_sigma: num("noise_sigma", get("noise_sigma")?)?,
                spike_rate: num("spike_rate", get("spike_rate")?)?,
                spike_range: (num("spike_range", lo.to_string())?, num("spike_range", hi.to_string())?),
                seed: num("seed", get("seed")?)?,
                method: get("method")?.parse()?,
                iterations: num("iterations", get("iterations")?)?,
                burn_in: num("burn_in", get("burn_in")?)?,
            },
            basis: get("basis")?.parse::<BasisChoice>()?,
            levels: if levels == "auto" { None } else { Some(num("levels", levels)?) },
            model: get("model")?.parse::<ModelChoice>()?,
            chains: num("chains", get("chains")?)?,
            out_dir: PathBuf::from(get("out_dir")?),
        };
        Ok(Self {
            command: get("command")?.parse()?,
            config,
            version: get("version")?,
            elapsed_secs: num("elapsed_secs", get("elapsed_secs")?)?,
            metrics: Metrics {
                psnr: num("psnr", get("psnr")?)?,
                input_psnr: num_opt("input_psnr")?,
                noise_std: num("noise_std", get("noise_std")?)?,
                acceptance_rate: num_opt("acceptance_rate")?,
                spike_recall: num_opt("spike_recall")?,
                iterations: num("iterations_run", get("iterations_run")?)?,
            },
            outputs,
        })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Every listed output exists.
    pub fn verify_outputs(&self) -> CliResult<()> {
        match self.outputs.iter().find(|p| !p.exists()) {
            Some(p) => Err(CliError::Internal(format!("listed output {} is missing", p.display()))),
            None => Ok(()),
        }
    }

    /// Run the recorded experiment again.
    pub fn replay(&self) -> CliResult<Vec<RunManifest>> {
        match self.command {
            Command::Cs => cmd_cs(&self.config),
            Command::Denoise => cmd_denoise(&self.config),
        }
    }
}
