use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use tree_shrink::measurement::{ExperimentSpec, InferenceMethod};
use tree_shrink::model::PriorStructure;
use tree_shrink::transform::{Basis, BasisKind};

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisChoice {
    Daub4,
    Bdct8,
}

impl fmt::Display for BasisChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisChoice::Daub4 => "daub4",
            BasisChoice::Bdct8 => "bdct8",
        })
    }
}

impl FromStr for BasisChoice {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "daub4" => Ok(BasisChoice::Daub4),
            "bdct8" => Ok(BasisChoice::Bdct8),
            _ => Err(CliError::User(format!("unknown basis {s:?} (expected daub4 or bdct8)"))),
        }
    }
}

/// Which prior structure(s) to run. `Both` runs the tree model and the flat
/// ablation on the same simulated data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Tree,
    Flat,
    Both,
}

impl ModelChoice {
    pub fn structures(self) -> Vec<PriorStructure> {
        match self {
            ModelChoice::Tree => vec![PriorStructure::Tree],
            ModelChoice::Flat => vec![PriorStructure::Flat],
            ModelChoice::Both => vec![PriorStructure::Tree, PriorStructure::Flat],
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Tree => "tree",
            ModelChoice::Flat => "flat",
            ModelChoice::Both => "both",
        })
    }
}

impl FromStr for ModelChoice {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "tree" => Ok(ModelChoice::Tree),
            "flat" => Ok(ModelChoice::Flat),
            "both" => Ok(ModelChoice::Both),
            _ => Err(CliError::User(format!("unknown model {s:?} (expected tree, flat or both)"))),
        }
    }
}

/// A fully resolved experiment: no defaults are applied after this point.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentSpec,
    pub basis: BasisChoice,
    /// Wavelet decomposition levels; `None` picks an 8x8 scaling block.
    pub levels: Option<usize>,
    pub model: ModelChoice,
    /// Parallel MCMC chains; ignored by the deterministic solvers.
    pub chains: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Defaults for a method: 5000 samples / 1000 burn-in for MCMC, 100
    /// iterations otherwise.
    pub fn new(image: impl Into<PathBuf>, method: InferenceMethod, out_dir: impl Into<PathBuf>) -> Self {
        let iterations = if method == InferenceMethod::Mcmc { 5000 } else { 100 };
        Self {
            experiment: ExperimentSpec {
                image: image.into(),
                csr: 0.4,
                noise_sigma: 0.0,
                spike_rate: 0.0,
                spike_range: (0.0, 1.0),
                seed: 0,
                method,
                iterations,
                burn_in: 1000,
            },
            basis: BasisChoice::Daub4,
            levels: None,
            model: ModelChoice::Tree,
            chains: 1,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.experiment.validate()?;
        if self.chains == 0 {
            return Err(CliError::User("need at least one chain".into()));
        }
        if self.levels == Some(0) {
            return Err(CliError::User("need at least one wavelet level".into()));
        }
        if self.basis == BasisChoice::Bdct8 && self.levels.is_some() {
            return Err(CliError::User("--levels applies to the wavelet basis only".into()));
        }
        Ok(())
    }

    pub fn make_basis(&self, height: usize, width: usize) -> CliResult<Basis> {
        make_basis(self.basis, self.levels, height, width)
    }
}

pub(crate) fn make_basis(choice: BasisChoice, levels: Option<usize>, height: usize, width: usize) -> CliResult<Basis> {
    let kind = match choice {
        BasisChoice::Daub4 => BasisKind::Daub4 {
            levels: levels.unwrap_or_else(|| Basis::default_levels(height, width)),
        },
        BasisChoice::Bdct8 => BasisKind::Bdct8,
    };
    Ok(Basis::new(kind, height, width)?)
}
