use std::io::Write as _;
use std::path::PathBuf;

use tree_shrink::measurement::write_image;
use tree_shrink::model::{prior_draw_coefficients, prior_draw_shrinkage, Hyperparameters, PriorStructure};
use tree_shrink::randmath::RngHandle;
use tree_shrink::transform::{Band, ImageGrid, BANDS};

use crate::config::{make_basis, BasisChoice};
use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSampleConfig {
    pub height: usize,
    pub width: usize,
    pub basis: BasisChoice,
    pub levels: Option<usize>,
    pub structure: PriorStructure,
    pub count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSampleReport {
    pub outputs: Vec<PathBuf>,
    /// `(draw, band, depth, sum of increment lengths)`.
    pub increment_sums: Vec<(usize, Band, usize, f64)>,
    /// `(band, depth, excess kurtosis)` of the coefficients pooled over draws.
    pub kurtosis: Vec<(Band, usize, f64)>,
}

/// Fourth standardised moment minus 3; `NaN` for fewer than two distinct values.
pub fn excess_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(a, b), x| {
        let d2 = (x - mean) * (x - mean);
        (a + d2, b + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        f64::NAN
    }
}

/// Draw gamma trees and coefficient pyramids from the prior (unit `alpha0`
/// and global scales). Writes each synthesized image rescaled to [0, 1], a
/// CSV of per-level increment sums per draw, and a CSV of pooled per-level
/// kurtosis.
pub fn cmd_prior_sample(cfg: &PriorSampleConfig) -> CliResult<PriorSampleReport> {
    if cfg.count == 0 {
        return Err(CliError::User("need at least one draw".into()));
    }
    let basis = make_basis(cfg.basis, cfg.levels, cfg.height, cfg.width)?;
    let layout = basis.layout();
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::User(format!("{}: {e}", cfg.out_dir.display())))?;
    let hyper = Hyperparameters::default();
    let mut rng = RngHandle::new(cfg.seed, 0);
    let mut outputs = Vec::new();
    let mut increment_sums = Vec::new();
    let n_levels = layout.n_levels();
    let mut pooled = vec![Vec::new(); BANDS.len() * n_levels];

    for draw in 0..cfg.count {
        let mut shrinkage = prior_draw_shrinkage(layout.clone(), cfg.structure, &hyper, &mut rng)?;
        let pyramid = prior_draw_coefficients(&mut shrinkage, 1.0, &mut rng)?;
        for band in BANDS {
            for depth in 0..n_levels {
                let sum: f64 = shrinkage.increment_lengths(band, depth).iter().sum();
                increment_sums.push((draw, band, depth, sum));
                pooled[band.index() * n_levels + depth].extend_from_slice(pyramid.detail(band, depth));
            }
        }
        let img = basis.synthesize(&pyramid)?;
        let lo = img.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let scaled = ImageGrid::new(img.height, img.width, img.values.iter().map(|v| (v - lo) / span).collect())?;
        let path = cfg.out_dir.join(format!("prior-{draw:04}.pgm"));
        write_image(&path, &scaled)?;
        outputs.push(path);
    }

    let inc_path = cfg.out_dir.join("prior-increments.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&inc_path)?);
    writeln!(f, "draw,band,depth,increment_sum")?;
    for (draw, band, depth, sum) in &increment_sums {
        writeln!(f, "{draw},{},{depth},{sum}", band.name())?;
    }
    f.flush()?;
    outputs.push(inc_path);

    let mut kurtosis = Vec::new();
    let kurt_path = cfg.out_dir.join("prior-levels.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&kurt_path)?);
    writeln!(f, "band,depth,n_values,excess_kurtosis")?;
    for band in BANDS {
        for depth in 0..n_levels {
            let v = &pooled[band.index() * n_levels + depth];
            let k = excess_kurtosis(v);
            writeln!(f, "{},{depth},{},{k}", band.name(), v.len())?;
            kurtosis.push((band, depth, k));
        }
    }
    f.flush()?;
    outputs.push(kurt_path);

    Ok(PriorSampleReport { outputs, increment_sums, kurtosis })
}
