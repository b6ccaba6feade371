//! Sensing operators `H`, their composition with a basis (`Psi = H T`),
//! synthetic noise, PSNR and image file IO.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::randmath::sample_normal;
use crate::transform::{Basis, ImageGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensingKind {
    DenseGaussian,
    Identity,
    RowMask,
}

impl fmt::Display for SensingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensingKind::DenseGaussian => "dense-gaussian",
            SensingKind::Identity => "identity",
            SensingKind::RowMask => "row-mask",
        })
    }
}

/// `H` (pixels to measurements) together with the basis `T`, so that
/// `Psi = H T` maps coefficients to measurements.
#[derive(Clone, Debug)]
pub struct SensingOperator {
    kind: SensingKind,
    m: usize,
    n: usize,
    /// Row-major `m x n` entries, dense kind only.
    matrix: Vec<f64>,
    /// Observed pixel indices, row-mask kind only.
    rows: Vec<usize>,
    basis: Basis,
}

/// `floor(csr * n)`.
pub fn measurement_count(csr: f64, n: usize) -> Result<usize> {
    if !(csr > 0.0 && csr <= 1.0) {
        return invalid(format!("CS ratio must lie in (0, 1], got {csr}"));
    }
    let m = (csr * n as f64).floor() as usize;
    if m == 0 {
        return invalid(format!("CS ratio {csr} gives no measurements for n = {n}"));
    }
    Ok(m)
}

/// Dense `m x n` operator with i.i.d. standard normal entries.
pub fn make_gaussian_operator<R: Rng + ?Sized>(
    m: usize,
    basis: Basis,
    rng: &mut R,
) -> Result<SensingOperator> {
    let n = basis.dim();
    if m == 0 || m > n {
        return invalid(format!("need 0 < m <= n, got m = {m}, n = {n}"));
    }
    let matrix = (0..m * n).map(|_| sample_normal(rng)).collect();
    Ok(SensingOperator {
        kind: SensingKind::DenseGaussian,
        m,
        n,
        matrix,
        rows: Vec::new(),
        basis,
    })
}

pub fn make_identity_operator(basis: Basis) -> SensingOperator {
    let n = basis.dim();
    SensingOperator {
        kind: SensingKind::Identity,
        m: n,
        n,
        matrix: Vec::new(),
        rows: Vec::new(),
        basis,
    }
}

/// Observes the listed pixels (row-major indices, distinct, any order).
pub fn make_row_mask_operator(rows: Vec<usize>, basis: Basis) -> Result<SensingOperator> {
    let n = basis.dim();
    let mut seen = vec![false; n];
    for &r in &rows {
        if r >= n || std::mem::replace(&mut seen[r], true) {
            return invalid(format!("row-mask index {r} out of range or repeated"));
        }
    }
    if rows.is_empty() {
        return invalid("row mask selects no pixels");
    }
    Ok(SensingOperator {
        kind: SensingKind::RowMask,
        m: rows.len(),
        n,
        matrix: Vec::new(),
        rows,
        basis,
    })
}

impl SensingOperator {
    pub fn kind(&self) -> SensingKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// Row-major entries of a dense operator (empty otherwise).
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Observed pixels of a row-mask operator (empty otherwise).
    pub fn mask(&self) -> &[usize] {
        &self.rows
    }

    fn check_len(v: &[f64], want: usize, what: &str) -> Result<()> {
        if v.len() != want {
            return invalid(format!("{what}: expected length {want}, got {}", v.len()));
        }
        Ok(())
    }

    /// `H f`.
    pub fn apply_h(&self, f: &[f64]) -> Result<Vec<f64>> {
        Self::check_len(f, self.n, "apply_h")?;
        Ok(match self.kind {
            SensingKind::Identity => f.to_vec(),
            SensingKind::RowMask => self.rows.iter().map(|&r| f[r]).collect(),
            SensingKind::DenseGaussian => self
                .matrix
                .chunks_exact(self.n)
                .map(|row| dot(row, f))
                .collect(),
        })
    }

    /// `H^T r`.
    pub fn apply_h_adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        Self::check_len(r, self.m, "apply_h_adjoint")?;
        Ok(match self.kind {
            SensingKind::Identity => r.to_vec(),
            SensingKind::RowMask => {
                let mut out = vec![0.0; self.n];
                for (&row, &v) in self.rows.iter().zip(r) {
                    out[row] = v;
                }
                out
            }
            SensingKind::DenseGaussian => {
                let mut out = vec![0.0; self.n];
                for (row, &v) in self.matrix.chunks_exact(self.n).zip(r) {
                    axpy(v, row, &mut out);
                }
                out
            }
        })
    }

    /// `Psi x = H T x` for a flattened coefficient vector.
    pub fn apply_psi(&self, x: &[f64]) -> Result<Vec<f64>> {
        Self::check_len(x, self.n, "apply_psi")?;
        self.apply_h(&self.basis.synthesize_vec(x)?)
    }

    /// `Psi^T r = T^T H^T r`.
    pub fn apply_psi_adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.basis.analyze_vec(&self.apply_h_adjoint(r)?)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorise without reassociation flags
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y + N(0, sigma^2)` element-wise.
pub fn add_gaussian_noise<R: Rng + ?Sized>(y: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid(format!("noise sigma must be non-negative, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(y.to_vec());
    }
    Ok(y.iter().map(|v| v + sigma * sample_normal(rng)).collect())
}

/// Each pixel independently receives, with probability `rate`, an additive
/// spike drawn uniformly from `range`. No clipping, so spikes keep their
/// full amplitude.
/// Returns the corrupted image and the spike mask.
pub fn add_spiky_noise<R: Rng + ?Sized>(
    f: &ImageGrid,
    rate: f64,
    range: (f64, f64),
    rng: &mut R,
) -> Result<(ImageGrid, Vec<bool>)> {
    if !(0.0..=1.0).contains(&rate) {
        return invalid(format!("spike rate must lie in [0, 1], got {rate}"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return invalid(format!("bad spike amplitude range [{lo}, {hi}]"));
    }
    let mut out = f.clone();
    let mut mask = vec![false; f.len()];
    for (v, hit) in out.values.iter_mut().zip(mask.iter_mut()) {
        if rng.random::<f64>() < rate {
            *hit = true;
            *v += lo + (hi - lo) * rng.random::<f64>();
        }
    }
    Ok((out, mask))
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` when identical.
pub fn psnr(reference: &ImageGrid, estimate: &ImageGrid) -> Result<f64> {
    if reference.height != estimate.height || reference.width != estimate.width {
        return invalid(format!(
            "psnr shape mismatch: {}x{} vs {}x{}",
            reference.height, reference.width, estimate.height, estimate.width
        ));
    }
    let mse = reference
        .values
        .iter()
        .zip(&estimate.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Load an 8-bit grayscale PGM or PNG, scaled to [0, 1].
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let values = gray
        .as_raw()
        .iter()
        .map(|&v| f64::from(v) / 255.0)
        .collect();
    ImageGrid::new(h as usize, w as usize, values)
}

/// Write as 8-bit grayscale; the format follows the extension (`.pgm` or `.png`).
/// Values are clipped to [0, 1] and rounded.
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => image::ImageFormat::Png,
        Some("pgm") => image::ImageFormat::Pnm,
        _ => {
            return invalid(format!(
                "{}: output must end in .pgm or .png",
                path.display()
            ))
        }
    };
    let bytes: Vec<u8> = img
        .values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::Image("image buffer size mismatch".into()))?;
    if format == image::ImageFormat::Pnm {
        // binary P5 written directly
        let mut data = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
        data.extend_from_slice(buf.as_raw());
        std::fs::write(path, data)?;
        return Ok(());
    }
    buf.save_with_format(path, format)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Which inference engine an experiment runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMethod {
    Mcmc,
    Avb,
    /// Importance-sampled variational update with this many draws per node.
    Vbs(usize),
    Em,
}

impl fmt::Display for InferenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceMethod::Mcmc => f.write_str("mcmc"),
            InferenceMethod::Avb => f.write_str("avb"),
            InferenceMethod::Vbs(s) => write!(f, "vb:{s}"),
            InferenceMethod::Em => f.write_str("em"),
        }
    }
}

impl FromStr for InferenceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcmc" => Ok(InferenceMethod::Mcmc),
            "avb" => Ok(InferenceMethod::Avb),
            "em" => Ok(InferenceMethod::Em),
            _ => match s.strip_prefix("vb:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => Ok(InferenceMethod::Vbs(n)),
                _ => invalid(format!(
                    "unknown method {s:?} (expected mcmc, avb, vb:<s> or em)"
                )),
            },
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub image: PathBuf,
    /// `m / n`; 1 for denoising.
    pub csr: f64,
    pub noise_sigma: f64,
    pub spike_rate: f64,
    pub spike_range: (f64, f64),
    pub seed: u64,
    pub method: InferenceMethod,
    /// MCMC samples (including burn-in) or VB/EM iterations.
    pub iterations: usize,
    pub burn_in: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.csr > 0.0 && self.csr <= 1.0) {
            return invalid(format!("CS ratio must lie in (0, 1], got {}", self.csr));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.spike_rate) {
            return invalid(format!(
                "spike rate must lie in [0, 1], got {}",
                self.spike_rate
            ));
        }
        let (lo, hi) = self.spike_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return invalid(format!("bad spike range [{lo}, {hi}]"));
        }
        if self.iterations == 0 {
            return invalid("iteration count must be positive");
        }
        if self.method == InferenceMethod::Mcmc && self.burn_in >= self.iterations {
            return invalid(format!(
                "burn-in ({}) must be smaller than the sample count ({})",
                self.burn_in, self.iterations
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randmath::RngHandle;
    use crate::transform::BasisKind;

    fn basis(h: usize) -> Basis {
        Basis::new(BasisKind::Daub4 { levels: 1 }, h, h).unwrap()
    }

    fn rand_vec(n: usize, rng: &mut RngHandle) -> Vec<f64> {
        (0..n).map(|_| sample_normal(rng)).collect()
    }

    #[test]
    fn gaussian_entries_moments() {
        let b = Basis::new(BasisKind::Daub4 { levels: 3 }, 64, 64).unwrap();
        let mut rng = RngHandle::new(1, 0);
        let op = make_gaussian_operator(245, b, &mut rng).unwrap();
        let e = op.matrix();
        assert!(e.len() >= 1_000_000);
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn csr_floor() {
        assert_eq!(measurement_count(0.4, 4096).unwrap(), 1638);
        assert_eq!(measurement_count(1.0, 4096).unwrap(), 4096);
        assert!(measurement_count(0.0, 4096).is_err());
        assert!(measurement_count(1.5, 4096).is_err());
        let mut rng = RngHandle::new(1, 0);
        assert!(make_gaussian_operator(300, basis(16), &mut rng).is_err());
    }

    #[test]
    fn adjointness_all_kinds() {
        let mut rng = RngHandle::new(2, 0);
        let b = basis(16);
        let ops = [
            make_gaussian_operator(100, b.clone(), &mut rng).unwrap(),
            make_identity_operator(b.clone()),
            make_row_mask_operator((0..256).step_by(3).collect(), b).unwrap(),
        ];
        for op in &ops {
            for _ in 0..100 {
                let u = rand_vec(op.n(), &mut rng);
                let v = rand_vec(op.m(), &mut rng);
                let lhs = dot(&op.apply_h(&u).unwrap(), &v);
                let rhs = dot(&u, &op.apply_h_adjoint(&v).unwrap());
                assert!(
                    (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
                    "{}",
                    op.kind()
                );
                let lhs = dot(&op.apply_psi(&u).unwrap(), &v);
                let rhs = dot(&u, &op.apply_psi_adjoint(&v).unwrap());
                assert!(
                    (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
                    "{}",
                    op.kind()
                );
            }
        }
    }

    #[test]
    fn identity_psi_is_synthesis() {
        let b = basis(16);
        let op = make_identity_operator(b.clone());
        let mut rng = RngHandle::new(3, 0);
        let x = rand_vec(256, &mut rng);
        assert_eq!(op.apply_psi(&x).unwrap(), b.synthesize_vec(&x).unwrap());
        // unit column norms
        for k in [0, 17, 255] {
            let mut e = vec![0.0; 256];
            e[k] = 1.0;
            let col = op.apply_psi(&e).unwrap();
            assert!((dot(&col, &col) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let op = make_identity_operator(basis(16));
        assert!(op.apply_psi(&[0.0; 3]).is_err());
        assert!(op.apply_psi_adjoint(&[0.0; 3]).is_err());
        assert!(make_row_mask_operator(vec![1, 1], basis(16)).is_err());
        assert!(make_row_mask_operator(vec![256], basis(16)).is_err());
    }

    #[test]
    fn gaussian_noise() {
        let mut rng = RngHandle::new(4, 0);
        let y = vec![0.5; 100_000];
        assert_eq!(add_gaussian_noise(&y, 0.0, &mut rng).unwrap(), y);
        let z = add_gaussian_noise(&y, 0.3, &mut rng).unwrap();
        let sd = (z.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
        assert!((sd / 0.3 - 1.0).abs() < 0.02);
        assert!(add_gaussian_noise(&y, -1.0, &mut rng).is_err());
        let a = add_gaussian_noise(&y[..10], 1.0, &mut RngHandle::new(5, 0)).unwrap();
        let b = add_gaussian_noise(&y[..10], 1.0, &mut RngHandle::new(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spike_counts_follow_binomial() {
        // n = 1000, rate 0.032: 99% binomial interval [18, 47] (mean 32, sd 5.57)
        let img = ImageGrid::new(10, 100, vec![0.2; 1000]).unwrap();
        let mut rng = RngHandle::new(6, 0);
        let mut outside = 0;
        let mut total = 0;
        for _ in 0..200 {
            let (out, mask) = add_spiky_noise(&img, 0.032, (0.0, 1.0), &mut rng).unwrap();
            let k = mask.iter().filter(|&&b| b).count();
            total += k;
            if !(18..=47).contains(&k) {
                outside += 1;
            }
            for (i, (&v, &hit)) in out.values.iter().zip(&mask).enumerate() {
                if !hit {
                    assert_eq!(v, img.values[i]);
                } else {
                    assert!((0.2..=1.2).contains(&v));
                }
            }
        }
        assert!(outside <= 6, "{outside} trials outside the 99% interval");
        assert!((total as f64 / 200.0 - 32.0).abs() < 1.5);
        assert!(add_spiky_noise(&img, 1.5, (0.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = ImageGrid::new(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = ImageGrid::new(4, 4, vec![0.6; 16]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = ImageGrid::new(
            4,
            4,
            (0..16)
                .map(|i| if i % 2 == 0 { 0.7 } else { 0.5 })
                .collect(),
        )
        .unwrap();
        assert!((psnr(&a, &c).unwrap() - 16.989_700_043).abs() < 1e-8);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let d = ImageGrid::new(2, 8, vec![0.5; 16]).unwrap();
        assert!(psnr(&a, &d).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = RngHandle::new(7, 0);
        let base =
            ImageGrid::new(32, 32, (0..1024).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let mut last = f64::INFINITY;
        for s in [0.01, 0.03, 0.1, 0.3] {
            let v = add_gaussian_noise(&base.values, s, &mut rng).unwrap();
            let p = psnr(&base, &ImageGrid::new(32, 32, v).unwrap()).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn image_roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let img =
            ImageGrid::new(8, 16, (0..128).map(|i| (i * 2) as f64 / 255.0).collect()).unwrap();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!((back.height, back.width), (8, 16));
            for (a, b) in back.values.iter().zip(&img.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(write_image(&dir.path().join("a.bmp"), &img).is_err());
        assert!(read_image(&dir.path().join("missing.pgm")).is_err());
    }

    #[test]
    fn method_parsing() {
        for s in ["mcmc", "avb", "vb:500", "em"] {
            assert_eq!(s.parse::<InferenceMethod>().unwrap().to_string(), s);
        }
        assert!("vb:0".parse::<InferenceMethod>().is_err());
        assert!("gibbs".parse::<InferenceMethod>().is_err());
    }

    #[test]
    fn spec_validation() {
        let spec = ExperimentSpec {
            image: PathBuf::from("x.pgm"),
            csr: 0.4,
            noise_sigma: 0.0,
            spike_rate: 0.0,
            spike_range: (0.0, 1.0),
            seed: 1,
            method: InferenceMethod::Mcmc,
            iterations: 10,
            burn_in: 5,
        };
        spec.validate().unwrap();
        assert!(ExperimentSpec {
            csr: 0.0,
            ..spec.clone()
        }
        .validate()
        .is_err());
        assert!(ExperimentSpec {
            burn_in: 10,
            ..spec.clone()
        }
        .validate()
        .is_err());
        assert!(ExperimentSpec {
            spike_rate: 2.0,
            ..spec
        }
        .validate()
        .is_err());
    }
}
