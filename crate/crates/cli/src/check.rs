use std::fmt;

use tree_shrink::measurement::make_gaussian_operator;
use tree_shrink::randmath::{bessel_k, gig_mean, sample_gig, sample_normal, GigParams, RngHandle};
use tree_shrink::transform::{
    bdct_forward, bdct_inverse, dwt2_forward_with, dwt2_inverse_with, Basis, BasisKind, Daub4Filter, ImageGrid,
};

use crate::CliResult;

/// Deliberate faults for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturb the first wavelet tap by 1e-3.
    CorruptFilter,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckOptions {
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub tolerance: f64,
    pub observed: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{:<4} {:<28} observed {:.3e}  tolerance {:.1e}",
                if r.pass { "ok" } else { "FAIL" },
                r.name,
                r.observed,
                r.tolerance
            )?;
        }
        let failed = self.rows.iter().filter(|r| !r.pass).count();
        write!(f, "{} checks, {failed} failed", self.rows.len())
    }
}

fn row(name: &'static str, tolerance: f64, observed: f64) -> CheckRow {
    CheckRow { name, tolerance, observed, pass: observed.is_finite() && observed < tolerance }
}

fn random_image(n: usize, rng: &mut RngHandle) -> ImageGrid {
    let values = (0..n * n).map(|_| sample_normal(rng)).collect();
    ImageGrid { height: n, width: n, values }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `max |T^T T - I|` for the forward map on `n x n` images, built column by column.
fn orthonormality_error(n: usize, forward: impl Fn(&ImageGrid) -> CliResult<Vec<f64>>) -> CliResult<f64> {
    let dim = n * n;
    let mut cols = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut e = ImageGrid::zeros(n, n);
        e.values[k] = 1.0;
        cols.push(forward(&e)?);
    }
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in i..dim {
            let g = dot(&cols[i], &cols[j]);
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - want).abs());
        }
    }
    Ok(worst)
}

/// The fast invariant suite: transforms, Bessel/GIG identities and operator
/// adjointness. Deterministic.
pub fn cmd_check(opts: &CheckOptions) -> CliResult<CheckReport> {
    let mut filter = Daub4Filter::standard();
    if opts.fault == Some(Fault::CorruptFilter) {
        filter.taps[0] += 1e-3;
    }
    let mut rng = RngHandle::new(2024, 0);
    let mut rows = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = random_image(64, &mut rng);
        let back = dwt2_inverse_with(&filter, &dwt2_forward_with(&filter, &img, 3)?)?;
        worst = worst.max(max_abs_diff(&img.values, &back.values));
    }
    rows.push(row("daub4 roundtrip 64x64", 1e-10, worst));
    let err = orthonormality_error(16, |img| Ok(dwt2_forward_with(&filter, img, 2)?.as_slice().to_vec()))?;
    rows.push(row("daub4 orthonormality 16x16", 1e-10, err));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = random_image(64, &mut rng);
        let back = bdct_inverse(&bdct_forward(&img)?)?;
        worst = worst.max(max_abs_diff(&img.values, &back.values));
    }
    rows.push(row("bdct8 roundtrip 64x64", 1e-10, worst));
    let err = orthonormality_error(16, |img| Ok(bdct_forward(img)?.as_slice().to_vec()))?;
    rows.push(row("bdct8 orthonormality 16x16", 1e-10, err));

    // K_{1/2}(x) = sqrt(pi / (2x)) e^{-x}
    let mut worst = 0.0f64;
    for i in 0..40 {
        let x = 0.01 * 1.25f64.powi(i);
        let want = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        worst = worst.max((bessel_k(0.5, x)? / want - 1.0).abs());
    }
    rows.push(row("bessel half-order form", 1e-10, worst));

    // K_{v+1}(x) = K_{v-1}(x) + (2v / x) K_v(x)
    let mut worst = 0.0f64;
    for &v in &[-2.7, -0.9, 0.3, 1.0, 2.5, 6.0] {
        for &x in &[0.05, 0.4, 1.0, 3.0, 12.0, 40.0] {
            let lhs = bessel_k(v + 1.0, x)?;
            let rhs = bessel_k(v - 1.0, x)? + 2.0 * v / x * bessel_k(v, x)?;
            worst = worst.max((lhs / rhs - 1.0).abs());
        }
    }
    rows.push(row("bessel recurrence", 1e-9, worst));

    let m = gig_mean(&GigParams::new(2.0, 2.0, 0.5)?)?;
    rows.push(row("gig(2,2,1/2) mean = 1.5", 1e-12, (m - 1.5).abs()));

    // sampler mean within 5 standard errors of the closed form
    let params = GigParams::new(1.5, 0.8, -0.3)?;
    let draws: Vec<f64> = (0..20_000).map(|_| sample_gig(&params, &mut rng)).collect::<Result<_, _>>()?;
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let z = (mean - gig_mean(&params)?).abs() / (var / n).sqrt();
    rows.push(row("gig sampler mean (z-score)", 5.0, z));

    let basis = Basis::new(BasisKind::Daub4 { levels: 2 }, 16, 16)?;
    let op = make_gaussian_operator(100, basis, &mut rng)?;
    let f: Vec<f64> = (0..256).map(|_| sample_normal(&mut rng)).collect();
    let r: Vec<f64> = (0..100).map(|_| sample_normal(&mut rng)).collect();
    let lhs = dot(&op.apply_h(&f)?, &r);
    let rhs = dot(&f, &op.apply_h_adjoint(&r)?);
    let lhs_psi = dot(&op.apply_psi(&f)?, &r);
    let rhs_psi = dot(&f, &op.apply_psi_adjoint(&r)?);
    let err = ((lhs - rhs).abs() / lhs.abs().max(1.0)).max((lhs_psi - rhs_psi).abs() / lhs_psi.abs().max(1.0));
    rows.push(row("sensing adjointness", 1e-10, err));

    Ok(CheckReport { rows })
}

