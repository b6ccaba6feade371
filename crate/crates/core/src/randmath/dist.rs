use rand::Rng;
use rand_distr::StandardNormal;

use super::special::{bessel_k_ratio, ln_bessel_k};
use crate::error::{invalid, Result};

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return invalid(format!("{name} must be positive and finite, got {v}"));
    }
    Ok(())
}

/// Uniform on (0, 1].
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Log of a Gamma(shape, 1) draw.
///
/// Marsaglia-Tsang squeeze for shape >= 1; below that the boost
/// `X = Y U^(1/shape)`, `Y ~ Gamma(shape + 1)`, is applied in log space so that
/// shapes like 1e-4 (whose draws are routinely below the smallest double) stay
/// exact.
pub fn sample_ln_gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let ln_y = sample_ln_gamma_unit(shape + 1.0, rng);
        return ln_y + open_uniform(rng).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = sample_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// Gamma(shape, rate) draw (mean shape/rate). Results below the smallest
/// positive normal double are clamped to it.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    positive("gamma shape", shape)?;
    positive("gamma rate", rate)?;
    let x = (sample_ln_gamma_unit(shape, rng) - rate.ln()).exp();
    Ok(x.max(f64::MIN_POSITIVE))
}

/// Inverse-gamma draw: `1/X ~ Gamma(shape, scale)` (rate convention), i.e.
/// density proportional to `x^(-shape-1) exp(-scale/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    positive("inverse-gamma shape", shape)?;
    positive("inverse-gamma scale", scale)?;
    let ln_g = sample_ln_gamma_unit(shape, rng) - scale.ln();
    Ok((-ln_g).exp().clamp(f64::MIN_POSITIVE, f64::MAX))
}

/// Dirichlet draw via normalised log-gamma variates; never degenerates to
/// all zeros even for tiny concentrations.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentrations: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if concentrations.is_empty() {
        return invalid("Dirichlet needs at least one concentration");
    }
    for &c in concentrations {
        positive("Dirichlet concentration", c)?;
    }
    let logs: Vec<f64> = concentrations
        .iter()
        .map(|&c| sample_ln_gamma_unit(c, rng))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Generalized inverse Gaussian with density proportional to
/// `x^(p-1) exp(-(a x + b / x) / 2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GigParams {
    pub a: f64,
    pub b: f64,
    pub p: f64,
}

impl GigParams {
    pub fn new(a: f64, b: f64, p: f64) -> Result<Self> {
        positive("GIG a", a)?;
        positive("GIG b", b)?;
        if !p.is_finite() {
            return invalid(format!("GIG p must be finite, got {p}"));
        }
        Ok(Self { a, b, p })
    }

    /// Concentration `omega = sqrt(a b)`.
    pub fn omega(&self) -> f64 {
        self.a.sqrt() * self.b.sqrt()
    }

    /// Scale `sqrt(b / a)`: `X = scale * Y` with `Y` in the one-parameter family.
    pub fn scale(&self) -> f64 {
        self.b.sqrt() / self.a.sqrt()
    }

    /// Distribution of `1/X`.
    pub fn reciprocal(&self) -> Self {
        Self {
            a: self.b,
            b: self.a,
            p: -self.p,
        }
    }

    /// Normalised log density.
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let ln_norm = 0.5 * self.p * (self.a / self.b).ln()
            - (2.0f64).ln()
            - ln_bessel_k(self.p, self.omega())?;
        Ok(ln_norm + (self.p - 1.0) * x.ln() - 0.5 * (self.a * x + self.b / x))
    }
}

/// `E[X] = sqrt(b/a) K_{p+1}(sqrt(ab)) / K_p(sqrt(ab))`.
pub fn gig_mean(params: &GigParams) -> Result<f64> {
    Ok(params.scale() * bessel_k_ratio(params.p, params.omega())?)
}

/// `E[1/X]`.
pub fn gig_mean_reciprocal(params: &GigParams) -> Result<f64> {
    gig_mean(&params.reciprocal())
}

/// Mode `((p - 1) + sqrt((p - 1)^2 + a b)) / a`.
pub fn gig_mode(params: &GigParams) -> Result<f64> {
    let GigParams { a, b, p } = *params;
    let q = p - 1.0;
    let root = (q * q + a * b).sqrt();
    // rationalised form when q < 0 avoids cancellation
    Ok(if q >= 0.0 {
        (q + root) / a
    } else {
        b / (root - q)
    })
}

/// Draw from a GIG (Hörmann & Leydold 2014: ratio-of-uniforms with or without
/// mode shift, and a piecewise constant hat for the small-concentration corner).
pub fn sample_gig<R: Rng + ?Sized>(params: &GigParams, rng: &mut R) -> Result<f64> {
    let GigParams { a, b, p } = *params;
    GigParams::new(a, b, p)?;
    let lambda = p.abs();
    let omega = params.omega();
    let scale = params.scale();

    let y = if omega < 1e-14 && lambda > 0.0 {
        // the family degenerates to a gamma in x (p > 0) or in 1/x (p < 0)
        let g = if p > 0.0 {
            sample_gamma(lambda, a / 2.0, rng)?
        } else {
            1.0 / sample_gamma(lambda, b / 2.0, rng)?
        };
        return Ok(g);
    } else if lambda > 2.0 || omega > 3.0 {
        rou_shift(lambda, omega, rng)
    } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        rou_noshift(lambda, omega, rng)
    } else {
        concave_hat(lambda, omega, rng)
    };
    let x = if p < 0.0 { scale / y } else { scale * y };
    Ok(x.clamp(f64::MIN_POSITIVE, f64::MAX))
}

/// Mode of `x^(lambda-1) exp(-omega/2 (x + 1/x))`.
fn unit_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        ((lambda - 1.0) + ((lambda - 1.0).powi(2) + omega * omega).sqrt()) / omega
    } else {
        omega / (((1.0 - lambda).powi(2) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

fn rou_noshift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = unit_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + ((lambda + 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    loop {
        let u = um * rng.random::<f64>();
        let v = open_uniform(rng);
        let x = u / v;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

fn rou_shift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = unit_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);

    // bounding rectangle from the roots of a cubic (Cardano, trigonometric form)
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = (2.0 * a * a * a) / 27.0 - (a * b) / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt()))
        .clamp(-1.0, 1.0)
        .acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - a / 3.0;

    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();
    loop {
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v = open_uniform(rng);
        let x = u / v + xm;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// 0 <= lambda < 1 and small omega.
fn concave_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = unit_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let area0 = k0 * x0;

    let (k1, area1, k2, area2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        area1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        area2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        area1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        area2 = k2 * 2.0 * (-1f64).exp() / omega;
    }
    let total = area0 + area1 + area2;

    loop {
        let mut v = total * rng.random::<f64>();
        let (x, hx);
        if v <= area0 {
            x = x0 * v / area0;
            hx = k0;
        } else {
            v -= area0;
            if v <= area1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= area1;
                let lo = x0.max(2.0 / omega);
                x = -2.0 / omega * ((-omega / 2.0 * lo).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        if !(x > 0.0) || !x.is_finite() {
            continue;
        }
        let u = open_uniform(rng) * hx;
        if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}
