//! Special functions: log-gamma and the modified Bessel function of the
//! second kind, evaluated in log space.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{invalid, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Lanczos approximation (g = 7, nine terms), reflected below 1/2.
pub fn ln_gamma(z: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if z < 0.5 {
        // only reached for 0 < z < 1/2 in this crate
        return (PI / (PI * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = COEF[0];
    let t = z + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Number of Taylor terms kept by [`ln_gamma1p_coefficients`].
pub const LN_GAMMA1P_TERMS: usize = 40;

/// Coefficients `c_k` with `ln Gamma(1 + z) = sum_{k>=1} c_k z^k` for `|z| < 1`:
/// `c_1 = -euler_gamma`, `c_k = (-1)^k zeta(k) / k`.
pub fn ln_gamma1p_coefficients() -> &'static [f64; LN_GAMMA1P_TERMS] {
    static COEF: OnceLock<[f64; LN_GAMMA1P_TERMS]> = OnceLock::new();
    COEF.get_or_init(|| {
        let mut c = [0.0; LN_GAMMA1P_TERMS];
        c[0] = -EULER_GAMMA;
        for (i, ck) in c.iter_mut().enumerate().skip(1) {
            let k = (i + 1) as f64;
            let sign = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 };
            *ck = sign * zeta(k) / k;
        }
        c
    })
}

/// Riemann zeta for real `s >= 2` via a partial sum plus Euler-Maclaurin tail.
fn zeta(s: f64) -> f64 {
    const N: usize = 64;
    let mut sum = 0.0;
    for n in (1..N).rev() {
        sum += (n as f64).powf(-s);
    }
    let n = N as f64;
    let tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0;
    sum + tail
}

/// Coefficients of `1/Gamma(z) = sum_{k>=1} c_k z^k` (Abramowitz & Stegun 6.1.34).
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Temme's auxiliary functions for |mu| <= 1/2:
/// `gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu)`, `gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2`,
/// plus `1/G(1+mu)` and `1/G(1-mu)`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/G(1+mu) = sum_k c_k mu^(k-1): even k give the odd part, odd k the even part
    let (mut even, mut odd) = (0.0, 0.0);
    let mut pow = 1.0;
    for (i, c) in RECIP_GAMMA.iter().enumerate() {
        if i % 2 == 0 {
            even += c * pow;
        } else {
            odd += c * pow;
        }
        pow *= mu;
    }
    // odd accumulated c_k mu^(k-1) for even k, i.e. mu * (series in mu^2)
    let gam1 = if mu == 0.0 {
        -RECIP_GAMMA[1]
    } else {
        -odd / mu
    };
    let gam2 = even;
    let gampl = gam2 - mu * gam1;
    let gammi = gam2 + mu * gam1;
    (gam1, gam2, gampl, gammi)
}

/// `(ln K_mu(x), K_{mu+1}(x) / K_mu(x))` for |mu| <= 1/2.
fn k_base(mu: f64, x: f64) -> (f64, f64) {
    if x < 2.0 {
        // Temme's series
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu * mu);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln(), sum1 * 2.0 / x / sum)
    } else {
        // Steed's continued fraction
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu * mu;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let ln_kmu = 0.5 * (PI / (2.0 * x)).ln() - x - s.ln();
        (ln_kmu, (mu + x + 0.5 - h) / x)
    }
}

/// `(ln K_nu(x), K_{nu+1}(x) / K_nu(x))` for `nu >= 0`, by upward recurrence in
/// ratio form so no intermediate overflows.
fn k_upward(nu: f64, x: f64) -> (f64, f64) {
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut ln_k, mut ratio) = k_base(mu, x);
    for i in 0..nl as usize {
        ln_k += ratio.ln();
        // K_{m+2}/K_{m+1} = 2(m+1)/x + K_m/K_{m+1}
        ratio = 2.0 * (mu + i as f64 + 1.0) / x + 1.0 / ratio;
    }
    (ln_k, ratio)
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return invalid(format!(
            "Bessel K argument must be positive and finite, got {x}"
        ));
    }
    Ok(())
}

/// `ln K_p(x)`.
pub fn ln_bessel_k(p: f64, x: f64) -> Result<f64> {
    check_x(x)?;
    if !p.is_finite() {
        return invalid("Bessel K order must be finite");
    }
    Ok(k_upward(p.abs(), x).0)
}

/// Modified Bessel function of the second kind `K_p(x)`.
pub fn bessel_k(p: f64, x: f64) -> Result<f64> {
    ln_bessel_k(p, x).map(f64::exp)
}

/// `K_{p+1}(x) / K_p(x)`.
pub fn bessel_k_ratio(p: f64, x: f64) -> Result<f64> {
    check_x(x)?;
    if !p.is_finite() {
        return invalid("Bessel K order must be finite");
    }
    if p >= 0.0 {
        return Ok(k_upward(p, x).1);
    }
    // K_{p+1}/K_p = K_{|p|-1}/K_{|p|}
    let q = -p;
    if q >= 1.0 {
        // K_{q-1}/K_q is the reciprocal of the upward ratio at q-1
        Ok(1.0 / k_upward(q - 1.0, x).1)
    } else {
        Ok((ln_bessel_k(1.0 - q, x)? - ln_bessel_k(q, x)?).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(2.0)).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
        // tiny arguments behave like -ln z - euler_gamma z
        let z = 1e-10;
        assert!((ln_gamma(z) - (-z.ln() - EULER_GAMMA * z)).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma1p_series_matches_lanczos() {
        let c = ln_gamma1p_coefficients();
        for z in [1e-8, 0.01, 0.1, 0.25, 0.4] {
            let mut pow = z;
            let mut s = 0.0;
            for ck in c {
                s += ck * pow;
                pow *= z;
            }
            assert!((s - ln_gamma(1.0 + z)).abs() < 1e-14, "z = {z}");
        }
    }

    #[test]
    fn temme_gammas_match_lanczos() {
        for mu in [-0.5, -0.3, -1e-3, 0.0, 0.2, 0.5] {
            let (_, _, gampl, gammi) = temme_gammas(mu);
            assert!(
                (gampl - (-ln_gamma(1.0 + mu)).exp()).abs() < 1e-14,
                "mu = {mu}"
            );
            assert!(
                (gammi - (-ln_gamma(1.0 - mu)).exp()).abs() < 1e-14,
                "mu = {mu}"
            );
        }
    }

    #[test]
    fn half_integer_closed_form() {
        let want = (PI / 2.0).sqrt() * (-1f64).exp();
        let got = bessel_k(0.5, 1.0).unwrap();
        assert!((got / want - 1.0).abs() < 1e-13);
        assert!((got - 0.461_068_5).abs() < 1e-7);
        // K_{3/2}(x) = K_{1/2}(x) (1 + 1/x)
        for x in [0.1, 2.0, 7.5, 60.0] {
            let r = bessel_k_ratio(0.5, x).unwrap();
            assert!((r - (1.0 + 1.0 / x)).abs() < 1e-12 * r, "x = {x}");
        }
    }

    #[test]
    fn order_symmetry() {
        for (p, x) in [(0.3, 2.0), (1.7, 0.5)] {
            assert_eq!(bessel_k(p, x).unwrap(), bessel_k(-p, x).unwrap());
        }
    }

    #[test]
    fn negative_order_ratio() {
        // K_{p+1}/K_p at p = -1/2 is K_{1/2}/K_{-1/2} = 1
        assert!((bessel_k_ratio(-0.5, 3.0).unwrap() - 1.0).abs() < 1e-14);
        for (p, x) in [(-0.8, 0.3), (-1.0, 1.5), (-3.25, 4.0), (-0.95, 2e-3)] {
            let direct = (ln_bessel_k(p + 1.0, x).unwrap() - ln_bessel_k(p, x).unwrap()).exp();
            let r = bessel_k_ratio(p, x).unwrap();
            assert!((r / direct - 1.0).abs() < 1e-12, "p = {p}, x = {x}");
        }
    }

    #[test]
    fn large_arguments_do_not_underflow() {
        let v = ln_bessel_k(2.0, 5e4).unwrap();
        // K_nu(x) ~ sqrt(pi/2x) e^-x (1 + (4nu^2-1)/8x)
        let approx = 0.5 * (PI / 1e5).ln() - 5e4 + (15.0f64 / 4e5).ln_1p();
        assert!((v - approx).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -2.0).is_err());
        assert!(bessel_k(f64::NAN, 1.0).is_err());
    }
}
