//! Periodic orthonormal Daubechies-4 (four-tap) wavelet transform.

/// Analysis low-pass taps. High-pass taps follow the quadrature-mirror rule
/// `g[j] = (-1)^j h[3 - j]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Daub4Filter {
    pub taps: [f64; 4],
}

impl Default for Daub4Filter {
    fn default() -> Self {
        Self::standard()
    }
}

impl Daub4Filter {
    pub fn standard() -> Self {
        let s3 = 3f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        Self {
            taps: [
                (1.0 + s3) / d,
                (3.0 + s3) / d,
                (3.0 - s3) / d,
                (1.0 - s3) / d,
            ],
        }
    }

    fn highpass(&self) -> [f64; 4] {
        let h = self.taps;
        [h[3], -h[2], h[1], -h[0]]
    }

    /// One analysis step on `src` (even length): approximations go to the
    /// first half of `dst`, details to the second half.
    pub fn analyze(&self, src: &[f64], dst: &mut [f64]) {
        let n = src.len();
        let half = n / 2;
        let h = self.taps;
        let g = self.highpass();
        for k in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for j in 0..4 {
                let s = src[(2 * k + j) % n];
                a += h[j] * s;
                d += g[j] * s;
            }
            dst[k] = a;
            dst[half + k] = d;
        }
    }

    /// Inverse of [`Self::analyze`] (transpose, since the step is orthonormal).
    pub fn synthesize(&self, src: &[f64], dst: &mut [f64]) {
        let n = src.len();
        let half = n / 2;
        let h = self.taps;
        let g = self.highpass();
        dst.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..half {
            let (a, d) = (src[k], src[half + k]);
            for j in 0..4 {
                dst[(2 * k + j) % n] += h[j] * a + g[j] * d;
            }
        }
    }
}

/// In-place multi-level 2D analysis of a row-major `height x width` array
/// into Mallat subband layout.
pub(crate) fn forward_2d(
    filter: &Daub4Filter,
    data: &mut [f64],
    height: usize,
    width: usize,
    levels: usize,
) {
    let mut line = vec![0.0; height.max(width)];
    let mut out = vec![0.0; height.max(width)];
    let (mut h, mut w) = (height, width);
    for _ in 0..levels {
        for r in 0..h {
            let row = &mut data[r * width..r * width + w];
            line[..w].copy_from_slice(row);
            filter.analyze(&line[..w], &mut out[..w]);
            row.copy_from_slice(&out[..w]);
        }
        for c in 0..w {
            for r in 0..h {
                line[r] = data[r * width + c];
            }
            filter.analyze(&line[..h], &mut out[..h]);
            for r in 0..h {
                data[r * width + c] = out[r];
            }
        }
        h /= 2;
        w /= 2;
    }
}

pub(crate) fn inverse_2d(
    filter: &Daub4Filter,
    data: &mut [f64],
    height: usize,
    width: usize,
    levels: usize,
) {
    let mut line = vec![0.0; height.max(width)];
    let mut out = vec![0.0; height.max(width)];
    for lvl in (0..levels).rev() {
        let (h, w) = (height >> lvl, width >> lvl);
        for c in 0..w {
            for r in 0..h {
                line[r] = data[r * width + c];
            }
            filter.synthesize(&line[..h], &mut out[..h]);
            for r in 0..h {
                data[r * width + c] = out[r];
            }
        }
        for r in 0..h {
            let row = &mut data[r * width..r * width + w];
            line[..w].copy_from_slice(row);
            filter.synthesize(&line[..w], &mut out[..w]);
            row.copy_from_slice(&out[..w]);
        }
    }
}
