//! Orthonormal 8x8 block DCT-II.

use std::sync::OnceLock;

pub const BLOCK: usize = 8;

/// `C[u][x] = c(u) cos((2x + 1) u pi / 16)` with `c(0) = sqrt(1/8)`, `c(u) = sqrt(2/8)`.
pub fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static MATRIX: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let scale = if u == 0 {
                (1.0 / BLOCK as f64).sqrt()
            } else {
                (2.0 / BLOCK as f64).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = scale
                    * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / (2 * BLOCK) as f64).cos();
            }
        }
        m
    })
}

/// Forward transform of the block whose top-left pixel is (r0, c0):
/// `X = C B C^T`, written back in place.
pub(crate) fn forward_block(data: &mut [f64], width: usize, r0: usize, c0: usize) {
    transform_block(data, width, r0, c0, false);
}

pub(crate) fn inverse_block(data: &mut [f64], width: usize, r0: usize, c0: usize) {
    transform_block(data, width, r0, c0, true);
}

fn transform_block(data: &mut [f64], width: usize, r0: usize, c0: usize, inverse: bool) {
    let c = dct_matrix();
    let coef = |a: usize, b: usize| if inverse { c[b][a] } else { c[a][b] };
    let mut block = [[0.0; BLOCK]; BLOCK];
    for (i, row) in block.iter_mut().enumerate() {
        row.copy_from_slice(&data[(r0 + i) * width + c0..(r0 + i) * width + c0 + BLOCK]);
    }
    // rows: tmp = B M^T, then columns: out = M tmp
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for v in 0..BLOCK {
            tmp[i][v] = (0..BLOCK).map(|y| block[i][y] * coef(v, y)).sum();
        }
    }
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            data[(r0 + u) * width + c0 + v] = (0..BLOCK).map(|x| coef(u, x) * tmp[x][v]).sum();
        }
    }
}
