//! Orthonormal image bases and their quadtree coefficient layouts.

mod dct;
mod layout;
mod wavelet;

use std::sync::Arc;

pub use dct::dct_matrix;
pub use layout::{
    build_bdct_tree_layout, build_wavelet_tree_layout, Band, BandTree, BasisKind, LevelLayout,
    Node, TreeLayout, BANDS, N_CHILDREN,
};
pub use wavelet::Daub4Filter;

use crate::error::{invalid, Result};

/// Row-major 2D intensity array.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return invalid(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("image contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }
}

/// Coefficients stored in the flattened order documented on [`TreeLayout`],
/// with views for the scaling block and each (band, depth) level.
#[derive(Clone, Debug, PartialEq)]
pub struct TreePyramid {
    layout: Arc<TreeLayout>,
    coeffs: Vec<f64>,
}

impl TreePyramid {
    pub fn zeros(layout: Arc<TreeLayout>) -> Self {
        let n = layout.n_coefficients();
        Self {
            layout,
            coeffs: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<TreeLayout> {
        &self.layout
    }

    pub fn scaling(&self) -> &[f64] {
        &self.coeffs[..self.layout.n_scaling()]
    }

    pub fn scaling_mut(&mut self) -> &mut [f64] {
        let n = self.layout.n_scaling();
        &mut self.coeffs[..n]
    }

    pub fn detail(&self, band: Band, depth: usize) -> &[f64] {
        &self.coeffs[self.layout.level(band, depth).range()]
    }

    pub fn detail_mut(&mut self, band: Band, depth: usize) -> &mut [f64] {
        let range = self.layout.level(band, depth).range();
        &mut self.coeffs[range]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum()
    }
}

/// Coefficient vector in the documented order.
pub fn flatten(pyramid: &TreePyramid) -> Vec<f64> {
    pyramid.coeffs.clone()
}

pub fn unflatten(vector: Vec<f64>, layout: Arc<TreeLayout>) -> Result<TreePyramid> {
    if vector.len() != layout.n_coefficients() {
        return invalid(format!(
            "coefficient vector has {} entries, layout needs {}",
            vector.len(),
            layout.n_coefficients()
        ));
    }
    Ok(TreePyramid {
        layout,
        coeffs: vector,
    })
}

fn gather(layout: Arc<TreeLayout>, subband: &[f64]) -> TreePyramid {
    let coeffs = layout
        .subband_positions()
        .iter()
        .map(|&p| subband[p])
        .collect();
    TreePyramid { layout, coeffs }
}

fn scatter(pyramid: &TreePyramid) -> Vec<f64> {
    let mut out = vec![0.0; pyramid.coeffs.len()];
    for (&p, &v) in pyramid
        .layout
        .subband_positions()
        .iter()
        .zip(&pyramid.coeffs)
    {
        out[p] = v;
    }
    out
}

fn check_image(image: &ImageGrid) -> Result<()> {
    if image.values.len() != image.height * image.width {
        return invalid("image value count does not match its shape");
    }
    Ok(())
}

pub fn dwt2_forward(image: &ImageGrid, levels: usize) -> Result<TreePyramid> {
    dwt2_forward_with(&Daub4Filter::standard(), image, levels)
}

/// [`dwt2_forward`] with an explicit filter (used by self-checks).
pub fn dwt2_forward_with(
    filter: &Daub4Filter,
    image: &ImageGrid,
    levels: usize,
) -> Result<TreePyramid> {
    check_image(image)?;
    let layout = Arc::new(build_wavelet_tree_layout(
        image.height,
        image.width,
        levels,
    )?);
    let mut data = image.values.clone();
    wavelet::forward_2d(filter, &mut data, image.height, image.width, levels);
    Ok(gather(layout, &data))
}

pub fn dwt2_inverse(pyramid: &TreePyramid) -> Result<ImageGrid> {
    dwt2_inverse_with(&Daub4Filter::standard(), pyramid)
}

pub fn dwt2_inverse_with(filter: &Daub4Filter, pyramid: &TreePyramid) -> Result<ImageGrid> {
    let layout = &pyramid.layout;
    let BasisKind::Daub4 { levels } = layout.basis else {
        return invalid("dwt2_inverse needs a wavelet layout");
    };
    if pyramid.coeffs.len() != layout.n_coefficients() {
        return invalid("pyramid size does not match its layout");
    }
    let mut data = scatter(pyramid);
    wavelet::inverse_2d(filter, &mut data, layout.height, layout.width, levels);
    Ok(ImageGrid {
        height: layout.height,
        width: layout.width,
        values: data,
    })
}

pub fn bdct_forward(image: &ImageGrid) -> Result<TreePyramid> {
    check_image(image)?;
    let layout = Arc::new(build_bdct_tree_layout(image.height, image.width)?);
    let (h, w) = (image.height, image.width);
    let mut data = image.values.clone();
    for r0 in (0..h).step_by(dct::BLOCK) {
        for c0 in (0..w).step_by(dct::BLOCK) {
            dct::forward_block(&mut data, w, r0, c0);
        }
    }
    // block-major spatial layout -> subband image
    let (hb, wb) = (h / dct::BLOCK, w / dct::BLOCK);
    let mut sub = vec![0.0; h * w];
    for bi in 0..hb {
        for bj in 0..wb {
            for u in 0..dct::BLOCK {
                for v in 0..dct::BLOCK {
                    sub[(u * hb + bi) * w + v * wb + bj] =
                        data[(bi * dct::BLOCK + u) * w + bj * dct::BLOCK + v];
                }
            }
        }
    }
    Ok(gather(layout, &sub))
}

pub fn bdct_inverse(pyramid: &TreePyramid) -> Result<ImageGrid> {
    let layout = &pyramid.layout;
    if layout.basis != BasisKind::Bdct8 {
        return invalid("bdct_inverse needs a block-DCT layout");
    }
    if pyramid.coeffs.len() != layout.n_coefficients() {
        return invalid("pyramid size does not match its layout");
    }
    let (h, w) = (layout.height, layout.width);
    let (hb, wb) = (h / dct::BLOCK, w / dct::BLOCK);
    let sub = scatter(pyramid);
    let mut data = vec![0.0; h * w];
    for bi in 0..hb {
        for bj in 0..wb {
            for u in 0..dct::BLOCK {
                for v in 0..dct::BLOCK {
                    data[(bi * dct::BLOCK + u) * w + bj * dct::BLOCK + v] =
                        sub[(u * hb + bi) * w + v * wb + bj];
                }
            }
            dct::inverse_block(&mut data, w, bi * dct::BLOCK, bj * dct::BLOCK);
        }
    }
    Ok(ImageGrid {
        height: h,
        width: w,
        values: data,
    })
}

/// A concrete orthonormal basis `T` for images of a fixed shape.
#[derive(Clone, Debug)]
pub struct Basis {
    layout: Arc<TreeLayout>,
}

impl Basis {
    pub fn new(kind: BasisKind, height: usize, width: usize) -> Result<Self> {
        let layout = match kind {
            BasisKind::Daub4 { levels } => build_wavelet_tree_layout(height, width, levels)?,
            BasisKind::Bdct8 => build_bdct_tree_layout(height, width)?,
        };
        Ok(Self {
            layout: Arc::new(layout),
        })
    }

    /// Wavelet basis whose scaling block is 8x8 (or as close as the shape allows).
    pub fn default_levels(height: usize, width: usize) -> usize {
        let mut levels = 0;
        while (height >> (levels + 1)) >= 8
            && (width >> (levels + 1)) >= 8
            && height % (1 << (levels + 1)) == 0
            && width % (1 << (levels + 1)) == 0
        {
            levels += 1;
        }
        levels.max(1)
    }

    pub fn kind(&self) -> BasisKind {
        self.layout.basis
    }

    pub fn layout(&self) -> &Arc<TreeLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.n_coefficients()
    }

    /// `x = T^T f`.
    pub fn analyze(&self, image: &ImageGrid) -> Result<TreePyramid> {
        if image.height != self.layout.height || image.width != self.layout.width {
            return invalid(format!(
                "image is {}x{}, basis expects {}x{}",
                image.height, image.width, self.layout.height, self.layout.width
            ));
        }
        let mut p = match self.layout.basis {
            BasisKind::Daub4 { levels } => dwt2_forward(image, levels)?,
            BasisKind::Bdct8 => bdct_forward(image)?,
        };
        p.layout = Arc::clone(&self.layout);
        Ok(p)
    }

    /// `f = T x`.
    pub fn synthesize(&self, pyramid: &TreePyramid) -> Result<ImageGrid> {
        if *pyramid.layout != *self.layout {
            return invalid("pyramid layout does not match basis");
        }
        match self.layout.basis {
            BasisKind::Daub4 { .. } => dwt2_inverse(pyramid),
            BasisKind::Bdct8 => bdct_inverse(pyramid),
        }
    }

    pub fn analyze_vec(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        let img = ImageGrid {
            height: self.layout.height,
            width: self.layout.width,
            values: pixels.to_vec(),
        };
        check_image(&img)?;
        Ok(self.analyze(&img)?.coeffs)
    }

    pub fn synthesize_vec(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let p = unflatten(coeffs.to_vec(), Arc::clone(&self.layout))?;
        Ok(self.synthesize(&p)?.values)
    }
}
