use std::fmt;

use crate::error::{invalid, Result};

/// Children per node in every quadtree.
pub const N_CHILDREN: usize = 4;

/// Detail orientation of a coefficient tree. Scaling (LL) coefficients are
/// not part of any tree and are stored separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    HH,
    HL,
    LH,
}

/// Bands in flattening order.
pub const BANDS: [Band; 3] = [Band::HH, Band::HL, Band::LH];

impl Band {
    pub fn index(self) -> usize {
        match self {
            Band::HH => 0,
            Band::HL => 1,
            Band::LH => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::HH => "HH",
            Band::HL => "HL",
            Band::LH => "LH",
        }
    }

    pub fn from_name(s: &str) -> Option<Band> {
        BANDS.into_iter().find(|b| b.name() == s)
    }

    /// Offset (in units of the band size) of this band inside a Mallat
    /// subband image: HL sits right of LL, LH below it, HH diagonal.
    fn quadrant(self) -> (usize, usize) {
        match self {
            Band::HH => (1, 1),
            Band::HL => (0, 1),
            Band::LH => (1, 0),
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which orthonormal basis the layout describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    /// Periodic Daubechies-4 wavelet with the given number of decomposition levels.
    Daub4 { levels: usize },
    /// 8x8 block DCT-II; always three tree levels per block.
    Bdct8,
}

impl BasisKind {
    pub fn n_levels(self) -> usize {
        match self {
            BasisKind::Daub4 { levels } => levels,
            BasisKind::Bdct8 => 3,
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = crate::Error;

    /// Parses `bdct8`, `daub4:<levels>` (the [`fmt::Display`] form).
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "bdct8" => Ok(BasisKind::Bdct8),
            Some(("daub4", l)) => match l.parse::<usize>() {
                Ok(levels) if levels > 0 => Ok(BasisKind::Daub4 { levels }),
                _ => invalid(format!("bad wavelet depth in {s:?}")),
            },
            _ => invalid(format!("unknown basis {s:?}")),
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Daub4 { levels } => write!(f, "daub4:{levels}"),
            BasisKind::Bdct8 => f.write_str("bdct8"),
        }
    }
}

/// One level of one band tree.
#[derive(Clone, Debug)]
pub struct LevelLayout {
    /// Band-local grid shape; nodes are stored row-major over this grid.
    pub rows: usize,
    pub cols: usize,
    /// Flat index of the first node of this level.
    pub offset: usize,
    parents: Vec<usize>,
    children: Vec<[usize; N_CHILDREN]>,
}

impl LevelLayout {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the parent node in the previous level, `None` at the root level.
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents.get(i).copied()
    }

    /// Indices of the four children in the next level; empty at the leaf level.
    pub fn children(&self, i: usize) -> &[usize] {
        self.children.get(i).map_or(&[], |c| &c[..])
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
pub struct BandTree {
    pub band: Band,
    /// Depth 0 is the root level, the last entry the leaf level.
    pub levels: Vec<LevelLayout>,
}

/// A single node record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Node<'a> {
    pub band: Band,
    pub depth: usize,
    pub index: usize,
    pub flat: usize,
    pub parent: Option<usize>,
    pub children: &'a [usize],
}

/// Quadtree organisation of a coefficient vector.
///
/// Flattened order: scaling block row-major, then for each band in
/// [`BANDS`] order, each depth from root to leaf, nodes row-major over the
/// band-local grid. Every flat index also has a position in the Mallat
/// subband image (LL top-left, HL right of it, LH below, HH diagonal), which
/// is how the transforms scatter and gather coefficients.
#[derive(Clone, Debug)]
pub struct TreeLayout {
    pub basis: BasisKind,
    pub height: usize,
    pub width: usize,
    pub scaling_rows: usize,
    pub scaling_cols: usize,
    bands: Vec<BandTree>,
    positions: Vec<usize>,
}

impl PartialEq for TreeLayout {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis && self.height == other.height && self.width == other.width
    }
}

impl TreeLayout {
    pub fn n_coefficients(&self) -> usize {
        self.height * self.width
    }

    pub fn n_scaling(&self) -> usize {
        self.scaling_rows * self.scaling_cols
    }

    pub fn n_levels(&self) -> usize {
        self.basis.n_levels()
    }

    pub fn bands(&self) -> &[BandTree] {
        &self.bands
    }

    pub fn band(&self, band: Band) -> &BandTree {
        &self.bands[band.index()]
    }

    pub fn level(&self, band: Band, depth: usize) -> &LevelLayout {
        &self.bands[band.index()].levels[depth]
    }

    /// Row-major pixel index in the subband image for each flat coefficient.
    pub fn subband_positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node<'_>> + '_ {
        self.bands.iter().flat_map(|tree| {
            tree.levels
                .iter()
                .enumerate()
                .flat_map(move |(depth, lvl)| {
                    (0..lvl.len()).map(move |i| Node {
                        band: tree.band,
                        depth,
                        index: i,
                        flat: lvl.offset + i,
                        parent: lvl.parent(i),
                        children: lvl.children(i),
                    })
                })
        })
    }

    /// `(band, depth, index)` of a flat position, or `None` for scaling coefficients.
    pub fn locate(&self, flat: usize) -> Option<(Band, usize, usize)> {
        if flat < self.n_scaling() || flat >= self.n_coefficients() {
            return None;
        }
        for tree in &self.bands {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                if lvl.range().contains(&flat) {
                    return Some((tree.band, depth, flat - lvl.offset));
                }
            }
        }
        None
    }
}

fn check_dims(height: usize, width: usize, factor: usize, what: &str) -> Result<()> {
    if height == 0 || width == 0 || height % factor != 0 || width % factor != 0 {
        return invalid(format!(
            "{what}: image {height}x{width} is not divisible by {factor}"
        ));
    }
    Ok(())
}

/// Layout of a `levels`-deep wavelet decomposition: three band trees whose
/// roots are the coarsest detail coefficients; the parent of position (r, c)
/// at one depth is (r/2, c/2) one depth up in the same band.
pub fn build_wavelet_tree_layout(height: usize, width: usize, levels: usize) -> Result<TreeLayout> {
    if levels == 0 {
        return invalid("wavelet layout needs at least one level");
    }
    if levels >= usize::BITS as usize {
        return invalid(format!("too many levels: {levels}"));
    }
    check_dims(height, width, 1 << levels, "wavelet layout")?;
    let (h0, w0) = (height >> levels, width >> levels);

    let grid = |depth: usize| (h0 << depth, w0 << depth);
    let parent_of = |depth: usize, r: usize, c: usize| {
        let (_, pcols) = grid(depth - 1);
        (r / 2) * pcols + c / 2
    };
    let children_of = |depth: usize, r: usize, c: usize| {
        let (_, ccols) = grid(depth + 1);
        let (r2, c2) = (2 * r, 2 * c);
        [
            r2 * ccols + c2,
            r2 * ccols + c2 + 1,
            (r2 + 1) * ccols + c2,
            (r2 + 1) * ccols + c2 + 1,
        ]
    };
    Ok(assemble(
        BasisKind::Daub4 { levels },
        height,
        width,
        (h0, w0),
        levels,
        grid,
        parent_of,
        children_of,
    ))
}

/// Layout of an 8x8 block DCT arranged as subbands: in-block frequency
/// (u, v) of block (bi, bj) lands at subband-image position
/// (u * H/8 + bi, v * W/8 + bj). DC terms form the scaling block, (0,1),
/// (1,0) and (1,1) are the roots of the HL, LH and HH trees, and frequency
/// (u, v) has children (2u+a, 2v+b) for a, b in {0, 1} within the same block.
pub fn build_bdct_tree_layout(height: usize, width: usize) -> Result<TreeLayout> {
    check_dims(height, width, 8, "block-DCT layout")?;
    let (hb, wb) = (height / 8, width / 8);

    let grid = |depth: usize| (hb << depth, wb << depth);
    // band-local (r, c) = (du * hb + bi, dv * wb + bj)
    let parent_of = |depth: usize, r: usize, c: usize| {
        let (_, pcols) = grid(depth - 1);
        let (du, bi, dv, bj) = (r / hb, r % hb, c / wb, c % wb);
        ((du / 2) * hb + bi) * pcols + (dv / 2) * wb + bj
    };
    let children_of = |depth: usize, r: usize, c: usize| {
        let (_, ccols) = grid(depth + 1);
        let (du, bi, dv, bj) = (r / hb, r % hb, c / wb, c % wb);
        let at = |a: usize, b: usize| ((2 * du + a) * hb + bi) * ccols + (2 * dv + b) * wb + bj;
        [at(0, 0), at(0, 1), at(1, 0), at(1, 1)]
    };
    Ok(assemble(
        BasisKind::Bdct8,
        height,
        width,
        (hb, wb),
        3,
        grid,
        parent_of,
        children_of,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    basis: BasisKind,
    height: usize,
    width: usize,
    (scaling_rows, scaling_cols): (usize, usize),
    n_levels: usize,
    grid: impl Fn(usize) -> (usize, usize),
    parent_of: impl Fn(usize, usize, usize) -> usize,
    children_of: impl Fn(usize, usize, usize) -> [usize; N_CHILDREN],
) -> TreeLayout {
    let mut positions = Vec::with_capacity(height * width);
    for r in 0..scaling_rows {
        for c in 0..scaling_cols {
            positions.push(r * width + c);
        }
    }

    let mut offset = scaling_rows * scaling_cols;
    let mut bands = Vec::with_capacity(BANDS.len());
    for band in BANDS {
        let (qr, qc) = band.quadrant();
        let mut levels = Vec::with_capacity(n_levels);
        for depth in 0..n_levels {
            let (rows, cols) = grid(depth);
            let mut parents = Vec::new();
            let mut children = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    positions.push((qr * rows + r) * width + qc * cols + c);
                    if depth > 0 {
                        parents.push(parent_of(depth, r, c));
                    }
                    if depth + 1 < n_levels {
                        children.push(children_of(depth, r, c));
                    }
                }
            }
            levels.push(LevelLayout {
                rows,
                cols,
                offset,
                parents,
                children,
            });
            offset += rows * cols;
        }
        bands.push(BandTree { band, levels });
    }
    debug_assert_eq!(offset, height * width);

    TreeLayout {
        basis,
        height,
        width,
        scaling_rows,
        scaling_cols,
        bands,
        positions,
    }
}
