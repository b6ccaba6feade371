//! Hierarchical shrinkage model: state types, prior draws, normalisation,
//! log-joint evaluation and a plain-text checkpoint format.
//!
//! Every detail coefficient `x` has variance `1 / (tau * alpha * alpha0)`
//! where `alpha ~ InvGa(1, 1 / (2 gamma~))` and `gamma~` is the normalised
//! gamma weight of its (band, level). In the tree structure the weights of a
//! level are drawn `Gamma(gamma~_parent / 4, 1)`, so persistence flows from
//! parents to children; the flat structure draws every level independently.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::measurement::SensingOperator;
use crate::randmath::{ln_gamma, sample_gamma, sample_inverse_gamma, sample_normal};
use crate::transform::{Band, BasisKind, TreeLayout, TreePyramid, BANDS, N_CHILDREN};

/// Lower bound applied to sampled gamma weights so normalisation stays finite.
pub const GAMMA_FLOOR: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Whether level weights are coupled through the quadtree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PriorStructure {
    Tree,
    Flat,
}

impl fmt::Display for PriorStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorStructure::Tree => "tree",
            PriorStructure::Flat => "flat",
        })
    }
}

impl FromStr for PriorStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(PriorStructure::Tree),
            "flat" => Ok(PriorStructure::Flat),
            _ => invalid(format!(
                "unknown prior structure {s:?} (expected tree or flat)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparameters {
    /// Shape and rate of the broad gamma prior on `tau0`, every `tau`, and `alpha0`.
    pub a0: f64,
    pub b0: f64,
    /// Rate of the root-level gamma draws.
    pub root_rate: f64,
    /// Shape and rate of the gamma prior on the spiky-noise scale `nu`.
    pub e0: f64,
    pub f0: f64,
    /// Flat structure: each level's weights are `Gamma(flat_shape / n_level, 1)`.
    pub flat_shape: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            a0: 1e-6,
            b0: 1e-6,
            root_rate: 1.0,
            e0: 1e-6,
            f0: 1e-6,
            flat_shape: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a0", self.a0),
            ("b0", self.b0),
            ("root_rate", self.root_rate),
            ("e0", self.e0),
            ("f0", self.f0),
            ("flat_shape", self.flat_shape),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("hyperparameter {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Divide a positive vector by its sum.
pub fn normalize_gamma(gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.is_empty() {
        return invalid("cannot normalise an empty vector");
    }
    if let Some(bad) = gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return invalid(format!(
            "gamma entries must be positive and finite, found {bad}"
        ));
    }
    let sum: f64 = gamma.iter().sum();
    Ok(gamma.iter().map(|g| g / sum).collect())
}

/// Shrinkage variables of one (band, level).
#[derive(Clone, Debug, PartialEq)]
pub struct LevelShrinkage {
    pub gamma: Vec<f64>,
    /// `gamma / sum(gamma)`; also the increment lengths handed to the children.
    pub gamma_tilde: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tau: f64,
}

impl LevelShrinkage {
    pub fn uniform(n: usize) -> Self {
        Self {
            gamma: vec![1.0 / n as f64; n],
            gamma_tilde: vec![1.0 / n as f64; n],
            alpha: vec![1.0; n],
            tau: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Floor `gamma` and recompute `gamma_tilde`.
    pub fn renormalize(&mut self) {
        for g in &mut self.gamma {
            *g = g.max(GAMMA_FLOOR);
        }
        let sum: f64 = self.gamma.iter().sum();
        for (t, g) in self.gamma_tilde.iter_mut().zip(&self.gamma) {
            *t = g / sum;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkageState {
    layout: Arc<TreeLayout>,
    pub structure: PriorStructure,
    /// Indexed `[band.index()][depth]`, root first.
    pub levels: Vec<Vec<LevelShrinkage>>,
    /// Global precision scale of the scaling coefficients.
    pub tau0: f64,
}

impl ShrinkageState {
    /// Uniform weights, unit precisions and scales.
    pub fn uniform(layout: Arc<TreeLayout>, structure: PriorStructure) -> Self {
        let levels = layout
            .bands()
            .iter()
            .map(|t| {
                t.levels
                    .iter()
                    .map(|l| LevelShrinkage::uniform(l.len()))
                    .collect()
            })
            .collect();
        Self {
            layout,
            structure,
            levels,
            tau0: 1.0,
        }
    }

    pub fn layout(&self) -> &Arc<TreeLayout> {
        &self.layout
    }

    pub fn level(&self, band: Band, depth: usize) -> &LevelShrinkage {
        &self.levels[band.index()][depth]
    }

    pub fn level_mut(&mut self, band: Band, depth: usize) -> &mut LevelShrinkage {
        &mut self.levels[band.index()][depth]
    }

    /// Interval lengths `T_i` a level passes to its children.
    pub fn increment_lengths(&self, band: Band, depth: usize) -> &[f64] {
        &self.level(band, depth).gamma_tilde
    }

    /// Gamma shapes of the level's weights given the rest of the state.
    pub fn concentrations(&self, band: Band, depth: usize, hyper: &Hyperparameters) -> Vec<f64> {
        level_concentrations(
            &self.layout,
            self.structure,
            &self.levels[band.index()],
            band,
            depth,
            hyper,
        )
    }

    /// Gamma rate of the level's weights.
    pub fn rate(&self, depth: usize, hyper: &Hyperparameters) -> f64 {
        if depth == 0 {
            hyper.root_rate
        } else {
            1.0
        }
    }

    /// `tau * alpha` for detail coefficients and `tau0` for scaling ones, by flat index.
    pub fn prior_precision(&self) -> Vec<f64> {
        let mut out = vec![self.tau0; self.layout.n_coefficients()];
        for tree in self.layout.bands() {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                let s = &self.levels[tree.band.index()][depth];
                for (o, a) in out[lvl.range()].iter_mut().zip(&s.alpha) {
                    *o = s.tau * a;
                }
            }
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::InvalidState(format!("tau0 = {}", self.tau0)));
        }
        for tree in self.layout.bands() {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                let s = &self.levels[tree.band.index()][depth];
                let tag = format!("{} level {depth}", tree.band);
                if s.gamma.len() != lvl.len()
                    || s.gamma_tilde.len() != lvl.len()
                    || s.alpha.len() != lvl.len()
                {
                    return Err(Error::InvalidState(format!("{tag}: size mismatch")));
                }
                check_simplex(&s.gamma_tilde, &tag)?;
                check_positive(&s.gamma, &tag)?;
                check_positive(&s.alpha, &tag)?;
                check_positive(&[s.tau], &tag)?;
            }
        }
        Ok(())
    }
}

fn level_concentrations(
    layout: &TreeLayout,
    structure: PriorStructure,
    band_levels: &[LevelShrinkage],
    band: Band,
    depth: usize,
    hyper: &Hyperparameters,
) -> Vec<f64> {
    let lvl = layout.level(band, depth);
    let n = lvl.len();
    match structure {
        PriorStructure::Flat => vec![hyper.flat_shape / n as f64; n],
        PriorStructure::Tree if depth == 0 => vec![1.0 / n as f64; n],
        PriorStructure::Tree => {
            let up = &band_levels[depth - 1].gamma_tilde;
            lvl.parents()
                .iter()
                .map(|&p| up[p] / N_CHILDREN as f64)
                .collect()
        }
    }
}

fn check_simplex(v: &[f64], tag: &str) -> Result<()> {
    check_positive(v, tag)?;
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidState(format!("{tag}: simplex sums to {s}")));
    }
    Ok(())
}

fn check_positive(v: &[f64], tag: &str) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidState(format!(
            "{tag}: non-positive entry {bad}"
        )));
    }
    Ok(())
}

/// Spiky-noise component `w` with its own flat shrinkage prior.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikyState {
    pub w: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Unnormalised gamma weights behind `p`.
    pub p_weights: Vec<f64>,
    pub p: Vec<f64>,
    pub nu: f64,
}

impl SpikyState {
    pub fn new(m: usize) -> Self {
        Self {
            w: vec![0.0; m],
            zeta: vec![1.0; m],
            p_weights: vec![1.0 / m as f64; m],
            p: vec![1.0 / m as f64; m],
            nu: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn renormalize(&mut self) {
        for g in &mut self.p_weights {
            *g = g.max(GAMMA_FLOOR);
        }
        let sum: f64 = self.p_weights.iter().sum();
        for (p, g) in self.p.iter_mut().zip(&self.p_weights) {
            *p = g / sum;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseState {
    /// Gaussian noise precision.
    pub alpha0: f64,
    pub spiky: Option<SpikyState>,
}

impl NoiseState {
    pub fn check_invariants(&self, m: usize) -> Result<()> {
        check_positive(&[self.alpha0], "alpha0")?;
        if let Some(s) = &self.spiky {
            if s.len() != m || s.zeta.len() != m || s.p.len() != m || s.p_weights.len() != m {
                return Err(Error::InvalidState("spiky state size mismatch".into()));
            }
            check_simplex(&s.p, "spiky p")?;
            check_positive(&s.p_weights, "spiky weights")?;
            check_positive(&s.zeta, "spiky zeta")?;
            check_positive(&[s.nu], "spiky nu")?;
            if s.w.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidState("spiky w not finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub pyramid: TreePyramid,
    pub shrinkage: ShrinkageState,
    pub noise: NoiseState,
    pub hyper: Hyperparameters,
}

impl ModelState {
    /// Zero coefficients, uniform weights, unit scales; `m` is the measurement
    /// count and sizes the spiky component when enabled.
    pub fn new(
        layout: Arc<TreeLayout>,
        structure: PriorStructure,
        hyper: Hyperparameters,
        m: usize,
        spiky: bool,
    ) -> Result<Self> {
        hyper.validate()?;
        if spiky && m == 0 {
            return invalid("spiky noise needs at least one measurement");
        }
        Ok(Self {
            pyramid: TreePyramid::zeros(Arc::clone(&layout)),
            shrinkage: ShrinkageState::uniform(layout, structure),
            noise: NoiseState {
                alpha0: 1.0,
                spiky: spiky.then(|| SpikyState::new(m)),
            },
            hyper,
        })
    }

    pub fn layout(&self) -> &Arc<TreeLayout> {
        self.shrinkage.layout()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if **self.pyramid.layout() != **self.shrinkage.layout() {
            return Err(Error::InvalidState(
                "pyramid and shrinkage layouts differ".into(),
            ));
        }
        if self.pyramid.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("non-finite coefficient".into()));
        }
        self.shrinkage.check_invariants()?;
        let m = self.noise.spiky.as_ref().map_or(0, |s| s.len());
        self.noise.check_invariants(m)
    }

    /// Key/value checkpoint text; see [`ModelState::from_text`].
    ///
    /// One `key = value` per line, vectors space separated, numbers in
    /// shortest round-trip form. Keys: `basis`, `height`, `width`,
    /// `structure`, `hyper.<name>`, `alpha0`, `tau0`, `x`,
    /// `level.<band>.<depth>.{tau,gamma,gamma_tilde,alpha}` and, when the
    /// spiky component is present, `spiky.{nu,w,zeta,p_weights,p}`.
    pub fn to_text(&self) -> String {
        let layout = self.layout();
        let mut out = String::from("# tree-shrink model state\nformat = 1\n");
        let _ = writeln!(out, "basis = {}", layout.basis);
        let _ = writeln!(out, "height = {}", layout.height);
        let _ = writeln!(out, "width = {}", layout.width);
        let _ = writeln!(out, "structure = {}", self.shrinkage.structure);
        let h = &self.hyper;
        for (k, v) in [
            ("a0", h.a0),
            ("b0", h.b0),
            ("root_rate", h.root_rate),
            ("e0", h.e0),
            ("f0", h.f0),
            ("flat_shape", h.flat_shape),
        ] {
            let _ = writeln!(out, "hyper.{k} = {v}");
        }
        let _ = writeln!(out, "alpha0 = {}", self.noise.alpha0);
        let _ = writeln!(out, "tau0 = {}", self.shrinkage.tau0);
        write_vec(&mut out, "x", self.pyramid.as_slice());
        for band in BANDS {
            for (d, s) in self.shrinkage.levels[band.index()].iter().enumerate() {
                let _ = writeln!(out, "level.{band}.{d}.tau = {}", s.tau);
                write_vec(&mut out, &format!("level.{band}.{d}.gamma"), &s.gamma);
                write_vec(
                    &mut out,
                    &format!("level.{band}.{d}.gamma_tilde"),
                    &s.gamma_tilde,
                );
                write_vec(&mut out, &format!("level.{band}.{d}.alpha"), &s.alpha);
            }
        }
        if let Some(s) = &self.noise.spiky {
            let _ = writeln!(out, "spiky.nu = {}", s.nu);
            write_vec(&mut out, "spiky.w", &s.w);
            write_vec(&mut out, "spiky.zeta", &s.zeta);
            write_vec(&mut out, "spiky.p_weights", &s.p_weights);
            write_vec(&mut out, "spiky.p", &s.p);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            if map.insert(k.trim(), (i + 1, v.trim())).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {}", k.trim()),
                });
            }
        }
        let kv = Fields(map);
        if kv.get("format")? != "1" {
            return invalid("unsupported checkpoint format");
        }
        let basis: BasisKind = kv.parse("basis")?;
        let height: usize = kv.parse("height")?;
        let width: usize = kv.parse("width")?;
        let structure: PriorStructure = kv.parse("structure")?;
        let layout = Arc::new(
            crate::transform::Basis::new(basis, height, width)?
                .layout()
                .as_ref()
                .clone(),
        );
        let hyper = Hyperparameters {
            a0: kv.parse("hyper.a0")?,
            b0: kv.parse("hyper.b0")?,
            root_rate: kv.parse("hyper.root_rate")?,
            e0: kv.parse("hyper.e0")?,
            f0: kv.parse("hyper.f0")?,
            flat_shape: kv.parse("hyper.flat_shape")?,
        };
        let spiky = kv.0.contains_key("spiky.nu");
        let mut st = ModelState::new(Arc::clone(&layout), structure, hyper, 1, false)?;
        st.noise.alpha0 = kv.parse("alpha0")?;
        st.shrinkage.tau0 = kv.parse("tau0")?;
        let x = kv.vec("x", layout.n_coefficients())?;
        st.pyramid.as_mut_slice().copy_from_slice(&x);
        for band in BANDS {
            for d in 0..layout.n_levels() {
                let n = layout.level(band, d).len();
                let s = st.shrinkage.level_mut(band, d);
                s.tau = kv.parse(&format!("level.{band}.{d}.tau"))?;
                s.gamma = kv.vec(&format!("level.{band}.{d}.gamma"), n)?;
                s.gamma_tilde = kv.vec(&format!("level.{band}.{d}.gamma_tilde"), n)?;
                s.alpha = kv.vec(&format!("level.{band}.{d}.alpha"), n)?;
            }
        }
        if spiky {
            let w = kv.vec("spiky.w", None)?;
            let m = w.len();
            st.noise.spiky = Some(SpikyState {
                nu: kv.parse("spiky.nu")?,
                zeta: kv.vec("spiky.zeta", m)?,
                p_weights: kv.vec("spiky.p_weights", m)?,
                p: kv.vec("spiky.p", m)?,
                w,
            });
        }
        st.check_invariants()?;
        Ok(st)
    }
}

fn write_vec(out: &mut String, key: &str, v: &[f64]) {
    out.push_str(key);
    out.push_str(" =");
    for x in v {
        let _ = write!(out, " {x}");
    }
    out.push('\n');
}

struct Fields<'a>(HashMap<&'a str, (usize, &'a str)>);

impl<'a> Fields<'a> {
    fn entry(&self, key: &str) -> Result<(usize, &'a str)> {
        self.0.get(key).copied().ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing key {key}"),
        })
    }

    fn get(&self, key: &str) -> Result<&'a str> {
        Ok(self.entry(key)?.1)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.entry(key)?;
        v.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad value for {key}: {v:?}"),
        })
    }

    fn vec(&self, key: &str, len: impl Into<Option<usize>>) -> Result<Vec<f64>> {
        let (line, v) = self.entry(key)?;
        let out = v
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line,
                msg: format!("{key}: {e}"),
            })?;
        match len.into() {
            Some(n) if n != out.len() => Err(Error::Parse {
                line,
                msg: format!("{key}: expected {n} values, found {}", out.len()),
            }),
            _ => Ok(out),
        }
    }
}

/// Draw the gamma weights of every level from the tree prior.
pub fn prior_draw_tree<R: Rng + ?Sized>(
    layout: Arc<TreeLayout>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<ShrinkageState> {
    prior_draw_shrinkage(layout, PriorStructure::Tree, hyper, rng)
}

/// Draw the gamma weights of every level, root to leaf, under either structure.
/// Precisions `alpha` are left at one; see [`prior_draw_coefficients`].
pub fn prior_draw_shrinkage<R: Rng + ?Sized>(
    layout: Arc<TreeLayout>,
    structure: PriorStructure,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<ShrinkageState> {
    hyper.validate()?;
    let mut st = ShrinkageState::uniform(layout, structure);
    for band in BANDS {
        for depth in 0..st.layout.n_levels() {
            let conc = st.concentrations(band, depth, hyper);
            let rate = st.rate(depth, hyper);
            let lvl = st.level_mut(band, depth);
            for (g, &c) in lvl.gamma.iter_mut().zip(&conc) {
                *g = sample_gamma(c, rate, rng)?;
            }
            lvl.renormalize();
        }
    }
    Ok(st)
}

/// Draw `alpha ~ InvGa(1, 1/(2 gamma~))` into `shrinkage`, then coefficients
/// `x ~ N(0, 1/(tau alpha alpha0))` (detail) and `N(0, 1/(tau0 alpha0))` (scaling).
pub fn prior_draw_coefficients<R: Rng + ?Sized>(
    shrinkage: &mut ShrinkageState,
    alpha0: f64,
    rng: &mut R,
) -> Result<TreePyramid> {
    if !(alpha0 > 0.0) {
        return invalid(format!("alpha0 must be positive, got {alpha0}"));
    }
    for lvl in shrinkage.levels.iter_mut().flatten() {
        for (a, &t) in lvl.alpha.iter_mut().zip(&lvl.gamma_tilde) {
            *a = sample_inverse_gamma(1.0, 1.0 / (2.0 * t), rng)?;
        }
    }
    let precision = shrinkage.prior_precision();
    let mut p = TreePyramid::zeros(Arc::clone(shrinkage.layout()));
    for (x, q) in p.as_mut_slice().iter_mut().zip(&precision) {
        *x = sample_normal(rng) / (q * alpha0).sqrt();
    }
    Ok(p)
}

/// Log of the unnormalised joint density, split by factor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogJoint {
    /// `y | x, w, alpha0`.
    pub likelihood: f64,
    /// Scaling coefficients given `tau0, alpha0`.
    pub scaling_prior: f64,
    /// Detail coefficients given `tau, alpha, alpha0`.
    pub coefficient_prior: f64,
    /// `alpha | gamma~`.
    pub alpha_prior: f64,
    /// Level weights `gamma` (tree or flat).
    pub gamma_prior: f64,
    /// Broad gamma priors on `tau0`, every `tau` and `alpha0`.
    pub scale_prior: f64,
    /// `w, zeta, p, nu` when the spiky component is present.
    pub spiky_prior: f64,
}

impl LogJoint {
    pub fn total(&self) -> f64 {
        self.likelihood
            + self.scaling_prior
            + self.coefficient_prior
            + self.alpha_prior
            + self.gamma_prior
            + self.scale_prior
            + self.spiky_prior
    }
}

pub fn log_joint(state: &ModelState, y: &[f64], operator: &SensingOperator) -> Result<LogJoint> {
    if operator.n() != state.layout().n_coefficients() {
        return invalid("operator and state dimensions differ");
    }
    let fit = operator.apply_psi(state.pyramid.as_slice())?;
    log_joint_with_fit(state, y, &fit)
}

/// As [`log_joint`] with `Psi x` already computed.
pub fn log_joint_with_fit(state: &ModelState, y: &[f64], fit: &[f64]) -> Result<LogJoint> {
    if y.len() != fit.len() {
        return invalid(format!(
            "{} measurements but {} fitted values",
            y.len(),
            fit.len()
        ));
    }
    if let Some(s) = &state.noise.spiky {
        if s.len() != y.len() {
            return invalid("spiky component length differs from measurement count");
        }
    }
    let h = &state.hyper;
    let a0 = state.noise.alpha0;
    let sh = &state.shrinkage;
    let layout = state.layout();
    let x = state.pyramid.as_slice();
    let mut lj = LogJoint::default();

    let m = y.len() as f64;
    let mut rss = 0.0;
    for (i, (yi, fi)) in y.iter().zip(fit).enumerate() {
        let w = state.noise.spiky.as_ref().map_or(0.0, |s| s.w[i]);
        rss += (yi - fi - w).powi(2);
    }
    lj.likelihood = 0.5 * m * (a0.ln() - LN_2PI) - 0.5 * a0 * rss;

    let ns = layout.n_scaling();
    lj.scaling_prior = x[..ns].iter().map(|&v| ln_normal(v, sh.tau0 * a0)).sum();

    let gamma_density = |g: f64, shape: f64, rate: f64| {
        (shape - 1.0) * g.ln() - rate * g - ln_gamma(shape) + shape * rate.ln()
    };
    for tree in layout.bands() {
        for (depth, lvl) in tree.levels.iter().enumerate() {
            let s = sh.level(tree.band, depth);
            for (i, k) in lvl.range().enumerate() {
                lj.coefficient_prior += ln_normal(x[k], s.tau * s.alpha[i] * a0);
                lj.alpha_prior += ln_inverse_gamma1(s.alpha[i], 1.0 / (2.0 * s.gamma_tilde[i]));
            }
            let conc = sh.concentrations(tree.band, depth, h);
            let rate = sh.rate(depth, h);
            lj.gamma_prior += s
                .gamma
                .iter()
                .zip(&conc)
                .map(|(&g, &c)| gamma_density(g, c, rate))
                .sum::<f64>();
            lj.scale_prior += gamma_density(s.tau, h.a0, h.b0);
        }
    }
    lj.scale_prior += gamma_density(sh.tau0, h.a0, h.b0) + gamma_density(a0, h.a0, h.b0);

    if let Some(s) = &state.noise.spiky {
        let conc = 1.0 / s.len() as f64;
        for i in 0..s.len() {
            lj.spiky_prior += ln_normal(s.w[i], s.nu * s.zeta[i] * a0)
                + ln_inverse_gamma1(s.zeta[i], 1.0 / (2.0 * s.p[i]))
                + gamma_density(s.p_weights[i], conc, 1.0);
        }
        lj.spiky_prior += gamma_density(s.nu, h.e0, h.f0);
    }
    Ok(lj)
}

/// Log density of `N(0, 1/precision)` at `v`.
fn ln_normal(v: f64, precision: f64) -> f64 {
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * v * v
}

/// Log density of `InvGa(1, scale)` at `v`.
fn ln_inverse_gamma1(v: f64, scale: f64) -> f64 {
    scale.ln() - 2.0 * v.ln() - scale / v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{make_identity_operator, SensingOperator};
    use crate::randmath::RngHandle;
    use crate::transform::{build_wavelet_tree_layout, Basis};

    fn wavelet(h: usize, levels: usize) -> Arc<TreeLayout> {
        Arc::new(build_wavelet_tree_layout(h, h, levels).unwrap())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_gamma(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        let fixed = [0.125, 0.375, 0.5];
        assert_eq!(normalize_gamma(&fixed).unwrap(), fixed.to_vec());
        let g = [0.3, 2.0, 7.1, 1e-5];
        let scaled: Vec<f64> = g.iter().map(|v| v * 17.3).collect();
        for (a, b) in normalize_gamma(&g)
            .unwrap()
            .iter()
            .zip(normalize_gamma(&scaled).unwrap())
        {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(normalize_gamma(&[1.0, 0.0]).is_err());
        assert!(normalize_gamma(&[]).is_err());
    }

    #[test]
    fn single_root_draw_is_exponential() {
        // 2x2 grid, one level: one root per band with shape 1/n_1 = 1
        let layout = wavelet(2, 1);
        let hyper = Hyperparameters::default();
        let mut rng = RngHandle::new(1, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let st = prior_draw_tree(Arc::clone(&layout), &hyper, &mut rng).unwrap();
            let l = st.level(Band::HH, 0);
            assert_eq!(l.gamma_tilde, vec![1.0]);
            sum += l.gamma[0];
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn concentrations_sum_to_one_per_level() {
        let layout = wavelet(64, 3);
        let hyper = Hyperparameters::default();
        let mut rng = RngHandle::new(2, 0);
        for structure in [PriorStructure::Tree, PriorStructure::Flat] {
            let st =
                prior_draw_shrinkage(Arc::clone(&layout), structure, &hyper, &mut rng).unwrap();
            st.check_invariants().unwrap();
            for band in BANDS {
                for d in 0..3 {
                    let s: f64 = st.concentrations(band, d, &hyper).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12, "{structure} {band} {d}: {s}");
                }
            }
        }
    }

    #[test]
    fn tree_prior_persistence() {
        // 4 roots with 4 children each: parent weight correlates with its children's
        let layout = wavelet(8, 2);
        let hyper = Hyperparameters::default();
        let mut rng = RngHandle::new(3, 0);
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..10_000 {
            let st = prior_draw_tree(Arc::clone(&layout), &hyper, &mut rng).unwrap();
            let root = st.level(Band::HH, 0);
            let kids = st.level(Band::HH, 1);
            let lvl = layout.level(Band::HH, 0);
            for i in 0..root.len() {
                let x = root.gamma_tilde[i];
                let y = lvl
                    .children(i)
                    .iter()
                    .map(|&c| kids.gamma_tilde[c])
                    .sum::<f64>()
                    / 4.0;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
                n += 1.0;
            }
        }
        let cov = sxy / n - sx * sy / n / n;
        let corr = cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt();
        assert!(corr > 0.1, "correlation {corr}");
    }

    #[test]
    fn huge_tau_shrinks_coefficients_to_zero() {
        let layout = wavelet(16, 1);
        let mut rng = RngHandle::new(4, 0);
        let mut st =
            prior_draw_tree(Arc::clone(&layout), &Hyperparameters::default(), &mut rng).unwrap();
        st.tau0 = 1e12;
        for l in st.levels.iter_mut().flatten() {
            l.tau = 1e12;
        }
        // alpha draws can be tiny for tiny gamma~; pin them to keep the check about tau
        let p = prior_draw_coefficients(&mut st, 1.0, &mut rng).unwrap();
        let max_scaling = p.scaling().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_scaling < 1e-4);
        let mut st2 = st.clone();
        for l in st2.levels.iter_mut().flatten() {
            l.gamma_tilde.iter_mut().for_each(|t| *t = 0.25);
        }
        let p = prior_draw_coefficients(&mut st2, 1.0, &mut rng).unwrap();
        assert!(p.as_slice().iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn scaling_variance() {
        let layout = wavelet(16, 1);
        let mut rng = RngHandle::new(5, 0);
        let mut st = ShrinkageState::uniform(layout, PriorStructure::Tree);
        st.tau0 = 2.0;
        let alpha0 = 3.0;
        let mut acc = Vec::new();
        while acc.len() < 100_000 {
            let p = prior_draw_coefficients(&mut st, alpha0, &mut rng).unwrap();
            acc.extend_from_slice(p.scaling());
        }
        let var = acc.iter().map(|v| v * v).sum::<f64>() / acc.len() as f64;
        assert!((var * 6.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn detail_marginal_is_laplace() {
        // fixed gamma~ and tau: the alpha mixture gives a Laplace marginal (kurtosis 6)
        let layout = wavelet(16, 1);
        let mut rng = RngHandle::new(6, 0);
        let mut st = ShrinkageState::uniform(layout, PriorStructure::Flat);
        let mut xs = Vec::new();
        while xs.len() < 200_000 {
            let p = prior_draw_coefficients(&mut st, 1.0, &mut rng).unwrap();
            xs.extend_from_slice(p.detail(Band::HH, 0));
            xs.extend_from_slice(p.detail(Band::HL, 0));
            xs.extend_from_slice(p.detail(Band::LH, 0));
        }
        let m2 = xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64;
        let m4 = xs.iter().map(|v| v.powi(4)).sum::<f64>() / xs.len() as f64;
        let kurt = m4 / (m2 * m2);
        assert!((kurt - 6.0).abs() < 0.5, "kurtosis {kurt}");
    }

    fn random_state(seed: u64, spiky: bool) -> (ModelState, SensingOperator, Vec<f64>) {
        let basis = Basis::new(BasisKind::Daub4 { levels: 1 }, 16, 16).unwrap();
        let op = make_identity_operator(basis.clone());
        let mut rng = RngHandle::new(seed, 0);
        let hyper = Hyperparameters::default();
        let mut st = ModelState::new(
            Arc::clone(basis.layout()),
            PriorStructure::Tree,
            hyper,
            256,
            spiky,
        )
        .unwrap();
        st.shrinkage = prior_draw_tree(Arc::clone(basis.layout()), &hyper, &mut rng).unwrap();
        st.pyramid = prior_draw_coefficients(&mut st.shrinkage, 1.0, &mut rng).unwrap();
        st.noise.alpha0 = 50.0;
        if let Some(s) = st.noise.spiky.as_mut() {
            for (i, w) in s.w.iter_mut().enumerate() {
                *w = if i % 17 == 0 { 0.5 } else { 0.0 };
            }
            s.zeta
                .iter_mut()
                .enumerate()
                .for_each(|(i, z)| *z = 1.0 + i as f64);
            s.p_weights
                .iter_mut()
                .enumerate()
                .for_each(|(i, p)| *p = 0.1 + (i % 5) as f64);
            s.renormalize();
            s.nu = 0.7;
        }
        let y: Vec<f64> = op
            .apply_psi(st.pyramid.as_slice())
            .unwrap()
            .iter()
            .map(|v| v + 0.1 * sample_normal(&mut rng))
            .collect();
        (st, op, y)
    }

    #[test]
    fn log_joint_is_finite_and_decomposes() {
        for spiky in [false, true] {
            let (st, op, y) = random_state(7, spiky);
            let lj = log_joint(&st, &y, &op).unwrap();
            assert!(lj.total().is_finite());
            // independent evaluation of the likelihood and scaling terms
            let fit = op.apply_psi(st.pyramid.as_slice()).unwrap();
            let a0 = st.noise.alpha0;
            let lik: f64 = (0..y.len())
                .map(|i| {
                    let w = st.noise.spiky.as_ref().map_or(0.0, |s| s.w[i]);
                    let r = y[i] - fit[i] - w;
                    -0.5 * (2.0 * std::f64::consts::PI / a0).ln() - 0.5 * a0 * r * r
                })
                .sum();
            assert!((lik - lj.likelihood).abs() < 1e-9 * lik.abs().max(1.0));
            let sum = lj.likelihood
                + lj.scaling_prior
                + lj.coefficient_prior
                + lj.alpha_prior
                + lj.gamma_prior
                + lj.scale_prior
                + lj.spiky_prior;
            assert_eq!(sum, lj.total());
            assert_eq!(lj.spiky_prior != 0.0, spiky);
        }
    }

    #[test]
    fn log_joint_gamma_scale_only_moves_gamma_prior() {
        let (st, op, y) = random_state(8, false);
        let mut scaled = st.clone();
        for l in scaled.shrinkage.levels.iter_mut().flatten() {
            l.gamma.iter_mut().for_each(|g| *g *= 3.7);
            l.renormalize();
        }
        let a = log_joint(&st, &y, &op).unwrap();
        let b = log_joint(&scaled, &y, &op).unwrap();
        assert_eq!(a.likelihood, b.likelihood);
        assert!((a.alpha_prior - b.alpha_prior).abs() < 1e-9 * a.alpha_prior.abs());
        assert_eq!(a.coefficient_prior, b.coefficient_prior);
        assert!((a.gamma_prior - b.gamma_prior).abs() > 1e-3);
    }

    #[test]
    fn log_joint_prefers_truth() {
        let (st, op, y) = random_state(9, false);
        let mut noisy = st.clone();
        let mut rng = RngHandle::new(99, 0);
        noisy
            .pyramid
            .as_mut_slice()
            .iter_mut()
            .for_each(|x| *x += sample_normal(&mut rng));
        let truth = log_joint(&st, &y, &op).unwrap();
        let far = log_joint(&noisy, &y, &op).unwrap();
        assert!(truth.likelihood > far.likelihood);
        assert!(truth.total() > far.total());
        let mut halfway = st.clone();
        for (h, (t, n)) in halfway
            .pyramid
            .as_mut_slice()
            .iter_mut()
            .zip(st.pyramid.as_slice().iter().zip(noisy.pyramid.as_slice()))
        {
            *h = 0.5 * (t + n);
        }
        let mid = log_joint(&halfway, &y, &op).unwrap();
        assert!(far.total() < mid.total() && mid.total() < truth.total());
    }

    #[test]
    fn log_joint_rejects_bad_dims() {
        let (st, op, y) = random_state(10, false);
        assert!(log_joint(&st, &y[..10], &op).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        for spiky in [false, true] {
            let (st, _, _) = random_state(11, spiky);
            let text = st.to_text();
            let back = ModelState::from_text(&text).unwrap();
            assert_eq!(back, st);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn checkpoint_errors() {
        let (st, _, _) = random_state(12, false);
        let text = st.to_text();
        assert!(ModelState::from_text(&text.replace("alpha0 =", "alpha_zero =")).is_err());
        assert!(matches!(
            ModelState::from_text(&text.replace("tau0 = ", "tau0 = x")),
            Err(Error::Parse { .. })
        ));
        assert!(ModelState::from_text("nonsense").is_err());
    }

    #[test]
    fn structure_names() {
        assert_eq!(
            "tree".parse::<PriorStructure>().unwrap(),
            PriorStructure::Tree
        );
        assert_eq!(PriorStructure::Flat.to_string(), "flat");
        assert!("both".parse::<PriorStructure>().is_err());
    }
}
