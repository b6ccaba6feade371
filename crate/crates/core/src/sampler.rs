//! Metropolis-within-Gibbs sampler over the full model.
//!
//! One sweep updates, in order: coefficients, local precisions `alpha`, level
//! weights `gamma` (root to leaf, node by node with a GIG proposal), the
//! global scales `tau`, `tau0`, `alpha0`, and the spiky-noise block.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::design::Design;
use crate::error::{invalid, Error, Result};
use crate::measurement::{axpy, dot, SensingOperator};
use crate::model::{log_joint_with_fit, Hyperparameters, ModelState, PriorStructure, SpikyState};
use crate::randmath::{
    ln_gamma, ln_gamma1p_coefficients, sample_gamma, sample_gig, sample_normal, GigParams,
    RngHandle, LN_GAMMA1P_TERMS,
};
use crate::transform::{Band, TreeLayout, BANDS, N_CHILDREN};

/// Floor on the GIG `a` parameter when a coefficient is numerically zero.
pub const PRECISION_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    /// Sweeps including burn-in.
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub stream: u64,
    pub spiky: bool,
    pub structure: PriorStructure,
    pub hyper: Hyperparameters,
    /// Sweeps averaged in the rolling acceptance-rate trace.
    pub acceptance_window: usize,
    /// Coefficients whose retained samples are kept in full.
    pub track: Vec<usize>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            burn_in: 1000,
            seed: 0,
            stream: 0,
            spiky: false,
            structure: PriorStructure::Tree,
            hyper: Hyperparameters::default(),
            acceptance_window: 100,
            track: Vec::new(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_samples {
            return invalid(format!(
                "burn-in ({}) must be smaller than the sample count ({})",
                self.burn_in, self.n_samples
            ));
        }
        if self.acceptance_window == 0 {
            return invalid("acceptance window must be positive");
        }
        self.hyper.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackedCoefficient {
    pub index: usize,
    pub samples: Vec<f64>,
}

impl TrackedCoefficient {
    /// Equal-width histogram over the sample range: `(lower edges, counts)`.
    pub fn histogram(&self, bins: usize) -> (Vec<f64>, Vec<usize>) {
        let lo = self.samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo {
            (hi - lo) / bins as f64
        } else {
            1.0
        };
        let mut counts = vec![0; bins];
        for &s in &self.samples {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        ((0..bins).map(|b| lo + b as f64 * width).collect(), counts)
    }
}

/// Statistics over retained samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub alpha0_mean: f64,
    /// Posterior mean of `alpha0^(-1/2)`.
    pub noise_std: f64,
    pub spiky_mean: Option<Vec<f64>>,
    /// Gamma-update acceptance over retained sweeps.
    pub accepted: u64,
    pub proposed: u64,
    pub n_retained: usize,
    pub trace: Vec<TraceRow>,
    pub tracked: Vec<TrackedCoefficient>,
    /// Last state of the (first) chain, for checkpointing.
    pub final_state: ModelState,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_joint: f64,
    pub alpha0: f64,
    /// Acceptance rate of this sweep's gamma proposals.
    pub acceptance: f64,
    /// Rolling acceptance over the configured window.
    pub acceptance_window: f64,
}

impl PosteriorSummary {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,log_joint,alpha0,acceptance,acceptance_window")?;
        for r in &self.trace {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.iteration, r.log_joint, r.alpha0, r.acceptance, r.acceptance_window
            )?;
        }
        f.flush()?;
        Ok(())
    }

    /// Pool chains by averaging their retained-sample moments.
    pub fn merge(chains: Vec<PosteriorSummary>) -> Result<PosteriorSummary> {
        let mut iter = chains.into_iter();
        let Some(mut out) = iter.next() else {
            return invalid("no chains to merge");
        };
        let mut total = out.n_retained as f64;
        let mut second: Vec<f64> = out
            .mean
            .iter()
            .zip(&out.variance)
            .map(|(m, v)| v + m * m)
            .collect();
        let weigh = |acc: &mut [f64], add: &[f64], wa: f64, wb: f64| {
            for (a, b) in acc.iter_mut().zip(add) {
                *a = (*a * wa + b * wb) / (wa + wb);
            }
        };
        for c in iter {
            let w = c.n_retained as f64;
            let c2: Vec<f64> = c
                .mean
                .iter()
                .zip(&c.variance)
                .map(|(m, v)| v + m * m)
                .collect();
            weigh(&mut out.mean, &c.mean, total, w);
            weigh(&mut second, &c2, total, w);
            if let (Some(a), Some(b)) = (out.spiky_mean.as_mut(), c.spiky_mean.as_ref()) {
                weigh(a, b, total, w);
            }
            out.alpha0_mean = (out.alpha0_mean * total + c.alpha0_mean * w) / (total + w);
            out.noise_std = (out.noise_std * total + c.noise_std * w) / (total + w);
            out.accepted += c.accepted;
            out.proposed += c.proposed;
            out.n_retained += c.n_retained;
            for (t, ct) in out.tracked.iter_mut().zip(c.tracked) {
                t.samples.extend(ct.samples);
            }
            total += w;
        }
        out.variance = second
            .iter()
            .zip(&out.mean)
            .map(|(s, m)| (s - m * m).max(0.0))
            .collect();
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Level-wise gamma target.
//
// With `S = sum_j gamma_j` over a level, the alpha factors contribute
// `S^n exp(-S sum_j 1/(2 gamma_j alpha_j)) / prod gamma_j`, and in the tree
// structure the next level contributes the Dirichlet density of its
// normalised weights with concentrations `gamma~_j / n_c`. For node `i` the
// GIG(2 rate, S_{-i}/alpha_i, beta_i - 1) proposal absorbs the prior and the
// terms in `gamma_i` alone, leaving
//   n ln S - gamma_i c_{-i} + F(S)
// with `c_{-i} = sum_{j != i} 1/(2 gamma_j alpha_j)` and
//   F = sum_j [z_j L_j - n_c lnGamma(z_j)],  z_j = gamma_j / (S n_c),
// where `L_j` sums the log normalised weights of node j's children. `F` is
// evaluated in O(K) per proposal from power sums of the other nodes using
// lnGamma(z) = lnGamma(1 + z) - ln z and the Taylor series of lnGamma(1 + z)
// (all z <= 1/4). Sums over "the other nodes" combine a running prefix of
// already-updated nodes with a suffix of not-yet-updated ones so that no
// subtraction (and no cancellation) is involved.

const K: usize = LN_GAMMA1P_TERMS;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Sums {
    pub s: f64,
    pub c: f64,
    pub lg: f64,
    pub gl: f64,
    /// `sum (gamma / reference)^k`, k = 1..=K.
    pub p: [f64; K],
}

impl Default for Sums {
    fn default() -> Self {
        Self {
            s: 0.0,
            c: 0.0,
            lg: 0.0,
            gl: 0.0,
            p: [0.0; K],
        }
    }
}

impl Sums {
    pub fn add_node(&mut self, g: f64, inv: f64, l: f64, reference: f64, powers: bool) {
        self.s += g;
        self.c += inv;
        if powers {
            self.lg += g.ln();
            self.gl += g * l;
            let r = g / reference;
            let mut v = r;
            for pk in &mut self.p {
                *pk += v;
                v *= r;
            }
        }
    }

    pub fn combined(&self, other: &Sums) -> Sums {
        let mut out = *self;
        out.s += other.s;
        out.c += other.c;
        out.lg += other.lg;
        out.gl += other.gl;
        for (a, b) in out.p.iter_mut().zip(&other.p) {
            *a += b;
        }
        out
    }
}

/// Per-node data of a level: the node's children log-sum `L_i` when the level
/// has children.
pub(crate) struct LevelTarget<'a> {
    pub n: usize,
    pub child_log_sums: Option<&'a [f64]>,
    pub reference: f64,
}

impl LevelTarget<'_> {
    /// `F(S)` with `others` summarising all nodes but `i`, node `i` at `g`.
    pub fn children_term(&self, others: &Sums, g: f64, i: usize) -> f64 {
        let Some(ls) = self.child_log_sums else {
            return 0.0;
        };
        let nc = N_CHILDREN as f64;
        let s = others.s + g;
        let ln_u = -(s * nc).ln();
        let ln_ru = self.reference.ln() + ln_u;
        let coeffs = ln_gamma1p_coefficients();
        let mut series = 0.0;
        for (k, (&pk, &ck)) in others.p.iter().zip(coeffs).enumerate() {
            if pk > 0.0 {
                series += ck * (pk.ln() + (k + 1) as f64 * ln_ru).exp();
            }
        }
        let others_ln_gamma = series - (others.lg + (self.n - 1) as f64 * ln_u);
        let z = (g.ln() + ln_u).exp();
        let own_ln_gamma = ln_gamma(1.0 + z) - (g.ln() + ln_u);
        let u = ln_u.exp();
        u * (others.gl + g * ls[i]) - nc * (others_ln_gamma + own_ln_gamma)
    }

    /// Log target of node `i` at value `g` after the proposal has been divided out.
    pub fn log_target(&self, others: &Sums, g: f64, i: usize) -> f64 {
        self.n as f64 * (others.s + g).ln() - g * others.c + self.children_term(others, g, i)
    }
}

/// `L_j = sum over children of ln gamma~_child`, for each node of a tree level.
pub(crate) fn child_log_sums(
    layout: &TreeLayout,
    band: crate::transform::Band,
    depth: usize,
    child_tilde: &[f64],
) -> Vec<f64> {
    let lvl = layout.level(band, depth);
    (0..lvl.len())
        .map(|i| lvl.children(i).iter().map(|&c| child_tilde[c].ln()).sum())
        .collect()
}

/// One Metropolis pass over a level: every node proposes from
/// GIG(2 rate, S_{-i}/alpha_i, beta_i - 1). Returns (accepted, proposed).
/// Single-node levels are redrawn exactly from their prior.
pub(crate) fn metropolis_level<R: Rng + ?Sized>(
    gamma: &mut [f64],
    alpha: &[f64],
    concentrations: &[f64],
    rate: f64,
    child_log_sums: Option<&[f64]>,
    rng: &mut R,
) -> Result<(u64, u64)> {
    let n = gamma.len();
    if n == 1 {
        gamma[0] = sample_gamma(concentrations[0], rate, rng)?;
        return Ok((0, 0));
    }
    let powers = child_log_sums.is_some();
    let reference: f64 = gamma.iter().sum();
    let target = LevelTarget {
        n,
        child_log_sums,
        reference,
    };
    let l_of = |i: usize| child_log_sums.map_or(0.0, |l| l[i]);
    let mut suffix = vec![Sums::default(); n + 1];
    for i in (0..n).rev() {
        let mut s = suffix[i + 1];
        s.add_node(
            gamma[i],
            0.5 / (gamma[i] * alpha[i]),
            l_of(i),
            reference,
            powers,
        );
        suffix[i] = s;
    }
    let mut prefix = Sums::default();
    let mut accepted = 0;
    for i in 0..n {
        let others = prefix.combined(&suffix[i + 1]);
        let b = (others.s / alpha[i]).max(f64::MIN_POSITIVE);
        let proposal = GigParams::new(2.0 * rate, b, concentrations[i] - 1.0)?;
        let cand = sample_gig(&proposal, rng)?.max(crate::model::GAMMA_FLOOR);
        let current = gamma[i];
        if cand != current {
            let log_ratio =
                target.log_target(&others, cand, i) - target.log_target(&others, current, i);
            let u: f64 = rng.random();
            if log_ratio >= 0.0 || u.ln() < log_ratio {
                gamma[i] = cand;
                accepted += 1;
            }
        }
        prefix.add_node(
            gamma[i],
            0.5 / (gamma[i] * alpha[i]),
            l_of(i),
            reference,
            powers,
        );
    }
    Ok((accepted, n as u64))
}

// ---------------------------------------------------------------------------

/// A chain in progress: the model state, the data, and a cached residual
/// `y - Psi x - w`.
pub struct Chain<'a> {
    design: &'a Design,
    y: &'a [f64],
    pub state: ModelState,
    residual: Vec<f64>,
    rng: RngHandle,
}

impl<'a> Chain<'a> {
    pub fn new(
        design: &'a Design,
        y: &'a [f64],
        state: ModelState,
        rng: RngHandle,
    ) -> Result<Self> {
        if y.len() != design.m() || state.layout().n_coefficients() != design.n() {
            return invalid(format!(
                "design is {}x{}, data has {} entries and the state {} coefficients",
                design.m(),
                design.n(),
                y.len(),
                state.layout().n_coefficients()
            ));
        }
        if let Some(s) = &state.noise.spiky {
            if s.len() != y.len() {
                return invalid("spiky component length differs from measurement count");
            }
        }
        let mut chain = Self {
            design,
            y,
            state,
            residual: Vec::new(),
            rng,
        };
        chain.refresh_residual()?;
        Ok(chain)
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn rng(&mut self) -> &mut RngHandle {
        &mut self.rng
    }

    /// Recompute `y - Psi x - w` from scratch.
    pub fn refresh_residual(&mut self) -> Result<()> {
        let fit = self.design.apply(self.state.pyramid.as_slice())?;
        let w = self.state.noise.spiky.as_ref().map(|s| &s.w);
        self.residual = self
            .y
            .iter()
            .zip(&fit)
            .enumerate()
            .map(|(i, (y, f))| y - f - w.map_or(0.0, |w| w[i]))
            .collect();
        Ok(())
    }

    /// Gaussian full conditional of each coefficient in turn.
    pub fn update_x(&mut self) -> Result<()> {
        let prior = self.state.shrinkage.prior_precision();
        let a0 = self.state.noise.alpha0;
        match self.design {
            Design::Dense { .. } => {
                let x = self.state.pyramid.as_mut_slice();
                for k in 0..x.len() {
                    let col = self.design.column(k).expect("dense column");
                    let nk = self.design.norm_sq(k);
                    let old = x[k];
                    let denom = prior[k] + nk;
                    let mean = (dot(col, &self.residual) + nk * old) / denom;
                    let new = mean + sample_normal(&mut self.rng) / (a0 * denom).sqrt();
                    if new != old {
                        axpy(old - new, col, &mut self.residual);
                    }
                    x[k] = new;
                }
            }
            Design::Orthonormal { .. } => {
                // decoupled: x_k | rest depends on z = Psi^T (y - w) only
                let target: Vec<f64> = match &self.state.noise.spiky {
                    Some(s) => self.y.iter().zip(&s.w).map(|(y, w)| y - w).collect(),
                    None => self.y.to_vec(),
                };
                let z = self.design.adjoint(&target)?;
                let x = self.state.pyramid.as_mut_slice();
                for k in 0..x.len() {
                    let denom = prior[k] + 1.0;
                    x[k] = z[k] / denom + sample_normal(&mut self.rng) / (a0 * denom).sqrt();
                }
                let fit = self.design.apply(x)?;
                for ((r, t), f) in self.residual.iter_mut().zip(&target).zip(&fit) {
                    *r = t - f;
                }
            }
        }
        Ok(())
    }

    /// `alpha ~ GIG(tau alpha0 x^2, 1 / gamma~, -1/2)` for every detail coefficient.
    pub fn update_alpha(&mut self) -> Result<()> {
        let layout = Arc::clone(self.state.layout());
        let a0 = self.state.noise.alpha0;
        let x = self.state.pyramid.as_slice();
        for tree in layout.bands() {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                let s = &mut self.state.shrinkage.levels[tree.band.index()][depth];
                for (i, k) in lvl.range().enumerate() {
                    let a = (s.tau * a0 * x[k] * x[k]).max(PRECISION_FLOOR);
                    let g = GigParams::new(a, 1.0 / s.gamma_tilde[i], -0.5)?;
                    s.alpha[i] = sample_gig(&g, &mut self.rng)?;
                }
            }
        }
        Ok(())
    }

    /// Metropolis update of every level's weights, root to leaf, renormalising
    /// after each level. Returns (accepted, proposed).
    pub fn update_gamma_metropolis(&mut self) -> Result<(u64, u64)> {
        let layout = Arc::clone(self.state.layout());
        let hyper = self.state.hyper;
        let structure = self.state.shrinkage.structure;
        let (mut acc, mut prop) = (0, 0);
        for band in BANDS {
            for depth in 0..layout.n_levels() {
                let conc = self.state.shrinkage.concentrations(band, depth, &hyper);
                let rate = self.state.shrinkage.rate(depth, &hyper);
                let ls = (structure == PriorStructure::Tree && depth + 1 < layout.n_levels()).then(
                    || {
                        child_log_sums(
                            &layout,
                            band,
                            depth,
                            &self.state.shrinkage.level(band, depth + 1).gamma_tilde,
                        )
                    },
                );
                let lvl = self.state.shrinkage.level_mut(band, depth);
                let (a, p) = metropolis_level(
                    &mut lvl.gamma,
                    &lvl.alpha,
                    &conc,
                    rate,
                    ls.as_deref(),
                    &mut self.rng,
                )?;
                lvl.renormalize();
                acc += a;
                prop += p;
            }
        }
        Ok((acc, prop))
    }

    /// Conjugate gamma draws of every `tau`, `tau0`, then `alpha0`.
    pub fn update_tau_and_alpha0(&mut self) -> Result<()> {
        let layout = Arc::clone(self.state.layout());
        let h = self.state.hyper;
        let a0 = self.state.noise.alpha0;
        let x = self.state.pyramid.as_slice();
        let mut prior_energy = 0.0;
        for tree in layout.bands() {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                let s = &mut self.state.shrinkage.levels[tree.band.index()][depth];
                let q: f64 = lvl
                    .range()
                    .zip(&s.alpha)
                    .map(|(k, a)| a * x[k] * x[k])
                    .sum();
                s.tau = sample_gamma(
                    h.a0 + 0.5 * lvl.len() as f64,
                    h.b0 + 0.5 * a0 * q,
                    &mut self.rng,
                )?;
                prior_energy += s.tau * q;
            }
        }
        let ns = layout.n_scaling();
        let q0: f64 = x[..ns].iter().map(|v| v * v).sum();
        let tau0 = sample_gamma(h.a0 + 0.5 * ns as f64, h.b0 + 0.5 * a0 * q0, &mut self.rng)?;
        self.state.shrinkage.tau0 = tau0;
        prior_energy += tau0 * q0;

        let m = self.y.len() as f64;
        let mut shape = h.a0 + 0.5 * (m + x.len() as f64);
        let rss: f64 = self.residual.iter().map(|r| r * r).sum();
        let mut rate = h.b0 + 0.5 * (rss + prior_energy);
        if let Some(s) = &self.state.noise.spiky {
            shape += 0.5 * m;
            rate += 0.5 * s.nu * s.zeta.iter().zip(&s.w).map(|(z, w)| z * w * w).sum::<f64>();
        }
        self.state.noise.alpha0 = sample_gamma(shape, rate, &mut self.rng)?;
        Ok(())
    }

    /// Spiky-noise block: `w`, `zeta`, the weights behind `p`, then `nu`.
    /// Returns (accepted, proposed) of the `p` Metropolis pass.
    pub fn update_spiky(&mut self) -> Result<(u64, u64)> {
        let a0 = self.state.noise.alpha0;
        let e0 = self.state.hyper.e0;
        let f0 = self.state.hyper.f0;
        let Some(s) = self.state.noise.spiky.as_mut() else {
            return Err(Error::InvalidState(
                "spiky-noise update on a model without it".into(),
            ));
        };
        update_spiky_block(s, &mut self.residual, a0, e0, f0, &mut self.rng)
    }

    /// Full sweep. Returns (accepted, proposed) of the gamma updates.
    pub fn sweep(&mut self) -> Result<(u64, u64)> {
        self.update_x()?;
        self.update_alpha()?;
        let stats = self.update_gamma_metropolis()?;
        self.update_tau_and_alpha0()?;
        if self.state.noise.spiky.is_some() {
            self.update_spiky()?;
        }
        Ok(stats)
    }

    pub fn log_joint(&self) -> Result<f64> {
        let w = self.state.noise.spiky.as_ref().map(|s| &s.w);
        let fit: Vec<f64> = self
            .y
            .iter()
            .zip(&self.residual)
            .enumerate()
            .map(|(i, (y, r))| y - r - w.map_or(0.0, |w| w[i]))
            .collect();
        Ok(log_joint_with_fit(&self.state, self.y, &fit)?.total())
    }
}

fn update_spiky_block(
    s: &mut SpikyState,
    residual: &mut [f64],
    a0: f64,
    e0: f64,
    f0: f64,
    rng: &mut RngHandle,
) -> Result<(u64, u64)> {
    for i in 0..s.len() {
        let r = residual[i] + s.w[i];
        let d = 1.0 + s.nu * s.zeta[i];
        s.w[i] = r / d + sample_normal(rng) / (a0 * d).sqrt();
        residual[i] = r - s.w[i];
    }
    for i in 0..s.len() {
        let a = (s.nu * a0 * s.w[i] * s.w[i]).max(PRECISION_FLOOR);
        s.zeta[i] = sample_gig(&GigParams::new(a, 1.0 / s.p[i], -0.5)?, rng)?;
    }
    let conc = vec![1.0 / s.len() as f64; s.len()];
    let stats = metropolis_level(&mut s.p_weights, &s.zeta, &conc, 1.0, None, rng)?;
    s.renormalize();
    let q: f64 = s.zeta.iter().zip(&s.w).map(|(z, w)| z * w * w).sum();
    s.nu = sample_gamma(e0 + 0.5 * s.len() as f64, f0 + 0.5 * a0 * q, rng)?;
    Ok(stats)
}

/// Data-scaled starting point shared by all engines.
///
/// With a general design `alpha0` puts the noise at a tenth of the
/// measurement RMS and the scales make the prior coefficient variance match
/// the energy per coefficient. With an orthonormal design (denoising) the
/// noise level comes from the median absolute finest diagonal coefficient,
/// and the detail scales start with prior variance equal to the noise
/// variance, so the first coefficient update already leaves isolated
/// outliers in the residual.
pub fn initial_state(
    design: &Design,
    y: &[f64],
    layout: Arc<TreeLayout>,
    structure: PriorStructure,
    hyper: Hyperparameters,
    spiky: bool,
) -> Result<ModelState> {
    let mut st = ModelState::new(layout, structure, hyper, y.len(), spiky)?;
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let mean_sq = (energy / y.len() as f64).max(1e-12);
    let per_coef = (energy / design.total_norm_sq().max(f64::MIN_POSITIVE)).max(1e-12);
    let robust = if design.is_orthonormal() {
        finest_noise_std(design, y, st.layout())?
    } else {
        None
    };
    let (alpha0, detail_tau) = match robust {
        Some(sd) => (1.0 / (sd * sd), 1.0),
        None => (100.0 / mean_sq, mean_sq / (100.0 * per_coef)),
    };
    st.noise.alpha0 = alpha0;
    st.shrinkage.tau0 = 1.0 / (alpha0 * per_coef);
    for l in st.shrinkage.levels.iter_mut().flatten() {
        l.tau = detail_tau;
    }
    Ok(st)
}

/// `median |z| / 0.6745` over the finest diagonal level of `Psi^T y`; `None`
/// when it is degenerate.
fn finest_noise_std(design: &Design, y: &[f64], layout: &TreeLayout) -> Result<Option<f64>> {
    let Some(leaf) = layout.band(Band::HH).levels.last() else {
        return Ok(None);
    };
    let z = design.adjoint(y)?;
    let mut abs: Vec<f64> = z[leaf.offset..leaf.offset + leaf.len()]
        .iter()
        .map(|v| v.abs())
        .collect();
    if abs.is_empty() {
        return Ok(None);
    }
    let mid = abs.len() / 2;
    let (_, med, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    let sd = *med / 0.6745;
    Ok((sd > 1e-6).then_some(sd))
}

/// Run one chain from the data-scaled starting point.
pub fn run_chain(
    y: &[f64],
    operator: &SensingOperator,
    config: &ChainConfig,
) -> Result<PosteriorSummary> {
    let design = Design::new(operator)?;
    run_chain_with_design(y, &design, operator.basis().layout(), config)
}

pub fn run_chain_with_design(
    y: &[f64],
    design: &Design,
    layout: &Arc<TreeLayout>,
    config: &ChainConfig,
) -> Result<PosteriorSummary> {
    config.validate()?;
    for &t in &config.track {
        if t >= design.n() {
            return invalid(format!("tracked coefficient {t} out of range"));
        }
    }
    let state = initial_state(
        design,
        y,
        Arc::clone(layout),
        config.structure,
        config.hyper,
        config.spiky,
    )?;
    let mut chain = Chain::new(design, y, state, RngHandle::new(config.seed, config.stream))?;
    let n = design.n();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut spiky_sum = config.spiky.then(|| vec![0.0; y.len()]);
    let (mut a0_sum, mut sd_sum) = (0.0, 0.0);
    let (mut accepted, mut proposed) = (0, 0);
    let mut tracked: Vec<TrackedCoefficient> = config
        .track
        .iter()
        .map(|&index| TrackedCoefficient {
            index,
            samples: Vec::new(),
        })
        .collect();
    let mut trace = Vec::with_capacity(config.n_samples);
    let mut window: std::collections::VecDeque<(u64, u64)> = Default::default();
    let mut retained = 0;
    for it in 0..config.n_samples {
        let (a, p) = chain.sweep()?;
        window.push_back((a, p));
        if window.len() > config.acceptance_window {
            window.pop_front();
        }
        let (wa, wp) = window
            .iter()
            .fold((0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
        let a0 = chain.state.noise.alpha0;
        let lj = chain.log_joint()?;
        trace.push(TraceRow {
            iteration: it,
            log_joint: lj,
            alpha0: a0,
            acceptance: ratio(a, p),
            acceptance_window: ratio(wa, wp),
        });
        if it < config.burn_in {
            continue;
        }
        retained += 1;
        accepted += a;
        proposed += p;
        for ((s, q), x) in sum
            .iter_mut()
            .zip(sum_sq.iter_mut())
            .zip(chain.state.pyramid.as_slice())
        {
            *s += x;
            *q += x * x;
        }
        if let (Some(acc), Some(s)) = (spiky_sum.as_mut(), chain.state.noise.spiky.as_ref()) {
            axpy(1.0, &s.w, acc);
        }
        a0_sum += a0;
        sd_sum += a0.powf(-0.5);
        for t in &mut tracked {
            t.samples.push(chain.state.pyramid.as_slice()[t.index]);
        }
    }
    let r = retained as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let variance = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / r - m * m).max(0.0))
        .collect();
    Ok(PosteriorSummary {
        mean,
        variance,
        alpha0_mean: a0_sum / r,
        noise_std: sd_sum / r,
        spiky_mean: spiky_sum.map(|v| v.iter().map(|s| s / r).collect()),
        accepted,
        proposed,
        n_retained: retained,
        trace,
        tracked,
        final_state: chain.state,
    })
}

fn ratio(a: u64, p: u64) -> f64 {
    if p == 0 {
        0.0
    } else {
        a as f64 / p as f64
    }
}

/// Run `n_chains` chains on streams `stream, stream + 1, ...` in parallel and
/// merge their summaries (trace and final state come from the first chain).
pub fn run_chains(
    y: &[f64],
    operator: &SensingOperator,
    config: &ChainConfig,
    n_chains: usize,
) -> Result<PosteriorSummary> {
    if n_chains == 0 {
        return invalid("need at least one chain");
    }
    let design = Design::new(operator)?;
    let layout = operator.basis().layout();
    let results: Vec<Result<PosteriorSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                let cfg = ChainConfig {
                    stream: config.stream + c as u64,
                    ..config.clone()
                };
                let design = &design;
                scope.spawn(move || run_chain_with_design(y, design, layout, &cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::InvalidState("chain thread panicked".into())))
            })
            .collect()
    });
    PosteriorSummary::merge(results.into_iter().collect::<Result<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{make_gaussian_operator, make_identity_operator};
    use crate::model::{LevelShrinkage, ShrinkageState};
    use crate::randmath::gig_mode;
    use crate::transform::{build_wavelet_tree_layout, Band, Basis, BasisKind};

    fn direct_children_term(gamma: &[f64], ls: &[f64]) -> f64 {
        let s: f64 = gamma.iter().sum();
        let nc = N_CHILDREN as f64;
        gamma
            .iter()
            .zip(ls)
            .map(|(g, l)| {
                let z = g / (s * nc);
                z * l - nc * ln_gamma(z)
            })
            .sum()
    }

    #[test]
    fn children_term_matches_direct_sum() {
        let mut rng = RngHandle::new(1, 0);
        for trial in 0..50 {
            let n = 2 + trial % 9;
            let gamma: Vec<f64> = (0..n)
                .map(|j| match (trial + j) % 4 {
                    0 => 1e-250,
                    1 => rng.random::<f64>() * 1e-6,
                    _ => rng.random::<f64>() * 5.0,
                })
                .collect();
            let ls: Vec<f64> = (0..n).map(|_| -10.0 * rng.random::<f64>()).collect();
            let reference = gamma.iter().sum::<f64>() * (0.3 + rng.random::<f64>());
            let target = LevelTarget {
                n,
                child_log_sums: Some(&ls),
                reference,
            };
            let i = trial % n;
            let mut others = Sums::default();
            for j in (0..n).filter(|&j| j != i) {
                others.add_node(gamma[j], 0.0, ls[j], reference, true);
            }
            for g in [gamma[i], 0.01, 3.0, 1e-200] {
                let mut moved = gamma.clone();
                moved[i] = g;
                let want = direct_children_term(&moved, &ls);
                let got = target.children_term(&others, g, i);
                assert!(
                    (got - want).abs() < 1e-9 * want.abs().max(1.0),
                    "n={n} g={g}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn single_node_level_stays_degenerate() {
        let mut rng = RngHandle::new(2, 0);
        let mut lvl = LevelShrinkage::uniform(1);
        for _ in 0..100 {
            let (a, p) =
                metropolis_level(&mut lvl.gamma, &lvl.alpha, &[1.0], 1.0, None, &mut rng).unwrap();
            lvl.renormalize();
            assert_eq!((a, p), (0, 0));
            assert_eq!(lvl.gamma_tilde, vec![1.0]);
        }
    }

    /// Gamma conditional of the flat 2-node level can be checked directly:
    /// the exact conditional of gamma_0 with gamma_1 fixed, on a grid.
    #[test]
    fn two_node_conditional_matches_grid() {
        let mut rng = RngHandle::new(3, 0);
        let alpha = [0.7, 2.5];
        let beta = [0.5, 0.5];
        let g1 = 0.8;
        let mut samples = Vec::new();
        let mut gamma = [1.0, g1];
        for _ in 0..60_000 {
            gamma[1] = g1;
            metropolis_level(&mut gamma[..], &alpha, &beta, 1.0, None, &mut rng).unwrap();
            // only node 0's move is of interest; node 1 is reset each pass
            samples.push(gamma[0]);
        }
        // exact conditional density of gamma_0 (prior x alpha factors)
        let log_dens = |g: f64| {
            let s = g + g1;
            let c = 0.5 / (g * alpha[0]) + 0.5 / (g1 * alpha[1]);
            (beta[0] - 1.0) * g.ln() - g + 2.0 * s.ln() - g.ln() - s * c
        };
        let (lo, hi, steps) = (-30.0f64, 4.0f64, 200_000);
        let h = (hi - lo) / steps as f64;
        let mut cdf = Vec::with_capacity(steps + 1);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for k in 0..=steps {
            let u = lo + k as f64 * h;
            let v = (log_dens(u.exp()) + u).exp();
            if k > 0 {
                acc += 0.5 * (v + prev) * h;
            }
            prev = v;
            cdf.push((u.exp(), acc));
        }
        let total = acc;
        samples.sort_by(f64::total_cmp);
        let mut sup: f64 = 0.0;
        for q in 1..20 {
            let x = samples[q * samples.len() / 20];
            let f = cdf
                .iter()
                .find(|(g, _)| *g >= x)
                .map_or(1.0, |(_, c)| c / total);
            sup = sup.max((f - q as f64 / 20.0).abs());
        }
        assert!(sup < 0.02, "sup error {sup}");
    }

    #[test]
    fn x_update_limits() {
        let basis = Basis::new(BasisKind::Daub4 { levels: 1 }, 16, 16).unwrap();
        let op = make_identity_operator(basis.clone());
        let design = Design::new(&op).unwrap();
        let mut rng = RngHandle::new(4, 0);
        let y: Vec<f64> = (0..256).map(|_| sample_normal(&mut rng)).collect();
        let mut st = ModelState::new(
            Arc::clone(basis.layout()),
            PriorStructure::Tree,
            Hyperparameters::default(),
            256,
            false,
        )
        .unwrap();
        // huge prior precision: everything pinned at zero
        st.shrinkage.tau0 = 1e30;
        for l in st.shrinkage.levels.iter_mut().flatten() {
            l.tau = 1e30;
        }
        let mut chain = Chain::new(&design, &y, st.clone(), RngHandle::new(5, 0)).unwrap();
        chain.update_x().unwrap();
        assert!(chain
            .state
            .pyramid
            .as_slice()
            .iter()
            .all(|v| v.abs() < 1e-10));
        // negligible prior: x ~ N(Psi^T y, 1/alpha0)
        st.shrinkage.tau0 = 1e-30;
        for l in st.shrinkage.levels.iter_mut().flatten() {
            l.tau = 1e-30;
        }
        st.noise.alpha0 = 1e12;
        let z = design.adjoint(&y).unwrap();
        let mut chain = Chain::new(&design, &y, st, RngHandle::new(6, 0)).unwrap();
        chain.update_x().unwrap();
        for (a, b) in chain.state.pyramid.as_slice().iter().zip(&z) {
            assert!((a - b).abs() < 1e-4);
        }
        // residual cache is exact
        let cached = chain.residual().to_vec();
        chain.refresh_residual().unwrap();
        for (a, b) in cached.iter().zip(chain.residual()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// 2-coefficient Gaussian model: chain mean equals the closed-form posterior mean.
    #[test]
    fn two_coefficient_posterior_mean() {
        // a 2x2 single-level wavelet gives 4 coefficients; use a dense 3x4 design and
        // pin two coefficients at zero through huge prior precision
        let basis = Basis::new(BasisKind::Daub4 { levels: 1 }, 2, 2).unwrap();
        let mut rng = RngHandle::new(7, 0);
        let op = make_gaussian_operator(3, basis.clone(), &mut rng).unwrap();
        let design = Design::new(&op).unwrap();
        let y = vec![0.4, -1.1, 0.7];
        let mut st = ModelState::new(
            Arc::clone(basis.layout()),
            PriorStructure::Tree,
            Hyperparameters::default(),
            3,
            false,
        )
        .unwrap();
        st.noise.alpha0 = 4.0;
        st.shrinkage.tau0 = 0.5; // scaling coefficient 0 free
        st.shrinkage.level_mut(Band::HH, 0).tau = 0.8; // coefficient 3 free
        st.shrinkage.level_mut(Band::HL, 0).tau = 1e30;
        st.shrinkage.level_mut(Band::LH, 0).tau = 1e30;
        let layout = basis.layout();
        let k_hh = layout.level(Band::HH, 0).offset;
        // closed form: (A^T A + D) mu = A^T y over the free pair
        let c0 = design.column(0).unwrap();
        let c1 = design.column(k_hh).unwrap();
        let (d0, d1) = (0.5, 0.8);
        let m = [
            [dot(c0, c0) + d0, dot(c0, c1)],
            [dot(c0, c1), dot(c1, c1) + d1],
        ];
        let rhs = [dot(c0, &y), dot(c1, &y)];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let mu = [
            (rhs[0] * m[1][1] - rhs[1] * m[0][1]) / det,
            (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
        ];
        let mut chain = Chain::new(&design, &y, st, RngHandle::new(8, 0)).unwrap();
        let (mut s0, mut s1) = (0.0, 0.0);
        let n = 50_000;
        for _ in 0..n {
            chain.update_x().unwrap();
            s0 += chain.state.pyramid.as_slice()[0];
            s1 += chain.state.pyramid.as_slice()[k_hh];
        }
        let (e0, e1) = (s0 / n as f64, s1 / n as f64);
        // tolerance: five Monte Carlo standard errors of a two-block Gibbs chain,
        // whose lag-one autocorrelation is rho^2
        let rho2 = m[0][1] * m[0][1] / (m[0][0] * m[1][1]);
        let act = (1.0 + rho2) / (1.0 - rho2);
        let var = [m[1][1] / det / 4.0, m[0][0] / det / 4.0];
        for (e, (mu, v)) in [e0, e1].into_iter().zip(mu.into_iter().zip(var)) {
            let tol = 5.0 * (v * act / n as f64).sqrt();
            assert!((e - mu).abs() < tol, "{e} vs {mu} (tol {tol})");
        }
    }

    #[test]
    fn alpha_conditional_matches_quadrature() {
        let basis = Basis::new(BasisKind::Daub4 { levels: 1 }, 2, 2).unwrap();
        let op = make_identity_operator(basis.clone());
        let design = Design::new(&op).unwrap();
        let y = vec![0.0; 4];
        let mut st = ModelState::new(
            Arc::clone(basis.layout()),
            PriorStructure::Tree,
            Hyperparameters::default(),
            4,
            false,
        )
        .unwrap();
        let k = basis.layout().level(Band::HH, 0).offset;
        st.pyramid.as_mut_slice()[k] = 0.6;
        st.noise.alpha0 = 2.0;
        st.shrinkage.level_mut(Band::HH, 0).tau = 1.5;
        let (a, b) = (1.5 * 2.0 * 0.36, 1.0);
        let g = GigParams::new(a, b, -0.5).unwrap();
        let mut chain = Chain::new(&design, &y, st, RngHandle::new(9, 0)).unwrap();
        let mut xs: Vec<f64> = (0..50_000)
            .map(|_| {
                chain.update_alpha().unwrap();
                chain.state.shrinkage.level(Band::HH, 0).alpha[0]
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |x: f64| {
            let (lo, steps) = (x.ln() - 40.0, 40_000);
            let h = 40.0 / steps as f64;
            (0..=steps)
                .map(|i| {
                    let u = lo + i as f64 * h;
                    let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                    w * (g.ln_pdf(u.exp()).unwrap() + u).exp()
                })
                .sum::<f64>()
                * h
        };
        for q in 1..10 {
            let x = xs[q * xs.len() / 10];
            assert!(
                (cdf(x) - q as f64 / 10.0).abs() < 0.01,
                "decile {q}: x {x} cdf {}",
                cdf(x)
            );
        }
        // the conditional mode is the GIG mode of the same triple
        let mode = gig_mode(&g).unwrap();
        let d = |x: f64| g.ln_pdf(x).unwrap();
        assert!(d(mode) > d(mode * 1.01) && d(mode) > d(mode * 0.99));
        // smaller |x| means larger conditional mean
        let big = GigParams::new(1e-12, b, -0.5).unwrap();
        assert!(crate::randmath::gig_mean(&big).unwrap() > crate::randmath::gig_mean(&g).unwrap());
    }

    fn tiny_problem(spiky: bool) -> (Basis, Vec<f64>, Design) {
        let basis = Basis::new(BasisKind::Daub4 { levels: 2 }, 16, 16).unwrap();
        let op = make_identity_operator(basis.clone());
        let design = Design::new(&op).unwrap();
        let mut rng = RngHandle::new(10, 0);
        let mut y: Vec<f64> = (0..256)
            .map(|i| ((i / 16) as f64 / 16.0) + 0.05 * sample_normal(&mut rng))
            .collect();
        if spiky {
            y[40] += 0.9;
        }
        (basis, y, design)
    }

    #[test]
    fn tau_alpha0_conjugate_means() {
        let (basis, y, design) = tiny_problem(false);
        let st = initial_state(
            &design,
            &y,
            Arc::clone(basis.layout()),
            PriorStructure::Tree,
            Hyperparameters::default(),
            false,
        )
        .unwrap();
        let mut zero = st.clone();
        zero.pyramid
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        // zero coefficients: tau draws come from Gamma(a0 + n/2, b0) (huge)
        let mut chain = Chain::new(&design, &y, zero, RngHandle::new(11, 0)).unwrap();
        let mut acc = 0.0;
        let reps = 2000;
        for _ in 0..reps {
            chain.update_tau_and_alpha0().unwrap();
            acc += chain.state.shrinkage.level(Band::HH, 1).tau;
        }
        let want = (1e-6 + 0.5 * 64.0) / 1e-6;
        assert!((acc / reps as f64 / want - 1.0).abs() < 0.05);
        // pure-noise residual: alpha0 mean close to m / ||r||^2 when the prior terms are negligible
        let mut chain =
            Chain::new(&design, &y, chain.state.clone(), RngHandle::new(12, 0)).unwrap();
        let rss: f64 = chain.residual().iter().map(|r| r * r).sum();
        let mut acc = 0.0;
        for _ in 0..reps {
            chain.update_tau_and_alpha0().unwrap();
            acc += chain.state.noise.alpha0;
        }
        let want = (256.0 + 256.0) / rss;
        assert!(
            (acc / reps as f64 / want - 1.0).abs() < 0.05,
            "{} vs {want}",
            acc / reps as f64
        );
    }

    #[test]
    fn spiky_requires_spiky_state() {
        let (basis, y, design) = tiny_problem(false);
        let st = initial_state(
            &design,
            &y,
            Arc::clone(basis.layout()),
            PriorStructure::Tree,
            Hyperparameters::default(),
            false,
        )
        .unwrap();
        let mut chain = Chain::new(&design, &y, st, RngHandle::new(13, 0)).unwrap();
        assert!(matches!(chain.update_spiky(), Err(Error::InvalidState(_))));
    }

    #[test]
    fn spiky_limits() {
        let mut rng = RngHandle::new(14, 0);
        let mut s = SpikyState::new(50);
        let mut residual = vec![0.0; 50];
        // zero residual and huge nu: w collapses to zero
        s.nu = 1e12;
        let mut sum = 0.0;
        for _ in 0..200 {
            s.nu = 1e12;
            update_spiky_block(&mut s, &mut residual, 1.0, 1e-6, 1e-6, &mut rng).unwrap();
            sum += s.w.iter().map(|w| w.abs()).sum::<f64>();
            assert!((s.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(sum / 200.0 / 50.0 < 1e-3);
    }

    #[test]
    fn spike_is_captured() {
        let (basis, y, design) = tiny_problem(true);
        let op = make_identity_operator(basis);
        let cfg = ChainConfig {
            n_samples: 600,
            burn_in: 200,
            seed: 15,
            spiky: true,
            ..ChainConfig::default()
        };
        let s = run_chain(&y, &op, &cfg).unwrap();
        drop(design);
        let w = s.spiky_mean.unwrap();
        assert!(w[40] >= 0.8 * 0.9, "spike estimate {}", w[40]);
        // isolated three-sigma noise draws may be partly explained as spikes, but the
        // bulk of the component must stay near zero
        let mut others: Vec<f64> = w
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 40)
            .map(|(_, v)| v.abs())
            .collect();
        others.sort_by(f64::total_cmp);
        let median = others[others.len() / 2];
        assert!(median < 0.01, "median off-spike {median}");
        let largest = others[others.len() - 1];
        assert!(largest < 0.25 * w[40], "largest off-spike {largest}");
    }

    #[test]
    fn run_chain_validation_and_determinism() {
        let (basis, y, _) = tiny_problem(false);
        let op = make_identity_operator(basis);
        let bad = ChainConfig {
            n_samples: 10,
            burn_in: 10,
            ..ChainConfig::default()
        };
        assert!(run_chain(&y, &op, &bad).is_err());
        let cfg = ChainConfig {
            n_samples: 40,
            burn_in: 10,
            seed: 16,
            track: vec![0, 100],
            ..ChainConfig::default()
        };
        let a = run_chain(&y, &op, &cfg).unwrap();
        let b = run_chain(&y, &op, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_retained, 30);
        assert_eq!(a.tracked[1].samples.len(), 30);
        assert!(a.trace.iter().all(|r| r.log_joint.is_finite()));
        assert!(a.variance.iter().all(|v| *v >= 0.0));
        assert!((0.0..=1.0).contains(&a.acceptance_rate()));
        a.final_state.check_invariants().unwrap();
        let (edges, counts) = a.tracked[0].histogram(5);
        assert_eq!(edges.len(), 5);
        assert_eq!(counts.iter().sum::<usize>(), 30);
    }

    #[test]
    fn merged_chains_pool_moments() {
        let (basis, y, _) = tiny_problem(false);
        let op = make_identity_operator(basis);
        let cfg = ChainConfig {
            n_samples: 30,
            burn_in: 10,
            seed: 17,
            ..ChainConfig::default()
        };
        let merged = run_chains(&y, &op, &cfg, 2).unwrap();
        let a = run_chain(&y, &op, &cfg).unwrap();
        let b = run_chain(
            &y,
            &op,
            &ChainConfig {
                stream: 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(merged.n_retained, 40);
        for k in [0, 50, 255] {
            assert!((merged.mean[k] - 0.5 * (a.mean[k] + b.mean[k])).abs() < 1e-12);
            let second =
                0.5 * (a.variance[k] + a.mean[k].powi(2) + b.variance[k] + b.mean[k].powi(2));
            assert!((merged.variance[k] - (second - merged.mean[k].powi(2))).abs() < 1e-10);
        }
    }

    #[test]
    fn invariants_hold_every_sweep() {
        let (basis, y, design) = tiny_problem(true);
        for structure in [PriorStructure::Tree, PriorStructure::Flat] {
            let st = initial_state(
                &design,
                &y,
                Arc::clone(basis.layout()),
                structure,
                Hyperparameters::default(),
                true,
            )
            .unwrap();
            let mut chain = Chain::new(&design, &y, st, RngHandle::new(18, 0)).unwrap();
            for _ in 0..50 {
                chain.sweep().unwrap();
                chain.state.check_invariants().unwrap();
                assert!(chain.log_joint().unwrap().is_finite());
            }
        }
    }

    #[test]
    fn toy_tree_layout_has_one_root() {
        let layout = build_wavelet_tree_layout(4, 4, 2).unwrap();
        assert_eq!(layout.level(Band::HH, 0).len(), 1);
        assert_eq!(layout.level(Band::HH, 1).len(), 4);
        let st = ShrinkageState::uniform(Arc::new(layout), PriorStructure::Tree);
        assert_eq!(st.level(Band::HH, 1).len(), 4);
    }
}
