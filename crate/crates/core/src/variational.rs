//! Deterministic inference: moment-matching variational updates (a-VB and the
//! importance-sampled VB(s)) and EM.
//!
//! Every variable is updated from its Gibbs conditional with the Markov blanket
//! replaced by current means, and its approximate marginal is set to match
//! that conditional's moments.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::design::Design;
use crate::error::{invalid, Error, Result};
use crate::measurement::{axpy, dot, InferenceMethod, SensingOperator};
use crate::model::{Hyperparameters, ModelState, PriorStructure, GAMMA_FLOOR};
use crate::randmath::{
    gig_mean, gig_mean_reciprocal, gig_mode, ln_gamma, sample_gig, GigParams, RngHandle,
};
use crate::sampler::{child_log_sums, initial_state, LevelTarget, Sums, PRECISION_FLOOR};
use crate::transform::{TreeLayout, BANDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    Avb,
    /// Importance-sampled gamma update with this many draws per node.
    Vbs(usize),
    Em,
}

impl TryFrom<InferenceMethod> for SolverMethod {
    type Error = Error;

    fn try_from(m: InferenceMethod) -> Result<Self> {
        match m {
            InferenceMethod::Avb => Ok(SolverMethod::Avb),
            InferenceMethod::Vbs(s) => Ok(SolverMethod::Vbs(s)),
            InferenceMethod::Em => Ok(SolverMethod::Em),
            InferenceMethod::Mcmc => invalid("MCMC is not a deterministic solver method"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub max_iterations: usize,
    /// Stop once the largest change of a coefficient mean falls below this.
    pub tolerance: f64,
    /// Only used by VB(s).
    pub seed: u64,
    pub stream: u64,
    pub spiky: bool,
    pub structure: PriorStructure,
    pub hyper: Hyperparameters,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Avb,
            max_iterations: 100,
            tolerance: 1e-6,
            seed: 0,
            stream: 0,
            spiky: false,
            structure: PriorStructure::Tree,
            hyper: Hyperparameters::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == SolverMethod::Vbs(0) {
            return invalid("VB(s) needs at least one sample");
        }
        if self.max_iterations == 0 {
            return invalid("need at least one iteration");
        }
        if !(self.tolerance >= 0.0) {
            return invalid(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            ));
        }
        self.hyper.validate()
    }
}

/// Moments of the spiky component beyond the means kept in the model state.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikyMoments {
    pub w_var: Vec<f64>,
    pub inv_zeta: Vec<f64>,
}

/// Approximate posterior. `means` holds the first moments in model form:
/// `pyramid` is `<x>`, each level's `alpha` is `<alpha>`, `gamma_tilde` is
/// `<gamma~>`, `tau`, `tau0`, `alpha0` and the spiky fields are means.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub means: ModelState,
    pub variance: Vec<f64>,
    /// `<1/alpha>` indexed like the shrinkage levels.
    pub inv_alpha: Vec<Vec<Vec<f64>>>,
    pub spiky: Option<SpikyMoments>,
    /// Gamma posterior of `alpha0`.
    pub alpha0_shape: f64,
    pub alpha0_rate: f64,
    pub iteration: usize,
}

impl VariationalState {
    pub fn layout(&self) -> &Arc<TreeLayout> {
        self.means.layout()
    }

    /// `<alpha0^(-1/2)>` under the gamma factor.
    pub fn noise_std(&self) -> f64 {
        let (a, b) = (self.alpha0_shape, self.alpha0_rate);
        if a > 0.5 {
            (ln_gamma(a - 0.5) - ln_gamma(a) + 0.5 * b.ln()).exp()
        } else {
            self.means.noise.alpha0.powf(-0.5)
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        self.means.check_invariants()?;
        if let Some(v) = self.variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidState(format!("coefficient variance {v}")));
        }
        for (levels, lvl_inv) in self.means.shrinkage.levels.iter().zip(&self.inv_alpha) {
            for (l, inv) in levels.iter().zip(lvl_inv) {
                for (a, i) in l.alpha.iter().zip(inv) {
                    // Jensen, with room for rounding
                    if !(i.is_finite() && a * i >= 1.0 - 1e-9) {
                        return Err(Error::InvalidState(format!(
                            "<alpha> = {a}, <1/alpha> = {i}"
                        )));
                    }
                }
            }
        }
        if let Some(s) = &self.spiky {
            if s.w_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidState("non-positive spike variance".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub iteration: usize,
    pub residual_norm: f64,
    pub alpha0: f64,
    pub mean_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSummary {
    /// Coefficient means (the MAP point under EM).
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub alpha0_mean: f64,
    /// `<alpha0^(-1/2)>`.
    pub noise_std: f64,
    pub spiky_mean: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub final_state: VariationalState,
}

impl SolverSummary {
    pub fn write_diagnostics_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,residual_norm,alpha0,mean_change")?;
        for r in &self.diagnostics {
            writeln!(
                f,
                "{},{},{},{}",
                r.iteration, r.residual_norm, r.alpha0, r.mean_change
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Level-wise gamma updates. All use the current normalised weights of the
// other nodes (Jacobi within a level), combined from prefix and suffix sums.

fn others_sums(weights: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + weights[i];
    }
    let mut prefix = 0.0;
    (0..n)
        .map(|i| {
            let s = prefix + suffix[i + 1];
            prefix += weights[i];
            s
        })
        .collect()
}

fn gig_triple(inv_alpha: f64, others: f64, concentration: f64, rate: f64) -> Result<GigParams> {
    GigParams::new(
        2.0 * rate,
        (inv_alpha * others).max(f64::MIN_POSITIVE),
        concentration - 1.0,
    )
}

/// a-VB: every node takes the mean of GIG(2 rate, <1/alpha_i> sum_{j != i} <gamma~_j>, beta_i - 1).
pub fn avb_level(
    tilde: &[f64],
    inv_alpha: &[f64],
    concentrations: &[f64],
    rate: f64,
) -> Result<Vec<f64>> {
    if tilde.len() == 1 {
        return Ok(vec![concentrations[0] / rate]);
    }
    others_sums(tilde)
        .iter()
        .zip(inv_alpha)
        .zip(concentrations)
        .map(|((&o, &ia), &c)| gig_mean(&gig_triple(ia, o, c, rate)?))
        .collect()
}

/// EM: every node takes the mode of the same GIG.
pub fn em_level(
    tilde: &[f64],
    inv_alpha: &[f64],
    concentrations: &[f64],
    rate: f64,
) -> Result<Vec<f64>> {
    if tilde.len() == 1 {
        return Ok(vec![concentrations[0] / rate]);
    }
    others_sums(tilde)
        .iter()
        .zip(inv_alpha)
        .zip(concentrations)
        .map(|((&o, &ia), &c)| gig_mode(&gig_triple(ia, o, c, rate)?))
        .collect()
}

/// VB(s): self-normalised importance estimate of each node's conditional mean.
/// The proposal is GIG(2 rate, <1/alpha_i> sum_{j != i} <gamma_j>, beta_i - 1)
/// on the unnormalised weights, and the importance weight is `sum_j gamma_j`
/// times, when the level has children, the children's Dirichlet density.
pub fn vbs_level<R: Rng + ?Sized>(
    gamma: &[f64],
    inv_alpha: &[f64],
    concentrations: &[f64],
    rate: f64,
    child_log_sums: Option<&[f64]>,
    s: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = gamma.len();
    if n == 1 {
        return Ok(vec![concentrations[0] / rate]);
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
        let mut acc = suffix[i + 1];
        acc.add_node(gamma[i], 0.0, l_of(i), reference, powers);
        suffix[i] = acc;
    }
    let mut prefix = Sums::default();
    let mut out = Vec::with_capacity(n);
    let mut draws = vec![0.0; s];
    let mut logw = vec![0.0; s];
    for i in 0..n {
        let others = prefix.combined(&suffix[i + 1]);
        let proposal = gig_triple(inv_alpha[i], others.s, concentrations[i], rate)?;
        for (d, lw) in draws.iter_mut().zip(logw.iter_mut()) {
            *d = sample_gig(&proposal, rng)?.max(GAMMA_FLOOR);
            *lw = (others.s + *d).ln() + target.children_term(&others, *d, i);
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (d, lw) in draws.iter().zip(&logw) {
            let w = (lw - max).exp();
            num += w * d;
            den += w;
        }
        out.push(num / den);
        prefix.add_node(gamma[i], 0.0, l_of(i), reference, powers);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

/// A solver in progress: the approximate posterior, the data, and a cached
/// residual `y - Psi <x> - <w>`.
pub struct Solver<'a> {
    design: &'a Design,
    y: &'a [f64],
    pub state: VariationalState,
    residual: Vec<f64>,
    rng: RngHandle,
}

impl<'a> Solver<'a> {
    /// Start from the shared data-scaled initial point.
    pub fn new(
        design: &'a Design,
        y: &'a [f64],
        layout: Arc<TreeLayout>,
        config: &SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        let means = initial_state(
            design,
            y,
            layout,
            config.structure,
            config.hyper,
            config.spiky,
        )?;
        Self::from_means(design, y, means, RngHandle::new(config.seed, config.stream))
    }

    /// Wrap a model state as the means, with unit `<1/alpha>` and variances
    /// set from the current precisions.
    pub fn from_means(
        design: &'a Design,
        y: &'a [f64],
        means: ModelState,
        rng: RngHandle,
    ) -> Result<Self> {
        if y.len() != design.m() || means.layout().n_coefficients() != design.n() {
            return invalid("data, design and state sizes disagree");
        }
        let a0 = means.noise.alpha0;
        let prior = means.shrinkage.prior_precision();
        let variance = (0..design.n())
            .map(|k| 1.0 / (a0 * (prior[k] + design.norm_sq(k))))
            .collect();
        let inv_alpha = means
            .shrinkage
            .levels
            .iter()
            .map(|b| {
                b.iter()
                    .map(|l| l.alpha.iter().map(|a| 1.0 / a).collect())
                    .collect()
            })
            .collect();
        let spiky = means.noise.spiky.as_ref().map(|s| SpikyMoments {
            w_var: s
                .zeta
                .iter()
                .map(|z| 1.0 / (a0 * (1.0 + s.nu * z)))
                .collect(),
            inv_zeta: s.zeta.iter().map(|z| 1.0 / z).collect(),
        });
        if let Some(s) = &means.noise.spiky {
            if s.len() != y.len() {
                return invalid("spiky component length differs from measurement count");
            }
        }
        let state = VariationalState {
            means,
            variance,
            inv_alpha,
            spiky,
            alpha0_shape: 1.0,
            alpha0_rate: 1.0 / a0,
            iteration: 0,
        };
        let mut solver = Self {
            design,
            y,
            state,
            residual: Vec::new(),
            rng,
        };
        solver.refresh_residual()?;
        Ok(solver)
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn refresh_residual(&mut self) -> Result<()> {
        let fit = self.design.apply(self.state.means.pyramid.as_slice())?;
        let w = self.state.means.noise.spiky.as_ref().map(|s| &s.w);
        self.residual = self
            .y
            .iter()
            .zip(&fit)
            .enumerate()
            .map(|(i, (y, f))| y - f - w.map_or(0.0, |w| w[i]))
            .collect();
        Ok(())
    }

    /// Coefficient means and variances; returns the largest change of a mean.
    pub fn update_x(&mut self) -> Result<f64> {
        let prior = self.state.means.shrinkage.prior_precision();
        let a0 = self.state.means.noise.alpha0;
        let mut change: f64 = 0.0;
        match self.design {
            Design::Dense { .. } => {
                let x = self.state.means.pyramid.as_mut_slice();
                for k in 0..x.len() {
                    let col = self.design.column(k).expect("dense column");
                    let nk = self.design.norm_sq(k);
                    let denom = prior[k] + nk;
                    let old = x[k];
                    let new = (dot(col, &self.residual) + nk * old) / denom;
                    if new != old {
                        axpy(old - new, col, &mut self.residual);
                    }
                    x[k] = new;
                    self.state.variance[k] = 1.0 / (a0 * denom);
                    change = change.max((new - old).abs());
                }
            }
            Design::Orthonormal { .. } => {
                let target: Vec<f64> = match &self.state.means.noise.spiky {
                    Some(s) => self.y.iter().zip(&s.w).map(|(y, w)| y - w).collect(),
                    None => self.y.to_vec(),
                };
                let z = self.design.adjoint(&target)?;
                let x = self.state.means.pyramid.as_mut_slice();
                for k in 0..x.len() {
                    let denom = prior[k] + 1.0;
                    let new = z[k] / denom;
                    change = change.max((new - x[k]).abs());
                    x[k] = new;
                    self.state.variance[k] = 1.0 / (a0 * denom);
                }
                let fit = self.design.apply(x)?;
                for ((r, t), f) in self.residual.iter_mut().zip(&target).zip(&fit) {
                    *r = t - f;
                }
            }
        }
        Ok(change)
    }

    /// `<alpha>`, `<1/alpha>` from the GIG conditional at second moments, then
    /// `<tau>`, `<tau0>` and `<alpha0>` from their gamma conditionals.
    pub fn update_alpha_tau(&mut self) -> Result<()> {
        let layout = Arc::clone(self.state.layout());
        let h = self.state.means.hyper;
        let x2: Vec<f64> = self
            .state
            .means
            .pyramid
            .as_slice()
            .iter()
            .zip(&self.state.variance)
            .map(|(m, v)| m * m + v)
            .collect();
        let a0 = self.state.means.noise.alpha0;
        for tree in layout.bands() {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                let b = tree.band.index();
                let s = &mut self.state.means.shrinkage.levels[b][depth];
                let inv = &mut self.state.inv_alpha[b][depth];
                for (i, k) in lvl.range().enumerate() {
                    let a = (s.tau * a0 * x2[k]).max(PRECISION_FLOOR);
                    let g = GigParams::new(a, 1.0 / s.gamma_tilde[i], -0.5)?;
                    s.alpha[i] = gig_mean(&g)?;
                    inv[i] = gig_mean_reciprocal(&g)?;
                }
            }
        }

        let mut prior_energy = 0.0;
        for tree in layout.bands() {
            for (depth, lvl) in tree.levels.iter().enumerate() {
                let s = &mut self.state.means.shrinkage.levels[tree.band.index()][depth];
                let q: f64 = lvl.range().zip(&s.alpha).map(|(k, a)| a * x2[k]).sum();
                s.tau = (h.a0 + 0.5 * lvl.len() as f64) / (h.b0 + 0.5 * a0 * q);
                prior_energy += s.tau * q;
            }
        }
        let ns = layout.n_scaling();
        let q0: f64 = x2[..ns].iter().sum();
        let tau0 = (h.a0 + 0.5 * ns as f64) / (h.b0 + 0.5 * a0 * q0);
        self.state.means.shrinkage.tau0 = tau0;
        prior_energy += tau0 * q0;

        let m = self.y.len() as f64;
        let mut shape = h.a0 + 0.5 * (m + x2.len() as f64);
        let rss: f64 = self.residual.iter().map(|r| r * r).sum();
        let spread: f64 = (0..self.design.n())
            .map(|k| self.design.norm_sq(k) * self.state.variance[k])
            .sum();
        let mut energy = rss + spread + prior_energy;
        if let (Some(s), Some(sm)) = (&self.state.means.noise.spiky, &self.state.spiky) {
            shape += 0.5 * m;
            let w_spread: f64 = sm.w_var.iter().sum();
            let w_prior: f64 = s
                .zeta
                .iter()
                .zip(&s.w)
                .zip(&sm.w_var)
                .map(|((z, w), v)| z * (w * w + v))
                .sum();
            energy += w_spread + s.nu * w_prior;
        }
        let rate = h.b0 + 0.5 * energy;
        self.state.alpha0_shape = shape;
        self.state.alpha0_rate = rate;
        self.state.means.noise.alpha0 = shape / rate;
        Ok(())
    }

    /// Level weights root to leaf with the given method.
    pub fn update_gamma(&mut self, method: SolverMethod) -> Result<()> {
        let layout = Arc::clone(self.state.layout());
        let hyper = self.state.means.hyper;
        let structure = self.state.means.shrinkage.structure;
        for band in BANDS {
            for depth in 0..layout.n_levels() {
                let sh = &self.state.means.shrinkage;
                let conc = sh.concentrations(band, depth, &hyper);
                let rate = sh.rate(depth, &hyper);
                let lvl = sh.level(band, depth);
                let inv = &self.state.inv_alpha[band.index()][depth];
                let new = match method {
                    SolverMethod::Avb => avb_level(&lvl.gamma_tilde, inv, &conc, rate)?,
                    SolverMethod::Em => em_level(&lvl.gamma_tilde, inv, &conc, rate)?,
                    SolverMethod::Vbs(s) => {
                        let ls = (structure == PriorStructure::Tree
                            && depth + 1 < layout.n_levels())
                        .then(|| {
                            child_log_sums(
                                &layout,
                                band,
                                depth,
                                &sh.level(band, depth + 1).gamma_tilde,
                            )
                        });
                        vbs_level(
                            &lvl.gamma,
                            inv,
                            &conc,
                            rate,
                            ls.as_deref(),
                            s,
                            &mut self.rng,
                        )?
                    }
                };
                let lvl = self.state.means.shrinkage.level_mut(band, depth);
                lvl.gamma = new;
                lvl.renormalize();
            }
        }
        Ok(())
    }

    /// Spiky block: `<w>`, `<zeta>`, `<p>` (flat a-VB, or the mode under EM), `<nu>`.
    pub fn update_spiky(&mut self, method: SolverMethod) -> Result<()> {
        let a0 = self.state.means.noise.alpha0;
        let (e0, f0) = (self.state.means.hyper.e0, self.state.means.hyper.f0);
        let (Some(s), Some(sm)) = (
            self.state.means.noise.spiky.as_mut(),
            self.state.spiky.as_mut(),
        ) else {
            return Err(Error::InvalidState(
                "spiky-noise update on a model without it".into(),
            ));
        };
        for i in 0..s.len() {
            let r = self.residual[i] + s.w[i];
            let d = 1.0 + s.nu * s.zeta[i];
            s.w[i] = r / d;
            sm.w_var[i] = 1.0 / (a0 * d);
            self.residual[i] = r - s.w[i];
        }
        for i in 0..s.len() {
            let a = (s.nu * a0 * (s.w[i] * s.w[i] + sm.w_var[i])).max(PRECISION_FLOOR);
            let g = GigParams::new(a, 1.0 / s.p[i], -0.5)?;
            s.zeta[i] = gig_mean(&g)?;
            sm.inv_zeta[i] = gig_mean_reciprocal(&g)?;
        }
        let conc = vec![1.0 / s.len() as f64; s.len()];
        s.p_weights = match method {
            SolverMethod::Em => em_level(&s.p, &sm.inv_zeta, &conc, 1.0)?,
            _ => avb_level(&s.p, &sm.inv_zeta, &conc, 1.0)?,
        };
        s.renormalize();
        let q: f64 = s
            .zeta
            .iter()
            .zip(&s.w)
            .zip(&sm.w_var)
            .map(|((z, w), v)| z * (w * w + v))
            .sum();
        s.nu = (e0 + 0.5 * s.len() as f64) / (f0 + 0.5 * a0 * q);
        Ok(())
    }

    /// One full pass; returns the largest change of a coefficient mean.
    pub fn iterate(&mut self, method: SolverMethod) -> Result<f64> {
        let change = self.update_x()?;
        self.update_alpha_tau()?;
        self.update_gamma(method)?;
        if self.state.spiky.is_some() {
            self.update_spiky(method)?;
        }
        self.state.iteration += 1;
        Ok(change)
    }
}

pub fn run_solver(
    y: &[f64],
    operator: &SensingOperator,
    config: &SolverConfig,
) -> Result<SolverSummary> {
    let design = Design::new(operator)?;
    run_solver_with_design(y, &design, operator.basis().layout(), config)
}

pub fn run_solver_with_design(
    y: &[f64],
    design: &Design,
    layout: &Arc<TreeLayout>,
    config: &SolverConfig,
) -> Result<SolverSummary> {
    let mut solver = Solver::new(design, y, Arc::clone(layout), config)?;
    let mut diagnostics = Vec::with_capacity(config.max_iterations);
    let mut converged = false;
    for it in 0..config.max_iterations {
        let change = solver.iterate(config.method)?;
        diagnostics.push(DiagnosticsRow {
            iteration: it,
            residual_norm: solver.residual().iter().map(|r| r * r).sum::<f64>().sqrt(),
            alpha0: solver.state.means.noise.alpha0,
            mean_change: change,
        });
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let state = solver.state;
    Ok(SolverSummary {
        mean: state.means.pyramid.as_slice().to_vec(),
        variance: state.variance.clone(),
        alpha0_mean: state.means.noise.alpha0,
        noise_std: state.noise_std(),
        spiky_mean: state.means.noise.spiky.as_ref().map(|s| s.w.clone()),
        iterations: state.iteration,
        converged,
        diagnostics,
        final_state: state,
    })
}
