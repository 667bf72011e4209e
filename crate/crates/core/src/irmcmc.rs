//! Importance-resampling MCMC for the leave-one-covariate-out posteriors.
//!
//! One expensive joint chain runs at a pivot site; for every other site the
//! retained parameter draws are importance-resampled and short conditional
//! chains on the held-out covariate complete the posterior.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    log_lik_site_at, log_likelihood, log_x_prior_density, x_prior_interval,
    CovariateSet, Dataset, EtaBlock, Interval, ModelSpec, ParamVector, Replicates,
    WhichCovariate,
};
use crate::random::SeededStream;
use crate::stats::{log_sum_exp, mean, std_normal_inv_cdf, variance};
use crate::tmcmc::{run_chain, tmcmc_step};

/// Prior band constants for the held-out covariate.
pub const C1: f64 = 1.0;
pub const C2: f64 = 100.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_first_stage: usize,
    pub first_burn: usize,
    pub n_resample: usize,
    pub n_second_stage_per_theta: usize,
    pub second_stage_initial_burn: usize,
    pub step_scales: BTreeMap<String, f64>,
    pub quadrature_points: usize,
    pub pivot_override: Option<usize>,
}

fn default_scales() -> BTreeMap<String, f64> {
    [
        ("alpha", 0.4),
        ("beta", 0.4),
        ("gamma", 0.4),
        ("omega", 0.5),
        ("eta", 0.2),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ChainConfig {
    pub fn paper() -> Self {
        Self {
            n_first_stage: 30_000,
            first_burn: 10_000,
            n_resample: 1000,
            n_second_stage_per_theta: 100,
            second_stage_initial_burn: 10_000,
            step_scales: default_scales(),
            quadrature_points: 32,
            pivot_override: None,
        }
    }

    /// Halved chain budget for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            n_first_stage: 15_000,
            first_burn: 5_000,
            n_resample: 500,
            n_second_stage_per_theta: 50,
            second_stage_initial_burn: 5_000,
            step_scales: default_scales(),
            quadrature_points: 32,
            pivot_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_burn >= self.n_first_stage {
            return Err(Error::InvalidArgument(
                "first_burn must be below n_first_stage".into(),
            ));
        }
        if self.n_resample > self.n_first_stage - self.first_burn {
            return Err(Error::InvalidArgument(
                "n_resample exceeds retained first-stage draws".into(),
            ));
        }
        if self.n_resample == 0 || self.n_second_stage_per_theta == 0 {
            return Err(Error::InvalidArgument("empty resampling stages".into()));
        }
        if self.quadrature_points == 0 {
            return Err(Error::InvalidArgument("quadrature_points must be > 0".into()));
        }
        if self.step_scales.values().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("step scales must be positive".into()));
        }
        Ok(())
    }

    fn scale(&self, label: &str) -> f64 {
        self.step_scales.get(label).copied().unwrap_or(0.4)
    }
}

/// Monte Carlo draws of the held-out covariate(s) of one site.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvPosterior {
    pub site: usize,
    /// Draws of the model's first held covariate (x, or z for z-only models).
    pub first: Vec<f64>,
    /// Draws of z for two-covariate models, index-paired with `first`.
    pub second: Option<Vec<f64>>,
    pub mean_first: f64,
    pub var_first: f64,
    pub mean_second: Option<f64>,
    pub var_second: Option<f64>,
    pub cov: Option<f64>,
}

impl CvPosterior {
    fn from_draws(site: usize, first: Vec<f64>, second: Option<Vec<f64>>) -> Self {
        let mean_first = mean(&first);
        let var_first = variance(&first);
        let (mean_second, var_second, cov) = match &second {
            Some(z) => {
                let mz = mean(z);
                let c = first
                    .iter()
                    .zip(z)
                    .map(|(a, b)| (a - mean_first) * (b - mz))
                    .sum::<f64>()
                    / (first.len() - 1) as f64;
                (Some(mz), Some(variance(z)), Some(c))
            }
            None => (None, None, None),
        };
        Self {
            site,
            first,
            second,
            mean_first,
            var_first,
            mean_second,
            var_second,
            cov,
        }
    }
}

/// Covariates a model treats as unknown for one held-out site.
pub fn held_covariates(model: &ModelSpec) -> Vec<WhichCovariate> {
    match model.covariates {
        CovariateSet::X => vec![WhichCovariate::X],
        CovariateSet::Z => vec![WhichCovariate::Z],
        CovariateSet::XZ => vec![WhichCovariate::X, WhichCovariate::Z],
    }
}

/// Pivot site: the one whose mean response is closest to the median of the
/// per-site means, ties broken by smallest index.
pub fn select_istar(data: &Dataset) -> usize {
    let mut sorted = data.ybar().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &yb) in data.ybar().iter().enumerate() {
        let dist = (yb - median).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

/// Flat-vector layout for the joint (parameters, held covariates) state of
/// a leave-one-out target.
pub(crate) struct Layout {
    model: ModelSpec,
    pub cond_sites: Vec<usize>,
    held: Vec<WhichCovariate>,
    n_eta: usize,
    /// Lower Cholesky factor of the unit-variance latent correlation matrix
    /// at the conditioning sites. Chains move whitened coordinates u with
    /// eta = mean line + exp(omega/2)·L·u; the raw eta basis is too
    /// ill-conditioned for joint additive moves (the squared-exponential
    /// kernel has near-zero eigendirections that freeze the sampler).
    chol_l: Option<nalgebra::DMatrix<f64>>,
    /// Observed covariate point per conditioning site, as used by the GP.
    points: Vec<(f64, f64)>,
}

impl Layout {
    fn with_sites(model: &ModelSpec, data: &Dataset, cond_sites: Vec<usize>, held: Vec<WhichCovariate>) -> Self {
        let n_eta = if model.is_gp() { cond_sites.len() } else { 0 };
        let (chol_l, points) = if n_eta > 0 {
            let pts = crate::models::covariate_points(model, data, &cond_sites);
            let corr =
                crate::models::gp_cov_matrix(&pts, 0.0, crate::models::default_gp_jitter(0.0));
            let l = nalgebra::Cholesky::new(corr)
                .expect("latent correlation Cholesky")
                .l();
            (Some(l), pts)
        } else {
            (None, Vec::new())
        };
        Self {
            model: *model,
            cond_sites,
            held,
            n_eta,
            chol_l,
            points,
        }
    }

    pub(crate) fn new(model: &ModelSpec, data: &Dataset, holdout: usize) -> Self {
        let cond_sites: Vec<usize> = (0..data.n()).filter(|&j| j != holdout).collect();
        Self::with_sites(model, data, cond_sites, held_covariates(model))
    }

    /// Parameters-only layout conditioning on every site (no held covariate).
    pub(crate) fn forward(model: &ModelSpec, data: &Dataset) -> Self {
        let cond_sites: Vec<usize> = (0..data.n()).collect();
        Self::with_sites(model, data, cond_sites, Vec::new())
    }

    /// Mean-line predictor at the idx-th conditioning site.
    fn mean_line_at(&self, theta: &ParamVector, idx: usize) -> f64 {
        let (p0, p1) = self.points[idx];
        let mut lp = theta.alpha;
        match self.model.covariates {
            CovariateSet::X => lp += theta.beta.expect("layout requires beta") * p0,
            CovariateSet::Z => lp += theta.gamma.expect("layout requires gamma") * p0,
            CovariateSet::XZ => {
                lp += theta.beta.expect("layout requires beta") * p0
                    + theta.gamma.expect("layout requires gamma") * p1;
            }
        }
        lp
    }

    /// Standard-normal log density of the whitened latent block.
    fn log_prior_whitened(&self, flat: &[f64]) -> f64 {
        if self.n_eta == 0 {
            return 0.0;
        }
        let off = self.theta_dim() - self.n_eta;
        let u = &flat[off..off + self.n_eta];
        -0.5 * u.iter().map(|v| v * v).sum::<f64>()
            - 0.5 * self.n_eta as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    fn has_beta(&self) -> bool {
        self.model.covariates.uses_x()
    }
    fn has_gamma(&self) -> bool {
        self.model.covariates.uses_z()
    }

    pub(crate) fn theta_dim(&self) -> usize {
        1 + self.has_beta() as usize
            + self.has_gamma() as usize
            + self.model.is_gp() as usize
            + self.n_eta
    }

    pub(crate) fn dim(&self) -> usize {
        self.theta_dim() + self.held.len()
    }

    pub(crate) fn unpack_theta(&self, flat: &[f64]) -> ParamVector {
        let mut idx = 0;
        let alpha = flat[idx];
        idx += 1;
        let beta = self.has_beta().then(|| {
            let v = flat[idx];
            idx += 1;
            v
        });
        let gamma = self.has_gamma().then(|| {
            let v = flat[idx];
            idx += 1;
            v
        });
        let omega = self.model.is_gp().then(|| {
            let v = flat[idx];
            idx += 1;
            v
        });
        let eta = (self.n_eta > 0).then(|| {
            let u = &flat[idx..idx + self.n_eta];
            let l = self.chol_l.as_ref().expect("GP layout has Cholesky");
            let sd = (0.5 * omega.expect("GP layout has omega")).exp();
            let partial = ParamVector {
                alpha,
                beta,
                gamma,
                omega,
                eta: None,
            };
            let values = (0..self.n_eta)
                .map(|r| {
                    let mut s = 0.0;
                    for c in 0..=r {
                        s += l[(r, c)] * u[c];
                    }
                    self.mean_line_at(&partial, r) + sd * s
                })
                .collect();
            EtaBlock {
                sites: self.cond_sites.clone(),
                values,
            }
        });
        ParamVector {
            alpha,
            beta,
            gamma,
            omega,
            eta,
        }
    }

    fn held_values<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[self.theta_dim()..]
    }

    fn pack(&self, theta: &ParamVector, held: &[f64]) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.dim());
        flat.push(theta.alpha);
        if self.has_beta() {
            flat.push(theta.beta.expect("layout requires beta"));
        }
        if self.has_gamma() {
            flat.push(theta.gamma.expect("layout requires gamma"));
        }
        if self.model.is_gp() {
            let omega = theta.omega.expect("layout requires omega");
            flat.push(omega);
            // Un-whiten: solve L u = (eta − mean line) / exp(omega/2).
            let eta = &theta.eta.as_ref().expect("layout requires eta").values;
            let l = self.chol_l.as_ref().expect("GP layout has Cholesky");
            let sd = (0.5 * omega).exp();
            let mut u = vec![0.0; self.n_eta];
            for r in 0..self.n_eta {
                let mut s = (eta[r] - self.mean_line_at(theta, r)) / sd;
                for c in 0..r {
                    s -= l[(r, c)] * u[c];
                }
                u[r] = s / l[(r, r)];
            }
            flat.extend(u);
        }
        flat.extend(held);
        flat
    }

    fn scales(&self, config: &ChainConfig, held_widths: &[f64]) -> Vec<f64> {
        let mut s = vec![config.scale("alpha")];
        if self.has_beta() {
            s.push(config.scale("beta"));
        }
        if self.has_gamma() {
            s.push(config.scale("gamma"));
        }
        if self.model.is_gp() {
            s.push(config.scale("omega"));
            s.extend(std::iter::repeat(config.scale("eta")).take(self.n_eta));
        }
        s.extend(held_widths.iter().map(|w| (w / 4.0).max(1e-3)));
        s
    }
}

fn lik_covariates(
    held: &[WhichCovariate],
    values: &[f64],
) -> (Option<f64>, Option<f64>) {
    let mut x = None;
    let mut z = None;
    for (w, &v) in held.iter().zip(values) {
        match w {
            WhichCovariate::X => x = Some(v),
            WhichCovariate::Z => z = Some(v),
        }
    }
    (x, z)
}

/// Prior intervals of every held covariate at one site, or None when the
/// relevant coefficient is degenerate (prior density zero).
fn held_intervals(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &Dataset,
    site: usize,
) -> Result<Option<Vec<Interval>>> {
    let mut out = Vec::new();
    for which in held_covariates(model) {
        match x_prior_interval(model, theta, data, site, which, C1, C2) {
            Ok(iv) => out.push(iv),
            Err(Error::DegenerateCoefficient { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(out))
}

/// Joint leave-one-out log target over (theta, held covariates).
fn joint_log_target(
    model: &ModelSpec,
    data: &Dataset,
    layout: &Layout,
    holdout: usize,
    flat: &[f64],
) -> f64 {
    let theta = layout.unpack_theta(flat);
    let held = layout.held_values(flat);

    let prior = layout.log_prior_whitened(flat);
    let intervals = match held_intervals(model, &theta, data, holdout) {
        Ok(Some(ivs)) => ivs,
        Ok(None) => return f64::NEG_INFINITY,
        Err(e) => panic!("interval evaluation: {e}"),
    };
    let mut xprior = 0.0;
    for (iv, &v) in intervals.iter().zip(held) {
        xprior += log_x_prior_density(iv, v);
    }
    if xprior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lik_cond = log_likelihood(model, &theta, data, &layout.cond_sites, None)
        .expect("likelihood evaluation");
    if lik_cond == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (x, z) = lik_covariates(&layout.held, held);
    let lik_holdout = log_lik_site_at(model, &theta, data, holdout, x, z, Replicates::All)
        .expect("holdout likelihood evaluation");
    prior + xprior + lik_cond + lik_holdout
}

/// Crude link-matched starting point for the regression parameters.
fn initial_theta(model: &ModelSpec, data: &Dataset, layout: &Layout) -> ParamVector {
    let grand_mean = mean(data.ybar()).max(0.1);
    let alpha = match model.link {
        crate::models::Link::Log => grand_mean.ln(),
        crate::models::Link::Logit => -grand_mean.ln(),
        crate::models::Link::Probit => {
            std_normal_inv_cdf(1.0 / (1.0 + grand_mean)).unwrap_or(0.0)
        }
    };
    let beta = layout.has_beta().then_some(0.1);
    let gamma = layout.has_gamma().then_some(0.1);
    let omega = model.is_gp().then_some(-1.0);
    let mut theta = ParamVector {
        alpha,
        beta,
        gamma,
        omega,
        eta: None,
    };
    if model.is_gp() {
        let values: Vec<f64> = layout
            .cond_sites
            .iter()
            .map(|&j| crate::models::mean_line(model, &theta, data, j).expect("mean line"))
            .collect();
        theta.eta = Some(EtaBlock {
            sites: layout.cond_sites.clone(),
            values,
        });
    }
    theta
}

/// Search for a finite-density initial state, jittering if necessary.
fn finite_init<F>(
    stream: &mut SeededStream,
    base: Vec<f64>,
    log_target: &mut F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if log_target(&base).is_finite() {
        return Ok(base);
    }
    for attempt in 1..=200 {
        let spread = 0.1 * attempt as f64;
        let cand: Vec<f64> = base
            .iter()
            .map(|v| v + spread * stream.std_normal())
            .collect();
        if log_target(&cand).is_finite() {
            return Ok(cand);
        }
    }
    Err(Error::InvalidState(
        "no finite-density initial state found".into(),
    ))
}

/// First-stage joint chain at the holdout site; retained post-burn states.
fn joint_chain(
    model: &ModelSpec,
    data: &Dataset,
    holdout: usize,
    config: &ChainConfig,
    stream: &mut SeededStream,
) -> Result<(Layout, Vec<Vec<f64>>)> {
    let layout = Layout::new(model, data, holdout);
    let theta0 = initial_theta(model, data, &layout);
    let intervals = held_intervals(model, &theta0, data, holdout)?
        .ok_or_else(|| Error::InvalidState("degenerate initial coefficient".into()))?;
    let held0: Vec<f64> = intervals.iter().map(|iv| iv.midpoint()).collect();
    let widths: Vec<f64> = intervals.iter().map(|iv| iv.width().max(1e-6)).collect();

    let mut target = |flat: &[f64]| joint_log_target(model, data, &layout, holdout, flat);
    let init = finite_init(stream, layout.pack(&theta0, &held0), &mut target)?;
    let scales = layout.scales(config, &widths);
    let chain = run_chain(
        stream,
        init,
        &mut target,
        scales,
        config.n_first_stage,
        config.first_burn,
    )?;
    Ok((layout, chain.draws))
}

/// Deterministic midpoint quadrature of the site likelihood against the
/// uniform covariate prior: log of the prior-weighted average of
/// f(y_site | theta, value) over the interval(s).
fn log_prior_integral(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &Dataset,
    site: usize,
    q: usize,
) -> Result<f64> {
    let intervals = match held_intervals(model, theta, data, site)? {
        Some(ivs) => ivs,
        None => return Ok(f64::NEG_INFINITY),
    };
    let held = held_covariates(model);
    let nodes_of = |iv: &Interval| -> Vec<f64> {
        if iv.is_degenerate() {
            vec![iv.a]
        } else {
            let h = iv.width() / q as f64;
            (0..q).map(|k| iv.a + (k as f64 + 0.5) * h).collect()
        }
    };
    match intervals.len() {
        1 => {
            let nodes = nodes_of(&intervals[0]);
            let count = nodes.len() as f64;
            let logs = nodes.into_iter().map(|v| {
                let (x, z) = lik_covariates(&held, &[v]);
                log_lik_site_at(model, theta, data, site, x, z, Replicates::All)
                    .expect("quadrature likelihood")
            });
            Ok(log_sum_exp(logs) - count.ln())
        }
        2 => {
            let nx = nodes_of(&intervals[0]);
            let nz = nodes_of(&intervals[1]);
            let count = (nx.len() * nz.len()) as f64;
            let mut logs = Vec::with_capacity(nx.len() * nz.len());
            for &vx in &nx {
                for &vz in &nz {
                    let (x, z) = lik_covariates(&held, &[vx, vz]);
                    logs.push(
                        log_lik_site_at(model, theta, data, site, x, z, Replicates::All)
                            .expect("quadrature likelihood"),
                    );
                }
            }
            Ok(log_sum_exp(logs) - count.ln())
        }
        d => Err(Error::InvalidState(format!("unsupported held dimension {d}"))),
    }
}

/// Log importance weight for re-targeting a pivot-site parameter draw to
/// another site's leave-one-out posterior.
pub fn importance_log_weight(
    theta: &ParamVector,
    site: usize,
    istar: usize,
    model: &ModelSpec,
    data: &Dataset,
    quadrature_points: usize,
) -> Result<f64> {
    if site == istar {
        return Ok(0.0);
    }
    let lik_istar_obs = log_likelihood(model, theta, data, &[istar], None)?;
    let lik_site_obs = log_likelihood(model, theta, data, &[site], None)?;
    let int_site = log_prior_integral(model, theta, data, site, quadrature_points)?;
    let int_istar = log_prior_integral(model, theta, data, istar, quadrature_points)?;
    let num = lik_istar_obs + int_site;
    let den = lik_site_obs + int_istar;
    if num == f64::NEG_INFINITY && den == f64::NEG_INFINITY {
        // Both targets give this draw zero mass; contributes nothing.
        return Ok(f64::NEG_INFINITY);
    }
    Ok(num - den)
}

/// Importance weight on the natural scale.
pub fn importance_weight(
    theta: &ParamVector,
    site: usize,
    istar: usize,
    model: &ModelSpec,
    data: &Dataset,
    quadrature_points: usize,
) -> Result<f64> {
    Ok(importance_log_weight(theta, site, istar, model, data, quadrature_points)?.exp())
}

/// Weighted sampling of `m` indices without replacement via exponential
/// keys (equivalent to sequential draws proportional to weight).
fn resample_without_replacement(
    log_weights: &[f64],
    m: usize,
    stream: &mut SeededStream,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = log_weights
        .iter()
        .enumerate()
        .filter(|(_, &lw)| lw > f64::NEG_INFINITY)
        .map(|(i, &lw)| {
            let gumbel = -(-stream.uniform().ln()).ln();
            (lw + gumbel, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    keyed.truncate(m);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Second-stage conditional chains on the held covariate(s) of one site.
fn second_stage(
    model: &ModelSpec,
    data: &Dataset,
    site: usize,
    thetas: &[ParamVector],
    config: &ChainConfig,
    stream: &mut SeededStream,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let held = held_covariates(model);
    let ndim = held.len();
    let r = config.n_second_stage_per_theta;
    let mut first = Vec::with_capacity(thetas.len() * r);
    let mut second = (ndim == 2).then(|| Vec::with_capacity(thetas.len() * r));

    let mut state: Vec<f64> = Vec::new();
    let mut scales: Vec<f64>;
    // Dimensionless step factors (scale / interval width), tuned once on the
    // first atom's pilot burn and then reused so each atom's step size tracks
    // its own prior-interval width.
    let mut factors: Vec<f64> = Vec::new();

    for (t_idx, theta) in thetas.iter().enumerate() {
        let intervals = held_intervals(model, theta, data, site)?.ok_or_else(|| {
            Error::InvalidState("resampled draw has a degenerate coefficient".into())
        })?;
        if intervals.iter().all(|iv| iv.is_degenerate()) {
            // Point-mass prior: the covariate is pinned.
            for _ in 0..r {
                first.push(intervals[0].a);
                if let Some(sec) = &mut second {
                    sec.push(intervals[1].a);
                }
            }
            continue;
        }
        let mut target = |vals: &[f64]| -> f64 {
            let mut lp = 0.0;
            for (iv, &v) in intervals.iter().zip(vals) {
                lp += log_x_prior_density(iv, v);
            }
            if lp == f64::NEG_INFINITY {
                return lp;
            }
            let (x, z) = lik_covariates(&held, vals);
            lp + log_lik_site_at(model, theta, data, site, x, z, Replicates::All)
                .expect("site likelihood")
        };

        let in_support = state.len() == ndim && target(&state).is_finite();
        if !in_support {
            state = intervals.iter().map(|iv| iv.midpoint()).collect();
            if !target(&state).is_finite() {
                // Scan quadrature nodes for a positive-density point.
                state = scan_support(&intervals, &mut target, config.quadrature_points)
                    .ok_or_else(|| Error::AllWeightsZero { site })?;
            }
        }
        if factors.is_empty() {
            scales = intervals
                .iter()
                .map(|iv| (iv.width() / 4.0).max(1e-6))
                .collect();
        } else {
            scales = intervals
                .iter()
                .zip(&factors)
                .map(|(iv, &f)| (iv.width() * f).max(1e-6))
                .collect();
        }

        if t_idx == 0 {
            // Pilot burn with adaptation, frozen afterward.
            let mut lt = target(&state);
            let mut accepted = 0usize;
            for step in 0..config.second_stage_initial_burn {
                let (new_lt, acc) =
                    tmcmc_step(stream, &mut state, &mut target, &scales, lt)?;
                lt = new_lt;
                accepted += acc as usize;
                if (step + 1) % 200 == 0 {
                    let rate = accepted as f64 / 200.0;
                    if rate > 0.5 {
                        scales.iter_mut().for_each(|s| *s *= 1.4);
                    } else if rate < 0.15 {
                        scales.iter_mut().for_each(|s| *s *= 0.7);
                    }
                    accepted = 0;
                }
            }
            factors = intervals
                .iter()
                .zip(&scales)
                .map(|(iv, &s)| s / iv.width().max(1e-6))
                .collect();
        }
        let mut lt = target(&state);
        // Short per-atom warmup: the carried-over state targets the previous
        // atom's conditional, so let the chain relocate before recording.
        for _ in 0..r.div_ceil(4) {
            let (new_lt, _) = tmcmc_step(stream, &mut state, &mut target, &scales, lt)?;
            lt = new_lt;
        }
        for _ in 0..r {
            let (new_lt, _) = tmcmc_step(stream, &mut state, &mut target, &scales, lt)?;
            lt = new_lt;
            first.push(state[0]);
            if let Some(sec) = &mut second {
                sec.push(state[1]);
            }
        }
    }
    Ok((first, second))
}

fn scan_support<F>(intervals: &[Interval], target: &mut F, q: usize) -> Option<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let nodes: Vec<Vec<f64>> = intervals
        .iter()
        .map(|iv| {
            if iv.is_degenerate() {
                vec![iv.a]
            } else {
                let h = iv.width() / q as f64;
                (0..q).map(|k| iv.a + (k as f64 + 0.5) * h).collect()
            }
        })
        .collect();
    if nodes.len() == 1 {
        nodes[0]
            .iter()
            .map(|&v| vec![v])
            .find(|s| target(s).is_finite())
    } else {
        let mut found = None;
        'outer: for &a in &nodes[0] {
            for &b in &nodes[1] {
                let s = vec![a, b];
                if target(&s).is_finite() {
                    found = Some(s);
                    break 'outer;
                }
            }
        }
        found
    }
}

/// Leave-one-out covariate posteriors for every site of one model.
pub fn irmcmc_cv_posteriors(
    model: &ModelSpec,
    data: &Dataset,
    config: &ChainConfig,
    stream: &SeededStream,
) -> Result<Vec<CvPosterior>> {
    config.validate()?;
    let istar = config.pivot_override.unwrap_or_else(|| select_istar(data));
    let mut stage1_stream = stream.derive("stage1")?;
    let (layout, draws) = joint_chain(model, data, istar, config, &mut stage1_stream)?;
    let thetas: Vec<ParamVector> = draws.iter().map(|d| layout.unpack_theta(d)).collect();

    (0..data.n())
        .into_par_iter()
        .map(|site| {
            let mut site_stream = stream.derive(&format!("site={site}"))?;
            let log_weights: Vec<f64> = thetas
                .iter()
                .map(|theta| {
                    importance_log_weight(
                        theta,
                        site,
                        istar,
                        model,
                        data,
                        config.quadrature_points,
                    )
                })
                .collect::<Result<_>>()?;
            if log_weights.iter().all(|&w| w == f64::NEG_INFINITY) {
                return Err(Error::AllWeightsZero { site });
            }
            let picked =
                resample_without_replacement(&log_weights, config.n_resample, &mut site_stream);
            let picked_thetas: Vec<ParamVector> =
                picked.iter().map(|&i| thetas[i].clone()).collect();
            let (first, second) =
                second_stage(model, data, site, &picked_thetas, config, &mut site_stream)?;
            Ok(CvPosterior::from_draws(site, first, second))
        })
        .collect()
}

/// Full-data posterior chain over the model parameters alone.
pub fn forward_posterior_draws(
    model: &ModelSpec,
    data: &Dataset,
    n_steps: usize,
    burn: usize,
    config: &ChainConfig,
    stream: &mut SeededStream,
) -> Result<Vec<ParamVector>> {
    let layout = Layout::forward(model, data);
    let theta0 = initial_theta(model, data, &layout);
    let mut target = |flat: &[f64]| {
        let theta = layout.unpack_theta(flat);
        layout.log_prior_whitened(flat)
            + log_likelihood(model, &theta, data, &layout.cond_sites, None)
                .expect("likelihood evaluation")
    };
    let init = finite_init(stream, layout.pack(&theta0, &[]), &mut target)?;
    let scales = layout.scales(config, &[]);
    let chain = run_chain(stream, init, &mut target, scales, n_steps, burn)?;
    Ok(chain.draws.iter().map(|d| layout.unpack_theta(d)).collect())
}

/// Posterior chain over the model parameters with one site's responses left
/// out of the likelihood. The excluded site's covariate stays observed and,
/// for Gaussian-process models, its latent value remains in the state vector
/// constrained only by the process prior, so the held-out block can be
/// predicted from the draws.
pub fn leave_block_out_posterior_draws(
    model: &ModelSpec,
    data: &Dataset,
    excluded_site: usize,
    n_steps: usize,
    burn: usize,
    config: &ChainConfig,
    stream: &mut SeededStream,
) -> Result<Vec<ParamVector>> {
    let layout = Layout::forward(model, data);
    let lik_sites: Vec<usize> = (0..data.n()).filter(|&j| j != excluded_site).collect();
    let theta0 = initial_theta(model, data, &layout);
    let mut target = |flat: &[f64]| {
        let theta = layout.unpack_theta(flat);
        layout.log_prior_whitened(flat)
            + log_likelihood(model, &theta, data, &lik_sites, None)
                .expect("likelihood evaluation")
    };
    let init = finite_init(stream, layout.pack(&theta0, &[]), &mut target)?;
    let scales = layout.scales(config, &[]);
    let chain = run_chain(stream, init, &mut target, scales, n_steps, burn)?;
    Ok(chain.draws.iter().map(|d| layout.unpack_theta(d)).collect())
}

/// Single long joint chain on one site's leave-one-out target, returning the
/// held-covariate draws. Reference route for validating the resampling path.
pub fn direct_cv_posterior(
    model: &ModelSpec,
    data: &Dataset,
    site: usize,
    n_steps: usize,
    burn: usize,
    config: &ChainConfig,
    stream: &mut SeededStream,
) -> Result<CvPosterior> {
    let layout = Layout::new(model, data, site);
    let theta0 = initial_theta(model, data, &layout);
    let intervals = held_intervals(model, &theta0, data, site)?
        .ok_or_else(|| Error::InvalidState("degenerate initial coefficient".into()))?;
    let held0: Vec<f64> = intervals.iter().map(|iv| iv.midpoint()).collect();
    let widths: Vec<f64> = intervals.iter().map(|iv| iv.width().max(1e-6)).collect();
    let mut target = |flat: &[f64]| joint_log_target(model, data, &layout, site, flat);
    let init = finite_init(stream, layout.pack(&theta0, &held0), &mut target)?;
    let scales = layout.scales(config, &widths);
    let chain = run_chain(stream, init, &mut target, scales, n_steps, burn)?;
    let td = layout.theta_dim();
    let first: Vec<f64> = chain.draws.iter().map(|d| d[td]).collect();
    let second = (layout.held.len() == 2)
        .then(|| chain.draws.iter().map(|d| d[td + 1]).collect());
    Ok(CvPosterior::from_draws(site, first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Family, Link, RegressionForm};

    fn poisson_x(id: usize) -> ModelSpec {
        ModelSpec::new(
            id,
            Family::Poisson,
            Link::Log,
            RegressionForm::Linear,
            CovariateSet::X,
        )
        .unwrap()
    }

    fn toy_dataset(seed: u64, n: usize, m: usize, alpha0: f64, beta0: f64) -> Dataset {
        let mut s = SeededStream::root(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let xi = s.uniform_in(-1.0, 1.0);
            let lam = (alpha0 + beta0 * xi).exp();
            x.push(xi);
            y.push((0..m).map(|_| s.poisson(lam).unwrap()).collect());
        }
        Dataset::new(x, None, y).unwrap()
    }

    #[test]
    fn istar_from_stated_rule() {
        // ybar = (1, 5, 100): median 5, site 1 (0-based).
        let mk = |rows: Vec<u64>| -> Dataset {
            let y: Vec<Vec<u64>> = rows.iter().map(|&v| vec![v, v]).collect();
            Dataset::new(vec![0.0; rows.len()], None, y).unwrap()
        };
        assert_eq!(select_istar(&mk(vec![1, 5, 100])), 1);
        assert_eq!(select_istar(&mk(vec![3, 3, 3])), 0);
        // ybar = (2, 9, 4, 7): median 5.5, closest is 4 at index 2.
        assert_eq!(select_istar(&mk(vec![2, 9, 4, 7])), 2);
    }

    #[test]
    fn weight_is_one_at_pivot() {
        let model = poisson_x(0);
        let data = toy_dataset(3, 4, 6, 0.2, 0.8);
        let theta = ParamVector::linear(0.2, Some(0.8), None);
        assert_eq!(
            importance_weight(&theta, 2, 2, &model, &data, 32).unwrap(),
            1.0
        );
    }

    #[test]
    fn degenerate_interval_integral_is_point_likelihood() {
        // s = 0 at site 0 makes the prior a point mass at a.
        let model = poisson_x(0);
        let data = Dataset::new(
            vec![0.0, 1.0],
            None,
            vec![vec![3, 3, 3], vec![1, 2, 4]],
        )
        .unwrap();
        let theta = ParamVector::linear(0.0, Some(1.0), None);
        let iv = x_prior_interval(&model, &theta, &data, 0, WhichCovariate::X, C1, C2).unwrap();
        assert!(iv.is_degenerate());
        let li = log_prior_integral(&model, &theta, &data, 0, 32).unwrap();
        let direct =
            log_lik_site_at(&model, &theta, &data, 0, Some(iv.a), None, Replicates::All)
                .unwrap();
        assert!((li - direct).abs() < 1e-12);
    }

    #[test]
    fn quadrature_weight_matches_fine_grid() {
        let model = poisson_x(0);
        let data = toy_dataset(5, 2, 2, 0.1, 0.9);
        let theta = ParamVector::linear(0.15, Some(0.85), None);
        let coarse = importance_weight(&theta, 0, 1, &model, &data, 32).unwrap();
        let fine = importance_weight(&theta, 0, 1, &model, &data, 10_000).unwrap();
        assert!(
            (coarse - fine).abs() / fine.abs() < 0.01,
            "coarse {coarse} fine {fine}"
        );
    }

    #[test]
    fn resample_prefers_heavy_weights() {
        let mut stream = SeededStream::root(4);
        let lw: Vec<f64> = (0..100)
            .map(|i| if i < 10 { 0.0 } else { -20.0 })
            .collect();
        let picked = resample_without_replacement(&lw, 10, &mut stream);
        assert_eq!(picked.len(), 10);
        assert!(picked.iter().filter(|&&i| i < 10).count() >= 9);
    }

    #[test]
    fn cv_sample_count_is_m_times_r() {
        let model = poisson_x(0);
        let data = toy_dataset(7, 3, 8, 0.3, 0.7);
        let config = ChainConfig {
            n_first_stage: 2000,
            first_burn: 500,
            n_resample: 40,
            n_second_stage_per_theta: 25,
            second_stage_initial_burn: 500,
            step_scales: default_scales(),
            quadrature_points: 16,
            pivot_override: None,
        };
        let stream = SeededStream::root(21).derive("irmcmc").unwrap();
        let cvs = irmcmc_cv_posteriors(&model, &data, &config, &stream).unwrap();
        assert_eq!(cvs.len(), 3);
        for cv in &cvs {
            assert_eq!(cv.first.len(), 40 * 25);
            assert!(cv.second.is_none());
            assert!(cv.var_first >= 0.0);
        }
    }

    #[test]
    fn cv_mean_lies_in_interval_at_posterior_mean_theta() {
        let model = poisson_x(0);
        let data = toy_dataset(11, 3, 50, 0.4, 0.9);
        let config = ChainConfig {
            n_first_stage: 12_000,
            first_burn: 3_000,
            n_resample: 400,
            n_second_stage_per_theta: 30,
            second_stage_initial_burn: 2_000,
            step_scales: default_scales(),
            quadrature_points: 16,
            pivot_override: None,
        };
        let stream = SeededStream::root(77).derive("irmcmc").unwrap();
        let cvs = irmcmc_cv_posteriors(&model, &data, &config, &stream).unwrap();

        // Posterior-mean theta from a fresh pivot chain.
        let istar = select_istar(&data);
        let mut s1 = stream.derive("check").unwrap();
        let (layout, draws) = joint_chain(&model, &data, istar, &config, &mut s1).unwrap();
        let mean_flat: Vec<f64> = (0..layout.dim())
            .map(|j| mean(&draws.iter().map(|d| d[j]).collect::<Vec<_>>()))
            .collect();
        let theta = layout.unpack_theta(&mean_flat);
        for cv in &cvs {
            let iv =
                x_prior_interval(&model, &theta, &data, cv.site, WhichCovariate::X, C1, C2)
                    .unwrap();
            assert!(
                cv.mean_first > iv.a && cv.mean_first < iv.b,
                "site {} mean {} outside ({}, {})",
                cv.site,
                cv.mean_first,
                iv.a,
                iv.b
            );
        }
    }

    #[test]
    fn doubling_first_stage_is_stationary() {
        let model = poisson_x(0);
        let data = toy_dataset(13, 3, 20, 0.2, 0.8);
        let mk = |n_first: usize, burn: usize| {
            let config = ChainConfig {
                n_first_stage: n_first,
                first_burn: burn,
                n_resample: 200,
                n_second_stage_per_theta: 25,
                second_stage_initial_burn: 1000,
                step_scales: default_scales(),
                quadrature_points: 16,
                pivot_override: None,
            };
            let stream = SeededStream::root(31).derive("smoke").unwrap();
            irmcmc_cv_posteriors(&model, &data, &config, &stream).unwrap()
        };
        let a = mk(4000, 1000);
        let b = mk(8000, 1000);
        for (ca, cb) in a.iter().zip(&b) {
            let se = (ca.var_first / ca.first.len() as f64).sqrt()
                + (cb.var_first / cb.first.len() as f64).sqrt();
            // MCMC autocorrelation inflates the naive SE; allow a generous factor.
            assert!(
                (ca.mean_first - cb.mean_first).abs() < 2.0 * 10.0 * se,
                "site {}: {} vs {}",
                ca.site,
                ca.mean_first,
                cb.mean_first
            );
        }
    }

    #[test]
    fn draws_stay_inside_prior_support_unions() {
        let model = poisson_x(0);
        let data = toy_dataset(17, 3, 10, 0.0, 1.0);
        let config = ChainConfig {
            n_first_stage: 2000,
            first_burn: 500,
            n_resample: 50,
            n_second_stage_per_theta: 10,
            second_stage_initial_burn: 200,
            step_scales: default_scales(),
            quadrature_points: 8,
            pivot_override: None,
        };
        let stream = SeededStream::root(51).derive("irmcmc").unwrap();
        let cvs = irmcmc_cv_posteriors(&model, &data, &config, &stream).unwrap();
        // Conservative check: every draw lies inside the widest band the
        // observed summaries can produce for any finite theta is vacuous, so
        // instead verify draws are finite and the variance is consistent.
        for cv in cvs {
            assert!(cv.first.iter().all(|v| v.is_finite()));
            assert!(cv.var_first.is_finite());
        }
    }
}
