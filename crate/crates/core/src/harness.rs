//! Simulation scenarios, experiment orchestration, replicate-averaged error
//! rates, and run-directory outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{
    estimate_log_cpo, estimate_log_cpo_direct, mean_log_cpo, EvidenceReport,
    GIBBS_BURN_DEFAULT, GIBBS_ITER_DEFAULT,
};
use crate::irmcmc::{forward_posterior_draws, irmcmc_cv_posteriors, ChainConfig};
use crate::models::{CovariateSet, Dataset, Family, Link, ModelSpec, RegressionForm};
use crate::random::SeededStream;
use crate::testing::{
    beta_sweep, build_discrepancy_report, compute_v, default_beta_grid, DecisionTable,
    DiscrepancyKind, DiscrepancyReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SingleCovariate,
    TwoCovariate,
}

/// How the per-site predictive ordinates are estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpoMode {
    /// Importance identity on full-posterior draws; cheap but heavy-tailed.
    Importance,
    /// One leave-block-out chain per site; slower but unbiased rankings.
    #[default]
    Direct,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n")]
    pub m: usize,
    #[serde(default)]
    pub roster: Vec<ModelSpec>,
    #[serde(default)]
    pub misspecified: bool,
    /// Per-model Dirichlet prior weights; empty map → rule default
    /// (1 per model, 5 for two-covariate models).
    #[serde(default)]
    pub dirichlet_alpha: BTreeMap<usize, f64>,
    #[serde(default = "default_c")]
    pub discrepancy_c: f64,
    /// Null-event offset a_k (default 0).
    #[serde(default)]
    pub discrepancy_a: f64,
    /// Null-event slack epsilon (default 0).
    #[serde(default)]
    pub discrepancy_epsilon: f64,
    #[serde(default = "default_alpha_level")]
    pub alpha_level: f64,
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub cpo_mode: CpoMode,
    #[serde(default = "default_gibbs_iter")]
    pub gibbs_iter: usize,
    #[serde(default = "default_gibbs_burn")]
    pub gibbs_burn: usize,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_n() -> usize {
    10
}
fn default_c() -> f64 {
    1.0
}
fn default_alpha_level() -> f64 {
    0.05
}
fn default_gibbs_iter() -> usize {
    GIBBS_ITER_DEFAULT
}
fn default_gibbs_burn() -> usize {
    GIBBS_BURN_DEFAULT
}
fn default_replicates() -> usize {
    4
}

/// Six-model single-covariate roster: linear and GP regressions for the
/// Poisson-log, geometric-logit, and geometric-probit families.
pub fn roster_single_covariate() -> Vec<ModelSpec> {
    let mut out = Vec::new();
    let mut id = 0;
    for (family, link) in [
        (Family::Poisson, Link::Log),
        (Family::Geometric, Link::Logit),
        (Family::Geometric, Link::Probit),
    ] {
        for form in [RegressionForm::Linear, RegressionForm::GaussianProcess] {
            out.push(ModelSpec::new(id, family, link, form, CovariateSet::X).unwrap());
            id += 1;
        }
    }
    out
}

/// Eighteen-model two-covariate roster: each family/form combination with
/// covariate sets {x}, {z}, {x,z}.
pub fn roster_two_covariate() -> Vec<ModelSpec> {
    let mut out = Vec::new();
    let mut id = 0;
    for (family, link) in [
        (Family::Poisson, Link::Log),
        (Family::Geometric, Link::Logit),
        (Family::Geometric, Link::Probit),
    ] {
        for form in [RegressionForm::Linear, RegressionForm::GaussianProcess] {
            for cov in [CovariateSet::X, CovariateSet::Z, CovariateSet::XZ] {
                out.push(ModelSpec::new(id, family, link, form, cov).unwrap());
                id += 1;
            }
        }
    }
    out
}

/// Nine-model linear-only two-covariate roster for fast runs.
pub fn roster_two_covariate_linear() -> Vec<ModelSpec> {
    let mut out = Vec::new();
    let mut id = 0;
    for (family, link) in [
        (Family::Poisson, Link::Log),
        (Family::Geometric, Link::Logit),
        (Family::Geometric, Link::Probit),
    ] {
        for cov in [CovariateSet::X, CovariateSet::Z, CovariateSet::XZ] {
            out.push(ModelSpec::new(id, family, link, RegressionForm::Linear, cov).unwrap());
            id += 1;
        }
    }
    out
}

/// The data-generating model's spec within a roster, if present.
fn true_model_id(scenario: Scenario, roster: &[ModelSpec]) -> Option<usize> {
    let want_cov = match scenario {
        Scenario::SingleCovariate => CovariateSet::X,
        Scenario::TwoCovariate => CovariateSet::XZ,
    };
    roster
        .iter()
        .find(|mspec| {
            mspec.family == Family::Poisson
                && mspec.form == RegressionForm::Linear
                && mspec.covariates == want_cov
        })
        .map(|mspec| mspec.id)
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        let roster = match scenario {
            Scenario::SingleCovariate => roster_single_covariate(),
            Scenario::TwoCovariate => roster_two_covariate(),
        };
        Self {
            scenario,
            n: 10,
            m: 10,
            roster,
            misspecified: false,
            dirichlet_alpha: BTreeMap::new(),
            discrepancy_c: 1.0,
            discrepancy_a: 0.0,
            discrepancy_epsilon: 0.0,
            alpha_level: 0.05,
            beta_grid: default_beta_grid(),
            chain: ChainConfig::paper(),
            cpo_mode: CpoMode::default(),
            gibbs_iter: GIBBS_ITER_DEFAULT,
            gibbs_burn: GIBBS_BURN_DEFAULT,
            root_seed: 0,
            replicates: default_replicates(),
        }
    }

    /// Resolved roster: the misspecified flag drops the true model.
    pub fn effective_roster(&self) -> Vec<ModelSpec> {
        let mut roster = if self.roster.is_empty() {
            match self.scenario {
                Scenario::SingleCovariate => roster_single_covariate(),
                Scenario::TwoCovariate => roster_two_covariate(),
            }
        } else {
            self.roster.clone()
        };
        if self.misspecified {
            if let Some(tid) = true_model_id(self.scenario, &roster) {
                roster.retain(|mspec| mspec.id != tid);
            }
        }
        roster
    }

    /// Dirichlet weights: explicit map if given, else 1 per model and 5 for
    /// two-covariate models.
    pub fn effective_alpha(&self, roster: &[ModelSpec]) -> BTreeMap<usize, f64> {
        if !self.dirichlet_alpha.is_empty() {
            return self.dirichlet_alpha.clone();
        }
        roster
            .iter()
            .map(|mspec| {
                let a = if mspec.covariates.is_bivariate() {
                    5.0
                } else {
                    1.0
                };
                (mspec.id, a)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let roster = self.effective_roster();
        if roster.len() < 2 {
            return Err(Error::InvalidArgument("roster must have K > 1".into()));
        }
        let mut ids: Vec<usize> = roster.iter().map(|mspec| mspec.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != roster.len() {
            return Err(Error::InvalidArgument("duplicate model ids in roster".into()));
        }
        if self.misspecified {
            if true_model_id(self.scenario, &roster).is_some() {
                return Err(Error::InvalidState(
                    "misspecified run still contains the true model".into(),
                ));
            }
        }
        if self.scenario == Scenario::SingleCovariate
            && roster.iter().any(|mspec| mspec.covariates.uses_z())
        {
            return Err(Error::InvalidArgument(
                "single-covariate scenario cannot host z models".into(),
            ));
        }
        let alpha = self.effective_alpha(&roster);
        if roster.iter().any(|mspec| !alpha.contains_key(&mspec.id)) {
            return Err(Error::InvalidArgument(
                "dirichlet_alpha missing a roster model".into(),
            ));
        }
        self.chain.validate()?;
        if self.n < 2 || self.m < 2 {
            return Err(Error::InvalidArgument("need n >= 2 and m >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthAssignment {
    pub alpha0: f64,
    pub beta0: f64,
    pub gamma0: Option<f64>,
    pub true_model_id: Option<usize>,
}

/// Synthetic dataset from the Poisson log-linear truth.
pub fn generate_dataset(
    config: &ExperimentConfig,
    stream: &SeededStream,
) -> Result<(Dataset, TruthAssignment)> {
    let mut truth_stream = stream.derive("truth")?;
    let alpha0 = truth_stream.uniform_in(-1.0, 1.0);
    let beta0 = truth_stream.uniform_in(-1.0, 1.0);
    let two = config.scenario == Scenario::TwoCovariate;
    let gamma0 = two.then(|| truth_stream.uniform_in(-1.0, 1.0));

    let mut cov_stream = stream.derive("covariates")?;
    let x: Vec<f64> = (0..config.n)
        .map(|_| cov_stream.uniform_in(-1.0, 1.0))
        .collect();
    let z: Option<Vec<f64>> =
        two.then(|| (0..config.n).map(|_| cov_stream.uniform_in(0.0, 2.0)).collect());

    let mut y_stream = stream.derive("responses")?;
    let mut y = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let lp = alpha0
            + beta0 * x[i]
            + gamma0.map_or(0.0, |g| g * z.as_ref().unwrap()[i]);
        let lam = lp.exp();
        let row: Result<Vec<u64>> = (0..config.m).map(|_| y_stream.poisson(lam)).collect();
        y.push(row?);
    }
    let data = Dataset::new(x, z, y)?;
    let roster = config.effective_roster();
    let truth = TruthAssignment {
        alpha0,
        beta0,
        gamma0,
        true_model_id: true_model_id(config.scenario, &roster),
    };
    Ok((data, truth))
}

/// Everything one pipeline run produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutput {
    pub evidence: EvidenceReport,
    /// Per model: reports keyed by discrepancy label.
    pub discrepancies: BTreeMap<usize, BTreeMap<String, DiscrepancyReport>>,
    pub v_t1: BTreeMap<usize, f64>,
    pub v_t2: BTreeMap<usize, f64>,
    pub table_t1: DecisionTable,
    pub table_t2: DecisionTable,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: Scenario,
    pub n: usize,
    pub m: usize,
    pub root_seed: u64,
    pub model_labels: BTreeMap<usize, String>,
    pub reference: usize,
    pub selected: usize,
    pub model_posterior: BTreeMap<usize, f64>,
    pub v_t1: BTreeMap<usize, f64>,
    pub v_t2: BTreeMap<usize, f64>,
    pub truth: Option<TruthAssignment>,
    /// Realized error rates against the known truth, per beta grid point.
    pub oracle_t1: Option<OracleRates>,
    pub oracle_t2: Option<OracleRates>,
    pub failures: Vec<String>,
}

/// Non-Bayesian diagnostics: the realized false discovery / non-discovery
/// proportions a simulation oracle can compute from the known truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleRates {
    pub beta_grid: Vec<f64>,
    pub fdp: Vec<f64>,
    pub fnp: Vec<f64>,
}

fn oracle_rates(table: &DecisionTable, true_id: usize) -> OracleRates {
    let ids: Vec<usize> = table.v.keys().copied().collect();
    let mut fdp = Vec::with_capacity(table.beta_grid.len());
    let mut fnp = Vec::with_capacity(table.beta_grid.len());
    for d in &table.decisions {
        let rejected: f64 = d.iter().map(|&x| x as f64).sum();
        let accepted = ids.len() as f64 - rejected;
        let mut false_rej = 0.0;
        let mut false_acc = 0.0;
        for (k, &dk) in ids.iter().zip(d) {
            if *k == true_id && dk == 1 {
                false_rej += 1.0;
            }
            if *k != true_id && dk == 0 {
                false_acc += 1.0;
            }
        }
        fdp.push(false_rej / rejected.max(1.0));
        fnp.push(false_acc / accepted.max(1.0));
    }
    OracleRates {
        beta_grid: table.beta_grid.clone(),
        fdp,
        fnp,
    }
}

struct ModelResult {
    id: usize,
    mean_log_cpo: f64,
    reports: BTreeMap<String, DiscrepancyReport>,
}

fn run_model(
    mspec: &ModelSpec,
    data: &Dataset,
    config: &ExperimentConfig,
    root: &SeededStream,
) -> Result<ModelResult> {
    let model_stream = root.derive(&format!("model={}", mspec.id))?;
    let mut forward_stream = model_stream.derive("forward")?;
    let cpos = match config.cpo_mode {
        CpoMode::Importance => {
            let draws = forward_posterior_draws(
                mspec,
                data,
                config.chain.n_first_stage,
                config.chain.first_burn,
                &config.chain,
                &mut forward_stream,
            )
            .map_err(|e| e.in_model(&mspec.label()))?;
            estimate_log_cpo(mspec, data, &draws)
        }
        CpoMode::Direct => estimate_log_cpo_direct(
            mspec,
            data,
            config.chain.n_first_stage,
            config.chain.first_burn,
            &config.chain,
            &mut forward_stream,
        ),
    }
    .map_err(|e| e.in_model(&mspec.label()))?;
    let mlc = mean_log_cpo(&cpos).map_err(|e| e.in_model(&mspec.label()))?;

    let cv_stream = model_stream.derive("irmcmc")?;
    let cvs = irmcmc_cv_posteriors(mspec, data, &config.chain, &cv_stream)
        .map_err(|e| e.in_model(&mspec.label()))?;

    let kinds: &[DiscrepancyKind] = if mspec.covariates.is_bivariate() {
        &[DiscrepancyKind::T3]
    } else {
        &[DiscrepancyKind::T1, DiscrepancyKind::T2]
    };
    let mut reports = BTreeMap::new();
    for &kind in kinds {
        let report = build_discrepancy_report(
            mspec,
            data,
            &cvs,
            kind,
            config.discrepancy_c,
            config.alpha_level,
            config.discrepancy_a,
            config.discrepancy_epsilon,
        )
        .map_err(|e| e.in_model(&mspec.label()))?;
        reports.insert(kind.label().to_string(), report);
    }
    Ok(ModelResult {
        id: mspec.id,
        mean_log_cpo: mlc,
        reports,
    })
}

/// Coverage entering the univariate sweeps: T1 or T2 where available, T3
/// substituted for two-covariate models.
fn coverage_for(reports: &BTreeMap<String, DiscrepancyReport>, kind: DiscrepancyKind) -> f64 {
    reports
        .get(kind.label())
        .or_else(|| reports.get(DiscrepancyKind::T3.label()))
        .map(|r| r.coverage)
        .unwrap_or(0.0)
}

/// Full pipeline on a supplied dataset.
pub fn run_pipeline(
    config: &ExperimentConfig,
    data: &Dataset,
    truth: Option<&TruthAssignment>,
) -> Result<RunOutput> {
    config.validate()?;
    let roster = config.effective_roster();
    let alpha = config.effective_alpha(&roster);
    let root = SeededStream::root(config.root_seed);

    let results: Vec<(usize, std::result::Result<ModelResult, String>)> = roster
        .par_iter()
        .map(|mspec| {
            let res = run_model(mspec, data, config, &root).map_err(|e| e.to_string());
            (mspec.id, res)
        })
        .collect();

    let mut failures = Vec::new();
    let mut mlc = BTreeMap::new();
    let mut discrepancies = BTreeMap::new();
    for (id, res) in results {
        match res {
            Ok(r) => {
                mlc.insert(r.id, r.mean_log_cpo);
                discrepancies.insert(r.id, r.reports);
            }
            Err(msg) => failures.push(format!("model {id}: {msg}")),
        }
    }
    if mlc.len() < 2 {
        return Err(Error::InvalidState(format!(
            "fewer than two models completed; failures: {failures:?}"
        )));
    }
    let surviving_alpha: BTreeMap<usize, f64> = alpha
        .iter()
        .filter(|(k, _)| mlc.contains_key(k))
        .map(|(&k, &v)| (k, v))
        .collect();

    let mut gibbs_stream = root.derive("gibbs")?;
    let evidence = EvidenceReport::build(
        mlc,
        data.n(),
        surviving_alpha,
        config.gibbs_iter,
        config.gibbs_burn,
        &mut gibbs_stream,
    )?;
    evidence.validate()?;

    let mut v_t1 = BTreeMap::new();
    let mut v_t2 = BTreeMap::new();
    for (&id, reports) in &discrepancies {
        let p = evidence.model_posterior[&id];
        v_t1.insert(id, compute_v(p, coverage_for(reports, DiscrepancyKind::T1))?);
        v_t2.insert(id, compute_v(p, coverage_for(reports, DiscrepancyKind::T2))?);
    }
    let table_t1 = beta_sweep(&v_t1, &config.beta_grid)?;
    let table_t2 = beta_sweep(&v_t2, &config.beta_grid)?;

    let selected = *evidence
        .model_posterior
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)))
        .unwrap()
        .0;
    let labels: BTreeMap<usize, String> = roster
        .iter()
        .map(|mspec| (mspec.id, mspec.label()))
        .collect();
    let true_id = truth.and_then(|t| t.true_model_id);
    let summary = RunSummary {
        scenario: config.scenario,
        n: data.n(),
        m: data.m(),
        root_seed: config.root_seed,
        model_labels: labels,
        reference: evidence.reference,
        selected,
        model_posterior: evidence.model_posterior.clone(),
        v_t1: v_t1.clone(),
        v_t2: v_t2.clone(),
        truth: truth.cloned(),
        oracle_t1: true_id.map(|tid| oracle_rates(&table_t1, tid)),
        oracle_t2: true_id.map(|tid| oracle_rates(&table_t2, tid)),
        failures,
    };
    Ok(RunOutput {
        evidence,
        discrepancies,
        v_t1,
        v_t2,
        table_t1,
        table_t2,
        summary,
    })
}

/// Generate a dataset from the config seed and run the pipeline on it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Dataset, RunOutput)> {
    config.validate()?;
    let root = SeededStream::root(config.root_seed);
    let (data, truth) = generate_dataset(config, &root.derive("data")?)?;
    let output = run_pipeline(config, &data, Some(&truth))?;
    Ok((data, output))
}

/// Replicate-averaged conditional error rates with MC standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateRates {
    pub beta_grid: Vec<f64>,
    pub pbfdr_t1: Vec<f64>,
    pub pbfnr_t1: Vec<f64>,
    pub pbfdr_t2: Vec<f64>,
    pub pbfnr_t2: Vec<f64>,
    pub se_pbfdr_t1: Vec<f64>,
    pub se_pbfnr_t1: Vec<f64>,
    pub se_pbfdr_t2: Vec<f64>,
    pub se_pbfnr_t2: Vec<f64>,
    pub replicates: usize,
}

/// Average cFDR/cFNR over `s` freshly seeded replicates. With
/// `identical_data` every replicate reuses the config's own seed.
pub fn replicate_error_rates(
    config: &ExperimentConfig,
    s: usize,
    identical_data: bool,
) -> Result<ReplicateRates> {
    if s < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicates".into()));
    }
    let runs: Vec<RunOutput> = (0..s)
        .map(|rep| {
            let mut cfg = config.clone();
            if !identical_data {
                // Distinct dataset and chain seeds per replicate.
                cfg.root_seed = config
                    .root_seed
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add(rep as u64 + 1);
            }
            run_experiment(&cfg).map(|(_, out)| out)
        })
        .collect::<Result<_>>()?;

    let grid = config.beta_grid.clone();
    let nb = grid.len();
    let mut out = ReplicateRates {
        beta_grid: grid,
        pbfdr_t1: vec![0.0; nb],
        pbfnr_t1: vec![0.0; nb],
        pbfdr_t2: vec![0.0; nb],
        pbfnr_t2: vec![0.0; nb],
        se_pbfdr_t1: vec![0.0; nb],
        se_pbfnr_t1: vec![0.0; nb],
        se_pbfdr_t2: vec![0.0; nb],
        se_pbfnr_t2: vec![0.0; nb],
        replicates: s,
    };
    let mean_se = |vals: &[f64]| -> (f64, f64) {
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>()
            / (vals.len() - 1) as f64;
        (mu, (var / vals.len() as f64).sqrt())
    };
    for b in 0..nb {
        let grab = |f: &dyn Fn(&RunOutput) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
        let (m, se) = mean_se(&grab(&|r| r.table_t1.cfdr[b]));
        out.pbfdr_t1[b] = m;
        out.se_pbfdr_t1[b] = se;
        let (m, se) = mean_se(&grab(&|r| r.table_t1.cfnr[b]));
        out.pbfnr_t1[b] = m;
        out.se_pbfnr_t1[b] = se;
        let (m, se) = mean_se(&grab(&|r| r.table_t2.cfdr[b]));
        out.pbfdr_t2[b] = m;
        out.se_pbfdr_t2[b] = se;
        let (m, se) = mean_se(&grab(&|r| r.table_t2.cfnr[b]));
        out.pbfnr_t2[b] = m;
        out.se_pbfnr_t2[b] = se;
    }
    Ok(out)
}

/// Write the standard run directory: config.json, dataset.json,
/// evidence.json, discrepancy_<model>.json, decisions.csv, summary.json.
/// Discrepancy draws are elided from the per-model files.
pub fn write_run_dir(
    dir: &Path,
    config: &ExperimentConfig,
    data: &Dataset,
    output: &RunOutput,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let write_json = |name: &str, text: String| -> Result<()> {
        let mut f = fs::File::create(dir.join(name))?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    };
    write_json("config.json", serde_json::to_string_pretty(config)?)?;
    write_json("dataset.json", data.to_json()?)?;
    write_json(
        "evidence.json",
        serde_json::to_string_pretty(&output.evidence)?,
    )?;
    for (id, reports) in &output.discrepancies {
        let elided: BTreeMap<String, DiscrepancyReport> = reports
            .iter()
            .map(|(k, r)| {
                let mut r = r.clone();
                r.draws.clear();
                (k.clone(), r)
            })
            .collect();
        write_json(
            &format!("discrepancy_{id}.json"),
            serde_json::to_string_pretty(&elided)?,
        )?;
    }
    write_json("summary.json", serde_json::to_string_pretty(&output.summary)?)?;

    let mut wtr = csv::Writer::from_path(dir.join("decisions.csv"))?;
    wtr.write_record(["beta", "cfdr_t1", "cfnr_t1", "cfdr_t2", "cfnr_t2"])?;
    for (i, &beta) in output.table_t1.beta_grid.iter().enumerate() {
        wtr.write_record([
            format!("{beta:.2}"),
            format!("{:.17e}", output.table_t1.cfdr[i]),
            format!("{:.17e}", output.table_t1.cfnr[i]),
            format!("{:.17e}", output.table_t2.cfdr[i]),
            format!("{:.17e}", output.table_t2.cfnr[i]),
        ])?;
    }
    wtr.flush().map_err(|e| Error::Io(e.into()))?;
    Ok(())
}
