//! Discrepancy measures over held-out covariate posteriors, credible
//! intervals of their reference distributions, hypothesis probabilities,
//! thresholded decisions, and conditional error rates.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irmcmc::CvPosterior;
use crate::models::{Dataset, ModelSpec};
use crate::stats::empirical_quantile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscrepancyKind {
    T1,
    T2,
    T3,
}

impl DiscrepancyKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::T1 => "t1",
            Self::T2 => "t2",
            Self::T3 => "t3",
        }
    }
}

/// T1 = (1/n) Σ |v_i − E_i| / sqrt(Var_i + c).
pub fn discrepancy_t1<T: Float>(values: &[T], means: &[T], variances: &[T], c: T) -> Result<T> {
    check_t12_inputs(values, means, variances, c)?;
    let n = T::from(values.len()).unwrap();
    let mut acc = T::zero();
    for i in 0..values.len() {
        acc = acc + (values[i] - means[i]).abs() / (variances[i] + c).sqrt();
    }
    Ok(acc / n)
}

/// T2 = (1/n) Σ (v_i − E_i)² / (Var_i + c).
pub fn discrepancy_t2<T: Float>(values: &[T], means: &[T], variances: &[T], c: T) -> Result<T> {
    check_t12_inputs(values, means, variances, c)?;
    let n = T::from(values.len()).unwrap();
    let mut acc = T::zero();
    for i in 0..values.len() {
        let d = values[i] - means[i];
        acc = acc + d * d / (variances[i] + c);
    }
    Ok(acc / n)
}

fn check_t12_inputs<T: Float>(values: &[T], means: &[T], variances: &[T], c: T) -> Result<()> {
    if values.len() != means.len() || values.len() != variances.len() {
        return Err(Error::InvalidArgument("discrepancy length mismatch".into()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty discrepancy inputs".into()));
    }
    if !(c > T::zero()) {
        return Err(Error::InvalidParameter("c must be positive".into()));
    }
    if variances.iter().any(|v| *v < T::zero()) {
        return Err(Error::InvalidParameter("negative variance".into()));
    }
    Ok(())
}

/// T3 = (1/n) Σ (v_i − E_i)ᵀ (Var_i + cI)⁻¹ (v_i − E_i) over 2-vectors.
pub fn discrepancy_t3<T: Float>(
    value_pairs: &[(T, T)],
    mean_pairs: &[(T, T)],
    cov_matrices: &[[[T; 2]; 2]],
    c: T,
) -> Result<T> {
    if value_pairs.len() != mean_pairs.len() || value_pairs.len() != cov_matrices.len() {
        return Err(Error::InvalidArgument("discrepancy length mismatch".into()));
    }
    if value_pairs.is_empty() {
        return Err(Error::InvalidArgument("empty discrepancy inputs".into()));
    }
    if !(c > T::zero()) {
        return Err(Error::InvalidParameter("c must be positive".into()));
    }
    let tol = T::from(1e-9).unwrap();
    let n = T::from(value_pairs.len()).unwrap();
    let mut acc = T::zero();
    for i in 0..value_pairs.len() {
        let m = &cov_matrices[i];
        let asym = (m[0][1] - m[1][0]).abs();
        let scale = T::one() + m[0][1].abs() + m[1][0].abs();
        if m[0][0] < T::zero()
            || m[1][1] < T::zero()
            || asym > tol * scale
            || m[0][0] * m[1][1] - m[0][1] * m[1][0] < -tol * scale * scale
        {
            return Err(Error::InvalidParameter(format!(
                "covariance matrix {i} is not PSD"
            )));
        }
        let a = m[0][0] + c;
        let b = m[0][1];
        let d = m[1][1] + c;
        let det = a * d - b * b;
        let dx = value_pairs[i].0 - mean_pairs[i].0;
        let dz = value_pairs[i].1 - mean_pairs[i].1;
        // Inverse of [[a, b], [b, d]] applied to (dx, dz).
        acc = acc + (d * dx * dx - (b + b) * dx * dz + a * dz * dz) / det;
    }
    Ok(acc / n)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub model: usize,
    pub kind: DiscrepancyKind,
    pub c: f64,
    pub observed: f64,
    pub draws: Vec<f64>,
    pub interval: (f64, f64),
    pub alpha_level: f64,
    /// Null-event offset a_k (default 0).
    pub a: f64,
    /// Null-event slack epsilon (default 0).
    pub epsilon: f64,
    pub coverage: f64,
}

impl DiscrepancyReport {
    pub fn validate(&self) -> Result<()> {
        if self.interval.0 > self.interval.1 {
            return Err(Error::InvalidState("interval lower > upper".into()));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Error::InvalidState("coverage outside [0,1]".into()));
        }
        if self.kind != DiscrepancyKind::T1 && self.draws.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidState("negative T2/T3 draw".into()));
        }
        Ok(())
    }
}

/// Interval and coverage from draws of T(X̃) and the observed T(X): the
/// credible interval is equal-tailed over the draws and the H₀ event is
/// T(X̃) − T(X) ∈ [ℓ̃ − a − ε, ũ − a + ε].
fn interval_and_coverage(
    draws: &[f64],
    observed: f64,
    alpha_level: f64,
    a: f64,
    epsilon: f64,
) -> Result<((f64, f64), f64)> {
    let lo = empirical_quantile(draws, alpha_level / 2.0)?;
    let hi = empirical_quantile(draws, 1.0 - alpha_level / 2.0)?;
    let covered = draws
        .iter()
        .filter(|&&t| t - observed >= lo - a - epsilon && t - observed <= hi - a + epsilon)
        .count();
    Ok(((lo, hi), covered as f64 / draws.len() as f64))
}

/// Discrepancy reference distribution for one model: joint X̃ draws are
/// formed by index-pairing the retained samples across sites.
pub fn build_discrepancy_report(
    model: &ModelSpec,
    data: &Dataset,
    cv_posteriors: &[CvPosterior],
    kind: DiscrepancyKind,
    c: f64,
    alpha_level: f64,
    a: f64,
    epsilon: f64,
) -> Result<DiscrepancyReport> {
    if cv_posteriors.len() != data.n() {
        return Err(Error::InvalidState(format!(
            "expected {} site posteriors, got {}",
            data.n(),
            cv_posteriors.len()
        )));
    }
    if !(0.0..1.0).contains(&alpha_level) || alpha_level <= 0.0 {
        return Err(Error::InvalidParameter("alpha_level must be in (0,1)".into()));
    }
    let bivariate = model.covariates.is_bivariate();
    if bivariate != (kind == DiscrepancyKind::T3) {
        return Err(Error::InvalidArgument(
            "T3 applies exactly to two-covariate models".into(),
        ));
    }
    let len = cv_posteriors[0].first.len();
    if cv_posteriors.iter().any(|cv| cv.first.len() != len) {
        return Err(Error::InvalidState(
            "per-site sample counts differ; cannot index-pair".into(),
        ));
    }

    let n = data.n();
    let (draws, observed) = if bivariate {
        let means: Vec<(f64, f64)> = cv_posteriors
            .iter()
            .map(|cv| (cv.mean_first, cv.mean_second.unwrap()))
            .collect();
        let covs: Vec<[[f64; 2]; 2]> = cv_posteriors
            .iter()
            .map(|cv| {
                let off = cv.cov.unwrap();
                [[cv.var_first, off], [off, cv.var_second.unwrap()]]
            })
            .collect();
        let mut draws = Vec::with_capacity(len);
        let mut pair_buf = vec![(0.0, 0.0); n];
        for j in 0..len {
            for (i, cv) in cv_posteriors.iter().enumerate() {
                pair_buf[i] = (cv.first[j], cv.second.as_ref().unwrap()[j]);
            }
            draws.push(discrepancy_t3(&pair_buf, &means, &covs, c)?);
        }
        let obs_pairs: Vec<(f64, f64)> =
            (0..n).map(|i| (data.x()[i], data.z().unwrap()[i])).collect();
        let observed = discrepancy_t3(&obs_pairs, &means, &covs, c)?;
        (draws, observed)
    } else {
        let means: Vec<f64> = cv_posteriors.iter().map(|cv| cv.mean_first).collect();
        let vars: Vec<f64> = cv_posteriors.iter().map(|cv| cv.var_first).collect();
        let disc = |vals: &[f64]| -> Result<f64> {
            match kind {
                DiscrepancyKind::T1 => discrepancy_t1(vals, &means, &vars, c),
                DiscrepancyKind::T2 => discrepancy_t2(vals, &means, &vars, c),
                DiscrepancyKind::T3 => unreachable!(),
            }
        };
        let mut draws = Vec::with_capacity(len);
        let mut buf = vec![0.0; n];
        for j in 0..len {
            for (i, cv) in cv_posteriors.iter().enumerate() {
                buf[i] = cv.first[j];
            }
            draws.push(disc(&buf)?);
        }
        // The observed vector uses whichever covariate the model holds out.
        let observed_vals: Vec<f64> = if model.covariates.uses_x() {
            data.x().to_vec()
        } else {
            data.z()
                .ok_or_else(|| Error::InvalidState("model needs z but data has none".into()))?
                .to_vec()
        };
        let observed = disc(&observed_vals)?;
        (draws, observed)
    };

    if epsilon < 0.0 {
        return Err(Error::InvalidParameter("epsilon must be nonnegative".into()));
    }
    let (interval, coverage) = interval_and_coverage(&draws, observed, alpha_level, a, epsilon)?;
    let report = DiscrepancyReport {
        model: model.id,
        kind,
        c,
        observed,
        draws,
        interval,
        alpha_level,
        a,
        epsilon,
        coverage,
    };
    report.validate()?;
    Ok(report)
}

/// v = 1 − P(ζ=k) · coverage: the posterior probability that model k's null
/// fails.
pub fn compute_v(model_posterior_prob: f64, coverage: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&model_posterior_prob) || !(0.0..=1.0).contains(&coverage) {
        return Err(Error::InvalidArgument(
            "probabilities must lie in [0,1]".into(),
        ));
    }
    Ok(1.0 - model_posterior_prob * coverage)
}

/// d̂_k = 1 iff v_k > β, strictly.
pub fn decide(v: &BTreeMap<usize, f64>, beta: f64) -> Vec<u8> {
    v.values().map(|&vk| u8::from(vk > beta)).collect()
}

/// (cFDR, cFNR) of a decision vector, with the ∨1 empty-set convention.
pub fn conditional_error_rates(d: &[u8], v: &[f64]) -> Result<(f64, f64)> {
    if d.len() != v.len() {
        return Err(Error::InvalidArgument("decision length mismatch".into()));
    }
    let discoveries: f64 = d.iter().map(|&x| x as f64).sum();
    let non: f64 = d.len() as f64 - discoveries;
    let cfdr: f64 = d
        .iter()
        .zip(v)
        .map(|(&dk, &vk)| dk as f64 * (1.0 - vk))
        .sum::<f64>()
        / discoveries.max(1.0);
    let cfnr: f64 = d
        .iter()
        .zip(v)
        .map(|(&dk, &vk)| (1.0 - dk as f64) * vk)
        .sum::<f64>()
        / non.max(1.0);
    Ok((cfdr, cfnr))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionTable {
    pub beta_grid: Vec<f64>,
    pub v: BTreeMap<usize, f64>,
    pub decisions: Vec<Vec<u8>>,
    pub cfdr: Vec<f64>,
    pub cfnr: Vec<f64>,
    /// Grid indices at which the decision vector differs from the previous.
    pub change_points: Vec<usize>,
}

pub fn default_beta_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Decisions and conditional error rates over a grid of thresholds.
pub fn beta_sweep(v: &BTreeMap<usize, f64>, grid: &[f64]) -> Result<DecisionTable> {
    if grid.is_empty()
        || grid.windows(2).any(|w| w[0] >= w[1])
        || grid[0] <= 0.0
        || *grid.last().unwrap() >= 1.0
    {
        return Err(Error::InvalidArgument(
            "beta grid must be increasing within (0,1)".into(),
        ));
    }
    if v.values().any(|&vk| !(0.0..=1.0).contains(&vk)) {
        return Err(Error::InvalidArgument("v values must lie in [0,1]".into()));
    }
    let vvals: Vec<f64> = v.values().copied().collect();
    let mut decisions = Vec::with_capacity(grid.len());
    let mut cfdr = Vec::with_capacity(grid.len());
    let mut cfnr = Vec::with_capacity(grid.len());
    let mut change_points = Vec::new();
    for (gi, &beta) in grid.iter().enumerate() {
        let d = decide(v, beta);
        let (fdr, fnr) = conditional_error_rates(&d, &vvals)?;
        if gi > 0 && decisions[gi - 1] != d {
            change_points.push(gi);
        }
        decisions.push(d);
        cfdr.push(fdr);
        cfnr.push(fnr);
    }
    let table = DecisionTable {
        beta_grid: grid.to_vec(),
        v: v.clone(),
        decisions,
        cfdr,
        cfnr,
        change_points,
    };
    table.validate()?;
    Ok(table)
}

impl DecisionTable {
    pub fn validate(&self) -> Result<()> {
        for w in self.cfdr.windows(2) {
            if w[1] > w[0] + 1e-12 {
                return Err(Error::InvalidState("cfdr not non-increasing".into()));
            }
        }
        for w in self.cfnr.windows(2) {
            if w[1] < w[0] - 1e-12 {
                return Err(Error::InvalidState("cfnr not non-decreasing".into()));
            }
        }
        for (d, &beta) in self.decisions.iter().zip(&self.beta_grid) {
            let expect = decide(&self.v, beta);
            if *d != expect {
                return Err(Error::InvalidState("decision inconsistent with v".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn t1_t2_trivial_and_unit_cases() {
        let zeros = discrepancy_t1(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(zeros, 0.0);
        // Unit deviations, zero variances, c=1.
        let t1 = discrepancy_t1(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], 1.0).unwrap();
        let t2 = discrepancy_t2(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((t1 - 1.0).abs() < 1e-15);
        assert!((t2 - 1.0).abs() < 1e-15);
        // Larger c strictly shrinks both.
        let t1b = discrepancy_t1(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], 2.0).unwrap();
        let t2b = discrepancy_t2(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], 2.0).unwrap();
        assert!(t1b < t1 && t2b < t2);
        assert!(discrepancy_t1(&[1.0], &[1.0, 2.0], &[0.0, 0.0], 1.0).is_err());
        // Generic instantiation at f32.
        let t1f = discrepancy_t1(&[1.0f32], &[0.0], &[0.0], 1.0).unwrap();
        assert!((t1f - 1.0).abs() < 1e-6);
    }

    #[test]
    fn t3_identity_arithmetic_and_rotation_invariance() {
        let zero =
            discrepancy_t3(&[(1.0, 2.0)], &[(1.0, 2.0)], &[[[0.0, 0.0], [0.0, 0.0]]], 1.0)
                .unwrap();
        assert_eq!(zero, 0.0);
        let two =
            discrepancy_t3(&[(1.0, 1.0)], &[(0.0, 0.0)], &[[[0.0, 0.0], [0.0, 0.0]]], 1.0)
                .unwrap();
        assert!((two - 2.0).abs() < 1e-15);
        // Isotropic Var: rotating the deviation leaves the form unchanged.
        let iso = [[0.7, 0.0], [0.0, 0.7]];
        let d = (0.3f64, 0.4);
        let r = d.0.hypot(d.1);
        let rotated = (r * 0.6f64.cos(), r * 0.6f64.sin());
        let a = discrepancy_t3(&[d], &[(0.0, 0.0)], &[iso], 1.0).unwrap();
        let b = discrepancy_t3(&[rotated], &[(0.0, 0.0)], &[iso], 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
        // Non-PSD covariance rejected.
        assert!(discrepancy_t3(
            &[(1.0, 1.0)],
            &[(0.0, 0.0)],
            &[[[1.0, 2.0], [2.0, 1.0]]],
            1.0
        )
        .is_err());
    }

    #[test]
    fn synthetic_uniform_coverage_counting_oracle() {
        // Draws on a uniform grid over (0,1), observed 0.4, alpha 0.05.
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let ((lo, hi), coverage) = interval_and_coverage(&draws, 0.4, 0.05, 0.0, 0.0).unwrap();
        assert!((lo - 0.025).abs() < 1e-3 && (hi - 0.975).abs() < 1e-3);
        // Event: t - 0.4 in [lo, hi] → t >= 0.425, giving mass ~0.575.
        let direct = draws
            .iter()
            .filter(|&&t| t - 0.4 >= lo && t - 0.4 <= hi)
            .count() as f64
            / n as f64;
        assert_eq!(coverage, direct);
        assert!((coverage - 0.575).abs() < 2e-3);
    }

    #[test]
    fn coverage_trivia() {
        // observed = 0: the interval covers its own defining draws.
        let draws: Vec<f64> = (0..10_000).map(|k| (k as f64 + 0.5) / 10_000.0).collect();
        let (_, cov) = interval_and_coverage(&draws, 0.0, 0.05, 0.0, 0.0).unwrap();
        assert!((cov - 0.95).abs() < 1e-3);
        // Constant draws: degenerate interval, coverage 0 or 1.
        let konst = vec![2.5; 100];
        let ((lo, hi), c1) = interval_and_coverage(&konst, 0.0, 0.05, 0.0, 0.0).unwrap();
        assert_eq!((lo, hi), (2.5, 2.5));
        assert_eq!(c1, 1.0);
        let (_, c0) = interval_and_coverage(&konst, 0.4, 0.05, 0.0, 0.0).unwrap();
        assert_eq!(c0, 0.0);
        // Shifting observed alone relocates the acceptance window.
        let (_, cov_a) = interval_and_coverage(&draws, 0.2, 0.05, 0.0, 0.0).unwrap();
        let (_, cov_c) = interval_and_coverage(&draws, 0.5, 0.05, 0.0, 0.0).unwrap();
        assert!(cov_c < cov_a && cov_a < 0.95);
    }

    #[test]
    fn compute_v_cases() {
        assert_eq!(compute_v(0.0, 0.7).unwrap(), 1.0);
        assert_eq!(compute_v(1.0, 1.0).unwrap(), 0.0);
        assert!((compute_v(0.8, 0.5).unwrap() - 0.6).abs() < 1e-15);
        assert!(compute_v(1.2, 0.5).is_err());
    }

    #[test]
    fn decide_is_strict() {
        let v: BTreeMap<usize, f64> = [(0, 0.9), (1, 0.1)].into();
        assert_eq!(decide(&v, 0.5), vec![1, 0]);
        let tie: BTreeMap<usize, f64> = [(0, 0.5)].into();
        assert_eq!(decide(&tie, 0.5), vec![0]);
        let all: BTreeMap<usize, f64> = [(0, 0.3), (1, 0.7)].into();
        assert_eq!(decide(&all, 0.99), vec![0, 0]);
    }

    #[test]
    fn error_rate_examples() {
        let (fdr, fnr) = conditional_error_rates(&[0, 0], &[0.4, 0.6]).unwrap();
        assert_eq!(fdr, 0.0);
        assert!((fnr - 0.5).abs() < 1e-15);
        let (fdr, fnr) = conditional_error_rates(&[1, 1, 0], &[0.9, 0.9, 0.1]).unwrap();
        assert!((fdr - 0.1).abs() < 1e-15);
        assert!((fnr - 0.1).abs() < 1e-15);
        let (fdr, fnr) = conditional_error_rates(&[1, 1], &[0.4, 0.6]).unwrap();
        assert!((fdr - 0.5).abs() < 1e-15);
        assert_eq!(fnr, 0.0);
    }

    #[test]
    fn sweep_structure() {
        let grid = default_beta_grid();
        let v: BTreeMap<usize, f64> = [(0, 0.37), (1, 0.37)].into();
        let table = beta_sweep(&v, &grid).unwrap();
        assert!(table.change_points.len() <= 1);
        // β below min(v) → all ones.
        assert_eq!(table.decisions[0], vec![1, 1]);
        let distinct: BTreeMap<usize, f64> = [(0, 0.2), (1, 0.8), (2, 0.5)].into();
        let t2 = beta_sweep(&distinct, &grid).unwrap();
        t2.validate().unwrap();
        assert_eq!(t2.change_points.len(), 3);
    }

    proptest! {
        #[test]
        fn thresholding_maximizes_linear_objective(
            vs in proptest::collection::vec(0.0f64..1.0, 1..=4),
            beta in 0.01f64..0.99,
        ) {
            let v: BTreeMap<usize, f64> = vs.iter().copied().enumerate().collect();
            let d = decide(&v, beta);
            let obj = |d: &[u8]| -> f64 {
                d.iter().zip(&vs).map(|(&dk, &vk)| dk as f64 * (vk - beta)).sum()
            };
            let mine = obj(&d);
            let k = vs.len();
            let mut best = f64::NEG_INFINITY;
            for mask in 0..(1u32 << k) {
                let cand: Vec<u8> = (0..k).map(|j| ((mask >> j) & 1) as u8).collect();
                best = best.max(obj(&cand));
            }
            prop_assert!((mine - best).abs() < 1e-12);
        }

        #[test]
        fn sweep_error_rates_are_monotone(
            vs in proptest::collection::vec(0.0f64..1.0, 1..8),
        ) {
            let v: BTreeMap<usize, f64> = vs.iter().copied().enumerate().collect();
            let table = beta_sweep(&v, &default_beta_grid()).unwrap();
            prop_assert!(table.cfdr.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            prop_assert!(table.cfnr.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
    }

    #[test]
    fn cfdr_at_zero_beta_is_mean_complement() {
        let vs = [0.95, 0.9, 0.99, 0.05];
        let v: BTreeMap<usize, f64> = vs.iter().copied().enumerate().collect();
        let d = decide(&v, 1e-9);
        assert_eq!(d, vec![1, 1, 1, 1]);
        let (fdr, _) = conditional_error_rates(&d, &vs).unwrap();
        let want = vs.iter().map(|v| 1.0 - v).sum::<f64>() / 4.0;
        assert!((fdr - want).abs() < 1e-15);
    }
}
