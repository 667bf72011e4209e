//! Additive transformation-based MCMC: every coordinate moves by
//! sign * scale * eps with a single shared positive eps per step, so the
//! proposal has unit Jacobian and the chain behaves like a one-dimensional
//! random walk in acceptance terms.

use crate::error::{Error, Result};
use crate::random::SeededStream;

/// One additive move. Returns the new log target value and whether the
/// proposal was accepted; `state` is updated in place on acceptance.
pub fn tmcmc_step<F>(
    stream: &mut SeededStream,
    state: &mut [f64],
    log_target: &mut F,
    scales: &[f64],
    current_lt: f64,
) -> Result<(f64, bool)>
where
    F: FnMut(&[f64]) -> f64,
{
    if current_lt == f64::NEG_INFINITY {
        return Err(Error::InvalidState(
            "tmcmc step started from a zero-density state".into(),
        ));
    }
    let eps = stream.std_normal().abs();
    let mut proposal = state.to_vec();
    for (p, &sc) in proposal.iter_mut().zip(scales) {
        let sign = if stream.uniform() < 0.5 { -1.0 } else { 1.0 };
        *p += sign * sc * eps;
    }
    let lt = log_target(&proposal);
    let log_ratio = lt - current_lt;
    let accept = log_ratio >= 0.0 || stream.uniform().ln() < log_ratio;
    if accept {
        state.copy_from_slice(&proposal);
        Ok((lt, true))
    } else {
        Ok((current_lt, false))
    }
}

/// Retained draws and diagnostics from a chain run.
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub scales: Vec<f64>,
    pub final_state: Vec<f64>,
    pub final_log_target: f64,
}

const ADAPT_WINDOW: usize = 200;
const ACCEPT_LOW: f64 = 0.15;
const ACCEPT_HIGH: f64 = 0.5;

/// Run a chain for `n_steps`, discarding the first `burn` and retaining the
/// rest. During burn-in the scale vector is multiplied up or down to pull
/// the acceptance rate into [0.15, 0.5]; scales are frozen afterward.
pub fn run_chain<F>(
    stream: &mut SeededStream,
    init: Vec<f64>,
    log_target: &mut F,
    initial_scales: Vec<f64>,
    n_steps: usize,
    burn: usize,
) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut state = init;
    let mut lt = log_target(&state);
    if lt == f64::NEG_INFINITY {
        return Err(Error::InvalidState(
            "chain initialized at a zero-density state".into(),
        ));
    }
    let mut scales = initial_scales;
    let mut draws = Vec::with_capacity(n_steps.saturating_sub(burn));
    let mut accepted_total = 0usize;
    let mut accepted_window = 0usize;
    for step in 0..n_steps {
        let (new_lt, acc) = tmcmc_step(stream, &mut state, log_target, &scales, lt)?;
        lt = new_lt;
        if acc {
            accepted_total += 1;
            accepted_window += 1;
        }
        if step < burn && (step + 1) % ADAPT_WINDOW == 0 {
            let rate = accepted_window as f64 / ADAPT_WINDOW as f64;
            if rate > ACCEPT_HIGH {
                for s in &mut scales {
                    *s *= 1.4;
                }
            } else if rate < ACCEPT_LOW {
                for s in &mut scales {
                    *s *= 0.7;
                }
            }
            accepted_window = 0;
        }
        if step >= burn {
            draws.push(state.clone());
        }
    }
    Ok(Chain {
        draws,
        acceptance_rate: accepted_total as f64 / n_steps as f64,
        scales,
        final_state: state,
        final_log_target: lt,
    })
}
