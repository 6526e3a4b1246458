//! Sub-Weibull diagnostics, concentration experiments for the episode
//! statistics, and Monte-Carlo cost evaluation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::learn::least_squares_slope;
use crate::model::{Policy, ProblemInstance};
use crate::par::{self, Execution};
use crate::rng::derive_seed;
use crate::sde::batch_outcomes;

/// Minimum sample size for an Orlicz-norm estimate.
pub const MIN_ORLICZ_SAMPLES: usize = 100;
/// Minimum sample size for a moment-growth fit.
pub const MIN_MOMENT_SAMPLES: usize = 10_000;
/// Default largest moment order in growth fits.
pub const DEFAULT_Q_MAX: usize = 10;
/// Minimum Monte-Carlo trials per batch size in a concentration curve.
pub const MIN_TRIALS: usize = 200;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_finite(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!("sample {i} is not finite"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrliczEstimate {
    pub alpha: f64,
    /// Empirical `‖X‖_{Ψ_α}`.
    pub norm: f64,
    pub samples: usize,
    /// False when the defining equation could not be bracketed.
    pub resolved: bool,
    /// Fitted moment-growth index, when the sample is large enough.
    pub moment_index: Option<f64>,
}

/// `inf{t > 0 : mean(exp((|X|/t)^α)) ≤ 2}` by bisection, to relative
/// tolerance well below 1e-6. Sums are taken in log space, so large ratios
/// cannot overflow.
pub fn orlicz_norm(samples: &[f64], alpha: f64) -> Result<OrliczEstimate> {
    if samples.len() < MIN_ORLICZ_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_ORLICZ_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    check_finite(samples)?;
    let moment_index = if samples.len() >= MIN_MOMENT_SAMPLES {
        Some(moment_growth_index(samples, DEFAULT_Q_MAX)?.index)
    } else {
        None
    };
    let abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let mut estimate = OrliczEstimate {
        alpha,
        norm: 0.0,
        samples: samples.len(),
        resolved: true,
        moment_index,
    };
    if max == 0.0 {
        return Ok(estimate);
    }
    let ln_n = (abs.len() as f64).ln();
    let ln2 = std::f64::consts::LN_2;
    // ln mean exp((|x|/t)^α) − ln 2, decreasing in t
    let excess = |t: f64| log_sum_exp(abs.iter().map(|x| (x / t).powf(alpha))) - ln_n - ln2;
    // every term is at most 2 here, so the mean is too
    let mut hi = max / ln2.powf(1.0 / alpha);
    let mut lo = hi;
    let mut bracketed = false;
    for _ in 0..2000 {
        lo *= 0.5;
        if excess(lo) > 0.0 {
            bracketed = true;
            break;
        }
    }
    if !bracketed {
        estimate.resolved = false;
        estimate.norm = hi;
        return Ok(estimate);
    }
    while hi / lo - 1.0 > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    estimate.norm = hi;
    Ok(estimate)
}

/// Moment-growth fit of `q ↦ ‖X‖_{L^q}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentGrowth {
    /// Estimated `1/α`: the exponent `a` of the reference law `s · G^a`,
    /// `G ~ Gamma(a, 1)`, whose moment curve best matches the sample
    /// (`a = 1/2` for |Gaussian|, `a = 1` for the exponential law).
    pub index: f64,
    /// Plain least-squares slope of `ln ‖X‖_q` against `ln q`.
    pub raw_slope: f64,
    /// `(q, ‖X‖_q)` for `q = 2..=q_max`.
    pub norms: Vec<(f64, f64)>,
}

impl MomentGrowth {
    /// CSV with columns `q, norm, fitted`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let qs: Vec<f64> = self.norms.iter().map(|p| p.0).collect();
        let ln_norms: Vec<f64> = self.norms.iter().map(|p| p.1.ln()).collect();
        let (_, ln_s) = reference_misfit(self.index, &qs, &ln_norms);
        let rows: Vec<Vec<f64>> = self
            .norms
            .iter()
            .map(|&(q, v)| vec![q, v, (ln_s + reference_log_norm(self.index, q)).exp()])
            .collect();
        crate::io::write_table(w, &["q", "norm", "fitted"], &rows)
    }
}

/// `ln ‖G^a‖_q` for `G ~ Gamma(a, 1)`, with its `a → 0` limit.
fn reference_log_norm(a: f64, q: f64) -> f64 {
    if a < 1e-8 {
        -(1.0 + q).ln() / q
    } else {
        (ln_gamma((1.0 + q) * a) - ln_gamma(a)) / q
    }
}

/// Squared misfit of the reference curve with the optimal log-scale.
fn reference_misfit(a: f64, qs: &[f64], ln_norms: &[f64]) -> (f64, f64) {
    let h: Vec<f64> = qs.iter().map(|&q| reference_log_norm(a, q)).collect();
    let ln_s = ln_norms.iter().zip(&h).map(|(y, h)| y - h).sum::<f64>() / qs.len() as f64;
    let sse = ln_norms
        .iter()
        .zip(&h)
        .map(|(y, h)| (y - ln_s - h).powi(2))
        .sum();
    (sse, ln_s)
}

const INDEX_MAX: f64 = 4.0;

pub fn moment_growth_index(samples: &[f64], q_max: usize) -> Result<MomentGrowth> {
    if q_max < 6 {
        return Err(Error::InvalidArgument(format!("q_max must be at least 6, got {q_max}")));
    }
    if samples.len() < MIN_MOMENT_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_MOMENT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_finite(samples)?;
    let ln_abs: Vec<f64> = samples.iter().map(|x| x.abs().ln()).collect();
    if ln_abs.iter().all(|&v| v == f64::NEG_INFINITY) {
        return Ok(MomentGrowth {
            index: 0.0,
            raw_slope: 0.0,
            norms: (2..=q_max).map(|q| (q as f64, 0.0)).collect(),
        });
    }
    let ln_n = (samples.len() as f64).ln();
    let qs: Vec<f64> = (2..=q_max).map(|q| q as f64).collect();
    let ln_norms: Vec<f64> = qs
        .iter()
        .map(|&q| (log_sum_exp(ln_abs.iter().map(|l| q * l)) - ln_n) / q)
        .collect();
    if ln_norms.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("moments are not finite".into()));
    }
    let raw_slope = least_squares_slope(
        &qs.iter().zip(&ln_norms).map(|(q, y)| (q.ln(), *y)).collect::<Vec<_>>(),
    );

    let misfit = |a: f64| reference_misfit(a, &qs, &ln_norms).0;
    let grid = 400;
    let step = INDEX_MAX / grid as f64;
    let best = (0..=grid)
        .map(|i| i as f64 * step)
        .min_by(|x, y| misfit(*x).total_cmp(&misfit(*y)))
        .expect("non-empty grid");
    // golden-section refinement inside the neighbouring cells
    let (mut lo, mut hi) = ((best - step).max(0.0), (best + step).min(INDEX_MAX));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-9 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        if misfit(c) <= misfit(d) {
            hi = d;
        } else {
            lo = c;
        }
    }
    let refined = 0.5 * (lo + hi);
    let index = if misfit(refined) <= misfit(best) { refined } else { best };
    Ok(MomentGrowth {
        index,
        raw_slope,
        norms: qs.iter().zip(&ln_norms).map(|(q, y)| (*q, y.exp())).collect(),
    })
}

/// `(ln C_q, ln C̃_q)` with `C_q = (√(e/2) q)^q` and `C̃_q = 21 e^q q^{2q}`.
pub fn burkholder_bound(q: f64) -> Result<(f64, f64)> {
    if !(q >= 2.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("q must be at least 2, got {q}")));
    }
    let ln_c = q * (0.5 - 0.5 * std::f64::consts::LN_2 + q.ln());
    let ln_c_tilde = 21f64.ln() + q + 2.0 * q * q.ln();
    Ok((ln_c, ln_c_tilde))
}

/// Mean pathwise cost and its standard error over `episodes` runs.
pub fn mc_cost(instance: &ProblemInstance, policy: &Policy, dt: f64, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    mc_cost_with(instance, policy, dt, episodes, seed, Execution::default())
}

pub fn mc_cost_with(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    episodes: usize,
    seed: u64,
    exec: Execution,
) -> Result<(f64, f64)> {
    if episodes < 2 {
        return Err(Error::InvalidArgument("Monte-Carlo cost needs at least 2 episodes".into()));
    }
    let outcomes = batch_outcomes(instance, policy, dt, episodes, seed, true, exec)?;
    if let Some(i) = outcomes.iter().position(|o| !o.cost.is_finite()) {
        return Err(Error::InfiniteCost { episode: i });
    }
    let costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    Ok(mean_se(&costs))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Entry of the averaged statistics tracked by a concentration curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "matrix", rename_all = "snake_case")]
pub enum Statistic {
    U { row: usize, col: usize },
    V { row: usize, col: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    pub m: usize,
    /// Empirical `P(|S_m − S̄| ≥ ε)`.
    pub probability: f64,
    /// Binomial standard error of `probability`.
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCurve {
    pub statistic: Statistic,
    pub epsilon: f64,
    /// Pilot estimate of the expected statistic.
    pub reference: f64,
    pub points: Vec<ConcentrationPoint>,
    /// Slope of `−ln p` against `m` over the points with `p > 0`; the
    /// exponential rate in `p ≈ C e^{−c m}` with the constant `C` fitted freely.
    pub decay_rate: Option<f64>,
}

impl ConcentrationCurve {
    /// CSV with columns `m, probability, se`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .points
            .iter()
            .map(|p| vec![p.m as f64, p.probability, p.se])
            .collect();
        crate::io::write_table(w, &["m", "probability", "se"], &rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub statistic: Statistic,
    pub epsilon: f64,
    pub m_list: Vec<usize>,
    pub trials: usize,
}

/// Per-episode values of the selected entry of `∫ZZᵀdt` or `∫Z dXᵀ`.
fn episode_values(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    statistic: Statistic,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let outcomes = batch_outcomes(instance, policy, dt, count, seed, false, exec)?;
    Ok(outcomes
        .iter()
        .map(|o| match statistic {
            Statistic::U { row, col } => o.sums.u[(row, col)],
            Statistic::V { row, col } => o.sums.v[(row, col)],
        })
        .collect())
}

/// Exceedance frequencies of the `m`-episode average of a statistic around
/// its pilot mean. The pilot uses ten times the largest batch.
pub fn concentration_curve(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    params: &ConcentrationParams,
    seed: u64,
    exec: Execution,
) -> Result<ConcentrationCurve> {
    let n = instance.state_dim();
    let d = n + instance.control_dim();
    let in_range = match params.statistic {
        Statistic::U { row, col } => row < d && col < d,
        Statistic::V { row, col } => row < d && col < n,
    };
    if !in_range {
        return Err(Error::InvalidArgument("statistic index out of range".into()));
    }
    if params.trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_TRIALS} trials per batch size, got {}",
            params.trials
        )));
    }
    if params.m_list.is_empty() || params.m_list.contains(&0) {
        return Err(Error::InvalidArgument("batch sizes must be positive".into()));
    }
    if params.epsilon.is_nan() || params.epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let m_max = *params.m_list.iter().max().expect("non-empty");
    let pilot = episode_values(
        instance,
        policy,
        dt,
        params.statistic,
        10 * m_max,
        derive_seed(seed, u64::MAX),
        exec,
    )?;
    let reference = pilot.iter().sum::<f64>() / pilot.len() as f64;

    let mut points = Vec::with_capacity(params.m_list.len());
    for (i, &m) in params.m_list.iter().enumerate() {
        let values = episode_values(
            instance,
            policy,
            dt,
            params.statistic,
            m * params.trials,
            derive_seed(seed, i as u64),
            exec,
        )?;
        let hits = values
            .chunks(m)
            .filter(|c| (c.iter().sum::<f64>() / m as f64 - reference).abs() >= params.epsilon)
            .count();
        let p = hits as f64 / params.trials as f64;
        points.push(ConcentrationPoint {
            m,
            probability: p,
            se: (p * (1.0 - p) / params.trials as f64).sqrt(),
        });
    }
    let fit: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.probability > 0.0)
        .map(|p| (p.m as f64, -p.probability.ln()))
        .collect();
    let decay_rate = (fit.len() >= 2).then(|| least_squares_slope(&fit));
    Ok(ConcentrationCurve {
        statistic: params.statistic,
        epsilon: params.epsilon,
        reference,
        points,
        decay_rate,
    })
}

/// Evaluates `f` on `count` independent seeds derived from `seed`.
pub fn sample_functional<F>(count: usize, seed: u64, exec: Execution, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    par::try_map_indexed(exec, count, |i| f(derive_seed(seed, i as u64)))
}
