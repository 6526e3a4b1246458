//! Greedy least-squares learning: act optimally for the current estimate,
//! collect a doubling batch of episodes on the true system, re-estimate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{lq_feedback, performance_gap_report, solve_riccati};
use crate::error::{Error, Result};
use crate::estimate::{estimation_error, lse_with, RidgeScaling};
use crate::model::{ModelTheta, ProblemInstance};
use crate::par::{self, Execution};
use crate::rng::derive_seed;
use crate::sde::{batch_outcomes, grid_steps, EpisodeSums, SuffStats};

/// How the per-episode regret increment is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretMode {
    /// Exact expected-cost gap of the executed greedy policy.
    #[default]
    Expected,
    /// Realised pathwise cost minus the optimal expected cost; noisy and not
    /// monotone, for qualitative comparison only.
    Realized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlsConfig {
    /// True system, which generates the data.
    pub instance: ProblemInstance,
    pub theta0: ModelTheta,
    pub m0: usize,
    pub num_updates: usize,
    pub delta: f64,
    pub seed: u64,
    pub dt: f64,
    /// Re-estimate from all episodes so far instead of the latest batch.
    #[serde(default)]
    pub pooled: bool,
    #[serde(default)]
    pub ridge: RidgeScaling,
    #[serde(default)]
    pub regret: RegretMode,
}

impl GlsConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = self.instance.validate();
        v.extend(self.theta0.violations());
        if self.theta0.a.shape() != self.instance.theta.a.shape()
            || self.theta0.b.shape() != self.instance.theta.b.shape()
        {
            v.push("initial guess must have the shape of the true parameter".into());
        }
        if self.m0 == 0 {
            v.push("m0 must be at least 1".into());
        }
        if self.num_updates == 0 {
            v.push("at least one update is required".into());
        }
        if self.batch_size(self.num_updates.saturating_sub(1)).is_none() {
            v.push("batch sizes overflow".into());
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            v.push("delta must lie in (0, 1/4)".into());
        }
        if !v.is_empty() {
            return Err(Error::InvalidInstance(v));
        }
        self.instance.cost.as_lq()?;
        grid_steps(self.instance.horizon, self.dt)?;
        Ok(())
    }

    /// `m_ℓ = 2^ℓ m0`.
    pub fn batch_size(&self, update: usize) -> Option<usize> {
        u32::try_from(update)
            .ok()
            .and_then(|l| 1usize.checked_shl(l))
            .filter(|&p| p != 0 && update < usize::BITS as usize)
            .and_then(|p| p.checked_mul(self.m0))
    }

    /// `m0 (2^L − 1)`.
    pub fn total_episodes(&self) -> usize {
        (0..self.num_updates).filter_map(|l| self.batch_size(l)).sum()
    }

    /// Prescribed initial batch `C (−ln δ)^β` with the unspecified constant
    /// taken as `C = 1`; `β = 3 + ϑ` with jumps and `β = 1` without.
    pub fn theoretical_m0(&self) -> f64 {
        let noise = &self.instance.noise;
        let beta = if noise.has_jumps() {
            3.0 + noise.tail_order
        } else {
            1.0
        };
        (-self.delta.ln()).powf(beta)
    }
}

/// Batch `ℓ`: the greedy policy of `θ_ℓ` is executed `m_ℓ` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub batch: usize,
    pub theta: ModelTheta,
    pub rel_a: f64,
    pub rel_b: f64,
    pub rel_theta: f64,
    /// Per-episode expected-cost gap of `ψ^{θ_ℓ}`.
    pub gap: f64,
    pub relative_gap: f64,
    /// Smallest eigenvalue of the `U` collected in this batch.
    pub lambda_min: f64,
    pub condition_number: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub update: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlsReport {
    pub seed: u64,
    pub records: Vec<UpdateRecord>,
    /// Estimate produced by the last batch.
    pub final_theta: ModelTheta,
    pub optimal_cost: f64,
    /// `R(N)` for `N = 0..=total_episodes`.
    pub regret: Vec<f64>,
    pub total_episodes: usize,
    pub delta: f64,
    /// Theoretical initial batch with `C = 1`; recorded, not used.
    pub theoretical_m0: f64,
    pub aborted: Option<Abort>,
}

impl GlsReport {
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        crate::io::write_jsonl(w, &self.records)
    }
}

pub fn run_gls(config: &GlsConfig) -> Result<GlsReport> {
    run_gls_with(config, Execution::default())
}

pub fn run_gls_with(config: &GlsConfig, exec: Execution) -> Result<GlsReport> {
    config.validate()?;
    let truth = &config.instance;
    let lq = truth.cost.as_lq()?;
    let optimal_cost = performance_gap_report(truth, &truth.theta, config.dt)?.optimal_cost;

    let mut report = GlsReport {
        seed: config.seed,
        records: Vec::with_capacity(config.num_updates),
        final_theta: config.theta0.clone(),
        optimal_cost,
        regret: vec![0.0],
        total_episodes: 0,
        delta: config.delta,
        theoretical_m0: config.theoretical_m0(),
        aborted: None,
    };
    let mut theta = config.theta0.clone();
    let mut pooled: Option<SuffStats> = None;

    for update in 0..config.num_updates {
        let batch = config.batch_size(update).expect("validated batch size");
        let step = (|| -> Result<(UpdateRecord, Vec<f64>, SuffStats)> {
            let ric = solve_riccati(&theta, lq, truth.horizon, config.dt)?;
            let policy = lq_feedback(&theta, &ric, lq)?;
            let gap = performance_gap_report(truth, &theta, config.dt)?;
            let with_cost = config.regret == RegretMode::Realized;
            let outcomes = batch_outcomes(
                truth,
                &policy,
                config.dt,
                batch,
                derive_seed(config.seed, update as u64),
                with_cost,
                exec,
            )?;
            let increments = if with_cost {
                outcomes.iter().map(|o| o.cost - optimal_cost).collect()
            } else {
                vec![gap.gap; batch]
            };
            let sums: Vec<EpisodeSums> = outcomes.into_iter().map(|o| o.sums).collect();
            let stats = SuffStats::from_episode_sums(&sums)?;
            let errors = estimation_error(&theta, &truth.theta)?;
            let record = UpdateRecord {
                update,
                batch,
                theta: theta.clone(),
                rel_a: errors.rel_a,
                rel_b: errors.rel_b,
                rel_theta: errors.rel_theta,
                gap: gap.gap,
                relative_gap: gap.relative(),
                lambda_min: 0.0,
                condition_number: 0.0,
            };
            Ok((record, increments, stats))
        })();
        let (mut record, increments, stats) = match step {
            Ok(v) => v,
            Err(e) if e.is_validation() => return Err(e),
            Err(e) => {
                report.aborted = Some(Abort {
                    update,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let stats = match pooled.take() {
            Some(prev) if config.pooled => prev.pooled(&stats),
            _ => stats,
        };
        let estimate = match lse_with(&stats, config.ridge) {
            Ok(e) => e,
            Err(e) => {
                report.aborted = Some(Abort {
                    update,
                    reason: e.to_string(),
                });
                break;
            }
        };
        if config.pooled {
            pooled = Some(stats);
        }
        record.lambda_min = estimate.lambda_min;
        record.condition_number = estimate.condition_number;
        let mut total = *report.regret.last().expect("R(0) is present");
        for inc in increments {
            total += inc;
            report.regret.push(total);
        }
        report.total_episodes += batch;
        report.records.push(record);
        theta = estimate.theta;
        report.final_theta = theta.clone();
    }
    Ok(report)
}

/// Pointwise ensemble statistics of `R(N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RegretSummary {
    /// CSV with columns `N, R_mean, R_lo, R_hi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.mean.len())
            .map(|n| vec![n as f64, self.mean[n], self.lo[n], self.hi[n]])
            .collect();
        crate::io::write_table(w, &["N", "R_mean", "R_lo", "R_hi"], &rows)
    }
}

/// Mean and 95% normal band `mean ± 1.96 sd/√r` across columns of equal length.
pub(crate) fn mean_band(series: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = series.len();
    let len = series.first().map_or(0, |s| s.len());
    let mut mean = vec![0.0; len];
    let mut lo = vec![0.0; len];
    let mut hi = vec![0.0; len];
    for i in 0..len {
        let m = series.iter().map(|s| s[i]).sum::<f64>() / r as f64;
        let half = if r > 1 {
            let var = series.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / (r - 1) as f64;
            1.96 * (var / r as f64).sqrt()
        } else {
            0.0
        };
        mean[i] = m;
        lo[i] = m - half;
        hi[i] = m + half;
    }
    (mean, lo, hi)
}

/// Ensemble means of the per-update diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub update: usize,
    pub batch: usize,
    pub rel_a: f64,
    pub rel_b: f64,
    pub rel_theta: f64,
    pub relative_gap: f64,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub reports: Vec<GlsReport>,
    /// Number of runs excluded from the summaries because they aborted.
    pub aborted: usize,
    pub regret: RegretSummary,
    pub updates: Vec<UpdateSummary>,
}

impl Ensemble {
    pub fn completed(&self) -> impl Iterator<Item = &GlsReport> {
        self.reports.iter().filter(|r| r.aborted.is_none())
    }
}

/// Seed of run `r` in an ensemble seeded with `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, run as u64)
}

pub fn run_ensemble(config: &GlsConfig, runs: usize) -> Result<Ensemble> {
    run_ensemble_with(config, runs, Execution::default())
}

pub fn run_ensemble_with(config: &GlsConfig, runs: usize, exec: Execution) -> Result<Ensemble> {
    if runs == 0 {
        return Err(Error::InvalidArgument("an ensemble needs at least one run".into()));
    }
    config.validate()?;
    let reports = par::try_map_indexed(exec, runs, |r| {
        let mut c = config.clone();
        c.seed = run_seed(config.seed, r);
        run_gls_with(&c, exec)
    })?;
    let done: Vec<&GlsReport> = reports.iter().filter(|r| r.aborted.is_none()).collect();
    let aborted = reports.len() - done.len();
    let curves: Vec<&[f64]> = done.iter().map(|r| r.regret.as_slice()).collect();
    let (mean, lo, hi) = mean_band(&curves);
    let updates = (0..config.num_updates)
        .map(|l| {
            let avg = |f: &dyn Fn(&UpdateRecord) -> f64| {
                done.iter().map(|r| f(&r.records[l])).sum::<f64>() / done.len() as f64
            };
            UpdateSummary {
                update: l,
                batch: config.batch_size(l).expect("validated"),
                rel_a: avg(&|u| u.rel_a),
                rel_b: avg(&|u| u.rel_b),
                rel_theta: avg(&|u| u.rel_theta),
                relative_gap: avg(&|u| u.relative_gap),
                lambda_min: avg(&|u| u.lambda_min),
            }
        })
        .filter(|_| !done.is_empty())
        .collect();
    Ok(Ensemble {
        reports,
        aborted,
        regret: RegretSummary { mean, lo, hi },
        updates,
    })
}

/// Minimum number of positive regret samples for a slope fit.
const MIN_SLOPE_SAMPLES: usize = 8;

/// Least-squares slope of `ln R(N)` against `ln N` over the upper half of
/// the episode range on the logarithmic axis, `N ≥ √N_max`, which drops the
/// initial transient. `regret[N]` is `R(N)`. Returns `None` when the regret
/// is identically zero.
pub fn regret_slope(regret: &[f64]) -> Result<Option<f64>> {
    if regret.iter().skip(1).all(|&r| r == 0.0) {
        return Ok(None);
    }
    let n_max = regret.len().saturating_sub(1);
    let start = ((n_max as f64).sqrt().ceil() as usize).max(1);
    let points: Vec<(f64, f64)> = (start..=n_max)
        .filter(|&n| regret[n] > 0.0 && regret[n].is_finite())
        .map(|n| ((n as f64).ln(), regret[n].ln()))
        .collect();
    if points.len() < MIN_SLOPE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SLOPE_SAMPLES} positive regret samples, got {}",
            points.len()
        )));
    }
    Ok(Some(least_squares_slope(&points)))
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
