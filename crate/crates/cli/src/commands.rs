use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lcrl::config::ExperimentConfig;
use lcrl::control::{evaluate_lq_cost, optimal_policy, performance_gap_report, solve_riccati};
use lcrl::decouple::{field_to_policy, solve_field, FieldParams};
use lcrl::estimate::{estimation_error, LedgerEntry};
use lcrl::learn::{regret_slope, run_ensemble};
use lcrl::sde::simulate_batch;
use lcrl::stats::{concentration_curve, mc_cost};
use lcrl::{io, par, CostSpec, Error, Execution, Policy, ProblemInstance};
use serde_json::json;

use crate::Common;

/// Episodes used when a non-quadratic cost has to be estimated by Monte Carlo
/// and the config asks for fewer.
const MIN_MC_EPISODES: usize = 1000;

struct Setup {
    config: ExperimentConfig,
    instance: ProblemInstance,
    dt: f64,
    out: PathBuf,
}

fn setup(common: &Common) -> Result<Setup> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()).into());
        }
        par::set_threads(t);
    }
    let config = ExperimentConfig::load(&common.config)?;
    let instance = config.instance().validated()?;
    let dt = config.dt()?;
    let out = common
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Setup {
        config,
        instance,
        dt,
        out,
    })
}

fn seed(common: &Common, config: &ExperimentConfig) -> Result<u64> {
    common
        .seed
        .or(config.sim.seed)
        .ok_or_else(|| Error::Config("a seed is required (--seed or sim.seed)".into()).into())
}

fn load_policy(path: &Path) -> Result<Policy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn policy_or_optimal(ctx: &Setup, path: Option<&Path>) -> Result<Policy> {
    match path {
        Some(p) => Ok(load_policy(p)?),
        None => match &ctx.instance.cost {
            CostSpec::Lq(_) => Ok(optimal_policy(&ctx.instance, ctx.dt)?),
            _ => Err(Error::Config(
                "a --policy file is required for non-quadratic costs".into(),
            )
            .into()),
        },
    }
}

pub fn riccati(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let lq = ctx.instance.cost.as_lq()?;
    let theta = &ctx.instance.theta;
    let sol = solve_riccati(theta, lq, ctx.instance.horizon, ctx.dt)?;
    let half = solve_riccati(theta, lq, ctx.instance.horizon, 0.5 * ctx.dt)?;
    sol.write_csv(io::create(&ctx.out, "riccati.csv")?)?;
    let policy = lcrl::control::lq_feedback(theta, &sol, lq)?;
    fs::write(ctx.out.join("policy.json"), serde_json::to_string_pretty(&policy)?)?;
    println!("P(0) Frobenius norm: {:.12}", sol.initial().norm());
    println!(
        "P(0) change under dt/2: {:.3e}",
        (sol.initial() - half.initial()).norm()
    );
    println!(
        "optimal cost from x0: {:.12}",
        half.value(&ctx.instance.x0, &ctx.instance.noise.covariance_rate())
    );
    println!("wrote {}", ctx.out.join("riccati.csv").display());
    Ok(())
}

pub fn simulate(common: &Common, policy: Option<&Path>) -> Result<()> {
    let ctx = setup(common)?;
    let seed = seed(common, &ctx.config)?;
    let policy = policy_or_optimal(&ctx, policy)?;
    let m = ctx.config.sim.episodes.max(1);
    let (trajectories, stats) = simulate_batch(&ctx.instance, &policy, ctx.dt, m, seed)?;
    let width = (m - 1).to_string().len().max(3);
    for (i, t) in trajectories.iter().enumerate() {
        t.write_csv(io::create(&ctx.out, &format!("trajectory_{i:0width$}.csv"))?)?;
    }
    let rows = |mat: &lcrl::Matrix| -> Vec<Vec<f64>> {
        mat.row_iter().map(|r| r.iter().copied().collect()).collect()
    };
    let summary = json!({ "m": stats.m, "u": rows(&stats.u), "v": rows(&stats.v) });
    fs::write(ctx.out.join("stats.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("simulated {m} episodes into {}", ctx.out.display());
    Ok(())
}

pub fn gls(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let seed = seed(common, &ctx.config)?;
    let config = ctx.config.gls_config(seed)?;
    let runs = common.runs.unwrap_or(ctx.config.gls_section()?.runs);
    let ensemble = run_ensemble(&config, runs)?;

    let mut report_lines = Vec::new();
    let mut ledger = Vec::new();
    for (r, report) in ensemble.reports.iter().enumerate() {
        for rec in &report.records {
            let mut line = serde_json::to_value(rec)?;
            line["run"] = json!(r);
            line["seed"] = json!(report.seed);
            report_lines.push(line);
        }
        if let Some(abort) = &report.aborted {
            report_lines.push(json!({ "run": r, "seed": report.seed, "aborted": abort }));
        }
        for (l, rec) in report.records.iter().enumerate() {
            // the estimate produced by batch l is θ_{l+1}
            let theta = report
                .records
                .get(l + 1)
                .map_or(&report.final_theta, |next| &next.theta);
            let errors = estimation_error(theta, &config.instance.theta)?;
            let est = lcrl::estimate::Estimate {
                theta: theta.clone(),
                condition_number: rec.condition_number,
                lambda_min: rec.lambda_min,
                m: rec.batch,
            };
            let mut entry = serde_json::to_value(LedgerEntry::new(l + 1, &est, errors))?;
            entry["run"] = json!(r);
            ledger.push(entry);
        }
    }
    io::write_jsonl(io::create(&ctx.out, "report.jsonl")?, &report_lines)?;
    io::write_jsonl(io::create(&ctx.out, "estimates.jsonl")?, &ledger)?;
    ensemble
        .regret
        .write_csv(io::create(&ctx.out, "regret.csv")?)?;

    let slope = if ensemble.aborted < ensemble.reports.len() {
        regret_slope(&ensemble.regret.mean)?
    } else {
        None
    };
    let summary = json!({
        "runs": runs,
        "aborted": ensemble.aborted,
        "total_episodes": config.total_episodes(),
        "regret_slope": slope,
        "theoretical_m0_c1": config.theoretical_m0(),
        "updates": ensemble.updates,
    });
    fs::write(ctx.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;

    println!("runs: {runs} ({} aborted)", ensemble.aborted);
    println!("update  batch   rel_A     rel_B     rel_gap");
    for u in &ensemble.updates {
        println!(
            "{:>6} {:>6}  {:.5}  {:.5}  {:.3e}",
            u.update, u.batch, u.rel_a, u.rel_b, u.relative_gap
        );
    }
    match slope {
        Some(s) => println!("regret slope: {s:.4}"),
        None => println!("regret slope: undefined (zero regret)"),
    }
    println!("wrote {}", ctx.out.display());
    Ok(())
}

pub fn eval(common: &Common, policy: Option<&Path>) -> Result<()> {
    let ctx = setup(common)?;
    let policy = policy_or_optimal(&ctx, policy)?;
    ctx.instance.check_policy(&policy)?;
    let affine = !matches!(policy, Policy::Tabulated { .. });
    if let (CostSpec::Lq(lq), true) = (&ctx.instance.cost, affine) {
        let cost = evaluate_lq_cost(&ctx.instance, &policy, ctx.dt)?;
        let opt = solve_riccati(&ctx.instance.theta, lq, ctx.instance.horizon, 0.5 * ctx.dt)?;
        let value = opt.value(&ctx.instance.x0, &ctx.instance.noise.covariance_rate());
        let gap = performance_gap_report(&ctx.instance, &ctx.instance.theta, ctx.dt)?;
        println!("expected cost: {cost:.12}");
        println!("optimal cost: {value:.12}");
        println!("gap: {:.6e}", cost - gap.optimal_cost);
    } else {
        let seed = seed(common, &ctx.config)?;
        let episodes = ctx.config.sim.episodes.max(MIN_MC_EPISODES);
        let (mean, se) = mc_cost(&ctx.instance, &policy, ctx.dt, episodes, seed)?;
        println!("expected cost (Monte Carlo, {episodes} episodes): {mean:.8} ± {se:.2e}");
    }
    Ok(())
}

pub fn concentration(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let seed = seed(common, &ctx.config)?;
    let params = ctx
        .config
        .concentration
        .as_ref()
        .ok_or_else(|| Error::Config("missing [concentration] section".into()))?;
    let policy = match &ctx.instance.cost {
        CostSpec::Lq(_) => optimal_policy(&ctx.instance, ctx.dt)?,
        _ => Policy::zero(ctx.instance.control_dim()),
    };
    let curve = concentration_curve(&ctx.instance, &policy, ctx.dt, params, seed, Execution::default())?;
    curve.write_csv(io::create(&ctx.out, "concentration.csv")?)?;
    println!("reference value: {:.8}", curve.reference);
    for p in &curve.points {
        println!("m = {:>6}: P = {:.4} ± {:.4}", p.m, p.probability, p.se);
    }
    match curve.decay_rate {
        Some(r) => println!("decay rate of -ln P in m: {r:.5}"),
        None => println!("decay rate: not enough nonzero frequencies"),
    }
    Ok(())
}

pub fn decouple(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let params = ctx.config.decouple.clone().unwrap_or(FieldParams {
        x_max: None,
        dx: 0.05,
        dt: None,
    });
    let field = solve_field(&ctx.instance, &params)?;
    let theta = &ctx.instance.theta;
    field.write_csv(&ctx.instance.cost, theta, io::create(&ctx.out, "field.csv")?)?;
    println!(
        "grid: {} time nodes (dt = {:.3e}), {} space nodes (dx = {})",
        field.times.len(),
        field.dt(),
        field.xs.len(),
        field.dx()
    );
    if let CostSpec::Lq(lq) = &ctx.instance.cost {
        let ric = solve_riccati(theta, lq, ctx.instance.horizon, field.dt())?;
        let x_lim = 0.5 * field.xs[field.xs.len() - 1];
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for (j, p) in ric.p.iter().enumerate() {
            for (i, &x) in field.xs.iter().enumerate() {
                if x.abs() <= x_lim {
                    err = err.max((field.value(j, i) - p[(0, 0)] * x).abs());
                    scale = scale.max((p[(0, 0)] * x).abs());
                }
            }
        }
        println!("max relative deviation from P(t)·x on |x| <= {x_lim}: {:.3e}", err / scale.max(f64::MIN_POSITIVE));
    }
    let policy = field_to_policy(&field, &ctx.instance.cost, theta)?;
    if let Policy::Tabulated { xs, values, .. } = &policy {
        let zero_band: Vec<f64> = xs
            .iter()
            .zip(&values[..xs.len()])
            .filter(|(_, v)| **v == 0.0)
            .map(|(x, _)| *x)
            .collect();
        if let (Some(lo), Some(hi)) = (zero_band.first(), zero_band.last()) {
            println!("zero-control nodes at t = 0: {} in [{lo}, {hi}]", zero_band.len());
        }
    }
    let seed = seed(common, &ctx.config).ok();
    if let Some(seed) = seed {
        let episodes = ctx.config.sim.episodes.max(2);
        let (mean, se) = mc_cost(&ctx.instance, &policy, ctx.dt, episodes, seed)?;
        println!("closed-loop cost (Monte Carlo, {episodes} episodes): {mean:.6} ± {se:.2e}");
    }
    println!("wrote {}", ctx.out.join("field.csv").display());
    Ok(())
}
