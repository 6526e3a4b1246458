//! Euler–Maruyama simulation of the controlled jump-diffusion
//!
//! `dX = (A X + B ψ(t, X)) dt + σ dW + ∫ u Ñ(dt, du)`
//!
//! and the sufficient statistics `U = ∫ Z Zᵀ dt`, `V = ∫ Z dXᵀ` with
//! `Z = (X; ψ(t, X))`, both evaluated at the left end of each step.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemInstance, Policy, Vector};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, rng_for};

/// Number of uniform steps of size `dt` covering `[0, horizon]`.
pub fn grid_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Grid(format!("step must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Grid(format!(
            "step {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(steps as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// `X_0, …, X_M`.
    pub states: Vec<Vector>,
    /// `α_j = ψ(t_j, X_j)` for `j < M`.
    pub controls: Vec<Vector>,
    /// `X_{j+1} − X_j`.
    pub increments: Vec<Vector>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has an initial state")
    }

    /// CSV with columns `t, x_1..x_n, a_1..a_k, dx_1..dx_n`; the terminal row
    /// leaves control and increment fields empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.states[0].len();
        let k = self.controls.first().map_or(0, Vector::len);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=k).map(|i| format!("a_{i}")));
        header.extend((1..=n).map(|i| format!("dx_{i}")));
        out.write_record(&header)?;
        for (j, x) in self.states.iter().enumerate() {
            let mut row = vec![self.time(j).to_string()];
            row.extend(x.iter().map(f64::to_string));
            match (self.controls.get(j), self.increments.get(j)) {
                (Some(a), Some(dx)) => {
                    row.extend(a.iter().map(f64::to_string));
                    row.extend(dx.iter().map(f64::to_string));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), k + n)),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Episode-averaged `U` ((n+k)×(n+k)) and `V` ((n+k)×n).
#[derive(Clone, Debug, PartialEq)]
pub struct SuffStats {
    pub u: Matrix,
    pub v: Matrix,
    pub m: usize,
    pub state_dim: usize,
}

impl SuffStats {
    fn zeros(n: usize, k: usize) -> Self {
        SuffStats {
            u: Matrix::zeros(n + k, n + k),
            v: Matrix::zeros(n + k, n),
            m: 0,
            state_dim: n,
        }
    }

    /// Averages per-episode sums in the given order, then symmetrises `U`.
    pub fn from_episode_sums(sums: &[EpisodeSums]) -> Result<Self> {
        let first = sums
            .first()
            .ok_or_else(|| Error::InvalidArgument("no episodes to accumulate".into()))?;
        let n = first.v.ncols();
        let k = first.v.nrows() - n;
        let mut s = SuffStats::zeros(n, k);
        for e in sums {
            if e.u.shape() != s.u.shape() || e.v.shape() != s.v.shape() {
                return Err(Error::Dimension("episodes have different dimensions".into()));
            }
            s.u += &e.u;
            s.v += &e.v;
        }
        s.m = sums.len();
        let inv = 1.0 / s.m as f64;
        s.u *= inv;
        s.v *= inv;
        s.u = (&s.u + s.u.transpose()) * 0.5;
        Ok(s)
    }

    /// Merges two averaged statistics into the average over all episodes.
    pub fn pooled(&self, other: &SuffStats) -> SuffStats {
        let m = self.m + other.m;
        let w1 = self.m as f64 / m as f64;
        let w2 = other.m as f64 / m as f64;
        SuffStats {
            u: &self.u * w1 + &other.u * w2,
            v: &self.v * w1 + &other.v * w2,
            m,
            state_dim: self.state_dim,
        }
    }
}

/// Unnormalised single-episode integrals.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSums {
    pub u: Matrix,
    pub v: Matrix,
}

impl EpisodeSums {
    fn zeros(n: usize, k: usize) -> Self {
        EpisodeSums {
            u: Matrix::zeros(n + k, n + k),
            v: Matrix::zeros(n + k, n),
        }
    }

    fn add_step(&mut self, z: &Vector, dx: &Vector, dt: f64) {
        self.u.ger(dt, z, z, 1.0);
        self.v.ger(1.0, z, dx, 1.0);
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let n = traj.states[0].len();
        let k = traj.controls.first().map_or(0, Vector::len);
        let mut sums = EpisodeSums::zeros(n, k);
        let mut z = Vector::zeros(n + k);
        for j in 0..traj.steps() {
            z.rows_mut(0, n).copy_from(&traj.states[j]);
            z.rows_mut(n, k).copy_from(&traj.controls[j]);
            sums.add_step(&z, &traj.increments[j], traj.dt);
        }
        sums
    }
}

/// Pre-resolved per-step coefficients shared by every episode of a batch.
struct Stepper<'a> {
    instance: &'a ProblemInstance,
    policy: &'a Policy,
    dt: f64,
    sqrt_dt: f64,
    steps: usize,
    poisson: Option<Poisson<f64>>,
    compensator: Vector,
}

impl<'a> Stepper<'a> {
    fn new(instance: &'a ProblemInstance, policy: &'a Policy, dt: f64) -> Result<Self> {
        let violations = instance.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidInstance(violations));
        }
        instance.check_policy(policy)?;
        let steps = grid_steps(instance.horizon, dt)?;
        let n = instance.state_dim();
        let noise = &instance.noise;
        let (poisson, compensator) = if noise.has_jumps() {
            let lambda = noise.jump_rate * dt;
            let dist = Poisson::new(lambda)
                .map_err(|e| Error::InvalidArgument(format!("jump intensity: {e}")))?;
            (Some(dist), noise.marks.mean(n) * lambda)
        } else {
            (None, Vector::zeros(n))
        };
        Ok(Stepper {
            instance,
            policy,
            dt,
            sqrt_dt: dt.sqrt(),
            steps,
            poisson,
            compensator,
        })
    }

    /// Runs one episode, calling `visit(j, x_j, a_j, dx_j)` for every step.
    fn run<F>(&self, seed: u64, mut visit: F) -> Result<Vector>
    where
        F: FnMut(usize, &Vector, &Vector, &Vector),
    {
        let inst = self.instance;
        let n = inst.state_dim();
        let k = inst.control_dim();
        let d = inst.noise.sigma.ncols();
        let mut rng = rng_for(seed);
        let mut x = inst.x0.clone();
        let mut a = Vector::zeros(k);
        let mut dx = Vector::zeros(n);
        let mut xi = Vector::zeros(d);
        let mut jump = Vector::zeros(n);
        for j in 0..self.steps {
            let t = j as f64 * self.dt;
            self.policy.action_into(t, &x, &mut a);
            dx.gemv(self.dt, &inst.theta.a, &x, 0.0);
            dx.gemv(self.dt, &inst.theta.b, &a, 1.0);
            for e in xi.iter_mut() {
                *e = rng.sample::<f64, _>(StandardNormal);
            }
            dx.gemv(self.sqrt_dt, &inst.noise.sigma, &xi, 1.0);
            if let Some(poisson) = &self.poisson {
                let count = poisson.sample(&mut rng) as usize;
                jump.fill(0.0);
                for _ in 0..count {
                    inst.noise.marks.add_sample(&mut rng, &mut jump);
                }
                dx += &jump;
                dx -= &self.compensator;
            }
            if dx.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: j });
            }
            visit(j, &x, &a, &dx);
            x += &dx;
        }
        Ok(x)
    }

    fn trajectory(&self, seed: u64) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(self.steps + 1);
        let mut controls = Vec::with_capacity(self.steps);
        let mut increments = Vec::with_capacity(self.steps);
        let last = self.run(seed, |_, x, a, dx| {
            states.push(x.clone());
            controls.push(a.clone());
            increments.push(dx.clone());
        })?;
        states.push(last);
        Ok(Trajectory {
            dt: self.dt,
            states,
            controls,
            increments,
        })
    }

    fn episode(&self, seed: u64, with_cost: bool) -> Result<EpisodeOutcome> {
        let n = self.instance.state_dim();
        let k = self.instance.control_dim();
        let cost_spec = &self.instance.cost;
        let mut sums = EpisodeSums::zeros(n, k);
        let mut z = Vector::zeros(n + k);
        let mut cost = 0.0;
        let last = self.run(seed, |_, x, a, dx| {
            z.rows_mut(0, n).copy_from(x);
            z.rows_mut(n, k).copy_from(a);
            sums.add_step(&z, dx, self.dt);
            if with_cost {
                cost += cost_spec.running(x, a) * self.dt;
            }
        })?;
        if with_cost {
            cost += cost_spec.terminal(&last);
        }
        Ok(EpisodeOutcome { sums, cost })
    }
}

pub(crate) struct EpisodeOutcome {
    pub sums: EpisodeSums,
    /// Pathwise cost (left-Riemann running cost plus terminal cost).
    pub cost: f64,
}

/// One episode on the uniform grid of step `dt`, deterministic in `seed`.
pub fn simulate(instance: &ProblemInstance, policy: &Policy, dt: f64, seed: u64) -> Result<Trajectory> {
    Stepper::new(instance, policy, dt)?.trajectory(seed)
}

/// Episode-averaged statistics of the given trajectories.
pub fn accumulate(trajectories: &[Trajectory]) -> Result<SuffStats> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to accumulate".into()));
    }
    let shape = (trajectories[0].steps(), trajectories[0].dt);
    if trajectories.iter().any(|t| (t.steps(), t.dt) != shape) {
        return Err(Error::Grid("trajectories do not share a time grid".into()));
    }
    let sums: Vec<EpisodeSums> = trajectories.iter().map(EpisodeSums::from_trajectory).collect();
    SuffStats::from_episode_sums(&sums)
}

/// Seed of episode `i` in a batch seeded with `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, episode as u64)
}

/// `m` independent episodes and their statistics.
pub fn simulate_batch(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    m: usize,
    seed: u64,
) -> Result<(Vec<Trajectory>, SuffStats)> {
    simulate_batch_with(instance, policy, dt, m, seed, Execution::default())
}

pub fn simulate_batch_with(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    m: usize,
    seed: u64,
    exec: Execution,
) -> Result<(Vec<Trajectory>, SuffStats)> {
    if m == 0 {
        return Err(Error::InvalidArgument("batch needs at least one episode".into()));
    }
    let stepper = Stepper::new(instance, policy, dt)?;
    let trajectories = par::try_map_indexed(exec, m, |i| {
        stepper
            .trajectory(episode_seed(seed, i))
            .map_err(|e| e.in_episode(i))
    })?;
    let stats = accumulate(&trajectories)?;
    Ok((trajectories, stats))
}

/// Statistics and pathwise costs of `m` episodes without storing trajectories.
/// Episode `i` uses the same noise as in [`simulate_batch`].
pub(crate) fn batch_outcomes(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    m: usize,
    seed: u64,
    with_cost: bool,
    exec: Execution,
) -> Result<Vec<EpisodeOutcome>> {
    if m == 0 {
        return Err(Error::InvalidArgument("batch needs at least one episode".into()));
    }
    let stepper = Stepper::new(instance, policy, dt)?;
    par::try_map_indexed(exec, m, |i| {
        stepper
            .episode(episode_seed(seed, i), with_cost)
            .map_err(|e| e.in_episode(i))
    })
}

/// Statistics of `m` episodes, without keeping the trajectories.
pub fn batch_stats(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    m: usize,
    seed: u64,
    exec: Execution,
) -> Result<SuffStats> {
    let outcomes = batch_outcomes(instance, policy, dt, m, seed, false, exec)?;
    let sums: Vec<EpisodeSums> = outcomes.into_iter().map(|o| o.sums).collect();
    SuffStats::from_episode_sums(&sums)
}

/// Runs one episode and returns a scalar functional of its state path.
pub fn path_functional<F>(
    instance: &ProblemInstance,
    policy: &Policy,
    dt: f64,
    seed: u64,
    functional: F,
) -> Result<f64>
where
    F: Fn(&[Vector]) -> f64,
{
    let traj = simulate(instance, policy, dt, seed)?;
    Ok(functional(&traj.states))
}

/// Running maximum of the first state coordinate, `sup_t X¹_t`.
pub fn running_max_first(states: &[Vector]) -> f64 {
    states.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// `sup_t |X_t|`.
pub fn sup_norm(states: &[Vector]) -> f64 {
    states.iter().map(|x| x.norm()).fold(0.0, f64::max)
}
