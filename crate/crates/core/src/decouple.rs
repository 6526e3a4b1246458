//! Decoupling field `v(t, x) = Y_t^{t,x}` of the forward–backward system for
//! scalar problems, computed from the backward quasilinear PDE
//!
//! `∂_t v + (A x + B φ(x, v)) ∂_x v + ½σ² ∂_xx v + A v + ∂_x f(x, φ(x, v)) = 0`,
//! `v(T, x) = g'(x)`,
//!
//! with an explicit upwind scheme.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::conjugate_map;
use crate::error::{Error, Result};
use crate::model::{CostSpec, ModelTheta, Policy, ProblemInstance, Vector};

/// Fraction of the stability limit used when the time step is not given.
const CFL_SAFETY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Half-width of the spatial domain; defaults to six standard deviations
    /// of the uncontrolled state (at least 1).
    #[serde(default)]
    pub x_max: Option<f64>,
    pub dx: f64,
    /// Time step; defaults to a stable step that divides the horizon.
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecouplingField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// Row-major `times.len() × xs.len()`.
    pub values: Vec<f64>,
}

impl DecouplingField {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    /// `v(t_j, ·)` on the spatial grid.
    pub fn slice(&self, j: usize) -> &[f64] {
        let nx = self.xs.len();
        &self.values[j * nx..(j + 1) * nx]
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    /// `max_i |v(t_j, x_{i+1}) − v(t_j, x_i)| / dx` for every time node.
    pub fn lipschitz_profile(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.times.len())
            .map(|j| {
                self.slice(j)
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs() / dx)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// CSV rows `(t, x, v, psi)` with `psi = φ(t, x, v(t, x))`.
    pub fn write_csv<W: Write>(&self, cost: &CostSpec, theta: &ModelTheta, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "x", "v", "psi"])?;
        for (j, &t) in self.times.iter().enumerate() {
            for (i, &x) in self.xs.iter().enumerate() {
                let v = self.value(j, i);
                let psi = conjugate_map(
                    cost,
                    theta,
                    t,
                    &Vector::from_element(1, x),
                    &Vector::from_element(1, v),
                )?;
                out.write_record([t, x, v, psi[0]].iter().map(f64::to_string))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Standard deviation of the uncontrolled state: stationary when `A < 0`,
/// at the horizon otherwise.
fn uncontrolled_std(a: f64, sigma: f64, horizon: f64) -> f64 {
    let var = if a < 0.0 {
        sigma * sigma / (-2.0 * a)
    } else if a == 0.0 {
        sigma * sigma * horizon
    } else {
        sigma * sigma * ((2.0 * a * horizon).exp() - 1.0) / (2.0 * a)
    };
    var.sqrt()
}

/// Default half-width of the spatial domain.
pub fn default_x_max(instance: &ProblemInstance) -> f64 {
    let a = instance.theta.a[(0, 0)];
    let sigma = instance.noise.sigma.norm();
    6.0 * uncontrolled_std(a, sigma, instance.horizon).max(1.0)
}

/// Largest stable explicit step for diffusion `σ²/2`, advection speed `b`.
fn stable_step(sigma: f64, speed: f64, dx: f64) -> f64 {
    1.0 / (sigma * sigma / (dx * dx) + speed / dx)
}

/// A priori bound on `|v|/|x|`: the curvature of the uncontrolled quadratic
/// value, `P' = −2AP − Q`, `P_T = G`, maximised over the horizon.
fn curvature_bound(a: f64, q: f64, g: f64, horizon: f64) -> f64 {
    let s = horizon;
    let growth = (2.0 * a * s).exp();
    let p = if a.abs() < 1e-12 {
        g + q * s
    } else {
        g * growth + q * (growth - 1.0) / (2.0 * a)
    };
    p.max(g).max(0.0)
}

fn check_instance(instance: &ProblemInstance) -> Result<()> {
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidInstance(violations));
    }
    if instance.state_dim() != 1 || instance.control_dim() != 1 {
        return Err(Error::Unsupported(
            "decoupling fields require scalar state and control".into(),
        ));
    }
    if instance.noise.has_jumps() {
        return Err(Error::Unsupported(
            "decoupling fields do not include jump terms".into(),
        ));
    }
    Ok(())
}

/// Solves for the decoupling field on `[0, T] × [−X_max, X_max]`.
pub fn solve_field(instance: &ProblemInstance, params: &FieldParams) -> Result<DecouplingField> {
    check_instance(instance)?;
    let dx = params.dx;
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::Grid(format!("dx must be positive, got {dx}")));
    }
    let x_max = params.x_max.unwrap_or_else(|| default_x_max(instance));
    if !(x_max.is_finite() && x_max > 0.0) {
        return Err(Error::Grid(format!("x_max must be positive, got {x_max}")));
    }
    // even number of cells so that x = 0 is a node
    let half_cells = (x_max / dx - 1e-9).ceil().max(2.0) as usize;
    let nx = 2 * half_cells + 1;
    if nx > 1_000_000 {
        return Err(Error::Grid(format!("{nx} spatial nodes is too many")));
    }
    let xs: Vec<f64> = (0..nx)
        .map(|i| (i as f64 - half_cells as f64) * dx)
        .collect();
    let x_edge = half_cells as f64 * dx;

    let theta = &instance.theta;
    let a = theta.a[(0, 0)];
    let b = theta.b[(0, 0)];
    let sigma = instance.noise.sigma.norm();
    let cost = &instance.cost;
    let horizon = instance.horizon;

    let p_bound = curvature_bound(
        a,
        cost.state_weight()[(0, 0)],
        cost.terminal_weight()[(0, 0)],
        horizon,
    );
    let control_bound = match cost {
        CostSpec::Lq(c) => (b * p_bound * x_edge / c.r[(0, 0)]).abs(),
        CostSpec::L1Lq(c) => (b * p_bound * x_edge / c.r[(0, 0)]).abs(),
        CostSpec::EntropyLinear(_) => 1.0,
    };
    let speed_bound = a.abs() * x_edge + b.abs() * control_bound;
    let required = stable_step(sigma, speed_bound, dx);
    let dt = match params.dt {
        Some(dt) => {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Grid(format!("dt must be positive, got {dt}")));
            }
            dt
        }
        None => horizon / (horizon / (CFL_SAFETY * required)).ceil(),
    };
    let steps = crate::sde::grid_steps(horizon, dt)?;
    if steps > 10_000_000 {
        return Err(Error::Grid(format!("{steps} time steps is too many")));
    }

    let mut values = vec![0.0; (steps + 1) * nx];
    let terminal = &mut values[steps * nx..];
    for (v, &x) in terminal.iter_mut().zip(&xs) {
        *v = cost.terminal_gradient(&Vector::from_element(1, x))[0];
    }

    let half_sigma2 = 0.5 * sigma * sigma;
    let mut xv = Vector::zeros(1);
    let mut yv = Vector::zeros(1);
    let mut next = vec![0.0; nx];
    for j in (0..steps).rev() {
        let t = (j + 1) as f64 * dt;
        let current = &values[(j + 1) * nx..(j + 2) * nx];
        let mut max_speed: f64 = 0.0;
        for i in 1..nx - 1 {
            xv[0] = xs[i];
            yv[0] = current[i];
            let action = conjugate_map(cost, theta, t, &xv, &yv)?;
            let drift = a * xs[i] + b * action[0];
            max_speed = max_speed.max(drift.abs());
            let vx = if drift > 0.0 {
                (current[i + 1] - current[i]) / dx
            } else {
                (current[i] - current[i - 1]) / dx
            };
            let vxx = (current[i + 1] - 2.0 * current[i] + current[i - 1]) / (dx * dx);
            let source = a * current[i] + cost.running_state_gradient(&xv, &action)[0];
            next[i] = current[i] + dt * (drift * vx + half_sigma2 * vxx + source);
        }
        let limit = stable_step(sigma, max_speed, dx);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, required: limit });
        }
        next[0] = 2.0 * next[1] - next[2];
        next[nx - 1] = 2.0 * next[nx - 2] - next[nx - 3];
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::FieldDivergence { step: j });
        }
        values[j * nx..(j + 1) * nx].copy_from_slice(&next);
    }
    Ok(DecouplingField {
        times: (0..=steps).map(|j| j as f64 * dt).collect(),
        xs,
        values,
    })
}

/// Tabulated feedback `ψ(t_j, x_i) = φ(t_j, x_i, v(t_j, x_i))`.
pub fn field_to_policy(field: &DecouplingField, cost: &CostSpec, theta: &ModelTheta) -> Result<Policy> {
    let mut values = Vec::with_capacity(field.values.len());
    for (j, &t) in field.times.iter().enumerate() {
        for (i, &x) in field.xs.iter().enumerate() {
            let a = conjugate_map(
                cost,
                theta,
                t,
                &Vector::from_element(1, x),
                &Vector::from_element(1, field.value(j, i)),
            )?;
            values.push(a[0]);
        }
    }
    Ok(Policy::Tabulated {
        times: field.times.clone(),
        xs: field.xs.clone(),
        control_dim: 1,
        values,
    })
}
