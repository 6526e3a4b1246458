//! Optimal feedback synthesis: the Riccati equation for quadratic costs,
//! the pointwise Hamiltonian minimiser φ for every cost family, and exact
//! evaluation of the expected cost of affine feedback laws.

use std::io::Write;

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::model::{
    is_diagonal, is_symmetric, min_eigenvalue, CostSpec, LqCost, Matrix, ModelTheta, Policy, ProblemInstance,
    Vector,
};
use crate::sde::grid_steps;

/// Eigenvalue below which the backward Riccati flow is declared unstable.
const RICCATI_PSD_FLOOR: f64 = -1e-6;

/// `P_t` on the uniform grid `t_j = j · dt`, `j = 0..=M`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub p: Vec<Matrix>,
}

impl RiccatiSolution {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn initial(&self) -> &Matrix {
        &self.p[0]
    }

    /// Optimal expected cost from `x0` under the quadratic cost convention
    /// `V = x0ᵀ P_0 x0 / 2 + ½ ∫ tr(P_t C) dt`, where `C` is the covariance
    /// rate of the noise. The integral uses Simpson's rule on the grid
    /// (trapezoid for an odd number of steps).
    pub fn value(&self, x0: &Vector, noise_covariance: &Matrix) -> f64 {
        let traces: Vec<f64> = self.p.iter().map(|p| (p * noise_covariance).trace()).collect();
        0.5 * x0.dot(&(&self.p[0] * x0)) + 0.5 * integrate(&traces, self.dt())
    }

    /// CSV with columns `t, p_11, p_12, …, p_nn` (row-major).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.p[0].nrows();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for i in 1..=n {
            for j in 1..=n {
                header.push(format!("p_{i}{j}"));
            }
        }
        out.write_record(&header)?;
        for (t, p) in self.times.iter().zip(&self.p) {
            let mut row = vec![t.to_string()];
            for i in 0..n {
                for j in 0..n {
                    row.push(p[(i, j)].to_string());
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Composite Simpson rule on a uniform grid; trapezoid when the number of
/// intervals is odd.
pub(crate) fn integrate(values: &[f64], dt: f64) -> f64 {
    let m = values.len().saturating_sub(1);
    if m == 0 {
        return 0.0;
    }
    if m % 2 == 1 {
        let inner: f64 = values[1..m].iter().sum();
        return dt * (0.5 * (values[0] + values[m]) + inner);
    }
    let mut s = values[0] + values[m];
    for (j, v) in values.iter().enumerate().take(m).skip(1) {
        s += if j % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * dt / 3.0
}

fn cholesky_r(r: &Matrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !is_symmetric(r) {
        return Err(Error::SingularControlWeight);
    }
    Cholesky::new(r.clone()).ok_or(Error::SingularControlWeight)
}

fn symmetrize(p: &mut Matrix) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Solves `P' + AᵀP + PA − P B R⁻¹ Bᵀ P + Q = 0`, `P_T = G` backward in time
/// with classical RK4, symmetrising after every step.
pub fn solve_riccati(theta: &ModelTheta, cost: &LqCost, horizon: f64, dt: f64) -> Result<RiccatiSolution> {
    let n = theta.state_dim();
    let k = theta.control_dim();
    if cost.q.shape() != (n, n) || cost.g.shape() != (n, n) || cost.r.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "cost weights do not match state dimension {n} and control dimension {k}"
        )));
    }
    let steps = grid_steps(horizon, dt)?;
    let chol = cholesky_r(&cost.r)?;
    // S = B R⁻¹ Bᵀ
    let s = &theta.b * chol.solve(&theta.b.transpose());
    let a = &theta.a;
    let at = a.transpose();
    let rhs = |p: &Matrix| -> Matrix { &at * p + p * a - p * &s * p + &cost.q };

    let mut p = cost.g.clone();
    symmetrize(&mut p);
    let mut ps = vec![Matrix::zeros(n, n); steps + 1];
    ps[steps] = p.clone();
    // τ = T − t runs forward: dP/dτ = rhs(P).
    for j in (0..steps).rev() {
        let k1 = rhs(&p);
        let k2 = rhs(&(&p + &k1 * (0.5 * dt)));
        let k3 = rhs(&(&p + &k2 * (0.5 * dt)));
        let k4 = rhs(&(&p + &k3 * dt));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        symmetrize(&mut p);
        let t = j as f64 * dt;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiInstability {
                t,
                eigenvalue: f64::NAN,
            });
        }
        let lmin = min_eigenvalue(&p);
        if lmin < RICCATI_PSD_FLOOR {
            return Err(Error::RiccatiInstability { t, eigenvalue: lmin });
        }
        ps[j] = p.clone();
    }
    let times = (0..=steps).map(|j| j as f64 * dt).collect();
    Ok(RiccatiSolution { times, p: ps })
}

/// Greedy linear feedback `K_t = −R⁻¹ Bᵀ P_t` on the Riccati grid.
pub fn lq_feedback(theta: &ModelTheta, riccati: &RiccatiSolution, cost: &LqCost) -> Result<Policy> {
    let n = theta.state_dim();
    let k = theta.control_dim();
    if riccati.p.iter().any(|p| p.shape() != (n, n)) || cost.r.shape() != (k, k) {
        return Err(Error::Dimension("Riccati solution does not match θ".into()));
    }
    let chol = cholesky_r(&cost.r)?;
    let bt = theta.b.transpose();
    let gains = riccati.p.iter().map(|p| -chol.solve(&(&bt * p))).collect();
    Ok(Policy::LinearGain {
        times: riccati.times.clone(),
        gains,
        offset: None,
    })
}

/// Riccati feedback for the instance's own θ and LQ cost.
pub fn optimal_policy(instance: &ProblemInstance, dt: f64) -> Result<Policy> {
    let cost = instance.cost.as_lq()?;
    let ric = solve_riccati(&instance.theta, cost, instance.horizon, dt)?;
    lq_feedback(&instance.theta, &ric, cost)
}

/// `sign(z)·max(|z| − κ, 0)`.
pub fn soft_threshold(z: f64, kappa: f64) -> f64 {
    z.signum() * (z.abs() - kappa).max(0.0)
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(z: &Vector) -> Vector {
    let max = z.max();
    let e = z.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Pointwise Hamiltonian minimiser `φ(t, x, y) = argmin_a ⟨B a, y⟩ + f(t, x, a)`.
/// Costs are time-homogeneous, so `t` only fixes the signature.
pub fn conjugate_map(cost: &CostSpec, theta: &ModelTheta, _t: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    let n = theta.state_dim();
    if x.len() != n || y.len() != n {
        return Err(Error::Dimension(format!("x and y must have length {n}")));
    }
    let z = -(theta.b.transpose() * y);
    match cost {
        CostSpec::Lq(c) => Ok(cholesky_r(&c.r)?.solve(&z)),
        CostSpec::L1Lq(c) => {
            if !is_diagonal(&c.r) {
                return Err(Error::Unsupported("L1 cost with non-diagonal R".into()));
            }
            Ok(Vector::from_iterator(
                z.len(),
                z.iter()
                    .enumerate()
                    .map(|(i, &zi)| soft_threshold(zi, c.kappa) / c.r[(i, i)]),
            ))
        }
        CostSpec::EntropyLinear(c) => {
            if c.fbar_const.len() != z.len() {
                return Err(Error::Dimension("fbar does not match the control dimension".into()));
            }
            Ok(softmax(&((z - c.fbar(x)) / c.rho)))
        }
    }
}

/// Integrates the mean `μ`, covariance `Σ` and expected cost of the closed
/// loop `dX = (A X + B(K_t X + c)) dt + noise` with RK4 on the grid of step `dt`.
/// Gains are interpolated linearly between policy nodes, so a policy on the
/// grid of step `dt/2` is sampled exactly at every RK4 stage.
pub fn evaluate_lq_cost(instance: &ProblemInstance, policy: &Policy, dt: f64) -> Result<f64> {
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidInstance(violations));
    }
    let lq = instance.cost.as_lq()?;
    instance.check_policy(policy)?;
    let steps = grid_steps(instance.horizon, dt)?;
    let gain_at: Box<dyn Fn(f64) -> (Matrix, Option<Vector>)> = match policy {
        Policy::LinearGain { times, .. } => {
            let end = *times.last().expect("validated policy");
            if times[0].abs() > 1e-9 || end + 1e-9 * instance.horizon.max(1.0) < instance.horizon - dt {
                return Err(Error::Grid(format!(
                    "policy grid [{}, {end}] does not cover [0, {}]",
                    times[0], instance.horizon
                )));
            }
            Box::new(move |t| policy.interpolated_gain(t).expect("linear policy"))
        }
        Policy::Constant { value } => {
            let zero = Matrix::zeros(instance.control_dim(), instance.state_dim());
            let value = value.clone();
            Box::new(move |_| (zero.clone(), Some(value.clone())))
        }
        Policy::Tabulated { .. } => {
            return Err(Error::Unsupported(
                "exact evaluation requires an affine policy".into(),
            ))
        }
    };

    let a = &instance.theta.a;
    let b = &instance.theta.b;
    let c_noise = instance.noise.covariance_rate();
    // state: (μ, Σ, accumulated cost)
    let deriv = |t: f64, mu: &Vector, sig: &Matrix| -> (Vector, Matrix, f64) {
        let (k, offset) = gain_at(t);
        let acl = a + b * &k;
        let kt_r = k.transpose() * &lq.r;
        let q_tilde = &lq.q + &kt_r * &k;
        let mut dmu = &acl * mu;
        let mut cost = mu.dot(&(&q_tilde * mu)) + (&q_tilde * sig).trace();
        if let Some(c) = &offset {
            dmu += b * c;
            cost += 2.0 * c.dot(&(&kt_r.transpose() * mu)) + c.dot(&(&lq.r * c));
        }
        let dsig = &acl * sig + sig * acl.transpose() + &c_noise;
        (dmu, dsig, 0.5 * cost)
    };

    let mut mu = instance.x0.clone();
    let n = instance.state_dim();
    let mut sig = Matrix::zeros(n, n);
    let mut total = 0.0;
    for j in 0..steps {
        let t = j as f64 * dt;
        let h = 0.5 * dt;
        let (m1, s1, c1) = deriv(t, &mu, &sig);
        let (m2, s2, c2) = deriv(t + h, &(&mu + &m1 * h), &(&sig + &s1 * h));
        let (m3, s3, c3) = deriv(t + h, &(&mu + &m2 * h), &(&sig + &s2 * h));
        let (m4, s4, c4) = deriv(t + dt, &(&mu + &m3 * dt), &(&sig + &s3 * dt));
        mu += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (dt / 6.0);
        sig += (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (dt / 6.0);
        symmetrize(&mut sig);
        total += (c1 + 2.0 * c2 + 2.0 * c3 + c4) * (dt / 6.0);
        if !total.is_finite() || mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: j });
        }
    }
    total += 0.5 * (mu.dot(&(&lq.g * &mu)) + (&lq.g * &sig).trace());
    Ok(total)
}

/// Expected costs on the true system of the greedy policies for the true and
/// a misspecified θ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    pub optimal_cost: f64,
    pub policy_cost: f64,
    pub gap: f64,
}

impl GapReport {
    pub fn relative(&self) -> f64 {
        self.gap / self.optimal_cost.abs().max(f64::MIN_POSITIVE)
    }
}

/// Builds both greedy policies on the half-step grid and evaluates them at
/// step `dt`. The gap is clamped at zero within rounding; a clearly negative
/// gap is an internal error.
pub fn performance_gap_report(instance: &ProblemInstance, theta_wrong: &ModelTheta, dt: f64) -> Result<GapReport> {
    let lq = instance.cost.as_lq()?;
    if theta_wrong.a.shape() != instance.theta.a.shape() || theta_wrong.b.shape() != instance.theta.b.shape() {
        return Err(Error::Dimension("misspecified θ has the wrong shape".into()));
    }
    let fine = 0.5 * dt;
    let truth = lq_feedback(
        &instance.theta,
        &solve_riccati(&instance.theta, lq, instance.horizon, fine)?,
        lq,
    )?;
    let optimal_cost = evaluate_lq_cost(instance, &truth, dt)?;
    let policy_cost = if theta_wrong == &instance.theta {
        optimal_cost
    } else {
        let wrong = lq_feedback(
            theta_wrong,
            &solve_riccati(theta_wrong, lq, instance.horizon, fine)?,
            lq,
        )?;
        evaluate_lq_cost(instance, &wrong, dt)?
    };
    let gap = policy_cost - optimal_cost;
    let tol = 1e-9 * optimal_cost.abs().max(1.0);
    if gap < -tol {
        return Err(Error::Consistency(format!(
            "performance gap {gap:e} is negative"
        )));
    }
    Ok(GapReport {
        optimal_cost,
        policy_cost,
        gap: gap.max(0.0),
    })
}

/// `J(ψ^{θ_wrong}) − J(ψ^{θ_true})` on the true system.
pub fn performance_gap(instance: &ProblemInstance, theta_wrong: &ModelTheta, dt: f64) -> Result<f64> {
    Ok(performance_gap_report(instance, theta_wrong, dt)?.gap)
}
