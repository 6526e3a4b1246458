//! Problem instances: drift parameters, noise, costs and feedback policies.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_rows;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const PSD_TOL: f64 = 1e-10;
const SYM_TOL: f64 = 1e-10;
const PROB_TOL: f64 = 1e-9;

/// Drift parameter θ = (A, B) of `dX = (A X + B α) dt + ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTheta {
    #[serde(with = "serde_rows::matrix")]
    pub a: Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub b: Matrix,
}

impl ModelTheta {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let theta = ModelTheta { a, b };
        let v = theta.violations();
        if v.is_empty() {
            Ok(theta)
        } else {
            Err(Error::InvalidInstance(v))
        }
    }

    /// Splits an `n × (n + k)` matrix `[A B]`.
    pub fn from_stacked(stacked: &Matrix, n: usize) -> Result<Self> {
        if stacked.nrows() != n || stacked.ncols() <= n {
            return Err(Error::Dimension(format!(
                "stacked parameter is {}x{}, expected {n}x(n+k) with k >= 1",
                stacked.nrows(),
                stacked.ncols()
            )));
        }
        let k = stacked.ncols() - n;
        Ok(ModelTheta {
            a: stacked.columns(0, n).into_owned(),
            b: stacked.columns(n, k).into_owned(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `[A B]`, so that `stacked · (x; a) = A x + B a`.
    pub fn stacked(&self) -> Matrix {
        let n = self.state_dim();
        let k = self.control_dim();
        let mut m = Matrix::zeros(n, n + k);
        m.columns_mut(0, n).copy_from(&self.a);
        m.columns_mut(n, k).copy_from(&self.b);
        m
    }

    /// `θ + eps · direction` with `direction` shaped like `[A B]`.
    pub fn perturbed(&self, direction: &Matrix, eps: f64) -> Result<Self> {
        let s = self.stacked();
        if direction.shape() != s.shape() {
            return Err(Error::Dimension(format!(
                "perturbation is {:?}, parameter is {:?}",
                direction.shape(),
                s.shape()
            )));
        }
        ModelTheta::from_stacked(&(s + direction * eps), self.state_dim())
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.a.nrows() == 0 || self.a.nrows() != self.a.ncols() {
            v.push(format!("A must be square and non-empty, got {:?}", self.a.shape()));
        }
        if self.b.nrows() != self.a.nrows() || self.b.ncols() == 0 {
            v.push(format!(
                "B must be {}xk with k >= 1, got {:?}",
                self.a.nrows(),
                self.b.shape()
            ));
        }
        if !all_finite(&self.a) || !all_finite(&self.b) {
            v.push("drift parameters must be finite".into());
        }
        v
    }
}

/// Jump-size distribution of the compound-Poisson component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkLaw {
    None,
    /// Finitely many marks with probabilities.
    Discrete {
        #[serde(with = "serde_rows::vectors")]
        marks: Vec<Vector>,
        probs: Vec<f64>,
    },
    /// Independent symmetric Laplace components, `P(|u_i| > s) = exp(-s / scale_i)`.
    Laplace {
        #[serde(with = "serde_rows::vector")]
        scale: Vector,
    },
}

impl MarkLaw {
    pub fn mean(&self, n: usize) -> Vector {
        match self {
            MarkLaw::Discrete { marks, probs } => marks
                .iter()
                .zip(probs)
                .fold(Vector::zeros(n), |acc, (u, p)| acc + u * *p),
            _ => Vector::zeros(n),
        }
    }

    /// `E[u uᵀ]`.
    pub fn second_moment(&self, n: usize) -> Matrix {
        match self {
            MarkLaw::None => Matrix::zeros(n, n),
            MarkLaw::Discrete { marks, probs } => marks
                .iter()
                .zip(probs)
                .fold(Matrix::zeros(n, n), |acc, (u, p)| acc + u * u.transpose() * *p),
            MarkLaw::Laplace { scale } => {
                Matrix::from_diagonal(&scale.map(|s| 2.0 * s * s))
            }
        }
    }

    /// Adds one mark draw to `acc`.
    pub fn add_sample<R: Rng + ?Sized>(&self, rng: &mut R, acc: &mut Vector) {
        match self {
            MarkLaw::None => {}
            MarkLaw::Discrete { marks, probs } => {
                let mut r: f64 = rng.random();
                let mut chosen = marks.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    if r < *p {
                        chosen = i;
                        break;
                    }
                    r -= p;
                }
                *acc += &marks[chosen];
            }
            MarkLaw::Laplace { scale } => {
                for (a, s) in acc.iter_mut().zip(scale.iter()) {
                    let e: f64 = Exp1.sample(rng);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *a += sign * s * e;
                }
            }
        }
    }
}

/// Diffusion loading plus a finite-activity compound-Poisson jump part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `n × d` diffusion matrix.
    #[serde(with = "serde_rows::matrix")]
    pub sigma: Matrix,
    #[serde(default)]
    pub jump_rate: f64,
    #[serde(default = "no_marks")]
    pub marks: MarkLaw,
    /// Moment-growth order ϑ of the marks: 0 for bounded, 1 for exponential tails.
    #[serde(default)]
    pub tail_order: f64,
}

fn no_marks() -> MarkLaw {
    MarkLaw::None
}

impl NoiseSpec {
    pub fn diffusion(sigma: Matrix) -> Self {
        NoiseSpec {
            sigma,
            jump_rate: 0.0,
            marks: MarkLaw::None,
            tail_order: 0.0,
        }
    }

    pub fn has_jumps(&self) -> bool {
        self.jump_rate > 0.0 && self.marks != MarkLaw::None
    }

    /// Instantaneous covariance rate `σσᵀ + rate · E[u uᵀ]`.
    pub fn covariance_rate(&self) -> Matrix {
        let n = self.sigma.nrows();
        let mut c = &self.sigma * self.sigma.transpose();
        if self.has_jumps() {
            c += self.marks.second_moment(n) * self.jump_rate;
        }
        c
    }

    fn violations(&self, n: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.sigma.nrows() != n || self.sigma.ncols() == 0 {
            v.push(format!(
                "sigma must be {n}xd with d >= 1, got {:?}",
                self.sigma.shape()
            ));
        }
        if !all_finite(&self.sigma) {
            v.push("sigma must be finite".into());
        }
        if !(self.jump_rate.is_finite() && self.jump_rate >= 0.0) {
            v.push("jump rate must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.tail_order) {
            v.push("tail order must lie in [0, 1]".into());
        }
        match &self.marks {
            MarkLaw::None => {
                if self.jump_rate != 0.0 {
                    v.push("jump rate must be 0 when there is no mark law".into());
                }
            }
            MarkLaw::Discrete { marks, probs } => {
                if marks.is_empty() || marks.len() != probs.len() {
                    v.push("discrete marks need one probability per mark".into());
                }
                if marks.iter().any(|u| u.len() != n || u.iter().any(|x| !x.is_finite())) {
                    v.push(format!("marks must be finite vectors of length {n}"));
                }
                if probs.iter().any(|p| p.is_nan() || *p < 0.0) {
                    v.push("mark probabilities must be nonnegative".into());
                } else if (probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
                    v.push("mark probabilities must sum to 1".into());
                }
                if self.tail_order != 0.0 {
                    v.push("bounded marks have tail order 0".into());
                }
            }
            MarkLaw::Laplace { scale } => {
                if scale.len() != n || scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    v.push(format!("Laplace scales must be {n} finite nonnegative numbers"));
                }
            }
        }
        v
    }
}

/// Quadratic weights: running `(xᵀQx + aᵀRa)/2`, terminal `xᵀGx/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqCost {
    #[serde(with = "serde_rows::matrix")]
    pub q: Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub r: Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub g: Matrix,
}

/// Quadratic cost plus `kappa · |a|₁`. `R` must be diagonal so that the
/// Hamiltonian minimiser is a componentwise soft threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Cost {
    #[serde(with = "serde_rows::matrix")]
    pub q: Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub r: Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub g: Matrix,
    pub kappa: f64,
}

/// Relaxed control on the simplex:
/// `xᵀQx/2 + ⟨c + D x, a⟩ + rho · Σ aᵢ ln aᵢ` with `a ∈ Δ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCost {
    #[serde(with = "serde_rows::matrix")]
    pub q: Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub g: Matrix,
    #[serde(with = "serde_rows::vector")]
    pub fbar_const: Vector,
    #[serde(with = "serde_rows::matrix")]
    pub fbar_state: Matrix,
    pub rho: f64,
}

impl EntropyCost {
    /// `f̄(t, x) = c + D x`.
    pub fn fbar(&self, x: &Vector) -> Vector {
        &self.fbar_const + &self.fbar_state * x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    Lq(LqCost),
    L1Lq(L1Cost),
    EntropyLinear(EntropyCost),
}

impl CostSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CostSpec::Lq(_) => "lq",
            CostSpec::L1Lq(_) => "l1_lq",
            CostSpec::EntropyLinear(_) => "entropy_linear",
        }
    }

    pub fn as_lq(&self) -> Result<&LqCost> {
        match self {
            CostSpec::Lq(c) => Ok(c),
            other => Err(Error::Unsupported(format!(
                "operation requires an LQ cost, got {}",
                other.name()
            ))),
        }
    }

    pub fn state_weight(&self) -> &Matrix {
        match self {
            CostSpec::Lq(c) => &c.q,
            CostSpec::L1Lq(c) => &c.q,
            CostSpec::EntropyLinear(c) => &c.q,
        }
    }

    pub fn terminal_weight(&self) -> &Matrix {
        match self {
            CostSpec::Lq(c) => &c.g,
            CostSpec::L1Lq(c) => &c.g,
            CostSpec::EntropyLinear(c) => &c.g,
        }
    }

    /// Running cost `f(t, x, a)`; `+∞` outside the control domain.
    pub fn running(&self, x: &Vector, a: &Vector) -> f64 {
        let state = 0.5 * x.dot(&(self.state_weight() * x));
        match self {
            CostSpec::Lq(c) => state + 0.5 * a.dot(&(&c.r * a)),
            CostSpec::L1Lq(c) => state + 0.5 * a.dot(&(&c.r * a)) + c.kappa * a.lp_norm(1),
            CostSpec::EntropyLinear(c) => {
                let on_simplex = a.iter().all(|&ai| ai >= -1e-12)
                    && (a.sum() - 1.0).abs() <= 1e-9;
                if !on_simplex {
                    return f64::INFINITY;
                }
                let entropy: f64 = a
                    .iter()
                    .map(|&ai| if ai > 0.0 { ai * ai.ln() } else { 0.0 })
                    .sum();
                state + c.fbar(x).dot(a) + c.rho * entropy
            }
        }
    }

    /// `∂ₓ f(t, x, a)`.
    pub fn running_state_gradient(&self, x: &Vector, a: &Vector) -> Vector {
        let mut grad = self.state_weight() * x;
        if let CostSpec::EntropyLinear(c) = self {
            grad += c.fbar_state.transpose() * a;
        }
        grad
    }

    pub fn terminal(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(self.terminal_weight() * x))
    }

    /// `g'(x) = G x`.
    pub fn terminal_gradient(&self, x: &Vector) -> Vector {
        self.terminal_weight() * x
    }

    fn violations(&self, n: usize, k: usize) -> Vec<String> {
        let mut v = Vec::new();
        let psd = |name: &str, m: &Matrix, dim: usize, v: &mut Vec<String>| {
            if m.shape() != (dim, dim) {
                v.push(format!("{name} must be {dim}x{dim}, got {:?}", m.shape()));
            } else if !is_symmetric_psd(m) {
                v.push(format!("{name} must be symmetric positive semidefinite"));
            }
        };
        psd("Q", self.state_weight(), n, &mut v);
        psd("G", self.terminal_weight(), n, &mut v);
        match self {
            CostSpec::Lq(c) => pd_check(&c.r, k, &mut v),
            CostSpec::L1Lq(c) => {
                pd_check(&c.r, k, &mut v);
                if c.r.shape() == (k, k) && !is_diagonal(&c.r) {
                    v.push("R must be diagonal for the L1 cost".into());
                }
                if !(c.kappa.is_finite() && c.kappa >= 0.0) {
                    v.push("kappa must be finite and nonnegative".into());
                }
            }
            CostSpec::EntropyLinear(c) => {
                if c.fbar_const.len() != k {
                    v.push(format!("fbar_const must have length {k}"));
                }
                if c.fbar_state.shape() != (k, n) {
                    v.push(format!("fbar_state must be {k}x{n}"));
                }
                if !(c.rho.is_finite() && c.rho > 0.0) {
                    v.push("rho must be positive".into());
                }
            }
        }
        v
    }
}

fn pd_check(r: &Matrix, k: usize, v: &mut Vec<String>) {
    if r.shape() != (k, k) {
        v.push(format!("R must be {k}x{k}, got {:?}", r.shape()));
    } else if !is_symmetric(r) || min_eigenvalue(r) <= 0.0 {
        v.push("R must be symmetric positive definite".into());
    }
}

/// Feedback law ψ(t, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `ψ(t, x) = K_j x + offset` for `t ∈ [t_j, t_{j+1})`.
    LinearGain {
        times: Vec<f64>,
        #[serde(with = "serde_rows::matrices")]
        gains: Vec<Matrix>,
        #[serde(default, with = "serde_rows::opt_vector")]
        offset: Option<Vector>,
    },
    /// Scalar-state table: left value in time, linear inter/extrapolation in
    /// space. `values[(j * xs.len() + i) * k + c]` is component `c` at `(t_j, x_i)`.
    Tabulated {
        times: Vec<f64>,
        xs: Vec<f64>,
        control_dim: usize,
        values: Vec<f64>,
    },
    Constant {
        #[serde(with = "serde_rows::vector")]
        value: Vector,
    },
}

/// Index of the grid cell containing `t` (left-closed), clamped to the grid.
pub(crate) fn left_index(times: &[f64], t: f64) -> usize {
    let eps = 1e-9 * t.abs().max(1.0);
    times.partition_point(|&s| s <= t + eps).saturating_sub(1)
}

impl Policy {
    pub fn zero(k: usize) -> Policy {
        Policy::Constant {
            value: Vector::zeros(k),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Policy::LinearGain { gains, .. } => gains.first().map_or(0, Matrix::nrows),
            Policy::Tabulated { control_dim, .. } => *control_dim,
            Policy::Constant { value } => value.len(),
        }
    }

    pub fn action(&self, t: f64, x: &Vector) -> Vector {
        let mut a = Vector::zeros(self.control_dim());
        self.action_into(t, x, &mut a);
        a
    }

    /// Writes ψ(t, x) into `out` without allocating.
    pub fn action_into(&self, t: f64, x: &Vector, out: &mut Vector) {
        match self {
            Policy::LinearGain {
                times,
                gains,
                offset,
            } => {
                let j = left_index(times, t);
                out.gemv(1.0, &gains[j], x, 0.0);
                if let Some(c) = offset {
                    *out += c;
                }
            }
            Policy::Tabulated {
                times,
                xs,
                control_dim,
                values,
            } => {
                let j = left_index(times, t);
                let k = *control_dim;
                let nx = xs.len();
                let xv = x[0];
                // left node of the bracketing (or nearest boundary) cell
                let i = xs.partition_point(|&s| s <= xv).clamp(1, nx - 1) - 1;
                let w = (xv - xs[i]) / (xs[i + 1] - xs[i]);
                let row = j * nx;
                for c in 0..k {
                    let lo = values[(row + i) * k + c];
                    let hi = values[(row + i + 1) * k + c];
                    out[c] = lo + w * (hi - lo);
                }
            }
            Policy::Constant { value } => out.copy_from(value),
        }
    }

    /// Gain and offset at `t`, linearly interpolated between grid nodes.
    /// Returns `None` for non-linear policies.
    pub fn interpolated_gain(&self, t: f64) -> Option<(Matrix, Option<Vector>)> {
        match self {
            Policy::LinearGain {
                times,
                gains,
                offset,
            } => {
                let j = left_index(times, t);
                let k = if j + 1 < times.len() {
                    let w = ((t - times[j]) / (times[j + 1] - times[j])).clamp(0.0, 1.0);
                    &gains[j] * (1.0 - w) + &gains[j + 1] * w
                } else {
                    gains[j].clone()
                };
                Some((k, offset.clone()))
            }
            _ => None,
        }
    }

    pub fn violations(&self, n: usize, k: usize) -> Vec<String> {
        let mut v = Vec::new();
        let increasing = |ts: &[f64]| ts.windows(2).all(|w| w[1] > w[0]) && ts.iter().all(|t| t.is_finite());
        match self {
            Policy::LinearGain {
                times,
                gains,
                offset,
            } => {
                if times.is_empty() || !increasing(times) {
                    v.push("policy time grid must be non-empty and strictly increasing".into());
                }
                if gains.len() != times.len() {
                    v.push("one gain matrix per time node is required".into());
                }
                if gains.iter().any(|g| g.shape() != (k, n) || !all_finite(g)) {
                    v.push(format!("gain matrices must be finite {k}x{n}"));
                }
                if offset.as_ref().is_some_and(|c| c.len() != k) {
                    v.push(format!("policy offset must have length {k}"));
                }
            }
            Policy::Tabulated {
                times,
                xs,
                control_dim,
                values,
            } => {
                if n != 1 {
                    v.push("tabulated policies require a scalar state".into());
                }
                if *control_dim != k {
                    v.push(format!("tabulated policy must have control dimension {k}"));
                }
                if times.is_empty() || !increasing(times) {
                    v.push("policy time grid must be non-empty and strictly increasing".into());
                }
                if xs.len() < 2 || !increasing(xs) {
                    v.push("spatial grid needs at least two strictly increasing nodes".into());
                }
                if values.len() != times.len() * xs.len() * control_dim {
                    v.push("tabulated values do not match the grid".into());
                }
                if values.iter().any(|x| !x.is_finite()) {
                    v.push("tabulated values must be finite".into());
                }
            }
            Policy::Constant { value } => {
                if value.len() != k || value.iter().any(|x| !x.is_finite()) {
                    v.push(format!("constant control must be a finite {k}-vector"));
                }
            }
        }
        v
    }
}

/// A complete learning/control problem on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub theta: ModelTheta,
    pub noise: NoiseSpec,
    pub cost: CostSpec,
    pub horizon: f64,
    #[serde(with = "serde_rows::vector")]
    pub x0: Vector,
}

impl ProblemInstance {
    pub fn state_dim(&self) -> usize {
        self.theta.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.theta.control_dim()
    }

    /// Every invariant violation; empty iff the instance is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut v = self.theta.violations();
        if !v.is_empty() {
            return v;
        }
        let n = self.state_dim();
        let k = self.control_dim();
        v.extend(self.noise.violations(n));
        v.extend(self.cost.violations(n, k));
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            v.push("horizon must be positive".into());
        }
        if self.x0.len() != n || self.x0.iter().any(|x| !x.is_finite()) {
            v.push(format!("x0 must be a finite vector of length {n}"));
        }
        v
    }

    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidInstance(v))
        }
    }

    pub fn with_theta(&self, theta: ModelTheta) -> ProblemInstance {
        ProblemInstance {
            theta,
            ..self.clone()
        }
    }

    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        let v = policy.violations(self.state_dim(), self.control_dim());
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInstance(v))
        }
    }
}

pub(crate) fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn is_diagonal(m: &Matrix) -> bool {
    m.is_square()
        && m.iter()
            .enumerate()
            .all(|(idx, &v)| idx % m.nrows() == idx / m.nrows() || v == 0.0)
}

pub(crate) fn is_symmetric(m: &Matrix) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= SYM_TOL * scale
}

pub(crate) fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub(crate) fn is_symmetric_psd(m: &Matrix) -> bool {
    all_finite(m) && is_symmetric(m) && min_eigenvalue(m) >= -PSD_TOL * m.amax().max(1.0)
}
