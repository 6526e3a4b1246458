//! Built-in problem instances.

use crate::config::{ExperimentConfig, GlsSection, OutputSection, SimSection};
use crate::decouple::FieldParams;
use crate::estimate::RidgeScaling;
use crate::learn::RegretMode;
use crate::model::{CostSpec, LqCost, Matrix, ModelTheta, NoiseSpec, Vector};
use crate::stats::{ConcentrationParams, Statistic};

/// Weakly coupled, marginally unstable three-state system.
pub fn lq3d_theta() -> ModelTheta {
    ModelTheta {
        a: Matrix::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]),
        b: Matrix::identity(3, 3),
    }
}

/// Initial guess: standard normal draws.
pub fn lq3d_theta0() -> ModelTheta {
    ModelTheta {
        a: Matrix::from_row_slice(
            3,
            3,
            &[1.6243, -0.6118, -0.5282, -1.0730, 0.8654, -2.3015, 1.7448, -0.7612, 0.3190],
        ),
        b: Matrix::from_row_slice(
            3,
            3,
            &[-0.2494, 1.4621, -2.0601, -0.3224, -0.3841, 1.1338, -1.0999, -0.1724, -0.8779],
        ),
    }
}

/// Three-state LQ learning experiment: `σ = I`, `Q = 0.1 I`, `R = I`,
/// `G = 0`, `x0 = 0`, `T = 1.5`, 100 steps, `m0 = 4`, 11 updates.
pub fn paper_lq3d() -> ExperimentConfig {
    let theta = lq3d_theta();
    let theta0 = lq3d_theta0();
    ExperimentConfig {
        model: theta,
        noise: NoiseSpec::diffusion(Matrix::identity(3, 3)),
        cost: CostSpec::Lq(LqCost {
            q: Matrix::identity(3, 3) * 0.1,
            r: Matrix::identity(3, 3),
            g: Matrix::zeros(3, 3),
        }),
        sim: SimSection {
            horizon: 1.5,
            x0: Vector::zeros(3),
            steps: 100,
            episodes: 1,
            seed: Some(0),
        },
        gls: Some(GlsSection {
            a0: theta0.a,
            b0: theta0.b,
            m0: 4,
            num_updates: 11,
            delta: 0.05,
            runs: 1,
            pooled: false,
            ridge: RidgeScaling::Summed,
            regret: RegretMode::Expected,
        }),
        decouple: None,
        concentration: Some(ConcentrationParams {
            statistic: Statistic::U { row: 0, col: 0 },
            epsilon: 0.1,
            m_list: vec![4, 8, 16, 32, 64],
            trials: 200,
        }),
        output: Some(OutputSection { dir: "out".into() }),
    }
}

/// Scalar controlled Brownian motion with quadratic cost, used for
/// decoupling-field cross-checks: `dX = a dt + dW`, `Q = 0.1`, `R = 1`.
pub fn scalar_lq() -> ExperimentConfig {
    let m1 = |v| Matrix::from_element(1, 1, v);
    ExperimentConfig {
        model: ModelTheta {
            a: m1(0.0),
            b: m1(1.0),
        },
        noise: NoiseSpec::diffusion(m1(1.0)),
        cost: CostSpec::Lq(LqCost {
            q: m1(0.1),
            r: m1(1.0),
            g: m1(0.0),
        }),
        sim: SimSection {
            horizon: 1.5,
            x0: Vector::zeros(1),
            steps: 100,
            episodes: 1,
            seed: Some(0),
        },
        gls: None,
        decouple: Some(FieldParams {
            x_max: None,
            dx: 0.05,
            dt: None,
        }),
        concentration: None,
        output: Some(OutputSection { dir: "out".into() }),
    }
}
