use super::config::{OptimizerConfig, Schedule};
use crate::error::Result;
use crate::numerics::Matrix;

/// Learning rate after `t` of `total` epochs.
pub fn learning_rate(cfg: &OptimizerConfig, t: usize, total: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.learning_rate,
        Schedule::Cosine => cosine_rate(cfg.learning_rate, cfg.min_learning_rate, t, total),
    }
}

/// `eta_min + (eta0 - eta_min)(1 + cos(pi t / T)) / 2`, written so that both
/// endpoints are exact.
pub fn cosine_rate(eta0: f64, eta_min: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return eta0;
    }
    let w = (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()) / 2.0;
    let w = if t == 0 {
        1.0
    } else if t >= total {
        0.0
    } else {
        w
    };
    eta0 * w + eta_min * (1.0 - w)
}

/// SGD with heavy-ball momentum and decoupled weight decay:
/// `v = mu v + g`, `w = w (1 - lr wd) - lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        let decay = 1.0 - lr * self.weight_decay;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = v.scale(self.momentum).add(g)?;
            let update = v.scale(lr);
            for (w, u) in p.data_mut().iter_mut().zip(update.data()) {
                *w = *w * decay - u;
            }
        }
        Ok(())
    }
}
