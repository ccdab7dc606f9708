use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain or heavy-ball gradient descent.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every trainable tensor of the active layers.
pub(crate) struct OptimState {
    step: i32,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_t: Vec<f64>,
    v_t: Vec<f64>,
    m_o: f64,
    v_o: f64,
}

impl OptimState {
    pub fn new(weights: &[Array2<f64>]) -> Self {
        OptimState {
            step: 0,
            m_w: weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_t: vec![0.0; weights.len()],
            v_t: vec![0.0; weights.len()],
            m_o: 0.0,
            v_o: 0.0,
        }
    }

    pub fn step(
        &mut self,
        opt: &Optimizer,
        lr: f64,
        weights: &mut [Array2<f64>],
        thetas: &mut [f64],
        omega: Option<&mut f64>,
        grad: &GradientSet,
    ) {
        self.step += 1;
        match *opt {
            Optimizer::Sgd { momentum } => {
                let upd = |m: &mut f64, _v: &mut f64, g: f64| -> f64 {
                    *m = momentum * *m + g;
                    lr * *m
                };
                self.apply(weights, thetas, omega, grad, upd);
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let upd = |m: &mut f64, v: &mut f64, g: f64| -> f64 {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    lr * (*m / c1) / ((*v / c2).sqrt() + eps)
                };
                self.apply(weights, thetas, omega, grad, upd);
            }
        }
    }

    fn apply(
        &mut self,
        weights: &mut [Array2<f64>],
        thetas: &mut [f64],
        omega: Option<&mut f64>,
        grad: &GradientSet,
        upd: impl Fn(&mut f64, &mut f64, f64) -> f64,
    ) {
        for (l, w) in weights.iter_mut().enumerate() {
            let g = &grad.d_weights[l];
            ndarray::Zip::from(w)
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(g)
                .for_each(|w, m, v, &g| *w -= upd(m, v, g));
            thetas[l] -= upd(&mut self.m_t[l], &mut self.v_t[l], grad.d_thetas[l]);
        }
        if let (Some(o), Some(g)) = (omega, grad.d_omega) {
            *o -= upd(&mut self.m_o, &mut self.v_o, g);
        }
    }
}
