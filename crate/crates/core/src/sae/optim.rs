use alloc::vec;
use alloc::vec::Vec;

use super::config::OptimizerKind;

/// First-order optimiser state over a flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam { beta1, beta2, eps } => Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let bc1 = 1.0 - libm::pow(*beta1, f64::from(*t));
                let bc2 = 1.0 - libm::pow(*beta2, f64::from(*t));
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= *lr * m_hat / (libm::sqrt(v_hat) + *eps);
                }
            }
        }
    }
}
