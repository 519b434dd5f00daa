use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_DEFAULT_LR: f64 = 2.5e-4;
pub const RMSPROP_DEFAULT_LR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { alpha: f64, eps: f64 },
}

/// Multiply the learning rate by `factor` every `interval` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecay {
    pub factor: f64,
    pub interval: u64,
}

#[derive(Clone, Debug)]
pub struct OptimState {
    kind: OptimKind,
    lr: f64,
    decay: Option<StepDecay>,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimState {
    pub fn adam(lr: f64) -> Self {
        Self::new(
            OptimKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
        )
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self::new(
            OptimKind::RmsProp {
                alpha: 0.99,
                eps: 1e-8,
            },
            lr,
        )
    }

    pub fn new(kind: OptimKind, lr: f64) -> Self {
        assert!(lr > 0.0 && lr.is_finite(), "learning rate must be positive");
        Self {
            kind,
            lr,
            decay: None,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_decay(mut self, decay: StepDecay) -> Self {
        if decay.interval > 0 {
            self.decay = Some(decay);
        }
        self
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    /// Apply one update. Gradients containing NaN or infinity are refused and
    /// leave both parameters and state untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numerical {
                    step: self.step as usize,
                    message: format!("non-finite gradient in parameter tensor {i}"),
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(a, p)| a.shape() != p.shape())
        {
            return Err(Error::shape("optimizer state does not match parameters"));
        }
        self.step += 1;
        let t = self.step as i32;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let pd = p.data_mut();
            match self.kind {
                OptimKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..pd.len() {
                        let gi = g.data()[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        pd[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
                OptimKind::RmsProp { alpha, eps } => {
                    for i in 0..pd.len() {
                        let gi = g.data()[i];
                        v[i] = alpha * v[i] + (1.0 - alpha) * gi * gi;
                        pd[i] -= self.lr * gi / (v[i].sqrt() + eps);
                    }
                }
            }
        }
        if let Some(d) = self.decay {
            if self.step.is_multiple_of(d.interval) {
                self.lr *= d.factor;
            }
        }
        Ok(())
    }
}
