use num_traits::Float;

use super::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    steps: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let cast = |v: f64| T::from(v).unwrap_or_else(T::nan);
        let (b1, b2) = (cast(c.beta1), cast(c.beta2));
        let correction1 = cast(1.0 - libm::pow(c.beta1, t as f64));
        let correction2 = cast(1.0 - libm::pow(c.beta2, t as f64));
        let (lr, eps) = (cast(c.learning_rate), cast(c.epsilon));
        let entries = params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(self.m.entries_mut().iter_mut().zip(self.v.entries_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in entries {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / correction1;
                let vhat = *vi / correction2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
