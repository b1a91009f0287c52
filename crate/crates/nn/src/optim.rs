use crate::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam optimiser. Moment buffers are allocated lazily on the first step and
/// matched to parameters by position, so the parameter list must be passed in
/// the same order every step.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`; buffers are skipped.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f32) {
        let params: Vec<&mut Param> = params.into_iter().filter(|p| p.is_trainable()).collect();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "Adam: parameter list changed between steps");
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        for (p, (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            for i in 0..p.value.len() {
                let g = p.grad[i] + weight_decay * p.value[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                p.value[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + eps);
            }
        }
    }
}
