use std::collections::HashMap;

use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};

/// Adam without weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = (self.lr / bc1) as f32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        // iterate in store order so updates are reproducible
        let ids: Vec<ParamId> = params.trainable_ids().collect();
        for id in ids {
            let Some(g) = grads.param(id) else { continue };
            let value = params.get_mut(id);
            let n = value.numel();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *p -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::ParamKind;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("p", ParamKind::Trainable, Tensor::from_vec(&[2], vec![1.0, -1.0]));
        let mut g = Graph::new();
        let p = g.param(id, store.shared(id));
        let grads = g.backward(&p, Tensor::from_vec(&[2], vec![3.0, -0.5]));
        let mut adam = Adam::new(0.1);
        adam.step(&mut store, &grads);
        let v = store.get(id).data();
        assert!((v[0] - 0.9).abs() < 1e-5);
        assert!((v[1] + 0.9).abs() < 1e-5);
    }
}
