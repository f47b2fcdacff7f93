use crate::float::Float;
use crate::model::ParameterStore;

/// Adam with decoupled weight decay. Decay applies to matrices only
/// (norm gains and biases are exempt).
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Float> AdamW<T> {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>, grads: &[T], lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr_t = T::of(lr);
        let eps = T::of(self.eps);
        let specs: Vec<_> = store
            .specs()
            .iter()
            .filter(|s| s.trainable)
            .map(|s| (s.range(), s.shape.len() >= 2))
            .collect();
        for (r, decay) in specs {
            let shrink = if decay {
                T::one() - lr_t * T::of(self.weight_decay)
            } else {
                T::one()
            };
            for i in r {
                let g = grads[i];
                self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                let p = &mut store.data[i];
                *p = *p * shrink - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Linear warmup to `peak`, then linear decay to zero at `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, peak: f64) -> f64 {
    if step < warmup {
        peak * (step + 1) as f64 / warmup as f64
    } else if total <= warmup {
        peak
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    }
}
