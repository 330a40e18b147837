use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let step = self.lr * c2.sqrt() / c1;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps * c2.sqrt());
        }
    }
}

/// Adam over independent scalars, advancing only the coordinates that
/// received a gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAdam {
    slots: Vec<Adam>,
}

impl SparseAdam {
    pub fn new(len: usize, lr: f64) -> Self {
        SparseAdam {
            slots: (0..len).map(|_| Adam::new(1, lr)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[Option<f64>]) {
        for ((p, g), slot) in params.iter_mut().zip(grad).zip(&mut self.slots) {
            if let Some(g) = g {
                slot.step(std::slice::from_mut(p), &[*g]);
            }
        }
    }
}
