//! AdamW with decoupled weight decay, plus the warmup + cosine schedule.

use ndarray::Array2;

use super::layers::ParamStore;
use super::tape::Arr;

/// Linear warmup to the peak, then cosine annealing down to zero.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        assert!(step <= self.total_steps, "step {step} past schedule end");
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let m = (0..store.len())
            .map(|i| Array2::zeros(store.value(i).dim()))
            .collect();
        let v = (0..store.len())
            .map(|i| Array2::zeros(store.value(i).dim()))
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i] = None` leaves parameter `i` untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Arr>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let mut p = store.value(id).as_ref().clone();
            ndarray::Zip::from(&mut p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *p);
            });
            store.set(id, p);
        }
    }

    /// Flatten optimizer state for checkpointing: (step, moments per param).
    pub fn state(&self) -> (u64, &[Arr], &[Arr]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Arr>, v: Vec<Arr>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule {
            peak_lr: 1e-4,
            warmup_steps: 100,
            total_steps: 1000,
        };
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(100) - 1e-4).abs() < 1e-18);
        assert!(s.lr_at(1000) < 1e-6);
        // Continuity at the warmup boundary.
        assert!((s.lr_at(99) - s.lr_at(100)).abs() < 2e-6);
        // Monotone decay after warmup.
        assert!(s.lr_at(500) < s.lr_at(100));
        assert!(s.lr_at(900) < s.lr_at(500));
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Array2::from_elem((1, 1), 5.0));
        let mut opt = AdamW::new(&store, 0.0);
        for _ in 0..2000 {
            let x = store.value(id)[[0, 0]];
            let g = Some(Array2::from_elem((1, 1), 2.0 * x));
            opt.step(&mut store, &[g], 0.01);
        }
        assert!(store.value(id)[[0, 0]].abs() < 1e-3);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient_signal() {
        let mut store = ParamStore::new();
        let id = store.add("x", Array2::from_elem((1, 1), 1.0));
        let mut opt = AdamW::new(&store, 0.1);
        for _ in 0..100 {
            let g = Some(Array2::zeros((1, 1)));
            opt.step(&mut store, &[g], 0.1);
        }
        let v = store.value(id)[[0, 0]];
        assert!(v < 1.0 && v > 0.0);
    }
}
