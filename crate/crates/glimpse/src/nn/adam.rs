//! Adam with decoupled weight decay.

use super::Scalar;

struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state for a fixed set of parameter tensors, addressed by slot
/// index (two slots per conv layer: weights then bias).
pub struct Adam<T> {
    t: u64,
    beta1: T,
    beta2: T,
    eps: T,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(slot_sizes: &[usize]) -> Self {
        Self {
            t: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            slots: slot_sizes
                .iter()
                .map(|&n| Slot { m: vec![T::zero(); n], v: vec![T::zero(); n] })
                .collect(),
        }
    }

    /// Advance the step counter; call once per optimizer step, before the
    /// per-tensor updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`
    pub fn update(&mut self, slot: usize, params: &mut [T], grads: &[T], lr: T, wd: T) {
        assert!(self.t > 0, "begin_step before update");
        let s = &mut self.slots[slot];
        assert_eq!(params.len(), s.m.len(), "slot {slot} size mismatch");
        assert_eq!(params.len(), grads.len());
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            s.m[i] = self.beta1 * s.m[i] + (one - self.beta1) * g;
            s.v[i] = self.beta2 * s.v[i] + (one - self.beta2) * g * g;
            let m_hat = s.m[i] / bc1;
            let v_hat = s.v[i] / bc2;
            params[i] = params[i] - lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * params[i]);
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        let mut opt = Adam::<f64>::new(&[2]);
        let mut p = vec![1.0, -2.0];
        let g = vec![0.5, -0.25];
        opt.begin_step();
        opt.update(0, &mut p, &g, 0.1, 0.0);
        // bias-corrected first step: m_hat = g, v_hat = g^2  =>  step = lr * sign-ish
        for (i, &gi) in g.iter().enumerate() {
            let want = [1.0, -2.0][i] - 0.1 * gi / (gi.abs() + 1e-8);
            assert!((p[i] - want).abs() < 1e-9, "{} vs {}", p[i], want);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params_even_with_zero_grad() {
        let mut opt = Adam::<f64>::new(&[1]);
        let mut p = vec![2.0];
        opt.begin_step();
        opt.update(0, &mut p, &[0.0], 0.1, 0.01);
        assert!((p[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::<f64>::new(&[1]);
        let mut p = vec![3.0];
        for _ in 0..500 {
            let g = vec![2.0 * p[0]]; // d/dp p^2
            opt.begin_step();
            opt.update(0, &mut p, &g, 0.05, 0.0);
        }
        assert!(p[0].abs() < 1e-2, "{}", p[0]);
    }
}
