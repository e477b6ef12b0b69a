//! Optimisers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `lr0 * factor^k` where `k` counts the milestones `<= epoch`.
pub fn step_lr(epoch: usize, lr0: f64, milestones: &[usize], factor: f64) -> f64 {
    let k = milestones.iter().filter(|&&m| m <= epoch).count();
    lr0 * factor.powi(k as i32)
}

/// `lr0 * (1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if epoch == 0 {
        return lr0;
    }
    if epoch >= total_epochs {
        return 0.0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Step { milestones: Vec<usize>, factor: f64 },
    Cosine,
    Constant,
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
        match self {
            LrSchedule::Step { milestones, factor } => step_lr(epoch, lr0, milestones, *factor),
            LrSchedule::Cosine => cosine_lr(epoch, total_epochs, lr0),
            LrSchedule::Constant => lr0,
        }
    }
}

/// Gradients of every entry of a bound store, `None` for buffers and
/// parameters that did not take part in the loss.
pub fn collect_grads<T: Scalar>(bound: &Bound, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
    bound.vars().iter().map(|&v| grads.take(v)).collect()
}

fn check_len<T: Scalar>(store: &ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
    if store.len() != grads.len() {
        return Err(Error::Invalid(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    Ok(())
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = |_: &_| Vec::new();
        AdamW {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: store.entries().iter().map(zeros).collect(),
            v: store.entries().iter().map(zeros).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        check_len(store, grads)?;
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step));
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (i, (entry, grad)) in store.entries_mut().iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad.as_ref().filter(|_| entry.trainable) else {
                continue;
            };
            let n = entry.value.len();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.is_empty() {
                m.resize(n, T::zero());
                v.resize(n, T::zero());
            }
            for (((p, &g), mi), vi) in entry.value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    buf: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            buf: store.entries().iter().map(|_| Vec::new()).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        check_len(store, grads)?;
        let (mu, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(lr));
        for (i, (entry, grad)) in store.entries_mut().iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad.as_ref().filter(|_| entry.trainable) else {
                continue;
            };
            let buf = &mut self.buf[i];
            let first = buf.is_empty();
            if first {
                buf.resize(entry.value.len(), T::zero());
            }
            for ((p, &g), b) in entry.value.data_mut().iter_mut().zip(grad.data()).zip(buf.iter_mut()) {
                let d = g + wd * *p;
                *b = if first { d } else { mu * *b + d };
                *p -= lr * *b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule_closed_form() {
        let m = [60, 120, 160];
        assert_eq!(step_lr(0, 2e-4, &m, 0.2), 2e-4);
        assert_eq!(step_lr(59, 2e-4, &m, 0.2), 2e-4);
        assert_eq!(step_lr(60, 1.0, &m, 0.2), 0.2);
        assert_eq!(step_lr(160, 1.0, &m, 0.2), 0.2f64.powi(3));
        assert_eq!(step_lr(100, 0.3, &m, 1.0), 0.3);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 200, 0.0046), 0.0046);
        assert_eq!(cosine_lr(200, 200, 0.0046), 0.0);
        assert!((cosine_lr(100, 200, 1.0) - 0.5).abs() < 1e-15);
    }

    fn quadratic_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap(), true);
        s.add("buf", Tensor::from_vec(&[1], vec![5.0]).unwrap(), false);
        s
    }

    #[test]
    fn optimisers_minimise_a_quadratic_and_skip_buffers() {
        let mut s = quadratic_store();
        let mut adam = AdamW::new(&s, 0.9, 0.999, 0.0);
        for _ in 0..2000 {
            let g = s.entries()[0].value.clone();
            adam.step(&mut s, &[Some(g), Some(Tensor::ones(&[1]))], 0.01).unwrap();
        }
        assert!(s.entries()[0].value.max_abs() < 1e-2);
        assert_eq!(s.entries()[1].value.data(), &[5.0]);

        let mut s = quadratic_store();
        let mut sgd = Sgd::new(&s, 0.9, 0.0);
        for _ in 0..300 {
            let g = s.entries()[0].value.clone();
            sgd.step(&mut s, &[Some(g), None], 0.05).unwrap();
        }
        assert!(s.entries()[0].value.max_abs() < 1e-3);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = quadratic_store();
        let mut adam = AdamW::new(&s, 0.5, 0.999, 0.0);
        let g = Tensor::from_vec(&[2], vec![10.0, -0.1]).unwrap();
        adam.step(&mut s, &[Some(g), None], 0.1).unwrap();
        let x = s.entries()[0].value.data();
        assert!((x[0] - 2.9).abs() < 1e-6 && (x[1] + 1.9).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient_signal() {
        let mut s = quadratic_store();
        let mut adam = AdamW::new(&s, 0.9, 0.999, 0.5);
        adam.step(&mut s, &[Some(Tensor::zeros(&[2])), None], 0.1).unwrap();
        assert_eq!(s.entries()[0].value.data(), &[3.0 * 0.95, -2.0 * 0.95]);
    }
}
