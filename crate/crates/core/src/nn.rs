//! Named parameter storage and the layer building blocks used by the
//! generator, discriminator and classifier.

use rand::Rng;

use crate::autograd::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as running statistics are stored but never optimised.
    pub trainable: bool,
}

/// Ordered collection of named tensors. Order is insertion order and is part
/// of the checkpoint format.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Replace values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Places every tensor on the graph. Trainable entries become
    /// gradient-tracking leaves when `requires_grad` is set.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| g.leaf(e.value.clone(), requires_grad && e.trainable))
                .collect(),
        }
    }
}

/// Graph handles for every entry of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// One forward pass: the graph, bound parameters and the train/eval switch.
pub struct Forward<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    pub p: &'a Bound,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(g: &'a mut Graph<T>, p: &'a Bound, train: bool) -> Self {
        Forward {
            g,
            p,
            train,
            bn_updates: Vec::new(),
        }
    }
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats<T>,
}

pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    for u in updates {
        let m = T::lit(u.momentum);
        let unbias = if u.stats.count > 1 {
            T::lit(u.stats.count as f64 / (u.stats.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in store.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in store.get_mut(u.running_var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
    }
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, std^2)`.
    Normal(f64),
    /// He-normal, `std = sqrt(2 / fan_in)`.
    KaimingNormal,
}

impl Init {
    fn sample<T: Scalar, R: Rng + ?Sized>(self, shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
        let std = match self {
            Init::Normal(s) => s,
            Init::KaimingNormal => (2.0 / fan_in as f64).sqrt(),
        };
        Tensor::randn(shape, std, rng)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init.sample(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng);
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.p.var(self.weight);
        let b = self.bias.map(|b| f.p.var(b));
        f.g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init.sample(&[cin, cout, kernel, kernel], cin * kernel * kernel, rng);
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true));
        ConvTranspose2d {
            weight,
            bias,
            stride,
            pad,
            output_pad,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.p.var(self.weight);
        let b = self.bias.map(|b| f.p.var(b));
        f.g.conv_transpose2d(x, w, b, self.stride, self.pad, self.output_pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c]), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[c]), false),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let gamma = f.p.var(self.gamma);
        let beta = f.p.var(self.beta);
        if f.train {
            let (y, stats) = f.g.batch_norm(x, gamma, beta, T::lit(self.eps))?;
            f.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                momentum: self.momentum,
                stats,
            });
            Ok(y)
        } else {
            // Eval mode folds running statistics into a per-channel affine map.
            let rm = f.g.value(f.p.var(self.running_mean)).data().to_vec();
            let rv = f.g.value(f.p.var(self.running_var)).data().to_vec();
            let gv = f.g.value(gamma).data().to_vec();
            let bv = f.g.value(beta).data().to_vec();
            let eps = T::lit(self.eps);
            let scale: Vec<T> = gv.iter().zip(&rv).map(|(&g, &v)| g / (v + eps).sqrt()).collect();
            let shift: Vec<T> = bv
                .iter()
                .zip(&rm)
                .zip(&scale)
                .map(|((&b, &m), &s)| b - m * s)
                .collect();
            f.g.channel_affine(x, &scale, &shift)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let w = Init::Normal((1.0 / inputs as f64).sqrt()).sample(&[outputs, inputs], inputs, rng);
        Linear {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true),
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.p.var(self.weight);
        let b = f.p.var(self.bias);
        f.g.linear(x, w, Some(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bind_marks_buffers_constant() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        assert!(g.requires_grad(p.var(bn.gamma)));
        assert!(!g.requires_grad(p.var(bn.running_mean)));
        assert_eq!(store.num_trainable(), 4);
    }

    #[test]
    fn running_stats_move_towards_batch_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let x = g.constant(Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap());
        let mut f = Forward::new(&mut g, &p, true);
        bn.forward(&mut f, x).unwrap();
        let updates = std::mem::take(&mut f.bn_updates);
        apply_bn_updates(&mut store, &updates);
        assert!((store.get(bn.running_mean).item() - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((store.get(bn.running_var).item() - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn load_from_rejects_shape_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::<f32>::new();
        Conv2d::new(&mut a, "c", 1, 2, 3, 1, 1, true, Init::Normal(0.02), &mut rng);
        let mut b = ParamStore::<f32>::new();
        Conv2d::new(&mut b, "c", 1, 3, 3, 1, 1, true, Init::Normal(0.02), &mut rng);
        assert!(a.load_from(&b).is_err());
        let c = a.clone();
        assert!(a.load_from(&c).is_ok());
    }
}
