//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every op applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and returns
//! gradients for the leaves that were created with `requires_grad`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Resample1d};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of the leaves reachable from the differentiated output.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Batch statistics produced by a training-mode batch-norm op.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance used for normalisation.
    pub var: Vec<T>,
    pub count: usize,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies the value into a fresh constant leaf; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push<F>(&mut self, value: Tensor<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.nodes[out.0].value.shape().to_vec();
        assert_eq!(
            self.nodes[out.0].value.len(),
            1,
            "backward() needs a scalar output, got {seed_shape:?}"
        );
        grads[out.0] = Some(Tensor::ones(&seed_shape));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = backward(&ctx);
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, &[a, b], |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y)),
                ctx.needs[1].then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x)),
            ]
        }))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, &[a], move |ctx| vec![Some(ctx.grad.scale(s))])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, &[a], |ctx| vec![Some(ctx.grad.clone())])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, &[a], |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.output, |g, y| {
                if y > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }))]
        })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        self.push(v, &[a], move |ctx| {
            vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
                if x > T::zero() {
                    g
                } else {
                    g * slope
                }
            }))]
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, &[a], |ctx| {
            vec![Some(
                ctx.grad
                    .zip_map(ctx.output, |g, y| g * (T::one() - y * y)),
            )]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, &[a], |ctx| {
            vec![Some(
                ctx.grad
                    .zip_map(ctx.output, |g, y| g * y * (T::one() - y)),
            )]
        })
    }

    // ---- reductions and losses ----------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, &[a], |ctx| {
            let g = ctx.grad.item();
            vec![Some(Tensor::full(ctx.inputs[0].shape(), g))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, &[a], |ctx| {
            let n = T::lit(ctx.inputs[0].len() as f64);
            let g = ctx.grad.item() / n;
            vec![Some(Tensor::full(ctx.inputs[0].shape(), g))]
        })
    }

    /// `mean((a - b)^2)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len();
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let v = Tensor::scalar(s / T::lit(n as f64));
        Ok(self.push(v, &[a, b], move |ctx| {
            let k = ctx.grad.item() * T::lit(2.0 / n as f64);
            let d = ctx.inputs[0].zip_map(ctx.inputs[1], |x, y| (x - y) * k);
            vec![
                ctx.needs[0].then(|| d.clone()),
                ctx.needs[1].then(|| d.map(|v| -v)),
            ]
        }))
    }

    /// `mean((a - target)^2)` against a constant target value.
    pub fn mse_to(&mut self, a: Var, target: T) -> Var {
        let n = self.value(a).len();
        let s: T = self
            .value(a)
            .data()
            .iter()
            .map(|&x| (x - target) * (x - target))
            .sum();
        let v = Tensor::scalar(s / T::lit(n as f64));
        self.push(v, &[a], move |ctx| {
            let k = ctx.grad.item() * T::lit(2.0 / n as f64);
            vec![Some(ctx.inputs[0].map(|x| (x - target) * k))]
        })
    }

    /// `mean(|a|)`; the subgradient at 0 is 0.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s: T = self.value(a).data().iter().map(|x| x.abs()).sum();
        let v = Tensor::scalar(s / T::lit(n as f64));
        self.push(v, &[a], move |ctx| {
            let k = ctx.grad.item() / T::lit(n as f64);
            vec![Some(ctx.inputs[0].map(|x| {
                if x > T::zero() {
                    k
                } else if x < T::zero() {
                    -k
                } else {
                    T::zero()
                }
            }))]
        })
    }

    /// Mean softmax cross-entropy of `[N, K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.shape()[0] != labels.len() {
            return Err(shape_err(format!(
                "cross_entropy: logits {:?} vs {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let (n, k) = (lv.shape()[0], lv.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(shape_err(format!("cross_entropy: label {bad} >= {k}")));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &lv.data()[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / z;
            }
            loss += z.ln() + m - row[labels[i]];
        }
        let v = Tensor::scalar(loss / T::lit(n as f64));
        let labels = labels.to_vec();
        Ok(self.push(v, &[logits], move |ctx| {
            let g = ctx.grad.item() / T::lit(n as f64);
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] -= T::one();
            }
            d.iter_mut().for_each(|v| *v *= g);
            vec![Some(Tensor::from_vec(&[n, k], d).unwrap())]
        }))
    }

    // ---- convolution ---------------------------------------------------------

    /// Zero-padded 2-d convolution. `w` is `[O, C, kh, kw]`, `b` is `[O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.shape().len() != 4 || wv.shape().len() != 4 {
            return Err(shape_err(format!(
                "conv2d: input {:?} weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (n, c, h, wd) = xv.dims4();
        let (o, wc, kh, kw) = wv.dims4();
        if wc != c {
            return Err(shape_err(format!(
                "conv2d: input has {c} channels, weight expects {wc}"
            )));
        }
        let g = ConvGeom::conv(c, h, wd, kh, kw, stride, pad).ok_or_else(|| {
            shape_err(format!(
                "conv2d: {h}x{wd} input (pad {pad}) smaller than {kh}x{kw} kernel"
            ))
        })?;
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(shape_err(format!("conv2d: bias {:?}", self.value(b).shape())));
            }
        }
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let mut out = vec![T::zero(); n * o * cols];
        let mut colbuf = vec![T::zero(); rows * cols];
        for i in 0..n {
            kernels::im2col(xv.sample(i), &g, &mut colbuf);
            let dst = &mut out[i * o * cols..(i + 1) * o * cols];
            T::gemm(o, rows, cols, T::one(), wv.data(), false, &colbuf, false, T::zero(), dst);
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (oc, chunk) in dst.chunks_mut(cols).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv[oc]);
                }
            }
        }
        let value = Tensor::from_vec(&[n, o, g.ho, g.wo], out)?;
        let parents: Vec<Var> = std::iter::once(x).chain([w]).chain(b).collect();
        Ok(self.push(value, &parents, move |ctx| {
            let (xv, wv, gy) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let mut colbuf = vec![T::zero(); rows * cols];
            let mut dcols = vec![T::zero(); rows * cols];
            let mut dx = ctx.needs[0].then(|| Tensor::zeros(xv.shape()));
            let mut dw = ctx.needs[1].then(|| Tensor::zeros(wv.shape()));
            for i in 0..n {
                let gyi = &gy.data()[i * o * cols..(i + 1) * o * cols];
                if let Some(dw) = dw.as_mut() {
                    kernels::im2col(xv.sample(i), &g, &mut colbuf);
                    T::gemm(o, cols, rows, T::one(), gyi, false, &colbuf, true, T::one(), dw.data_mut());
                }
                if let Some(dx) = dx.as_mut() {
                    T::gemm(rows, o, cols, T::one(), wv.data(), true, gyi, false, T::zero(), &mut dcols);
                    kernels::col2im(&dcols, &g, dx.sample_mut(i));
                }
            }
            let mut res = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                res.push(ctx.needs[2].then(|| channel_sums(gy)));
            }
            res
        }))
    }

    /// Transposed convolution. `w` is `[Cin, Cout, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4();
        let (wcin, cout, kh, kw) = wv.dims4();
        if wcin != cin {
            return Err(shape_err(format!(
                "conv_transpose2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        let ho = (h - 1) * stride + kh + output_pad;
        let wo = (wd - 1) * stride + kw + output_pad;
        if ho < 2 * pad + 1 || wo < 2 * pad + 1 {
            return Err(shape_err("conv_transpose2d: padding exceeds output".into()));
        }
        let (ho, wo) = (ho - 2 * pad, wo - 2 * pad);
        // Geometry of the forward conv that this op is the adjoint of.
        let g = ConvGeom::conv(cout, ho, wo, kh, kw, stride, pad)
            .filter(|g| g.ho == h && g.wo == wd)
            .ok_or_else(|| shape_err("conv_transpose2d: inconsistent geometry".into()))?;
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let mut out = vec![T::zero(); n * cout * ho * wo];
        let mut colbuf = vec![T::zero(); rows * cols];
        for i in 0..n {
            T::gemm(rows, cin, cols, T::one(), wv.data(), true, xv.sample(i), false, T::zero(), &mut colbuf);
            let dst = &mut out[i * cout * ho * wo..(i + 1) * cout * ho * wo];
            kernels::col2im(&colbuf, &g, dst);
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (oc, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv[oc]);
                }
            }
        }
        let value = Tensor::from_vec(&[n, cout, ho, wo], out)?;
        let parents: Vec<Var> = std::iter::once(x).chain([w]).chain(b).collect();
        Ok(self.push(value, &parents, move |ctx| {
            let (xv, wv, gy) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let mut colbuf = vec![T::zero(); rows * cols];
            let mut dx = ctx.needs[0].then(|| Tensor::zeros(xv.shape()));
            let mut dw = ctx.needs[1].then(|| Tensor::zeros(wv.shape()));
            for i in 0..n {
                kernels::im2col(gy.sample(i), &g, &mut colbuf);
                if let Some(dx) = dx.as_mut() {
                    T::gemm(cin, rows, cols, T::one(), wv.data(), false, &colbuf, false, T::zero(), dx.sample_mut(i));
                }
                if let Some(dw) = dw.as_mut() {
                    T::gemm(cin, cols, rows, T::one(), xv.sample(i), false, &colbuf, true, T::one(), dw.data_mut());
                }
            }
            let mut res = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                res.push(ctx.needs[2].then(|| channel_sums(gy)));
            }
            res
        }))
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        if pad >= h || pad >= w {
            return Err(shape_err(format!(
                "reflect_pad: pad {pad} needs input larger than {h}x{w}"
            )));
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let map: Arc<Vec<usize>> = Arc::new(
            (0..hp)
                .flat_map(|y| {
                    let sy = kernels::reflect_index(y as isize - pad as isize, h);
                    (0..wp).map(move |x| {
                        sy * w + kernels::reflect_index(x as isize - pad as isize, w)
                    })
                })
                .collect(),
        );
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * hp * wp);
        for p in 0..planes {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            out.extend(map.iter().map(|&i| src[i]));
        }
        let value = Tensor::from_vec(&[n, c, hp, wp], out)?;
        Ok(self.push(value, &[x], move |ctx| {
            let mut dx = Tensor::zeros(ctx.inputs[0].shape());
            let d = dx.data_mut();
            for p in 0..planes {
                let g = &ctx.grad.data()[p * hp * wp..(p + 1) * hp * wp];
                let dst = &mut d[p * h * w..(p + 1) * h * w];
                for (&i, &gv) in map.iter().zip(g) {
                    dst[i] += gv;
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Per-sample, per-channel normalisation without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); n * c];
        for p in 0..n * c {
            let src = &xv.data()[p * hw..(p + 1) * hw];
            let (mean, var) = mean_var(src);
            let is = T::one() / (var + eps).sqrt();
            inv_std[p] = is;
            for (o, &v) in out[p * hw..(p + 1) * hw].iter_mut().zip(src) {
                *o = (v - mean) * is;
            }
        }
        let value = Tensor::from_vec(xv.shape(), out).unwrap();
        self.push(value, &[x], move |ctx| {
            let y = ctx.output.data();
            let gy = ctx.grad.data();
            let mut dx = vec![T::zero(); y.len()];
            let m = T::lit(hw as f64);
            for p in 0..n * c {
                let r = p * hw..(p + 1) * hw;
                let (yy, gg) = (&y[r.clone()], &gy[r.clone()]);
                let mg: T = gg.iter().copied().sum::<T>() / m;
                let mgy: T = gg.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / m;
                for ((d, &g), &yv) in dx[r].iter_mut().zip(gg).zip(yy) {
                    *d = inv_std[p] * (g - mg - yv * mgy);
                }
            }
            vec![Some(Tensor::from_vec(ctx.output.shape(), dx).unwrap())]
        })
    }

    /// Training-mode batch normalisation over `(N, H, W)` with affine `gamma`/`beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(shape_err("batch_norm: affine parameters must be [C]".into()));
        }
        let hw = h * w;
        let count = n * hw;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for i in 0..n {
                s += xv.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let m = s / T::lit(count as f64);
            let mut v = T::zero();
            for i in 0..n {
                for &x in &xv.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    v += (x - m) * (x - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / T::lit(count as f64);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for ((xh, o), &x) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xv.data()[r]) {
                    *xh = (x - mean[ch]) * inv_std[ch];
                    *o = gv[ch] * *xh + bv[ch];
                }
            }
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        let stats = BatchStats {
            mean,
            var,
            count,
        };
        let shape = xv.shape().to_vec();
        let var = self.push(value, &[x, gamma, beta], move |ctx| {
            let gy = ctx.grad.data();
            let gamma = ctx.inputs[1].data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                    for (&g, &xh) in gy[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[ch] += g * xh;
                        dbeta[ch] += g;
                    }
                }
            }
            let dx = ctx.needs[0].then(|| {
                let m = T::lit(count as f64);
                let mut dx = vec![T::zero(); gy.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                        let k = gamma[ch] * inv_std[ch];
                        let (mg, mgx) = (dbeta[ch] / m, dgamma[ch] / m);
                        for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&gy[r.clone()]).zip(&xhat[r]) {
                            *d = k * (g - mg - xh * mgx);
                        }
                    }
                }
                Tensor::from_vec(&shape, dx).unwrap()
            });
            vec![
                dx,
                ctx.needs[1].then(|| Tensor::from_vec(&[c], dgamma).unwrap()),
                ctx.needs[2].then(|| Tensor::from_vec(&[c], dbeta).unwrap()),
            ]
        });
        Ok((var, stats))
    }

    /// Per-channel `x * scale[c] + shift[c]` with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        if scale.len() != c || shift.len() != c {
            return Err(shape_err("channel_affine: coefficient length".into()));
        }
        let hw = h * w;
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                out[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale[ch] + shift[ch]);
            }
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        let scale = scale.to_vec();
        Ok(self.push(value, &[x], move |ctx| {
            let mut d = ctx.grad.clone();
            for i in 0..n {
                for ch in 0..c {
                    d.data_mut()[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                        .iter_mut()
                        .for_each(|v| *v *= scale[ch]);
                }
            }
            vec![Some(d)]
        }))
    }

    // ---- spatial --------------------------------------------------------------

    /// Selects `e1` where the per-sample mask is set and `e2` elsewhere,
    /// broadcasting the `[N, H, W]` mask over channels.
    pub fn mask_mix(&mut self, e1: Var, e2: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape("mask_mix", e1, e2)?;
        let (n, c, h, w) = self.value(e1).dims4();
        if mask.len() != n * h * w {
            return Err(shape_err(format!(
                "mask_mix: mask has {} entries, features need {n}x{h}x{w}",
                mask.len()
            )));
        }
        let mask: Arc<Vec<bool>> = Arc::new(mask.to_vec());
        let select = move |i: usize| {
            let hw = h * w;
            let sample = i / (c * hw);
            mask[sample * hw + i % hw]
        };
        let a = self.value(e1).data();
        let b = self.value(e2).data();
        let out: Vec<T> = (0..a.len())
            .map(|i| if select(i) { a[i] } else { b[i] })
            .collect();
        let value = Tensor::from_vec(self.value(e1).shape(), out)?;
        Ok(self.push(value, &[e1, e2], move |ctx| {
            let g = ctx.grad.data();
            let mut g1 = vec![T::zero(); g.len()];
            let mut g2 = vec![T::zero(); g.len()];
            for i in 0..g.len() {
                if select(i) {
                    g1[i] = g[i];
                } else {
                    g2[i] = g[i];
                }
            }
            let shape = ctx.grad.shape();
            vec![
                Some(Tensor::from_vec(shape, g1).unwrap()),
                Some(Tensor::from_vec(shape, g2).unwrap()),
            ]
        }))
    }

    /// Separable linear resampling of the spatial axes.
    pub fn resample(&mut self, x: Var, rows: &Resample1d, cols: &Resample1d) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4();
        if rows.in_len != h || cols.in_len != w {
            return Err(shape_err(format!(
                "resample: operator expects {}x{}, input is {h}x{w}",
                rows.in_len, cols.in_len
            )));
        }
        let planes = n * c;
        let out = kernels::resample2d(self.value(x).data(), planes, rows, cols);
        let value = Tensor::from_vec(&[n, c, rows.out_len, cols.out_len], out)?;
        let (rows, cols) = (rows.clone(), cols.clone());
        Ok(self.push(value, &[x], move |ctx| {
            let d = kernels::resample2d_transposed(ctx.grad.data(), planes, &rows, &cols);
            vec![Some(Tensor::from_vec(ctx.inputs[0].shape(), d).unwrap())]
        }))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4();
        let rows = Resample1d::nearest(h, h * factor);
        let cols = Resample1d::nearest(w, w * factor);
        self.resample(x, &rows, &cols)
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let g = ConvGeom::conv(c, h, w, k, k, stride, pad)
            .ok_or_else(|| shape_err("max_pool2d: input smaller than window".into()))?;
        let (ho, wo) = (g.ho, g.wo);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut at = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best || at == usize::MAX {
                                best = src[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(p * h * w + at);
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ho, wo], out)?;
        Ok(self.push(value, &[x], move |ctx| {
            let mut dx = Tensor::zeros(ctx.inputs[0].shape());
            let d = dx.data_mut();
            for (&i, &g) in argmax.iter().zip(ctx.grad.data()) {
                d[i] += g;
            }
            vec![Some(dx)]
        }))
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let out: Vec<T> = xv
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() / T::lit(hw as f64))
            .collect();
        let value = Tensor::from_vec(&[n, c], out).unwrap();
        self.push(value, &[x], move |ctx| {
            let inv = T::one() / T::lit(hw as f64);
            let mut d = Vec::with_capacity(n * c * hw);
            for &g in ctx.grad.data() {
                d.extend(std::iter::repeat_n(g * inv, hw));
            }
            vec![Some(Tensor::from_vec(&[n, c, h, w], d).unwrap())]
        })
    }

    /// `x [N, I] * w[O, I]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(shape_err(format!(
                "linear: input {:?} weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (n, i) = (xv.shape()[0], xv.shape()[1]);
        let o = wv.shape()[0];
        let mut out = vec![T::zero(); n * o];
        T::gemm(n, i, o, T::one(), xv.data(), false, wv.data(), true, T::zero(), &mut out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != o {
                return Err(shape_err("linear: bias length".into()));
            }
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv).for_each(|(v, &b)| *v += b);
            }
        }
        let value = Tensor::from_vec(&[n, o], out)?;
        let parents: Vec<Var> = std::iter::once(x).chain([w]).chain(b).collect();
        Ok(self.push(value, &parents, move |ctx| {
            let (xv, wv, gy) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let dx = ctx.needs[0].then(|| {
                let mut d = vec![T::zero(); n * i];
                T::gemm(n, o, i, T::one(), gy.data(), false, wv.data(), false, T::zero(), &mut d);
                Tensor::from_vec(&[n, i], d).unwrap()
            });
            let dw = ctx.needs[1].then(|| {
                let mut d = vec![T::zero(); o * i];
                T::gemm(o, n, i, T::one(), gy.data(), true, xv.data(), false, T::zero(), &mut d);
                Tensor::from_vec(&[o, i], d).unwrap()
            });
            let mut res = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                res.push(ctx.needs[2].then(|| {
                    let mut d = vec![T::zero(); o];
                    for row in gy.data().chunks(o) {
                        d.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    Tensor::from_vec(&[o], d).unwrap()
                }));
            }
            res
        }))
    }

    /// Concatenation along the batch axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&tensors)?;
        let sizes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        Ok(self.push(value, parts, move |ctx| {
            let mut off = 0;
            sizes
                .iter()
                .zip(&ctx.inputs)
                .map(|(&len, inp)| {
                    let d = ctx.grad.data()[off..off + len].to_vec();
                    off += len;
                    Some(Tensor::from_vec(inp.shape(), d).unwrap())
                })
                .collect()
        }))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }
}

fn channel_sums<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = gy.dims4();
    let hw = h * w;
    let mut d = vec![T::zero(); c];
    for i in 0..n {
        for (ch, dv) in d.iter_mut().enumerate() {
            *dv += gy.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
    Tensor::from_vec(&[c], d).unwrap()
}

fn mean_var<T: Scalar>(v: &[T]) -> (T, T) {
    let n = T::lit(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var)
}
