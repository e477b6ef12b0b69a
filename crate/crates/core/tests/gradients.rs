mod common;

use chimeramix::autograd::{Graph, Var};
use chimeramix::losses::{
    generator_total_loss_var, lsgan_d_loss, lsgan_g_loss, perceptual_loss, reconstruction_loss, LossWeights,
};
use chimeramix::masks::{MaskOrigin, MixMask};
use chimeramix::model::{DiscriminatorConfig, GeneratorConfig};
use chimeramix::nn::{Forward, ParamStore};
use chimeramix::optim::collect_grads;
use chimeramix::{Discriminator64, Generator64, Tensor64};
use common::{max_grad_error, randn, rng};
use rand::Rng;

const LOSS_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn loss_error(n_inputs: usize, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    loss_error_with_step(n_inputs, 1e-6, f)
}

fn loss_error_with_step(n_inputs: usize, h: f64, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let inputs: Vec<Tensor64> = (0..n_inputs).map(|k| randn(&[2, 1, 8, 8], 1.0, 100 + k as u64)).collect();
    max_grad_error(&inputs, f, h, 1e-3)
}

#[test]
fn reconstruction_gradients() {
    let e = loss_error(4, |g, v| reconstruction_loss(g, v[0], v[1], v[2], v[3]).unwrap());
    assert!(e < LOSS_TOL, "{e}");
}

#[test]
fn perceptual_gradients() {
    let e = loss_error(2, |g, v| perceptual_loss(g, v[0], v[1], 3).unwrap());
    assert!(e < LOSS_TOL, "{e}");
}

#[test]
fn adversarial_gradients() {
    let e = loss_error(2, |g, v| lsgan_d_loss(g, v[0], v[1]).unwrap());
    assert!(e < LOSS_TOL, "{e}");
    let e = loss_error(1, |g, v| lsgan_g_loss(g, v[0]));
    assert!(e < LOSS_TOL, "{e}");
}

#[test]
fn weighted_total_gradients_and_disabled_terms() {
    let w = LossWeights::default();
    let total = |w: LossWeights| {
        move |g: &mut Graph<f64>, v: &[Var]| {
            let rec = reconstruction_loss(g, v[0], v[1], v[0], v[1]).unwrap();
            let per = perceptual_loss(g, v[0], v[1], 2).unwrap();
            let adv = lsgan_g_loss(g, v[2]);
            generator_total_loss_var(g, rec, per, adv, &w).unwrap()
        }
    };
    // The objective is of order 1e3, so a wider step keeps cancellation
    // error small; its terms are quadratic or piecewise linear.
    let e = loss_error_with_step(3, 1e-4, total(w));
    assert!(e < LOSS_TOL, "{e}");

    // With only the reconstruction weight zeroed, the gradient equals that of
    // the perceptual term alone.
    let inputs: Vec<Tensor64> = (0..2).map(|k| randn(&[1, 1, 8, 8], 1.0, k)).collect();
    let grad_of = |f: &dyn Fn(&mut Graph<f64>, Var, Var) -> Var| {
        let mut g = Graph::new();
        let a = g.param(inputs[0].clone());
        let b = g.constant(inputs[1].clone());
        let out = f(&mut g, a, b);
        g.backward(out).take(a).unwrap()
    };
    let no_rec = LossWeights { alpha_rec: 0.0, ..w };
    let with_zero = grad_of(&|g, a, b| {
        let rec = reconstruction_loss(g, a, b, a, b).unwrap();
        let per = perceptual_loss(g, a, b, 2).unwrap();
        let adv = lsgan_g_loss(g, b);
        generator_total_loss_var(g, rec, per, adv, &no_rec).unwrap()
    });
    let per_only = grad_of(&|g, a, b| perceptual_loss(g, a, b, 2).unwrap());
    assert_eq!(with_zero, per_only);
}

/// Relative error of analytic parameter gradients against central
/// differences on `count` randomly chosen entries of every tensor.
fn param_grad_error(
    store: &mut ParamStore<f64>,
    loss: &dyn Fn(&ParamStore<f64>, bool) -> (f64, Vec<Option<Tensor64>>),
    count: usize,
    seed: u64,
) -> f64 {
    let (_, grads) = loss(store, true);
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..store.len() {
        if !store.entries()[k].trainable {
            continue;
        }
        let len = store.entries()[k].value.len();
        for _ in 0..count.min(len) {
            let j = r.random_range(0..len);
            let orig = store.entries()[k].value.data()[j];
            store.entries_mut()[k].value.data_mut()[j] = orig + h;
            let plus = loss(store, false).0;
            store.entries_mut()[k].value.data_mut()[j] = orig - h;
            let minus = loss(store, false).0;
            store.entries_mut()[k].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads[k].as_ref().map_or(0.0, |t| t.data()[j]);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    worst
}

#[test]
fn tiny_generator_parameter_gradients_match_finite_differences() {
    let cfg = GeneratorConfig {
        input_height: 8,
        input_width: 8,
        base_channels: 4,
        init_std: 0.3,
        ..GeneratorConfig::default()
    };
    let mut gen = Generator64::new(cfg, 3).unwrap();
    let x1 = randn(&[2, 3, 8, 8], 0.5, 1);
    let x2 = randn(&[2, 3, 8, 8], 0.5, 2);
    let target = randn(&[2, 3, 8, 8], 0.5, 3);
    let masks = vec![
        MixMask::from_bits(2, 2, vec![true, false, false, true], MaskOrigin::Grid).unwrap(),
        MixMask::from_bits(2, 2, vec![false, true, true, true], MaskOrigin::Grid).unwrap(),
    ];
    // Layers only hold parameter ids, so a clone drives forward passes over any store.
    let shape = gen.clone();
    let loss = |store: &ParamStore<f64>, want_grads: bool| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, want_grads);
        let (a, b, t) = (g.constant(x1.clone()), g.constant(x2.clone()), g.constant(target.clone()));
        let mut f = Forward::new(&mut g, &p, true);
        let out = shape.generate(&mut f, a, b, &masks).unwrap();
        let l = g.mse(out, t).unwrap();
        let value = g.value(l).item();
        let grads = if want_grads { collect_grads(&p, &mut g.backward(l)) } else { Vec::new() };
        (value, grads)
    };
    let e = param_grad_error(&mut gen.params, &loss, 6, 9);
    assert!(e < MODEL_TOL, "{e}");
}

#[test]
fn tiny_discriminator_parameter_gradients_match_finite_differences() {
    let cfg = DiscriminatorConfig {
        block_channels: vec![2, 3, 3, 4],
        init_std: 0.3,
        ..DiscriminatorConfig::default()
    };
    let mut disc = Discriminator64::new(cfg, 4).unwrap();
    let real = randn(&[2, 3, 16, 16], 0.5, 5);
    let fake = randn(&[2, 3, 16, 16], 0.5, 6);
    let shape = disc.clone();
    let loss = |store: &ParamStore<f64>, want_grads: bool| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, want_grads);
        let (r, fk) = (g.constant(real.clone()), g.constant(fake.clone()));
        let mut f = Forward::new(&mut g, &p, true);
        let sr = shape.forward(&mut f, r).unwrap();
        let sf = shape.forward(&mut f, fk).unwrap();
        let l = lsgan_d_loss(&mut g, sr, sf).unwrap();
        let value = g.value(l).item();
        let grads = if want_grads { collect_grads(&p, &mut g.backward(l)) } else { Vec::new() };
        (value, grads)
    };
    let e = param_grad_error(&mut disc.params, &loss, 6, 10);
    assert!(e < MODEL_TOL, "{e}");
}
