//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use chimeramix::autograd::{Graph, Var};
use chimeramix::kernels::reflect_index;
use chimeramix::Tensor64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], std: f64, seed: u64) -> Tensor64 {
    Tensor64::randn(shape, std, &mut rng(seed))
}

/// Largest relative error between analytic and central-difference gradients
/// of the scalar `f` with respect to every entry of every input.
/// Relative error is measured against `max(|a|, |n|, floor)`.
pub fn max_grad_error(inputs: &[Tensor64], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var, h: f64, floor: f64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let eval = |inputs: &[Tensor64]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor64::zeros(inputs[k].shape()));
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
    }
    worst
}

/// Scalar value of a graph built from constants.
pub fn eval_graph(inputs: &[Tensor64], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.constant(t)).collect();
    let out = f(&mut g, &vars);
    g.value(out).item()
}

type Plane = Vec<Vec<f64>>;

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur(img: &Plane) -> Plane {
    let (h, w) = (img.len(), img[0].len());
    let mut out = vec![vec![0.0; w]; h];
    for (y, row) in out.iter_mut().enumerate() {
        for (x, o) in row.iter_mut().enumerate() {
            for (a, ka) in BINOMIAL.iter().enumerate() {
                for (b, kb) in BINOMIAL.iter().enumerate() {
                    let yy = reflect_index(y as isize + a as isize - 2, h);
                    let xx = reflect_index(x as isize + b as isize - 2, w);
                    *o += ka * kb * img[yy][xx];
                }
            }
        }
    }
    out
}

fn down(img: &Plane) -> Plane {
    blur(img).iter().step_by(2).map(|r| r.iter().step_by(2).copied().collect()).collect()
}

fn up(small: &Plane, h: usize, w: usize) -> Plane {
    let mut z = vec![vec![0.0; w]; h];
    for (y, row) in small.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            z[2 * y][2 * x] = 4.0 * v;
        }
    }
    blur(&z)
}

/// Laplacian pyramid of one plane by direct 2-D convolution: band-pass
/// levels, then the low-pass residual.
pub fn naive_pyramid(img: &Plane, levels: usize) -> Vec<Plane> {
    let mut out = Vec::new();
    let mut cur = img.clone();
    for _ in 0..levels {
        let d = down(&cur);
        let u = up(&d, cur.len(), cur[0].len());
        out.push(cur.iter().zip(&u).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect());
        cur = d;
    }
    out.push(cur);
    out
}

/// `sum_j 4^j mean|L_j(a) - L_j(b)|` over the planes of two `[N, C, H, W]` tensors.
pub fn naive_perceptual(a: &Tensor64, b: &Tensor64, levels: usize) -> f64 {
    let (n, c, h, w) = a.dims4();
    let mut sums = vec![0.0; levels + 1];
    let mut counts = vec![0usize; levels + 1];
    for p in 0..n * c {
        let plane = |t: &Tensor64| -> Plane {
            (0..h).map(|y| (0..w).map(|x| t.data()[(p * h + y) * w + x]).collect()).collect()
        };
        let pa = naive_pyramid(&plane(a), levels);
        let pb = naive_pyramid(&plane(b), levels);
        for j in 0..=levels {
            for (ra, rb) in pa[j].iter().zip(&pb[j]) {
                for (x, y) in ra.iter().zip(rb) {
                    sums[j] += (x - y).abs();
                    counts[j] += 1;
                }
            }
        }
    }
    (0..=levels).map(|j| 4f64.powi(j as i32) * sums[j] / counts[j] as f64).sum()
}

/// 8-connected components of equal values, labelled in raster order of
/// first appearance.
pub fn connected_components(values: &[u8], h: usize, w: usize) -> Vec<u32> {
    let mut labels = vec![u32::MAX; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if labels[start] != u32::MAX {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if labels[q] == u32::MAX && values[q] == values[p] {
                        labels[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// True when two labelings induce the same partition.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}
