//! Reconstruction, Laplacian-pyramid perceptual and least-squares adversarial
//! losses, and the weighted generator objective.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{reflect_index, resample2d, Resample1d};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 5-tap binomial blur.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha_rec: f64,
    pub alpha_per: f64,
    pub alpha_disc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_rec: 1000.0,
            alpha_per: 1.0,
            alpha_disc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_rec", self.alpha_rec),
            ("alpha_per", self.alpha_per),
            ("alpha_disc", self.alpha_disc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The three generator loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub per: f64,
    pub gdisc: f64,
}

pub fn generator_total_loss(parts: LossParts, w: &LossWeights) -> f64 {
    w.alpha_rec * parts.rec + w.alpha_per * parts.per + w.alpha_disc * parts.gdisc
}

/// Graph version of [`generator_total_loss`].
pub fn generator_total_loss_var<T: Scalar>(g: &mut Graph<T>, rec: Var, per: Var, gdisc: Var, w: &LossWeights) -> Result<Var> {
    let a = g.scale(rec, T::lit(w.alpha_rec));
    let b = g.scale(per, T::lit(w.alpha_per));
    let c = g.scale(gdisc, T::lit(w.alpha_disc));
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

/// Element-mean squared error of each pair, summed over the two pairs.
pub fn reconstruction_loss<T: Scalar>(g: &mut Graph<T>, xh1: Var, x1: Var, xh2: Var, x2: Var) -> Result<Var> {
    let a = g.mse(xh1, x1)?;
    let b = g.mse(xh2, x2)?;
    g.add(a, b)
}

/// Blur with the binomial kernel (reflect-101 borders) and keep even samples.
pub fn pyramid_down(n: usize) -> Resample1d {
    let out_len = n.div_ceil(2);
    let taps = (0..out_len)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (t, &k) in BINOMIAL5.iter().enumerate() {
                add_tap(&mut row, reflect_index(2 * i as isize + t as isize - 2, n), k);
            }
            row
        })
        .collect();
    Resample1d {
        in_len: n,
        out_len,
        taps,
    }
}

/// Zero-insert to length `n`, then blur with twice the binomial kernel.
pub fn pyramid_up(small: usize, n: usize) -> Resample1d {
    let taps = (0..n)
        .map(|y| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (t, &k) in BINOMIAL5.iter().enumerate() {
                let z = reflect_index(y as isize + t as isize - 2, n);
                if z % 2 == 0 && z / 2 < small {
                    add_tap(&mut row, z / 2, 2.0 * k);
                }
            }
            row
        })
        .collect();
    Resample1d {
        in_len: small,
        out_len: n,
        taps,
    }
}

fn add_tap(row: &mut Vec<(usize, f64)>, idx: usize, w: f64) {
    match row.iter_mut().find(|t| t.0 == idx) {
        Some(t) => t.1 += w,
        None => row.push((idx, w)),
    }
}

fn check_levels(h: usize, w: usize, level_count: usize) -> Result<()> {
    let need = 1usize.checked_shl(level_count as u32).unwrap_or(usize::MAX);
    if level_count == 0 || h < need || w < need {
        return Err(Error::Invalid(format!(
            "{level_count} pyramid levels need spatial dims >= {need}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Band-pass levels followed by the coarsest Gaussian level.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> LaplacianPyramid<T> {
    pub fn level_count(&self) -> usize {
        self.levels.len() - 1
    }

    /// Upsample-and-add from the coarsest level back to full resolution.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let mut cur = self.levels.last().expect("pyramid has a low-pass level").clone();
        for band in self.levels[..self.levels.len() - 1].iter().rev() {
            let (n, c, h, w) = band.dims4();
            let (_, _, sh, sw) = cur.dims4();
            let up = resample2d(cur.data(), n * c, &pyramid_up(sh, h), &pyramid_up(sw, w));
            let mut next = Tensor::from_vec(&[n, c, h, w], up)?;
            next.add_assign(band);
            cur = next;
        }
        Ok(cur)
    }
}

pub fn build_laplacian_pyramid<T: Scalar>(x: &Tensor<T>, level_count: usize) -> Result<LaplacianPyramid<T>> {
    let (n, c, h, w) = x.dims4();
    check_levels(h, w, level_count)?;
    let mut levels = Vec::with_capacity(level_count + 1);
    let mut cur = x.clone();
    for _ in 0..level_count {
        let (_, _, ch, cw) = cur.dims4();
        let (dr, dc) = (pyramid_down(ch), pyramid_down(cw));
        let down = Tensor::from_vec(&[n, c, dr.out_len, dc.out_len], resample2d(cur.data(), n * c, &dr, &dc))?;
        let up = resample2d(down.data(), n * c, &pyramid_up(dr.out_len, ch), &pyramid_up(dc.out_len, cw));
        let band = cur.zip_map(&Tensor::from_vec(cur.shape(), up)?, |a, b| a - b);
        levels.push(band);
        cur = down;
    }
    levels.push(cur);
    Ok(LaplacianPyramid { levels })
}

/// Graph version of the pyramid, used for the differentiable loss.
pub fn laplacian_pyramid_var<T: Scalar>(g: &mut Graph<T>, x: Var, level_count: usize) -> Result<Vec<Var>> {
    let (_, _, h, w) = g.value(x).dims4();
    check_levels(h, w, level_count)?;
    let mut levels = Vec::with_capacity(level_count + 1);
    let mut cur = x;
    for _ in 0..level_count {
        let (_, _, ch, cw) = g.value(cur).dims4();
        let (dr, dc) = (pyramid_down(ch), pyramid_down(cw));
        let down = g.resample(cur, &dr, &dc)?;
        let up = g.resample(down, &pyramid_up(dr.out_len, ch), &pyramid_up(dc.out_len, cw))?;
        levels.push(g.sub(cur, up)?);
        cur = down;
    }
    levels.push(cur);
    Ok(levels)
}

/// `sum_j 4^j * mean|L_j(xh) - L_j(x)|` over the band-pass levels plus the
/// low-pass residual at weight `4^level_count`.
pub fn perceptual_loss<T: Scalar>(g: &mut Graph<T>, xh: Var, x: Var, level_count: usize) -> Result<Var> {
    // The pyramid is linear, so the pyramid of the difference is the
    // difference of pyramids.
    let diff = g.sub(xh, x)?;
    let levels = laplacian_pyramid_var(g, diff, level_count)?;
    let mut total: Option<Var> = None;
    for (j, lv) in levels.into_iter().enumerate() {
        let l1 = g.mean_abs(lv);
        let term = g.scale(l1, T::lit(4f64.powi(j as i32)));
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.expect("at least one level"))
}

/// `mean((real - 1)^2) + mean(fake^2)`.
pub fn lsgan_d_loss<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let a = g.mse_to(real, T::one());
    let b = g.mse_to(fake, T::zero());
    g.add(a, b)
}

/// `mean((fake - 1)^2)`.
pub fn lsgan_g_loss<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Var {
    g.mse_to(fake, T::one())
}
