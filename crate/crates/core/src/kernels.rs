//! Slice-level kernels shared by the autograd ops and the no-grad paths.

use crate::scalar::Scalar;

/// Geometry of a 2-d convolution over a single `c x h x w` plane stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output extent of a zero-padded convolution, `None` when empty.
    pub fn conv(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let hp = h + 2 * pad;
        let wp = w + 2 * pad;
        if hp < kh || wp < kw || stride == 0 {
            return None;
        }
        Some(ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, dst: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let out = &mut dst[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]; accumulates into `dst`.
pub fn col2im<T: Scalar>(cols_buf: &[T], g: &ConvGeom, dst: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// A sparse linear map between 1-d signals, applied separably along an axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Resample1d {
    pub in_len: usize,
    pub out_len: usize,
    /// `taps[o]` lists `(input index, weight)` pairs contributing to output `o`.
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl Resample1d {
    pub fn identity(n: usize) -> Self {
        Resample1d {
            in_len: n,
            out_len: n,
            taps: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    /// Nearest-neighbour resize: output `o` reads input `floor(o * in / out)`.
    pub fn nearest(in_len: usize, out_len: usize) -> Self {
        Resample1d {
            in_len,
            out_len,
            taps: (0..out_len)
                .map(|o| vec![((o * in_len) / out_len, 1.0)])
                .collect(),
        }
    }

    /// Half-pixel-centred linear interpolation. When shrinking and
    /// `antialias` is set the triangle kernel is widened by the scale factor.
    pub fn linear(in_len: usize, out_len: usize, antialias: bool) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let support = if antialias && scale > 1.0 { scale } else { 1.0 };
        let taps = (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) * scale - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for i in lo..=hi {
                    let wgt = (1.0 - ((i as f64 - center) / support).abs()).max(0.0);
                    if wgt <= 0.0 {
                        continue;
                    }
                    let idx = i.clamp(0, in_len as isize - 1) as usize;
                    total += wgt;
                    match row.iter_mut().find(|(j, _)| *j == idx) {
                        Some(entry) => entry.1 += wgt,
                        None => row.push((idx, wgt)),
                    }
                }
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        Resample1d {
            in_len,
            out_len,
            taps,
        }
    }

    /// Exact box-overlap averaging from `in_len` cells onto `out_len` cells.
    pub fn area(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let taps = (0..out_len)
            .map(|o| {
                let start = o as f64 * scale;
                let end = start + scale;
                let mut row = Vec::new();
                let mut i = start.floor() as usize;
                while (i as f64) < end && i < in_len {
                    let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        row.push((i, overlap / scale));
                    }
                    i += 1;
                }
                row
            })
            .collect();
        Resample1d {
            in_len,
            out_len,
            taps,
        }
    }

    /// Apply along one axis of a row-major `outer x len x inner` buffer.
    pub fn apply_axis<T: Scalar>(&self, src: &[T], outer: usize, inner: usize) -> Vec<T> {
        let mut out = vec![T::zero(); outer * self.out_len * inner];
        for b in 0..outer {
            let s = &src[b * self.in_len * inner..(b + 1) * self.in_len * inner];
            let d = &mut out[b * self.out_len * inner..(b + 1) * self.out_len * inner];
            for (o, row) in self.taps.iter().enumerate() {
                let dst = &mut d[o * inner..(o + 1) * inner];
                for &(i, w) in row {
                    let w = T::lit(w);
                    let srow = &s[i * inner..(i + 1) * inner];
                    for (dv, &sv) in dst.iter_mut().zip(srow) {
                        *dv += w * sv;
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Resample1d::apply_axis`].
    pub fn apply_axis_transposed<T: Scalar>(&self, src: &[T], outer: usize, inner: usize) -> Vec<T> {
        let mut out = vec![T::zero(); outer * self.in_len * inner];
        for b in 0..outer {
            let s = &src[b * self.out_len * inner..(b + 1) * self.out_len * inner];
            let d = &mut out[b * self.in_len * inner..(b + 1) * self.in_len * inner];
            for (o, row) in self.taps.iter().enumerate() {
                let srow = &s[o * inner..(o + 1) * inner];
                for &(i, w) in row {
                    let w = T::lit(w);
                    let dst = &mut d[i * inner..(i + 1) * inner];
                    for (dv, &sv) in dst.iter_mut().zip(srow) {
                        *dv += w * sv;
                    }
                }
            }
        }
        out
    }
}

/// Separable 2-d resample of an NCHW buffer: `rows` acts on H, `cols` on W.
pub fn resample2d<T: Scalar>(
    src: &[T],
    planes: usize,
    rows: &Resample1d,
    cols: &Resample1d,
) -> Vec<T> {
    let tmp = rows.apply_axis(src, planes, cols.in_len);
    cols.apply_axis(&tmp, planes * rows.out_len, 1)
}

pub fn resample2d_transposed<T: Scalar>(
    grad: &[T],
    planes: usize,
    rows: &Resample1d,
    cols: &Resample1d,
) -> Vec<T> {
    let tmp = cols.apply_axis_transposed(grad, planes * rows.out_len, 1);
    rows.apply_axis_transposed(&tmp, planes, cols.in_len)
}
