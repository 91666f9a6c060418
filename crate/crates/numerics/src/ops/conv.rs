//! Cross-correlation (no kernel flip) lowered to im2col + gemm, one sample at
//! a time.

use crate::real::{matmul, Real};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Output columns `[lo, hi)` whose input column `ox * stride + k - pad`
/// lies inside `0..w`.
fn valid_range(g: &ConvGeom, k: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(k).div_ceil(g.stride).min(g.ow);
    let hi = if g.w + g.pad > k {
        ((g.w + g.pad - k - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Writes the in-bounds patch entries of `x` into `cols`. Padding entries
/// are left untouched, so `cols` must start zeroed; a buffer last written by
/// `im2col` with the same geometry qualifies.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(g, kx);
                if lo >= hi {
                    continue;
                }
                let start = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * g.w + start..(iy as usize + 1) * g.w];
                    let line = &mut dst[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (v, &s) in line.iter_mut().zip(srow) {
                            *v = s;
                        }
                    } else {
                        for (v, &s) in line.iter_mut().zip(srow.iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(g, kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let start = lo * g.stride + kx - g.pad;
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &s) in drow[start..start + hi - lo].iter_mut().zip(line) {
                            *d += s;
                        }
                    } else {
                        for (d, &s) in drow[start..].iter_mut().step_by(g.stride).zip(line) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and, when `keep_cols` is set, the lowered input of
/// every sample so the weight gradient can skip re-lowering it.
pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T], keep_cols: bool) -> (Vec<T>, Option<Vec<T>>) {
    let plane = g.out_plane();
    let col_len = g.patch() * plane;
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    let mut cols = vec![T::zero(); if keep_cols { g.n * col_len } else { col_len }];
    let in_len = g.cin * g.h * g.w;
    for s in 0..g.n {
        let c = if keep_cols { &mut cols[s * col_len..(s + 1) * col_len] } else { &mut cols[..] };
        im2col(g, &x[s * in_len..(s + 1) * in_len], c);
        let o = &mut out[s * g.cout * plane..(s + 1) * g.cout * plane];
        matmul(g.cout, g.patch(), plane, weight, false, c, false, o, false);
        for (co, &b) in bias.iter().enumerate() {
            o[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += b);
        }
    }
    (out, keep_cols.then_some(cols))
}

/// Accumulates gradients for whichever of input/weight/bias are requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    cached_cols: Option<&[T]>,
    weight: &[T],
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    if let Some(db) = db {
        for s in 0..g.n {
            let d = &dout[s * out_len..(s + 1) * out_len];
            for (co, b) in db.iter_mut().enumerate() {
                *b += d[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dw) = dw {
        let col_len = g.patch() * plane;
        let mut scratch = Vec::new();
        for s in 0..g.n {
            let cols = match cached_cols {
                Some(c) => &c[s * col_len..(s + 1) * col_len],
                None => {
                    scratch.resize(col_len, T::zero());
                    im2col(g, &x[s * in_len..(s + 1) * in_len], &mut scratch);
                    &scratch[..]
                }
            };
            let d = &dout[s * out_len..(s + 1) * out_len];
            matmul(g.cout, plane, g.patch(), d, false, cols, true, dw, true);
        }
    }
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); g.patch() * plane];
        for s in 0..g.n {
            let d = &dout[s * out_len..(s + 1) * out_len];
            matmul(g.patch(), g.cout, plane, weight, true, d, false, &mut dcols, false);
            col2im(g, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
}
