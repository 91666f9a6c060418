//! Bilinear resampling kernels: 2x upsampling and coordinate-driven sampling
//! with border clamping.

use crate::real::Real;

/// Source taps for one output index of a 2x half-pixel-centred upsample.
#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    f: T,
}

fn upsample_taps<T: Real>(len: usize) -> Vec<Tap<T>> {
    (0..2 * len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            Tap {
                i0,
                i1,
                f: T::c(src - i0 as f64),
            }
        })
        .collect()
}

pub(crate) fn upsample2x_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let ty = upsample_taps::<T>(h);
    let tx = upsample_taps::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let top = src[a.i0 * w + b.i0] * (T::one() - b.f) + src[a.i0 * w + b.i1] * b.f;
                let bot = src[a.i1 * w + b.i0] * (T::one() - b.f) + src[a.i1 * w + b.i1] * b.f;
                dst[oy * ow + ox] = top * (T::one() - a.f) + bot * a.f;
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<T: Real>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    dx: &mut [T],
) {
    let ty = upsample_taps::<T>(h);
    let tx = upsample_taps::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let g = &dout[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let (wy0, wy1) = (T::one() - a.f, a.f);
                let (wx0, wx1) = (T::one() - b.f, b.f);
                d[a.i0 * w + b.i0] += v * wy0 * wx0;
                d[a.i0 * w + b.i1] += v * wy0 * wx1;
                d[a.i1 * w + b.i0] += v * wy1 * wx0;
                d[a.i1 * w + b.i1] += v * wy1 * wx1;
            }
        }
    }
}

/// Geometry shared by the sampling kernels: `n` samples, `c` channels, a
/// `sh x sw` source, and an `oh x ow` coordinate grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SampleGeom {
    pub n: usize,
    pub c: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Clamped lookup position along one axis: integer base, its neighbour,
/// fractional weight, and whether the raw coordinate was inside the range
/// (the coordinate gradient vanishes when clamped).
#[inline]
fn axis<T: Real>(coord: T, len: usize) -> (usize, usize, T, bool) {
    let hi = T::c((len - 1) as f64);
    let inside = coord >= T::zero() && coord <= hi;
    let v = coord.max(T::zero()).min(hi);
    let i0 = v.floor().to_usize().unwrap_or(0).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    let f = v - T::c(i0 as f64);
    (i0, i1, f, inside)
}

pub(crate) fn sample_forward<T: Real>(g: &SampleGeom, src: &[T], coords: &[T]) -> Vec<T> {
    let splane = g.sh * g.sw;
    let oplane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.c * oplane];
    for s in 0..g.n {
        let cx = &coords[(s * 2) * oplane..(s * 2 + 1) * oplane];
        let cy = &coords[(s * 2 + 1) * oplane..(s * 2 + 2) * oplane];
        for p in 0..oplane {
            let (x0, x1, fx, _) = axis(cx[p], g.sw);
            let (y0, y1, fy, _) = axis(cy[p], g.sh);
            for ch in 0..g.c {
                let base = (s * g.c + ch) * splane;
                let v00 = src[base + y0 * g.sw + x0];
                let v01 = src[base + y0 * g.sw + x1];
                let v10 = src[base + y1 * g.sw + x0];
                let v11 = src[base + y1 * g.sw + x1];
                let top = v00 * (T::one() - fx) + v01 * fx;
                let bot = v10 * (T::one() - fx) + v11 * fx;
                out[(s * g.c + ch) * oplane + p] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn sample_backward<T: Real>(
    g: &SampleGeom,
    src: &[T],
    coords: &[T],
    dout: &[T],
    mut dsrc: Option<&mut [T]>,
    mut dcoords: Option<&mut [T]>,
) {
    let splane = g.sh * g.sw;
    let oplane = g.oh * g.ow;
    for s in 0..g.n {
        let cx = &coords[(s * 2) * oplane..(s * 2 + 1) * oplane];
        let cy = &coords[(s * 2 + 1) * oplane..(s * 2 + 2) * oplane];
        for p in 0..oplane {
            let (x0, x1, fx, in_x) = axis(cx[p], g.sw);
            let (y0, y1, fy, in_y) = axis(cy[p], g.sh);
            let mut gx = T::zero();
            let mut gy = T::zero();
            for ch in 0..g.c {
                let base = (s * g.c + ch) * splane;
                let go = dout[(s * g.c + ch) * oplane + p];
                if let Some(d) = dsrc.as_deref_mut() {
                    d[base + y0 * g.sw + x0] += go * (T::one() - fx) * (T::one() - fy);
                    d[base + y0 * g.sw + x1] += go * fx * (T::one() - fy);
                    d[base + y1 * g.sw + x0] += go * (T::one() - fx) * fy;
                    d[base + y1 * g.sw + x1] += go * fx * fy;
                }
                if dcoords.is_some() {
                    let v00 = src[base + y0 * g.sw + x0];
                    let v01 = src[base + y0 * g.sw + x1];
                    let v10 = src[base + y1 * g.sw + x0];
                    let v11 = src[base + y1 * g.sw + x1];
                    gx += go * ((v01 - v00) * (T::one() - fy) + (v11 - v10) * fy);
                    gy += go * ((v10 - v00) * (T::one() - fx) + (v11 - v01) * fx);
                }
            }
            if let Some(d) = dcoords.as_deref_mut() {
                if in_x {
                    d[(s * 2) * oplane + p] += gx;
                }
                if in_y {
                    d[(s * 2 + 1) * oplane + p] += gy;
                }
            }
        }
    }
}
