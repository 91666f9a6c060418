//! Reference implementations written as plain nested loops over `f64`, plus
//! a central-difference gradient checker. Nothing here calls into the
//! kernels it is used to check.

use ficm_numerics::{Rng, Tensor};

pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.range_f64(-1.0, 1.0))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct cross-correlation, `[C,H,W]` input, `[O,C,kH,kW]` kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    k: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[oc];
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            let xv = x[(ic * h + iy as usize) * w + ix as usize];
                            let kv = k[((oc * c + ic) * kh + ky) * kw + kx];
                            s += xv * kv;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = s;
            }
        }
    }
    (out, oh, ow)
}

/// Correlation by explicit loops over displacement, channel and position.
pub fn correlation_naive(
    a: &[f64],
    b: &[f64],
    (c, h, w): (usize, usize, usize),
    max_disp: usize,
    stride: usize,
) -> Vec<f64> {
    let r = (max_disp / stride) as i64;
    let steps = (2 * r + 1) as usize;
    let mut out = vec![0.0; steps * steps * h * w];
    for iy in 0..steps {
        for ix in 0..steps {
            let dy = (iy as i64 - r) * stride as i64;
            let dx = (ix as i64 - r) * stride as i64;
            let d = iy * steps + ix;
            for y in 0..h {
                for x in 0..w {
                    let (yb, xb) = (y as i64 + dy, x as i64 + dx);
                    let mut s = 0.0;
                    if yb >= 0 && xb >= 0 && yb < h as i64 && xb < w as i64 {
                        for ch in 0..c {
                            s += a[(ch * h + y) * w + x] * b[(ch * h + yb as usize) * w + xb as usize];
                        }
                    }
                    out[(d * h + y) * w + x] = s / c as f64;
                }
            }
        }
    }
    out
}

/// Four-weight bilinear interpolation at one clamped position.
pub fn bilinear_at(src: &[f64], h: usize, w: usize, channel: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |yy: usize, xx: usize| src[(channel * h + yy) * w + xx];
    p(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + p(y0, x1) * fx * (1.0 - fy)
        + p(y1, x0) * (1.0 - fx) * fy
        + p(y1, x1) * fx * fy
}

pub fn bilinear_sample_naive(
    src: &[f64],
    (c, h, w): (usize, usize, usize),
    coords: &[f64],
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let cx = coords[y * ow + x];
                let cy = coords[oh * ow + y * ow + x];
                out[(ch * oh + y) * ow + x] = bilinear_at(src, h, w, ch, cx, cy);
            }
        }
    }
    out
}

/// 2x upsampling: output pixel `i` reads source position `(i + 0.5) / 2 - 0.5`.
pub fn upsample2x_naive(src: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let sy = (y as f64 + 0.5) / 2.0 - 0.5;
                let sx = (x as f64 + 0.5) / 2.0 - 0.5;
                out[(ch * oh + y) * ow + x] = bilinear_at(src, h, w, ch, sx, sy);
            }
        }
    }
    out
}

pub fn mse_naive(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s / a.len() as f64
}

/// Shifts every plane of a `[C,H,W]` image so that
/// `out(x, y) = img(clamp(x + dx), clamp(y + dy))` for integer shifts.
pub fn shift_clamped(img: &[f64], (c, h, w): (usize, usize, usize), dx: i64, dy: i64) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                out[(ch * h + y) * w + x] = img[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks `analytic[i]` against `(f(x + h e_i) - f(x - h e_i)) / 2h` at the
/// listed coordinates.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    tol: f64,
) -> GradCheck {
    let mut probe = x.to_vec();
    let mut passed = 0;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        worst = worst.max(e);
        if e <= tol {
            passed += 1;
        }
    }
    GradCheck {
        checked: coords.len(),
        passed,
        worst_rel: worst,
    }
}

/// `count` distinct-ish coordinates drawn from `0..len`.
pub fn sample_coords(rng: &mut Rng, len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    (0..count).map(|_| rng.below(len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoint_is_four_corner_average() {
        let src: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let v = bilinear_at(&src, 3, 3, 0, 0.5, 0.5);
        assert_eq!(v, (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let x = [1.0, -2.0];
        let grad = [2.0, -4.0];
        let r = finite_difference_check(|p| p[0] * p[0] + p[1] * p[1], &x, &grad, &[0, 1], 1e-5, 1e-6);
        assert_eq!(r.passed, 2);
    }
}
