//! Multiplicative patch comparison between two feature maps over a square
//! displacement neighbourhood (single-pixel patches).

use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct CorrGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub max_disp: usize,
    pub stride: usize,
}

impl CorrGeom {
    pub fn steps(&self) -> usize {
        2 * (self.max_disp / self.stride) + 1
    }

    pub fn displacements(&self) -> usize {
        self.steps() * self.steps()
    }

    /// Displacement `(dx, dy)` of output channel `d`; `dy` is the major index.
    pub fn offset(&self, d: usize) -> (isize, isize) {
        let k = self.steps();
        let r = (self.max_disp / self.stride) as isize;
        let s = self.stride as isize;
        let dy = (d / k) as isize - r;
        let dx = (d % k) as isize - r;
        (dx * s, dy * s)
    }
}

/// Columns `x` with `x + dx` inside `0..w`.
fn x_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx.max(0)).max(0) as usize;
    (lo.min(w), hi.max(lo.min(w)))
}

pub(crate) fn forward<T: Real>(g: &CorrGeom, a: &[T], b: &[T]) -> Vec<T> {
    let plane = g.h * g.w;
    let nd = g.displacements();
    let inv_c = T::one() / T::c(g.c as f64);
    let mut out = vec![T::zero(); g.n * nd * plane];
    for s in 0..g.n {
        let fa = &a[s * g.c * plane..(s + 1) * g.c * plane];
        let fb = &b[s * g.c * plane..(s + 1) * g.c * plane];
        for d in 0..nd {
            let (dx, dy) = g.offset(d);
            let (lo, hi) = x_range(g.w, dx);
            if lo == hi {
                continue;
            }
            let o = &mut out[(s * nd + d) * plane..(s * nd + d + 1) * plane];
            for ch in 0..g.c {
                let pa = &fa[ch * plane..(ch + 1) * plane];
                let pb = &fb[ch * plane..(ch + 1) * plane];
                for y in 0..g.h {
                    let yb = y as isize + dy;
                    if yb < 0 || yb >= g.h as isize {
                        continue;
                    }
                    let ra = &pa[y * g.w + lo..y * g.w + hi];
                    let sb = (yb as usize * g.w) as isize + dx;
                    let rb = &pb[(sb + lo as isize) as usize..(sb + hi as isize) as usize];
                    for ((v, &va), &vb) in o[y * g.w + lo..y * g.w + hi].iter_mut().zip(ra).zip(rb) {
                        *v += va * vb;
                    }
                }
            }
            o.iter_mut().for_each(|v| *v *= inv_c);
        }
    }
    out
}

pub(crate) fn backward<T: Real>(
    g: &CorrGeom,
    a: &[T],
    b: &[T],
    dout: &[T],
    mut da: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let plane = g.h * g.w;
    let nd = g.displacements();
    let inv_c = T::one() / T::c(g.c as f64);
    for s in 0..g.n {
        let off = s * g.c * plane;
        for d in 0..nd {
            let (dx, dy) = g.offset(d);
            let (lo, hi) = x_range(g.w, dx);
            if lo == hi {
                continue;
            }
            let go = &dout[(s * nd + d) * plane..(s * nd + d + 1) * plane];
            for ch in 0..g.c {
                let base = off + ch * plane;
                for y in 0..g.h {
                    let yb = y as isize + dy;
                    if yb < 0 || yb >= g.h as isize {
                        continue;
                    }
                    let ia = base + y * g.w + lo;
                    let ib = ((base + yb as usize * g.w + lo) as isize + dx) as usize;
                    let len = hi - lo;
                    let gl = &go[y * g.w + lo..y * g.w + hi];
                    if let Some(da) = da.as_deref_mut() {
                        for ((v, &gv), &vb) in da[ia..ia + len].iter_mut().zip(gl).zip(&b[ib..ib + len]) {
                            *v += gv * inv_c * vb;
                        }
                    }
                    if let Some(db) = db.as_deref_mut() {
                        for ((v, &gv), &va) in db[ib..ib + len].iter_mut().zip(gl).zip(&a[ia..ia + len]) {
                            *v += gv * inv_c * va;
                        }
                    }
                }
            }
        }
    }
}
