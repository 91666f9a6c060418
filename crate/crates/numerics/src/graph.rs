//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so walking them backwards is a
//! valid topological order for the chain rule. Parameters enter the tape via
//! [`Graph::param`]; using the same parameter twice yields the same node, and
//! gradients from every use add up.

use crate::error::{arg_err, shape_err, NumericsError, Result};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::correlation::{self, CorrGeom};
use crate::ops::resample::{self, SampleGeom};
use crate::params::{ParamId, ParamStore};
use crate::real::{matmul, Real};
use crate::tensor::{image_dims, image_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Option<Vec<T>> },
    LeakyRelu { x: Var, slope: T },
    Upsample2x { x: Var, planes: usize, h: usize, w: usize },
    Crop { x: Var, n: usize, c: usize, h: usize, w: usize },
    Concat { parts: Vec<Var>, outer: usize },
    Sample { src: Var, coords: Var, geom: SampleGeom },
    Correlation { a: Var, b: Var, geom: CorrGeom },
    Linear { x: Var, w: Var, b: Var, n: usize, fin: usize, fout: usize },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Minimum { a: Var, b: Var },
    Clamp { x: Var, lo: T, hi: T },
    Sum { x: Var },
    Mean { x: Var },
    Mse { a: Var, b: Var },
    LogSoftmax { x: Var, rows: usize, cols: usize },
    Gather { x: Var, idx: Vec<usize>, cols: usize },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    store_uid: Option<u64>,
    param_nodes: Vec<Option<Var>>,
    grads: Vec<Option<Vec<T>>>,
    tracking: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store_uid: None,
            param_nodes: Vec::new(),
            grads: Vec::new(),
            tracking: true,
        }
    }

    /// A graph for evaluation only: no node ever needs a gradient, so ops
    /// skip the bookkeeping backward would use.
    pub fn inference() -> Self {
        Self {
            tracking: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// A leaf holding `t`. It receives a gradient when `t.requires_grad()`.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let needs = self.tracking && t.requires_grad();
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let t = t.with_requires_grad(false);
        self.input(t)
    }

    /// Brings a parameter onto the tape. All parameters of one graph must
    /// come from the same store; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        match self.store_uid {
            None => {
                self.store_uid = Some(store.uid());
                self.param_nodes = vec![None; store.len()];
            }
            Some(uid) if uid != store.uid() => return Err(NumericsError::ForeignStore),
            Some(_) => {}
        }
        if self.param_nodes.len() < store.len() {
            self.param_nodes.resize(store.len(), None);
        }
        if let Some(v) = self.param_nodes[id.0] {
            return Ok(v);
        }
        let mut t = store.get(id).clone();
        t.clear_grad();
        let v = self.push(t, Op::Param, self.tracking);
        self.param_nodes[id.0] = Some(v);
        Ok(v)
    }

    // ------------------------------------------------------------------
    // Layer primitives
    // ------------------------------------------------------------------

    /// Cross-correlation of `x` (`[C,H,W]` or `[N,C,H,W]`) with `w`
    /// (`[Cout,Cin,kH,kW]`) plus per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = image_dims("conv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != cin {
            return shape_err(
                "conv2d",
                format!("kernel {ws:?} incompatible with input {:?}", self.shape(x)),
            );
        }
        if self.shape(b) != [ws[0]] {
            return shape_err("conv2d", format!("bias {:?} for {} outputs", self.shape(b), ws[0]));
        }
        if stride == 0 {
            return arg_err("conv2d", "stride must be >= 1");
        }
        if h + 2 * pad < ws[2] || wd + 2 * pad < ws[3] {
            return shape_err(
                "conv2d",
                format!("kernel {}x{} larger than padded input {h}x{wd}", ws[2], ws[3]),
            );
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            oh: conv::out_extent(h, ws[2], stride, pad),
            ow: conv::out_extent(wd, ws[3], stride, pad),
        };
        let (out, cols) = conv::forward(&geom, self.data(x), self.data(w), self.data(b), self.needs(w));
        let shape = image_shape(self.shape(x), n, geom.cout, geom.oh, geom.ow);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Conv2d { x, w, b, geom, cols }, needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return arg_err("leaky_relu", format!("slope {slope} outside [0, 1)"));
        }
        let s = T::c(slope);
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { v * s });
        let needs = self.needs(x);
        Ok(self.push(out, Op::LeakyRelu { x, slope: s }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    /// Bilinear 2x upsampling with half-pixel centres and edge clamping.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = image_dims("upsample2x", self.shape(x))?;
        let out = resample::upsample2x_forward(self.data(x), n * c, h, w);
        let shape = image_shape(self.shape(x), n, c, 2 * h, 2 * w);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Upsample2x {
                x,
                planes: n * c,
                h,
                w,
            },
            needs,
        ))
    }

    /// Keeps the top-left `h x w` window of every plane.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c, ih, iw) = image_dims("crop", self.shape(x))?;
        if h == 0 || w == 0 || h > ih || w > iw {
            return shape_err("crop", format!("{h}x{w} window in {ih}x{iw} input"));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                let row = p * ih * iw + y * iw;
                out.extend_from_slice(&src[row..row + w]);
            }
        }
        let shape = image_shape(self.shape(x), n, c, h, w);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Crop { x, n, c, h: ih, w: iw }, needs))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return arg_err("concat", "no inputs");
        };
        if parts.len() == 1 {
            return Ok(first);
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return arg_err("concat", format!("axis {axis} for rank {}", base.len()));
        }
        let mut extent = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return shape_err("concat", format!("{s:?} vs {base:?} along axis {axis}"));
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut shape = base.clone();
        shape[axis] = extent;
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let d = self.data(p);
                let chunk = d.len() / outer;
                out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
            },
            needs,
        ))
    }

    /// Channel concatenation: axis 0 for `[C,H,W]`, axis 1 for batched or
    /// `[N,F]` inputs.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let axis = if self.shape(a).len() == 3 { 0 } else { 1 };
        let (ha, hb) = (self.shape(a), self.shape(b));
        if ha.len() >= 3 && (ha[ha.len() - 2..] != hb[hb.len().saturating_sub(2)..]) {
            return shape_err("concat_channels", format!("spatial {ha:?} vs {hb:?}"));
        }
        self.concat(&[a, b], axis)
    }

    /// Bilinear lookup of `src` at per-pixel `(x, y)` positions in `coords`
    /// (`[2,H,W]` or `[N,2,H,W]`, channel 0 = x). Out-of-range positions are
    /// clamped to the border.
    pub fn bilinear_sample(&mut self, src: Var, coords: Var) -> Result<Var> {
        let (n, c, sh, sw) = image_dims("bilinear_sample", self.shape(src))?;
        let (cn, two, oh, ow) = image_dims("bilinear_sample", self.shape(coords))?;
        if cn != n || two != 2 || self.shape(src).len() != self.shape(coords).len() {
            return shape_err(
                "bilinear_sample",
                format!("coords {:?} for source {:?}", self.shape(coords), self.shape(src)),
            );
        }
        let geom = SampleGeom { n, c, sh, sw, oh, ow };
        let out = resample::sample_forward(&geom, self.data(src), self.data(coords));
        let shape = image_shape(self.shape(src), n, c, oh, ow);
        let needs = self.needs(src) || self.needs(coords);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Sample { src, coords, geom }, needs))
    }

    /// `out[d,y,x] = mean_c a[c,y,x] * b[c,y+dy,x+dx]` over the
    /// `(2*max_disp/stride + 1)^2` displacements, `dy` major; zero where the
    /// displaced position leaves the map.
    pub fn correlation(&mut self, a: Var, b: Var, max_disp: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = image_dims("correlation", self.shape(a))?;
        if self.shape(a) != self.shape(b) {
            return shape_err(
                "correlation",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        if stride == 0 || max_disp == 0 {
            return arg_err("correlation", "max_disp and stride must be >= 1");
        }
        let geom = CorrGeom {
            n,
            c,
            h,
            w,
            max_disp,
            stride,
        };
        let out = correlation::forward(&geom, self.data(a), self.data(b));
        let shape = image_shape(self.shape(a), n, geom.displacements(), h, w);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Correlation { a, b, geom }, needs))
    }

    /// `x [N,In] * w[Out,In]^T + b[Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return shape_err(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {:?}", self.shape(b)),
            );
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * fout];
        matmul(n, fin, fout, self.data(x), false, self.data(w), true, &mut out, false);
        let bias = self.data(b);
        for row in out.chunks_mut(fout) {
            row.iter_mut().zip(bias).for_each(|(o, &bb)| *o += bb);
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(&[n, fout], out)?,
            Op::Linear {
                x,
                w,
                b,
                n,
                fin,
                fout,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, needs))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[n, rest.max(1)])
    }

    // ------------------------------------------------------------------
    // Elementwise and reductions
    // ------------------------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul { a, b }, needs))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("minimum", a, b, |x, y| if y < x { y } else { x })?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Minimum { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        self.push(t, Op::Scale { x, c }, needs)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v + c);
        let needs = self.needs(x);
        self.push(t, Op::AddScalar { x }, needs)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::exp);
        let needs = self.needs(x);
        self.push(t, Op::Exp { x }, needs)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::ln);
        let needs = self.needs(x);
        self.push(t, Op::Log { x }, needs)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let t = self.value(x).map(|v| v.max(lo).min(hi));
        let needs = self.needs(x);
        self.push(t, Op::Clamp { x, lo, hi }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(t, Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / T::c(v.numel() as f64));
        let needs = self.needs(x);
        self.push(t, Op::Mean { x }, needs)
    }

    /// Mean over all elements of `(a - b)^2`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = T::c(self.value(a).numel() as f64);
        let s: T = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { a, b }, needs))
    }

    /// Row-wise log-softmax of a `[N, A]` matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return shape_err("log_softmax", format!("expected [N,A], got {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&s, out)?, Op::LogSoftmax { x, rows, cols }, needs))
    }

    /// Picks `x[i, idx[i]]` from a `[N, A]` matrix.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= s[1]) {
            return shape_err("gather", format!("{} indices into {s:?}", idx.len()));
        }
        let cols = s[1];
        let d = self.data(x);
        let out = idx.iter().enumerate().map(|(r, &i)| d[r * cols + i]).collect();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(&[idx.len()], out)?,
            Op::Gather {
                x,
                idx: idx.to_vec(),
                cols,
            },
            needs,
        ))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Gradients of leaves and
    /// parameters are kept for [`Graph::grad`] and [`Graph::accumulate_into`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads = Grads {
            bufs: (0..self.nodes.len()).map(|_| None).collect(),
            nodes: &self.nodes,
        };
        grads.bufs[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads.bufs[i].take() else { continue };
            backward_node(&mut grads, node, &g);
        }
        // Keep only leaf/param gradients.
        let mut bufs = grads.bufs;
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf | Op::Param) {
                bufs[i] = None;
            }
        }
        self.grads = bufs;
        Ok(())
    }

    /// Gradient of the last backward sweep w.r.t. a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients from the last sweep into `store`. Parameters
    /// the loss does not reach receive a zero gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(uid) = self.store_uid {
            if uid != store.uid() {
                return Err(NumericsError::ForeignStore);
            }
        }
        for id in store.ids().collect::<Vec<_>>() {
            let node = self.param_nodes.get(id.0).copied().flatten();
            let t = store.get_mut(id);
            match node.and_then(|v| self.grad(v)) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![T::zero(); t.numel()]),
            }
        }
        Ok(())
    }

    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?;
        self.accumulate_into(store)
    }
}

struct Grads<'a, T: Real> {
    bufs: Vec<Option<Vec<T>>>,
    nodes: &'a [Node<T>],
}

impl<T: Real> Grads<'_, T> {
    /// Takes (or allocates) the gradient buffer of `v` if it needs one.
    fn take(&mut self, v: Var) -> Option<Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(
            self.bufs[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); node.value.numel()]),
        )
    }

    fn put(&mut self, v: Var, buf: Option<Vec<T>>) {
        let Some(buf) = buf else { return };
        match &mut self.bufs[v.0] {
            Some(existing) => existing.iter_mut().zip(&buf).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(buf),
        }
    }

    /// Adds `f(i)` into every element of `v`'s gradient.
    fn add_with(&mut self, v: Var, f: impl Fn(usize) -> T) {
        if let Some(mut buf) = self.take(v) {
            buf.iter_mut().enumerate().for_each(|(i, x)| *x += f(i));
            self.put(v, Some(buf));
        }
    }

    fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }
}

fn backward_node<T: Real>(gr: &mut Grads<'_, T>, node: &Node<T>, g: &[T]) {
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::Conv2d { x, w, b, geom, cols } => {
            let (x, w, b) = (*x, *w, *b);
            let mut dx = gr.take(x);
            let mut dw = gr.take(w);
            let mut db = gr.take(b);
            conv::backward(
                geom,
                gr.val(x),
                cols.as_deref(),
                gr.val(w),
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            gr.put(x, dx);
            gr.put(w, dw);
            gr.put(b, db);
        }
        &Op::LeakyRelu { x, slope } => {
            let xs = gr.val(x).to_vec();
            gr.add_with(x, |i| if xs[i] >= T::zero() { g[i] } else { g[i] * slope });
        }
        &Op::Upsample2x { x, planes, h, w } => {
            if let Some(mut dx) = gr.take(x) {
                resample::upsample2x_backward(g, planes, h, w, &mut dx);
                gr.put(x, Some(dx));
            }
        }
        &Op::Crop { x, n, c, h, w } => {
            if let Some(mut dx) = gr.take(x) {
                let oh = g.len() / (n * c);
                let ow = node.value.shape()[node.value.rank() - 1];
                let oh = oh / ow;
                for p in 0..n * c {
                    for y in 0..oh {
                        let dst = p * h * w + y * w;
                        let src = (p * oh + y) * ow;
                        for xx in 0..ow {
                            dx[dst + xx] += g[src + xx];
                        }
                    }
                }
                gr.put(x, Some(dx));
            }
        }
        Op::Concat { parts, outer } => {
            let outer = *outer;
            let chunk_total = g.len() / outer;
            let mut offset = 0;
            for &p in parts {
                let len = gr.nodes[p.0].value.numel() / outer;
                if let Some(mut dp) = gr.take(p) {
                    for o in 0..outer {
                        let src = &g[o * chunk_total + offset..o * chunk_total + offset + len];
                        dp[o * len..(o + 1) * len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &b)| *a += b);
                    }
                    gr.put(p, Some(dp));
                }
                offset += len;
            }
        }
        &Op::Sample { src, coords, geom } => {
            let mut ds = gr.take(src);
            let mut dc = gr.take(coords);
            resample::sample_backward(
                &geom,
                gr.val(src),
                gr.val(coords),
                g,
                ds.as_deref_mut(),
                dc.as_deref_mut(),
            );
            gr.put(src, ds);
            gr.put(coords, dc);
        }
        &Op::Correlation { a, b, geom } => {
            let mut da = gr.take(a);
            let mut db = gr.take(b);
            correlation::backward(&geom, gr.val(a), gr.val(b), g, da.as_deref_mut(), db.as_deref_mut());
            gr.put(a, da);
            gr.put(b, db);
        }
        &Op::Linear {
            x,
            w,
            b,
            n,
            fin,
            fout,
        } => {
            if let Some(mut dx) = gr.take(x) {
                matmul(n, fout, fin, g, false, gr.val(w), false, &mut dx, true);
                gr.put(x, Some(dx));
            }
            if let Some(mut dw) = gr.take(w) {
                matmul(fout, n, fin, g, true, gr.val(x), false, &mut dw, true);
                gr.put(w, Some(dw));
            }
            if let Some(mut db) = gr.take(b) {
                for row in g.chunks(fout) {
                    db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                gr.put(b, Some(db));
            }
        }
        &Op::Reshape { x } => gr.add_with(x, |i| g[i]),
        &Op::Add { a, b } => {
            gr.add_with(a, |i| g[i]);
            gr.add_with(b, |i| g[i]);
        }
        &Op::Sub { a, b } => {
            gr.add_with(a, |i| g[i]);
            gr.add_with(b, |i| -g[i]);
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (gr.val(a).to_vec(), gr.val(b).to_vec());
            gr.add_with(a, |i| g[i] * bv[i]);
            gr.add_with(b, |i| g[i] * av[i]);
        }
        &Op::Minimum { a, b } => {
            let (av, bv) = (gr.val(a).to_vec(), gr.val(b).to_vec());
            gr.add_with(a, |i| if bv[i] < av[i] { T::zero() } else { g[i] });
            gr.add_with(b, |i| if bv[i] < av[i] { g[i] } else { T::zero() });
        }
        &Op::Scale { x, c } => gr.add_with(x, |i| g[i] * c),
        &Op::AddScalar { x } => gr.add_with(x, |i| g[i]),
        &Op::Exp { x } => gr.add_with(x, |i| g[i] * out[i]),
        &Op::Log { x } => {
            let xv = gr.val(x).to_vec();
            gr.add_with(x, |i| g[i] / xv[i]);
        }
        &Op::Clamp { x, lo, hi } => {
            let xv = gr.val(x).to_vec();
            gr.add_with(x, |i| if xv[i] >= lo && xv[i] <= hi { g[i] } else { T::zero() });
        }
        &Op::Sum { x } => gr.add_with(x, |_| g[0]),
        &Op::Mean { x } => {
            let n = T::c(gr.nodes[x.0].value.numel() as f64);
            gr.add_with(x, |_| g[0] / n);
        }
        &Op::Mse { a, b } => {
            let n = T::c(gr.nodes[a.0].value.numel() as f64);
            let diff: Vec<T> = gr
                .val(a)
                .iter()
                .zip(gr.val(b))
                .map(|(&x, &y)| T::c(2.0) * (x - y) / n * g[0])
                .collect();
            gr.add_with(a, |i| diff[i]);
            gr.add_with(b, |i| -diff[i]);
        }
        &Op::LogSoftmax { x, rows, cols } => {
            if let Some(mut dx) = gr.take(x) {
                for r in 0..rows {
                    let gs = &g[r * cols..(r + 1) * cols];
                    let ys = &out[r * cols..(r + 1) * cols];
                    let total: T = gs.iter().copied().sum();
                    for c in 0..cols {
                        dx[r * cols + c] += gs[c] - ys[c].exp() * total;
                    }
                }
                gr.put(x, Some(dx));
            }
        }
        Op::Gather { x, idx, cols } => {
            if let Some(mut dx) = gr.take(*x) {
                for (r, &i) in idx.iter().enumerate() {
                    dx[r * cols + i] += g[r];
                }
                gr.put(*x, Some(dx));
            }
        }
    }
}
