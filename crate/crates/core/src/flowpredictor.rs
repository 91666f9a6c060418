//! Flow predictor `G(a, b)` that maps two observations to a per-pixel
//! displacement field, in a stacked-input variant (S) and a twin-encoder
//! variant with a correlation layer (C), plus the backward warp that
//! reconstructs one frame from the other.
//!
//! Spatial path for a 42x42 input: encoder 42 -> 21 -> 11 -> 6 -> 6, decoder
//! 6 -> 11 (skip from layer 2) -> 21 (skip from layer 1), a 2-channel head
//! at 21x21 and a final 2x upsample to full resolution.

use ficm_numerics::{he_normal, Graph, ParamId, ParamStore, Real, Rng, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

const ENCODER_STRIDES: [usize; 4] = [2, 2, 2, 1];
/// Scale applied to the flow head's initial weights so early flows are
/// close to zero.
const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Both frames stacked along channels into one encoder.
    S,
    /// Each frame encoded by the same weights, compared by correlation.
    C,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub variant: Variant,
    /// 3 for RGB, 1 for gray.
    pub channels_per_frame: usize,
    /// Frames stacked into one observation (1 or 4).
    pub frames_per_input: usize,
    pub encoder_widths: [usize; 4],
    pub decoder_widths: [usize; 2],
    pub max_disp: usize,
    pub corr_stride: usize,
    pub slope: f64,
}

impl PredictorConfig {
    pub fn new(variant: Variant, channels_per_frame: usize, frames_per_input: usize) -> Self {
        Self {
            variant,
            channels_per_frame,
            frames_per_input,
            encoder_widths: [16, 32, 32, 32],
            decoder_widths: [16, 8],
            max_disp: 3,
            corr_stride: 1,
            slope: 0.1,
        }
    }

    /// Channels of one observation as seen by the predictor.
    pub fn input_channels(&self) -> usize {
        self.channels_per_frame * self.frames_per_input
    }

    pub fn correlation_channels(&self) -> usize {
        let steps = 2 * (self.max_disp / self.corr_stride) + 1;
        steps * steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels_per_frame == 0 || self.frames_per_input == 0 {
            return config_err("predictor needs at least one channel and one frame");
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) {
            return config_err("predictor widths must be positive");
        }
        if !(0.0..1.0).contains(&self.slope) {
            return config_err("leaky-relu slope must lie in [0, 1)");
        }
        if self.variant == Variant::C && (self.max_disp == 0 || self.corr_stride == 0) {
            return config_err("correlation needs max_disp >= 1 and stride >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layout {
    encoder: [ConvIds; 4],
    fuse: Option<ConvIds>,
    decoder: [ConvIds; 2],
    head: ConvIds,
}

/// All weights of one predictor. Both encoder paths of variant C read the
/// same `encoder` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PredictorParams<T: Real> {
    pub store: ParamStore<T>,
    layout: Layout,
}

/// Which input an encoder path consumes in variant C.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderPath {
    First,
    Second,
}

fn add_conv<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut Rng,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    gain: f64,
) -> ConvIds {
    let weight = store.add(
        format!("{name}.weight"),
        he_normal(rng, &[cout, cin, k, k], cin * k * k, gain),
    );
    let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
    ConvIds { weight, bias }
}

impl<T: Real> PredictorParams<T> {
    pub fn init(cfg: &PredictorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let [w0, w1, w2, w3] = cfg.encoder_widths;
        let [d0, d1] = cfg.decoder_widths;
        let cin = cfg.input_channels();
        let first_in = match cfg.variant {
            Variant::S => 2 * cin,
            Variant::C => cin,
        };
        let mut store = ParamStore::new();
        let encoder = [
            add_conv(&mut store, rng, "enc1", w0, first_in, 3, 1.0),
            add_conv(&mut store, rng, "enc2", w1, w0, 3, 1.0),
            add_conv(&mut store, rng, "enc3", w2, w1, 3, 1.0),
            add_conv(&mut store, rng, "enc4", w3, w2, 3, 1.0),
        ];
        let fuse = match cfg.variant {
            Variant::S => None,
            Variant::C => Some(add_conv(
                &mut store,
                rng,
                "fuse",
                w1,
                cfg.correlation_channels() + w1,
                1,
                1.0,
            )),
        };
        let decoder = [
            add_conv(&mut store, rng, "dec1", d0, w3 + w1, 3, 1.0),
            add_conv(&mut store, rng, "dec2", d1, d0 + w0, 3, 1.0),
        ];
        let head = add_conv(&mut store, rng, "head", 2, d1, 3, HEAD_INIT_SCALE);
        Ok(Self {
            store,
            layout: Layout {
                encoder,
                fuse,
                decoder,
                head,
            },
        })
    }

    /// Parameter ids read by one encoder path. Variant C returns the same
    /// ids for both paths.
    pub fn encoder_ids(&self, _path: EncoderPath) -> Vec<ParamId> {
        self.layout.encoder[..2]
            .iter()
            .flat_map(|c| [c.weight, c.bias])
            .collect()
    }

    pub fn head_ids(&self) -> ConvIds {
        self.layout.head
    }

    pub fn cast<U: Real>(&self) -> PredictorParams<U> {
        PredictorParams {
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }
}

struct Block<'a, T: Real> {
    g: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    slope: f64,
}

impl<T: Real> Block<'_, T> {
    fn conv(&mut self, x: Var, ids: ConvIds, stride: usize, act: bool) -> Result<Var> {
        let w = self.g.param(self.store, ids.weight)?;
        let b = self.g.param(self.store, ids.bias)?;
        let k = self.store.get(ids.weight).shape()[2];
        let y = self.g.conv2d(x, w, b, stride, k / 2)?;
        Ok(if act { self.g.leaky_relu(y, self.slope)? } else { y })
    }

    /// Upsample `x` by two, crop to `skip`'s size and append `skip`.
    fn up_fuse(&mut self, x: Var, skip: Var) -> Result<Var> {
        let s = self.g.shape(skip).to_vec();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let u = self.g.upsample2x(x)?;
        let u = self.g.crop(u, h, w)?;
        Ok(self.g.concat_channels(u, skip)?)
    }
}

struct Features {
    skip1: Var,
    skip2: Var,
}

fn check_inputs<T: Real>(cfg: &PredictorConfig, g: &Graph<T>, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return shape_err("predict_flow", format!("{sa:?} vs {sb:?}"));
    }
    if !(3..=4).contains(&sa.len()) || sa[sa.len() - 3] != cfg.input_channels() {
        return shape_err(
            "predict_flow",
            format!("expected {} channels, got {sa:?}", cfg.input_channels()),
        );
    }
    Ok(())
}

fn encode_single<T: Real>(blk: &mut Block<'_, T>, layout: &Layout, x: Var) -> Result<Features> {
    let l1 = blk.conv(x, layout.encoder[0], ENCODER_STRIDES[0], true)?;
    let l2 = blk.conv(l1, layout.encoder[1], ENCODER_STRIDES[1], true)?;
    Ok(Features {
        skip1: l1,
        skip2: l2,
    })
}

fn decode<T: Real>(
    blk: &mut Block<'_, T>,
    layout: &Layout,
    f: &Features,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let l3 = blk.conv(f.skip2, layout.encoder[2], ENCODER_STRIDES[2], true)?;
    let l4 = blk.conv(l3, layout.encoder[3], ENCODER_STRIDES[3], true)?;
    let x = blk.up_fuse(l4, f.skip2)?;
    let x = blk.conv(x, layout.decoder[0], 1, true)?;
    let x = blk.up_fuse(x, f.skip1)?;
    let x = blk.conv(x, layout.decoder[1], 1, true)?;
    let flow = blk.conv(x, layout.head, 1, false)?;
    let flow = blk.g.upsample2x(flow)?;
    Ok(blk.g.crop(flow, out_h, out_w)?)
}

fn correlate_fuse<T: Real>(
    blk: &mut Block<'_, T>,
    cfg: &PredictorConfig,
    layout: &Layout,
    fa: &Features,
    fb: &Features,
) -> Result<Features> {
    let corr = blk
        .g
        .correlation(fa.skip2, fb.skip2, cfg.max_disp, cfg.corr_stride)?;
    let cat = blk.g.concat_channels(corr, fa.skip2)?;
    let fused = blk.conv(cat, layout.fuse.expect("variant C has a fuse layer"), 1, true)?;
    Ok(Features {
        skip1: fa.skip1,
        skip2: fused,
    })
}

/// Records `G(a, b)` and, when `both` is set, `G(b, a)` on the tape. Inputs
/// are `[C,H,W]` or `[N,C,H,W]`; flows come back in the same rank with two
/// channels. Variant C encodes each input once and reuses it for both
/// directions.
pub fn flow_graph<T: Real>(
    g: &mut Graph<T>,
    params: &PredictorParams<T>,
    cfg: &PredictorConfig,
    a: Var,
    b: Var,
    both: bool,
) -> Result<(Var, Option<Var>)> {
    check_inputs(cfg, g, a, b)?;
    let s = g.shape(a).to_vec();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let layout = &params.layout;
    let mut blk = Block {
        g,
        store: &params.store,
        slope: cfg.slope,
    };
    match cfg.variant {
        Variant::S => {
            let run = |x: Var, y: Var, blk: &mut Block<'_, T>| -> Result<Var> {
                let cat = blk.g.concat_channels(x, y)?;
                let f = encode_single(blk, layout, cat)?;
                decode(blk, layout, &f, h, w)
            };
            let fwd = run(a, b, &mut blk)?;
            let bwd = if both { Some(run(b, a, &mut blk)?) } else { None };
            Ok((fwd, bwd))
        }
        Variant::C => {
            let fa = encode_single(&mut blk, layout, a)?;
            let fb = encode_single(&mut blk, layout, b)?;
            let ab = correlate_fuse(&mut blk, cfg, layout, &fa, &fb)?;
            let fwd = decode(&mut blk, layout, &ab, h, w)?;
            let bwd = if both {
                let ba = correlate_fuse(&mut blk, cfg, layout, &fb, &fa)?;
                Some(decode(&mut blk, layout, &ba, h, w)?)
            } else {
                None
            };
            Ok((fwd, bwd))
        }
    }
}

/// Per-pixel displacement in pixels: channel 0 is the x shift, channel 1
/// the y shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FlowField<T: Real>(pub Tensor<T>);

impl<T: Real> FlowField<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self(Tensor::zeros(&[2, h, w]))
    }

    pub fn uniform(h: usize, w: usize, dx: f64, dy: f64) -> Self {
        let n = h * w;
        Self(Tensor::from_fn(&[2, h, w], |i| {
            T::c(if i < n { dx } else { dy })
        }))
    }

    pub fn displacements(&self) -> &Tensor<T> {
        &self.0
    }

    /// Mean `(dx, dy)` over all pixels.
    pub fn mean(&self) -> (f64, f64) {
        let d = self.0.data();
        let n = d.len() / 2;
        let sx: f64 = d[..n].iter().map(|v| v.f64()).sum();
        let sy: f64 = d[n..].iter().map(|v| v.f64()).sum();
        (sx / n as f64, sy / n as f64)
    }
}

/// Evaluates `G(a, b)` for one pair of `[C,H,W]` observations.
pub fn predict_flow<T: Real>(
    params: &PredictorParams<T>,
    cfg: &PredictorConfig,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<FlowField<T>> {
    if a.rank() != 3 {
        return shape_err("predict_flow", format!("expected [C,H,W], got {:?}", a.shape()));
    }
    let mut g = Graph::inference();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let (f, _) = flow_graph(&mut g, params, cfg, av, bv, false)?;
    Ok(FlowField(g.value(f).clone()))
}

/// Sampling grid `x + beta * flow` in the shape of `flow`.
fn identity_grid<T: Real>(shape: &[usize]) -> Tensor<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let plane = h * w;
    Tensor::from_fn(shape, |i| {
        let p = i % plane;
        let c = (i / plane) % 2;
        T::c(if c == 0 { (p % w) as f64 } else { (p / w) as f64 })
    })
}

/// `out(x) = target(x + beta * flow(x))` with bilinear lookup and border
/// clamping, recorded on the tape.
pub fn warp_graph<T: Real>(g: &mut Graph<T>, target: Var, flow: Var, beta: f64) -> Result<Var> {
    let fs = g.shape(flow).to_vec();
    let grid = g.constant(identity_grid(&fs));
    let scaled = g.scale(flow, T::c(beta));
    let coords = g.add(grid, scaled)?;
    Ok(g.bilinear_sample(target, coords)?)
}

pub fn warp<T: Real>(target: &Tensor<T>, flow: &FlowField<T>, beta: f64) -> Result<Tensor<T>> {
    let (ts, fs) = (target.shape(), flow.0.shape());
    if ts.len() != fs.len() || ts[ts.len() - 2..] != fs[fs.len() - 2..] {
        return shape_err("warp", format!("target {ts:?}, flow {fs:?}"));
    }
    let mut g = Graph::new();
    let t = g.constant(target.clone());
    let f = g.constant(flow.0.clone());
    let out = warp_graph(&mut g, t, f, beta)?;
    Ok(g.value(out).clone())
}

/// Mean-over-channels correlation of two feature maps over a square
/// displacement window; see [`Graph::correlation`].
pub fn correlation<T: Real>(
    phi_a: &Tensor<T>,
    phi_b: &Tensor<T>,
    max_disp: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let a = g.constant(phi_a.clone());
    let b = g.constant(phi_b.clone());
    let c = g.correlation(a, b, max_disp, stride)?;
    Ok(g.value(c).clone())
}
