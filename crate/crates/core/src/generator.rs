//! Triple-path encoder, fusion layer and decoder.
//!
//! Encoder: three four-level convolution stacks (infrared, visible and the
//! concatenated pair). At levels 1–3 the infrared and visible features are
//! each stacked with the concatenating path's features and passed through an
//! interactive attention block; the result feeds the concatenating path's
//! next level. Levels 3 and 4 use stride 2.
//!
//! Fusion layer: level-4 concatenating features stacked with compensatory
//! attention maps of the level-4 infrared and visible features.
//!
//! Decoder: `d1` and `d2` are conv + PReLU + ×2 nearest upsampling, each
//! followed by stacking the compensatory maps of the encoder level at that
//! resolution (3, then 2); `d3` is conv + PReLU and `d4` conv + Tanh with a
//! single output channel.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    compensatory_var, init_attention, interactive_var, AttentionShape, InteractiveOptions, Stages,
    DEFAULT_REDUCTION, DEFAULT_SPATIAL_KERNEL,
};
use crate::error::{FusionError, Result};
use crate::params::{init_conv, init_prelu, Bound, Params, Scope};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{FeatureMap, Tensor};

pub const LEVELS: usize = 4;
pub const STRIDES: [usize; LEVELS] = [1, 1, 2, 2];
pub const KERNEL: usize = 3;

/// The full model and its six ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAttention,
    OnlyInteract,
    OnlyVisCom,
    OnlyIrCom,
    OnlyChannel,
    OnlySpatial,
}

impl Variant {
    /// Ablation table order.
    pub const ALL: [Variant; 7] = [
        Variant::NoAttention,
        Variant::OnlyInteract,
        Variant::OnlyVisCom,
        Variant::OnlyIrCom,
        Variant::OnlyChannel,
        Variant::OnlySpatial,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "no_attention",
            Variant::OnlyInteract => "only_interact",
            Variant::OnlyVisCom => "only_vis_com",
            Variant::OnlyIrCom => "only_ir_com",
            Variant::OnlyChannel => "only_channel",
            Variant::OnlySpatial => "only_spatial",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Ours",
            Variant::NoAttention => "No_Attention",
            Variant::OnlyInteract => "Only_interact",
            Variant::OnlyVisCom => "Only_VIS_Com",
            Variant::OnlyIrCom => "Only_IR_Com",
            Variant::OnlyChannel => "Only_Channel",
            Variant::OnlySpatial => "Only_Spatial",
        }
    }

    pub fn toggles(self) -> AttentionToggles {
        let all = AttentionToggles::default();
        match self {
            Variant::Full => all,
            Variant::NoAttention => AttentionToggles {
                interactive: false,
                ir_compensation: false,
                vis_compensation: false,
                ..all
            },
            Variant::OnlyInteract => AttentionToggles {
                ir_compensation: false,
                vis_compensation: false,
                ..all
            },
            Variant::OnlyVisCom => AttentionToggles {
                ir_compensation: false,
                ..all
            },
            Variant::OnlyIrCom => AttentionToggles {
                vis_compensation: false,
                ..all
            },
            Variant::OnlyChannel => AttentionToggles {
                stages: Stages {
                    channel: true,
                    spatial: false,
                },
                ..all
            },
            Variant::OnlySpatial => AttentionToggles {
                stages: Stages {
                    channel: false,
                    spatial: true,
                },
                ..all
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let v = match key.as_str() {
            "full" | "ours" => Variant::Full,
            "no_attention" => Variant::NoAttention,
            "only_interact" => Variant::OnlyInteract,
            "only_vis_com" => Variant::OnlyVisCom,
            "only_ir_com" => Variant::OnlyIrCom,
            "only_channel" => Variant::OnlyChannel,
            "only_spatial" => Variant::OnlySpatial,
            _ => {
                return Err(FusionError::Config(format!(
                    "unknown variant `{s}` (expected one of full, no_attention, only_interact, \
                     only_vis_com, only_ir_com, only_channel, only_spatial)"
                )))
            }
        };
        Ok(v)
    }
}

/// Which attention blocks exist in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionToggles {
    /// Interactive blocks at encoder levels 1–3; when off the two stacked
    /// inputs are concatenated unchanged.
    pub interactive: bool,
    pub ir_compensation: bool,
    pub vis_compensation: bool,
    /// Stages kept inside every attention block.
    pub stages: Stages,
}

impl Default for AttentionToggles {
    fn default() -> Self {
        Self {
            interactive: true,
            ir_compensation: true,
            vis_compensation: true,
            stages: Stages::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub encoder_widths: [usize; LEVELS],
    /// Output widths of decoder layers `d1..d3`; `d4` always emits one channel.
    pub decoder_widths: [usize; 3],
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub variant: Variant,
    pub attention: AttentionToggles,
    #[serde(default)]
    pub interactive_options: InteractiveOptions,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::with_widths([16, 32, 64, 128])
    }
}

impl GeneratorSpec {
    /// Spec with the given encoder widths and a mirrored decoder.
    pub fn with_widths(encoder_widths: [usize; LEVELS]) -> Self {
        Self {
            encoder_widths,
            decoder_widths: [encoder_widths[3], encoder_widths[2], encoder_widths[1]],
            reduction: DEFAULT_REDUCTION,
            spatial_kernel: DEFAULT_SPATIAL_KERNEL,
            variant: Variant::Full,
            attention: AttentionToggles::default(),
            interactive_options: InteractiveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(FusionError::Config("layer widths must be positive".into()));
        }
        if self.reduction == 0 {
            return Err(FusionError::Config("reduction ratio must be positive".into()));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(FusionError::Config("spatial kernel must be odd".into()));
        }
        if self.attention != self.variant.toggles() {
            return Err(FusionError::Config(format!(
                "attention toggles do not match variant `{}`",
                self.variant
            )));
        }
        Ok(())
    }

    fn shape(&self, channels: usize) -> AttentionShape {
        AttentionShape {
            channels,
            reduction: self.reduction,
            spatial_kernel: self.spatial_kernel,
        }
    }

    /// Channels of the fused map handed to the decoder.
    pub fn fused_channels(&self) -> usize {
        3 * self.encoder_widths[3]
    }

    /// Number of scalar parameters; a pure function of the spec.
    pub fn parameter_count(&self) -> usize {
        Generator::<f64>::new(self.clone(), 0)
            .map(|g| g.params.scalar_count())
            .unwrap_or(0)
    }
}

/// Returns `spec` reconfigured as `variant`; `Full` restores every block.
pub fn build_variant(variant: Variant, spec: &GeneratorSpec) -> GeneratorSpec {
    GeneratorSpec {
        variant,
        attention: variant.toggles(),
        ..spec.clone()
    }
}

/// Per-level encoder features.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState<T> {
    pub ir: Vec<FeatureMap<T>>,
    pub vis: Vec<FeatureMap<T>>,
    pub cat: Vec<FeatureMap<T>>,
    /// Outputs of the level 1–3 interaction blocks (`4·width` channels).
    pub interactive: Vec<FeatureMap<T>>,
}

/// Tape handles of an encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub ir: [Var; LEVELS],
    pub vis: [Var; LEVELS],
    pub cat: [Var; LEVELS],
    pub interactive: [Var; LEVELS - 1],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub params: Params<T>,
}

impl<T: Real> Generator<T> {
    /// Randomly initialised generator; identical seeds give identical weights.
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let w = spec.encoder_widths;
        let t = spec.attention;

        for (path, cin) in [("ir", 1), ("vis", 1), ("cat", 2)] {
            for l in 0..LEVELS {
                let cin = match (path, l) {
                    (_, 0) => cin,
                    ("cat", _) => 4 * w[l - 1],
                    _ => w[l - 1],
                };
                let name = format!("enc.{path}.{}", l + 1);
                init_conv(&mut p, &name, cin, w[l], KERNEL, &mut rng);
                init_prelu(&mut p, &format!("{name}.slope"));
            }
        }
        if t.interactive {
            for l in 0..LEVELS - 1 {
                for side in ["m", "n"] {
                    let shape = spec.shape(2 * w[l]);
                    init_attention(&mut p, &format!("ia.{}.{side}", l + 1), shape, t.stages, &mut rng);
                }
            }
        }
        for (path, on) in [("ir", t.ir_compensation), ("vis", t.vis_compensation)] {
            if on {
                for l in 1..LEVELS {
                    let shape = spec.shape(w[l]);
                    init_attention(&mut p, &format!("ca.{path}.{}", l + 1), shape, t.stages, &mut rng);
                }
            }
        }
        let d = spec.decoder_widths;
        let dec_in = [spec.fused_channels(), d[0] + 2 * w[2], d[1] + 2 * w[1], d[2]];
        let dec_out = [d[0], d[1], d[2], 1];
        for i in 0..4 {
            let name = format!("dec.{}", i + 1);
            init_conv(&mut p, &name, dec_in[i], dec_out[i], KERNEL, &mut rng);
            if i < 3 {
                init_prelu(&mut p, &format!("{name}.slope"));
            }
        }
        Ok(Self { spec, params: p })
    }

    pub fn from_params(spec: GeneratorSpec, params: Params<T>) -> Result<Self> {
        let reference = Generator::<T>::new(spec.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            params.get(name)?.expect_shape(t.shape(), name)?;
        }
        if params.len() != reference.params.len() {
            return Err(FusionError::Config(format!(
                "generator expects {} parameter arrays, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    fn conv_act(
        tape: &mut Tape<T>,
        s: &Scope<'_>,
        x: Var,
        stride: usize,
        act: bool,
    ) -> Result<Var> {
        let y = tape.conv2d(x, s.var("weight")?, Some(s.var("bias")?), stride, KERNEL / 2)?;
        if act {
            tape.prelu(y, s.var("slope")?)
        } else {
            Ok(y)
        }
    }

    fn compensate(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        path: &str,
        level: usize,
        x: Var,
    ) -> Result<Var> {
        let on = match path {
            "ir" => self.spec.attention.ir_compensation,
            _ => self.spec.attention.vis_compensation,
        };
        if on {
            let scope = bound.scope(format!("ca.{path}.{level}"));
            compensatory_var(tape, &scope, x, self.spec.attention.stages)
        } else {
            Ok(x)
        }
    }

    pub fn encode_var(&self, tape: &mut Tape<T>, bound: &Bound, ir: Var, vis: Var) -> Result<EncoderVars> {
        let (a, b) = (tape.value(ir).shape(), tape.value(vis).shape());
        if a != b || a[1] != 1 {
            return Err(FusionError::dim(format!(
                "inputs must be single-channel and equal-sized, got {a:?} and {b:?}"
            )));
        }
        if a[2] % 4 != 0 || a[3] % 4 != 0 {
            return Err(FusionError::Padding { h: a[2], w: a[3] });
        }
        let t = self.spec.attention;
        let mut x_ir = ir;
        let mut x_vis = vis;
        let mut x_cat = tape.concat(&[ir, vis])?;
        let mut f_ir = Vec::with_capacity(LEVELS);
        let mut f_vis = Vec::with_capacity(LEVELS);
        let mut f_cat = Vec::with_capacity(LEVELS);
        let mut inter = Vec::with_capacity(LEVELS - 1);
        for l in 0..LEVELS {
            let lv = l + 1;
            x_ir = Self::conv_act(tape, &bound.scope(format!("enc.ir.{lv}")), x_ir, STRIDES[l], true)?;
            x_vis = Self::conv_act(tape, &bound.scope(format!("enc.vis.{lv}")), x_vis, STRIDES[l], true)?;
            let c = Self::conv_act(tape, &bound.scope(format!("enc.cat.{lv}")), x_cat, STRIDES[l], true)?;
            f_ir.push(x_ir);
            f_vis.push(x_vis);
            f_cat.push(c);
            if l < LEVELS - 1 {
                let m = tape.concat(&[x_ir, c])?;
                let n = tape.concat(&[x_vis, c])?;
                let out = if t.interactive {
                    interactive_var(
                        tape,
                        &bound.scope(format!("ia.{lv}.m")),
                        &bound.scope(format!("ia.{lv}.n")),
                        m,
                        n,
                        t.stages,
                        self.spec.interactive_options,
                    )?
                } else {
                    tape.concat(&[m, n])?
                };
                inter.push(out);
                x_cat = out;
            }
        }
        let arr = |v: Vec<Var>| -> [Var; LEVELS] { v.try_into().expect("four levels") };
        Ok(EncoderVars {
            ir: arr(f_ir),
            vis: arr(f_vis),
            cat: arr(f_cat),
            interactive: inter.try_into().expect("three interactions"),
        })
    }

    pub fn fuse_var(&self, tape: &mut Tape<T>, bound: &Bound, enc: &EncoderVars) -> Result<Var> {
        let ir = self.compensate(tape, bound, "ir", 4, enc.ir[3])?;
        let vis = self.compensate(tape, bound, "vis", 4, enc.vis[3])?;
        tape.concat(&[enc.cat[3], ir, vis])
    }

    pub fn decode_var(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        fused: Var,
        enc: &EncoderVars,
    ) -> Result<Var> {
        let mut x = fused;
        for (i, level) in [(1usize, 3usize), (2, 2)] {
            let y = Self::conv_act(tape, &bound.scope(format!("dec.{i}")), x, 1, true)?;
            let y = tape.upsample2(y);
            let skip_ir = self.compensate(tape, bound, "ir", level, enc.ir[level - 1])?;
            let skip_vis = self.compensate(tape, bound, "vis", level, enc.vis[level - 1])?;
            let (ys, ss) = (tape.value(y).shape(), tape.value(skip_ir).shape());
            if ys[2..] != ss[2..] {
                return Err(FusionError::dim(format!(
                    "decoder layer {i} produced {ys:?} but skip level {level} is {ss:?}"
                )));
            }
            x = tape.concat(&[y, skip_ir, skip_vis])?;
        }
        let y = Self::conv_act(tape, &bound.scope("dec.3"), x, 1, true)?;
        let y = Self::conv_act(tape, &bound.scope("dec.4"), y, 1, false)?;
        Ok(tape.tanh(y))
    }

    /// Full forward pass on the tape; returns the fused-image handle.
    pub fn forward_var(&self, tape: &mut Tape<T>, bound: &Bound, ir: Var, vis: Var) -> Result<Var> {
        let enc = self.encode_var(tape, bound, ir, vis)?;
        let fused = self.fuse_var(tape, bound, &enc)?;
        self.decode_var(tape, bound, fused, &enc)
    }

    pub fn encode(&self, ir: &Tensor<T>, vis: &Tensor<T>) -> Result<EncoderState<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let (i, v) = (tape.constant(ir.clone()), tape.constant(vis.clone()));
        let enc = self.encode_var(&mut tape, &bound, i, v)?;
        let grab = |vars: &[Var]| vars.iter().map(|&x| tape.value(x).clone()).collect();
        Ok(EncoderState {
            ir: grab(&enc.ir),
            vis: grab(&enc.vis),
            cat: grab(&enc.cat),
            interactive: grab(&enc.interactive),
        })
    }

    fn state_vars(tape: &mut Tape<T>, state: &EncoderState<T>) -> Result<EncoderVars> {
        if state.ir.len() != LEVELS || state.vis.len() != LEVELS || state.cat.len() != LEVELS {
            return Err(FusionError::dim("encoder state must hold four levels"));
        }
        let mut push = |v: &[FeatureMap<T>]| -> Vec<Var> {
            v.iter().map(|t| tape.constant(t.clone())).collect()
        };
        let ir = push(&state.ir);
        let vis = push(&state.vis);
        let cat = push(&state.cat);
        let inter = push(&state.interactive);
        let arr = |v: Vec<Var>| -> [Var; LEVELS] { v.try_into().expect("four levels") };
        Ok(EncoderVars {
            ir: arr(ir),
            vis: arr(vis),
            cat: arr(cat),
            interactive: inter
                .try_into()
                .map_err(|_| FusionError::dim("encoder state must hold three interactions"))?,
        })
    }

    pub fn fuse_layer(&self, state: &EncoderState<T>) -> Result<FeatureMap<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let enc = Self::state_vars(&mut tape, state)?;
        let out = self.fuse_var(&mut tape, &bound, &enc)?;
        Ok(tape.value(out).clone())
    }

    pub fn decode(&self, fused: &FeatureMap<T>, state: &EncoderState<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let enc = Self::state_vars(&mut tape, state)?;
        let f = tape.constant(fused.clone());
        let out = self.decode_var(&mut tape, &bound, f, &enc)?;
        Ok(tape.value(out).clone())
    }

    /// Fused image for inputs whose sides are multiples of 4.
    pub fn forward(&self, ir: &Tensor<T>, vis: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let (i, v) = (tape.constant(ir.clone()), tape.constant(vis.clone()));
        let out = self.forward_var(&mut tape, &bound, i, v)?;
        Ok(tape.value(out).clone())
    }

    /// Like [`forward`](Self::forward) but accepts any size: inputs are
    /// reflect-padded on the bottom/right to a multiple of 4 and the output
    /// is cropped back.
    pub fn fuse(&self, ir: &Tensor<T>, vis: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = ir.shape();
        if h % 4 == 0 && w % 4 == 0 {
            return self.forward(ir, vis);
        }
        let (ph, pw) = ((4 - h % 4) % 4, (4 - w % 4) % 4);
        let out = self.forward(&reflect_pad(ir, ph, pw)?, &reflect_pad(vis, ph, pw)?)?;
        Ok(crop(&out, h, w))
    }
}

/// Mirror padding (edge pixel not repeated) on the bottom and right.
pub fn reflect_pad<T: Real>(x: &Tensor<T>, ph: usize, pw: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if ph >= h || pw >= w {
        return Err(FusionError::Padding { h, w });
    }
    let fold = |i: usize, len: usize| if i < len { i } else { 2 * (len - 1) - i };
    Ok(Tensor::from_fn([n, c, h + ph, w + pw], |[ni, ci, hi, wi]| {
        x.at(ni, ci, fold(hi, h), fold(wi, w))
    }))
}

pub fn crop<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, _, _] = x.shape();
    Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| x.at(ni, ci, hi, wi))
}
