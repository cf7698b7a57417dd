//! Interactive and compensatory attention.
//!
//! Both modules cascade a channel gate and a spatial gate. The interactive
//! module takes two feature volumes and lets their gate scores compete
//! through an elementwise two-way softmax, so the two paths receive
//! complementary weights; its output stacks both gated volumes (2C
//! channels). The compensatory module gates a single volume with the raw
//! sigmoid scores.
//!
//! Channel gate: global average and max pooling each feed a
//! `C → C/r → C` bottleneck (1×1 convolutions with PReLU in between); the
//! two descriptors are stacked and merged back to `C` scores by a 1×1
//! convolution followed by a sigmoid. Spatial gate: channel-wise mean and
//! max maps are stacked and merged to one score map by a `k × k`
//! convolution followed by a sigmoid.

use rand::Rng;

use crate::error::{FusionError, Result};
use crate::params::{init_conv, init_prelu, Params, Scope};
use crate::real::Real;
use crate::tape::{softmax_pair, Tape, Var};
use crate::tensor::{FeatureMap, Tensor};

pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_SPATIAL_KERNEL: usize = 7;

/// Which gating stages are active. Disabled stages act as identity gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Stages {
    pub channel: bool,
    pub spatial: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            channel: true,
            spatial: true,
        }
    }
}

/// Shape of one attention block's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionShape {
    pub channels: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
}

impl AttentionShape {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            reduction: DEFAULT_REDUCTION,
            spatial_kernel: DEFAULT_SPATIAL_KERNEL,
        }
    }

    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }
}

/// Parameters of one attention gate pair (channel + spatial).
///
/// Names: `ch.{avg,max}.{fc1,fc2}.{weight,bias}`, `ch.{avg,max}.slope`,
/// `ch.merge.{weight,bias}`, `sp.merge.{weight,bias}`. Stages that are
/// disabled carry no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub shape: AttentionShape,
    pub stages: Stages,
    pub params: Params<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn init<R: Rng>(shape: AttentionShape, stages: Stages, rng: &mut R) -> Self {
        let mut params = Params::new();
        init_attention(&mut params, "", shape, stages, rng);
        Self {
            shape,
            stages,
            params,
        }
    }

    /// All weights, biases and PReLU slopes set to zero.
    pub fn zeros(shape: AttentionShape, stages: Stages) -> Self {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut p = Self::init(shape, stages, &mut rng);
        p.params = p.params.zeros_like();
        p
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Adds the parameters of one attention block under `prefix`.
pub fn init_attention<T: Real, R: Rng>(
    params: &mut Params<T>,
    prefix: &str,
    shape: AttentionShape,
    stages: Stages,
    rng: &mut R,
) {
    let c = shape.channels;
    let hidden = shape.hidden();
    if stages.channel {
        for branch in ["avg", "max"] {
            let p = join(prefix, &format!("ch.{branch}"));
            init_conv(params, &format!("{p}.fc1"), c, hidden, 1, rng);
            init_prelu(params, &format!("{p}.slope"));
            init_conv(params, &format!("{p}.fc2"), hidden, c, 1, rng);
        }
        init_conv(params, &join(prefix, "ch.merge"), 2 * c, c, 1, rng);
    }
    if stages.spatial {
        let k = shape.spatial_kernel;
        init_conv(params, &join(prefix, "sp.merge"), 2, 1, k, rng);
    }
}

fn conv_layer<T: Real>(
    tape: &mut Tape<T>,
    scope: &Scope<'_>,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let s = scope.sub(name);
    tape.conv2d(x, s.var("weight")?, Some(s.var("bias")?), stride, pad)
}

/// Channel scores `φ ∈ (0,1)^{N×C×1×1}` for `x`.
pub fn channel_gate_var<T: Real>(tape: &mut Tape<T>, scope: &Scope<'_>, x: Var) -> Result<Var> {
    let avg = tape.global_avg_pool(x);
    let max = tape.global_max_pool(x);
    let mut branches = Vec::with_capacity(2);
    for (branch, pooled) in [("avg", avg), ("max", max)] {
        let s = scope.sub(&format!("ch.{branch}"));
        let h = conv_layer(tape, &s, "fc1", pooled, 1, 0)?;
        let h = tape.prelu(h, s.var("slope")?)?;
        branches.push(conv_layer(tape, &s, "fc2", h, 1, 0)?);
    }
    let stacked = tape.concat(&branches)?;
    let merged = conv_layer(tape, scope, "ch.merge", stacked, 1, 0)?;
    Ok(tape.sigmoid(merged))
}

/// Spatial scores `φ ∈ (0,1)^{N×1×H×W}` for `x`.
pub fn spatial_gate_var<T: Real>(tape: &mut Tape<T>, scope: &Scope<'_>, x: Var) -> Result<Var> {
    let mean = tape.channel_mean(x);
    let max = tape.channel_max(x);
    let stacked = tape.concat(&[mean, max])?;
    let k = tape.value(scope.var("sp.merge.weight")?).width();
    let merged = conv_layer(tape, scope, "sp.merge", stacked, 1, k / 2)?;
    Ok(tape.sigmoid(merged))
}

/// Options of the interactive block beyond its stage switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InteractiveOptions {
    /// Gate the second path's spatial stage with the *first* path's
    /// channel-attended features, as the published formula literally reads.
    /// Off by default; breaks swap symmetry when on.
    pub literal_second_path: bool,
}

/// Interactive attention over `(m, n)`; returns the stacked `2C`-channel map.
pub fn interactive_var<T: Real>(
    tape: &mut Tape<T>,
    scope_m: &Scope<'_>,
    scope_n: &Scope<'_>,
    m: Var,
    n: Var,
    stages: Stages,
    opts: InteractiveOptions,
) -> Result<Var> {
    if tape.value(m).shape() != tape.value(n).shape() {
        return Err(FusionError::dim(format!(
            "interactive attention inputs differ: {:?} vs {:?}",
            tape.value(m).shape(),
            tape.value(n).shape()
        )));
    }
    let (m_ca, n_ca) = if stages.channel {
        let phi_m = channel_gate_var(tape, scope_m, m)?;
        let phi_n = channel_gate_var(tape, scope_n, n)?;
        let beta_m = tape.softmax2(phi_m, phi_n)?;
        let beta_n = tape.softmax2(phi_n, phi_m)?;
        (tape.mul_channel(m, beta_m)?, tape.mul_channel(n, beta_n)?)
    } else {
        (m, n)
    };
    let (m_sa, n_sa) = if stages.spatial {
        let psi_m = spatial_gate_var(tape, scope_m, m_ca)?;
        let psi_n = spatial_gate_var(tape, scope_n, n_ca)?;
        let beta_m = tape.softmax2(psi_m, psi_n)?;
        let beta_n = tape.softmax2(psi_n, psi_m)?;
        let second = if opts.literal_second_path { m_ca } else { n_ca };
        (tape.mul_spatial(m_ca, beta_m)?, tape.mul_spatial(second, beta_n)?)
    } else {
        (m_ca, n_ca)
    };
    tape.concat(&[m_sa, n_sa])
}

/// Compensatory attention: `(x ⊙ φ_ca) ⊙ φ_sa` with raw sigmoid scores.
pub fn compensatory_var<T: Real>(
    tape: &mut Tape<T>,
    scope: &Scope<'_>,
    x: Var,
    stages: Stages,
) -> Result<Var> {
    let x_ca = if stages.channel {
        let phi = channel_gate_var(tape, scope, x)?;
        tape.mul_channel(x, phi)?
    } else {
        x
    };
    if stages.spatial {
        let psi = spatial_gate_var(tape, scope, x_ca)?;
        tape.mul_spatial(x_ca, psi)
    } else {
        Ok(x_ca)
    }
}

fn check_channels<T: Real>(f: &FeatureMap<T>, p: &AttentionParams<T>) -> Result<()> {
    if f.channels() != p.shape.channels {
        return Err(FusionError::dim(format!(
            "attention parameters are sized for {} channels, feature map has {}",
            p.shape.channels,
            f.channels()
        )));
    }
    if !f.all_finite() {
        return Err(FusionError::Numerical("feature map has non-finite entries".into()));
    }
    Ok(())
}

/// Channel gate scores for a standalone feature map.
pub fn channel_gate<T: Real>(f: &FeatureMap<T>, p: &AttentionParams<T>) -> Result<Tensor<T>> {
    check_channels(f, p)?;
    let mut tape = Tape::new();
    let bound = p.params.bind_frozen(&mut tape);
    let x = tape.constant(f.clone());
    let out = channel_gate_var(&mut tape, &bound.scope(""), x)?;
    Ok(tape.value(out).clone())
}

/// Spatial gate scores for a standalone feature map.
pub fn spatial_gate<T: Real>(f: &FeatureMap<T>, p: &AttentionParams<T>) -> Result<Tensor<T>> {
    check_channels(f, p)?;
    let mut tape = Tape::new();
    let bound = p.params.bind_frozen(&mut tape);
    let x = tape.constant(f.clone());
    let out = spatial_gate_var(&mut tape, &bound.scope(""), x)?;
    Ok(tape.value(out).clone())
}

/// Elementwise two-way softmax; the two outputs sum to one.
pub fn dueling_softmax<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let wa = a.zip_map(b, |x, y| softmax_pair(x, y).0)?;
    let wb = b.zip_map(a, |y, x| softmax_pair(y, x).0)?;
    Ok((wa, wb))
}

pub fn interactive_attention<T: Real>(
    phi_m: &FeatureMap<T>,
    phi_n: &FeatureMap<T>,
    p_m: &AttentionParams<T>,
    p_n: &AttentionParams<T>,
    opts: InteractiveOptions,
) -> Result<FeatureMap<T>> {
    check_channels(phi_m, p_m)?;
    check_channels(phi_n, p_n)?;
    if p_m.stages != p_n.stages {
        return Err(FusionError::Config(
            "both paths of an interactive block need the same stages".into(),
        ));
    }
    let mut tape = Tape::new();
    let bm = p_m.params.bind_frozen(&mut tape);
    let bn = p_n.params.bind_frozen(&mut tape);
    let m = tape.constant(phi_m.clone());
    let n = tape.constant(phi_n.clone());
    let out = interactive_var(
        &mut tape,
        &bm.scope(""),
        &bn.scope(""),
        m,
        n,
        p_m.stages,
        opts,
    )?;
    Ok(tape.value(out).clone())
}

pub fn compensatory_attention<T: Real>(
    phi: &FeatureMap<T>,
    p: &AttentionParams<T>,
) -> Result<FeatureMap<T>> {
    check_channels(phi, p)?;
    let mut tape = Tape::new();
    let bound = p.params.bind_frozen(&mut tape);
    let x = tape.constant(phi.clone());
    let out = compensatory_var(&mut tape, &bound.scope(""), x, p.stages)?;
    Ok(tape.value(out).clone())
}
