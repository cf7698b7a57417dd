//! Wasserstein critics: four stride-2 3×3 convolutions with LeakyReLU, then
//! a fully connected layer to one unbounded score.
//!
//! The critic is a fixed chain, so its backward pass and the second-order
//! terms needed by the gradient penalty are written out directly instead of
//! going through the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{conv2d, conv2d_backward};
use crate::error::{FusionError, Result};
use crate::params::{init_conv, Params};
use crate::real::Real;
use crate::tensor::Tensor;

pub const CRITIC_LAYERS: usize = 4;
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSpec {
    pub widths: [usize; CRITIC_LAYERS],
    pub leaky_slope: f64,
    /// Input height/width the fully connected layer is sized for.
    pub input_size: [usize; 2],
}

impl Default for CriticSpec {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64, 128],
            leaky_slope: 0.2,
            input_size: [128, 128],
        }
    }
}

impl CriticSpec {
    pub fn for_input(h: usize, w: usize) -> Self {
        Self {
            input_size: [h, w],
            ..Self::default()
        }
    }

    /// Spatial size after each stride-2 layer.
    pub fn feature_sizes(&self) -> [[usize; 2]; CRITIC_LAYERS] {
        let mut s = self.input_size;
        let mut out = [[0; 2]; CRITIC_LAYERS];
        for o in out.iter_mut() {
            s = [(s[0] + 2 * PAD - KERNEL) / STRIDE + 1, (s[1] + 2 * PAD - KERNEL) / STRIDE + 1];
            *o = s;
        }
        out
    }

    pub fn fc_inputs(&self) -> usize {
        let [h, w] = self.feature_sizes()[CRITIC_LAYERS - 1];
        self.widths[CRITIC_LAYERS - 1] * h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|&w| w == 0) {
            return Err(FusionError::Config("critic widths must be positive".into()));
        }
        if self.input_size[0] < 16 || self.input_size[1] < 16 {
            return Err(FusionError::Config(format!(
                "critic input must be at least 16x16, got {:?}",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// Anything that scores single-channel image batches and exposes the input
/// gradient of its score.
pub trait CriticFn<T: Real> {
    fn scores(&self, x: &Tensor<T>) -> Result<Vec<T>>;
    /// `∂score_n/∂x_n` for every batch item.
    fn input_gradients(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Intermediate values of a critic forward pass.
pub struct CriticTrace<T> {
    /// `inputs[l]` is the input of conv layer `l` (`inputs[0]` is the image).
    inputs: Vec<Tensor<T>>,
    /// Pre-activation outputs of each conv layer.
    pre: Vec<Tensor<T>>,
    /// Flattened input of the fully connected layer.
    top: Tensor<T>,
    pub scores: Vec<T>,
}

/// Result of evaluating the gradient penalty with parameter gradients.
pub struct PenaltyEval<T> {
    /// `mean_n (1 - ‖∇_x D(x_n)‖₂)²`
    pub value: T,
    pub norms: Vec<T>,
    /// Gradient of `value` with respect to the critic parameters.
    pub grads: Params<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic<T> {
    pub spec: CriticSpec,
    pub params: Params<T>,
}

fn wname(l: usize) -> String {
    format!("conv.{}.weight", l + 1)
}

fn bname(l: usize) -> String {
    format!("conv.{}.bias", l + 1)
}

impl<T: Real> Critic<T> {
    pub fn new(spec: CriticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let mut cin = 1;
        for l in 0..CRITIC_LAYERS {
            init_conv(&mut p, &format!("conv.{}", l + 1), cin, spec.widths[l], KERNEL, &mut rng);
            cin = spec.widths[l];
        }
        let fc = spec.fc_inputs();
        let mut fcp = Params::new();
        init_conv(&mut fcp, "fc", fc, 1, 1, &mut rng);
        // the fully connected weight is stored as a flat row
        p.insert("fc.weight", Tensor::from_vec([1, 1, 1, fc], fcp.get("fc.weight")?.data().to_vec())?);
        p.insert("fc.bias", fcp.get("fc.bias")?.clone());
        Ok(Self { spec, params: p })
    }

    pub fn from_params(spec: CriticSpec, params: Params<T>) -> Result<Self> {
        let reference = Critic::<T>::new(spec.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            params.get(name)?.expect_shape(t.shape(), name)?;
        }
        if params.len() != reference.params.len() {
            return Err(FusionError::Config("critic parameter set mismatch".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn zeroed(spec: CriticSpec) -> Result<Self> {
        let c = Self::new(spec, 0)?;
        Ok(Self {
            params: c.params.zeros_like(),
            spec: c.spec,
        })
    }

    pub fn cast<U: Real>(&self) -> Critic<U> {
        Critic {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    fn slope(&self) -> T {
        T::lit(self.spec.leaky_slope)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 1 || [h, w] != self.spec.input_size {
            return Err(FusionError::dim(format!(
                "critic built for 1x{}x{} inputs, got {c}x{h}x{w}",
                self.spec.input_size[0], self.spec.input_size[1]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<CriticTrace<T>> {
        self.check_input(x)?;
        let slope = self.slope();
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(CRITIC_LAYERS);
        for l in 0..CRITIC_LAYERS {
            let b = self.params.get(&bname(l))?.data();
            let z = conv2d(&inputs[l], self.params.get(&wname(l))?, Some(b), STRIDE, PAD)?;
            let a = z.map(|v| if v > T::zero() { v } else { slope * v });
            pre.push(z);
            inputs.push(a);
        }
        let top = inputs.pop().expect("four layers");
        let fc_w = self.params.get("fc.weight")?.data();
        let fc_b = self.params.get("fc.bias")?.data()[0];
        let scores = (0..top.batch())
            .map(|n| {
                top.item(n)
                    .iter()
                    .zip(fc_w)
                    .map(|(&a, &w)| a * w)
                    .sum::<T>()
                    + fc_b
            })
            .collect();
        Ok(CriticTrace {
            inputs,
            pre,
            top,
            scores,
        })
    }

    fn mask(&self, z: &Tensor<T>) -> Tensor<T> {
        let slope = self.slope();
        z.map(|v| if v > T::zero() { T::one() } else { slope })
    }

    /// Backpropagates per-item score weights `dscores`. Returns the input
    /// gradient (when requested) and the parameter gradient.
    pub fn backward(
        &self,
        trace: &CriticTrace<T>,
        dscores: &[T],
        need_input: bool,
    ) -> Result<(Option<Tensor<T>>, Params<T>)> {
        let n = trace.top.batch();
        if dscores.len() != n {
            return Err(FusionError::dim("one score weight per batch item required"));
        }
        let fc_w = self.params.get("fc.weight")?.data();
        let mut grads = Params::new();
        let mut dfc = vec![T::zero(); fc_w.len()];
        let mut ga = Tensor::zeros(trace.top.shape());
        for (ni, &d) in dscores.iter().enumerate() {
            for (g, &a) in dfc.iter_mut().zip(trace.top.item(ni)) {
                *g += d * a;
            }
            for (g, &w) in ga.item_mut(ni).iter_mut().zip(fc_w) {
                *g = d * w;
            }
        }
        grads.insert("fc.weight", Tensor::from_vec([1, 1, 1, dfc.len()], dfc)?);
        grads.insert(
            "fc.bias",
            Tensor::from_vec([1, 1, 1, 1], vec![dscores.iter().copied().sum()])?,
        );
        let mut input_grad = None;
        for l in (0..CRITIC_LAYERS).rev() {
            let u = ga.zip_map(&self.mask(&trace.pre[l]), |g, m| g * m)?;
            let need = l > 0 || need_input;
            let cg = conv2d_backward(&trace.inputs[l], self.params.get(&wname(l))?, &u, STRIDE, PAD, need)?;
            grads.insert(wname(l), cg.weight);
            let bshape = self.params.get(&bname(l))?.shape();
            grads.insert(bname(l), Tensor::from_vec(bshape, cg.bias)?);
            match cg.input {
                Some(g) if l > 0 => ga = g,
                g => input_grad = g,
            }
        }
        Ok((input_grad, grads))
    }

    pub fn scores(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward(x)?.scores)
    }

    /// Gradient penalty `mean_n (1 - ‖∇_x D(x_n)‖₂)²` together with its
    /// gradient with respect to the critic parameters.
    ///
    /// LeakyReLU masks are piecewise constant, so the input gradient is
    /// multilinear in the conv weights. Differentiating `⟨v, ∇_x D⟩` for the
    /// fixed cotangent `v = ∂P/∂(∇_x D)` reduces to pushing `v` forward
    /// through the bias-free, mask-scaled network: at layer `l`, the weight
    /// gradient pairs that forward signal with the layer's backward signal.
    pub fn penalty(&self, x: &Tensor<T>) -> Result<PenaltyEval<T>> {
        let trace = self.forward(x)?;
        let n = x.batch();
        if n == 0 {
            return Err(FusionError::Domain("gradient penalty of an empty batch".into()));
        }
        let fc_w = self.params.get("fc.weight")?.data().to_vec();

        // Backward chain with unit score weights, keeping the signal `u_l`
        // at every pre-activation.
        let mut ga = Tensor::zeros(trace.top.shape());
        for ni in 0..n {
            ga.item_mut(ni).copy_from_slice(&fc_w);
        }
        let masks: Vec<Tensor<T>> = trace.pre.iter().map(|z| self.mask(z)).collect();
        let mut us = vec![Tensor::zeros([0, 0, 0, 0]); CRITIC_LAYERS];
        for l in (0..CRITIC_LAYERS).rev() {
            let u = ga.zip_map(&masks[l], |g, m| g * m)?;
            let cg = conv2d_backward(&trace.inputs[l], self.params.get(&wname(l))?, &u, STRIDE, PAD, true)?;
            ga = cg.input.expect("input gradient requested");
            us[l] = u;
        }
        let g = ga;
        if !g.all_finite() {
            return Err(FusionError::Numerical("non-finite critic input gradient".into()));
        }

        let inv_n = T::one() / T::lit(n as f64);
        let two = T::lit(2.0);
        let mut norms = Vec::with_capacity(n);
        let mut value = T::zero();
        let mut v = Tensor::zeros(g.shape());
        for ni in 0..n {
            let norm = g.item(ni).iter().map(|&a| a * a).sum::<T>().sqrt();
            let gap = T::one() - norm;
            value += gap * gap * inv_n;
            norms.push(norm);
            if norm > T::zero() {
                let coef = -two * gap / norm * inv_n;
                for (dst, &src) in v.item_mut(ni).iter_mut().zip(g.item(ni)) {
                    *dst = coef * src;
                }
            }
        }

        let mut grads = self.params.zeros_like();
        let mut r = v;
        for l in 0..CRITIC_LAYERS {
            let w = self.params.get(&wname(l))?;
            let cg = conv2d_backward(&r, w, &us[l], STRIDE, PAD, false)?;
            *grads.get_mut(&wname(l)).expect("weight present") = cg.weight;
            let s = conv2d(&r, w, None, STRIDE, PAD)?;
            r = s.zip_map(&masks[l], |a, m| a * m)?;
        }
        let mut dfc = vec![T::zero(); fc_w.len()];
        for ni in 0..n {
            for (d, &a) in dfc.iter_mut().zip(r.item(ni)) {
                *d += a;
            }
        }
        *grads.get_mut("fc.weight").expect("fc present") = Tensor::from_vec([1, 1, 1, dfc.len()], dfc)?;
        Ok(PenaltyEval { value, norms, grads })
    }
}

impl<T: Real> CriticFn<T> for Critic<T> {
    fn scores(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Critic::scores(self, x)
    }

    fn input_gradients(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let trace = self.forward(x)?;
        let ones = vec![T::one(); x.batch()];
        let (g, _) = self.backward(&trace, &ones, true)?;
        Ok(g.expect("input gradient requested"))
    }
}

/// `D(x) = ⟨u, x⟩ + b`, used to pin the penalty and critic-loss algebra.
#[derive(Clone, Debug)]
pub struct LinearCritic<T> {
    pub weights: Tensor<T>,
    pub bias: T,
}

impl<T: Real> CriticFn<T> for LinearCritic<T> {
    fn scores(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        if x.item_len() != self.weights.len() {
            return Err(FusionError::dim("linear critic input size mismatch"));
        }
        Ok((0..x.batch())
            .map(|n| {
                x.item(n)
                    .iter()
                    .zip(self.weights.data())
                    .map(|(&a, &b)| a * b)
                    .sum::<T>()
                    + self.bias
            })
            .collect())
    }

    fn input_gradients(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.item_len() != self.weights.len() {
            return Err(FusionError::dim("linear critic input size mismatch"));
        }
        let mut g = Tensor::zeros(x.shape());
        for n in 0..x.batch() {
            g.item_mut(n).copy_from_slice(self.weights.data());
        }
        Ok(g)
    }
}
