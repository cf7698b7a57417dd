//! Generator and critic objectives.
//!
//! Content loss per image: `(1/HW)·(w_i·‖f − ir‖²_F + w_g·‖∇f − ∇vis‖₁)`,
//! averaged over the batch. Generator adversarial loss: `−mean D_ir(f) −
//! mean D_vis(f)`. Critic loss: `mean D(f) − mean D(real) + λ·GP` with
//! `GP = mean (1 − ‖∇_x D(x̂)‖₂)²`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conv::{conv2d, conv2d_backward};
use crate::discriminator::{Critic, CriticFn};
use crate::error::{FusionError, Result};
use crate::params::Params;
use crate::real::Real;
use crate::tensor::Tensor;

/// Discrete image gradient used by the content loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientOperator {
    /// Forward differences, zero in the last column/row.
    #[default]
    ForwardDifference,
    /// 3×3 Sobel responses with zero padding.
    Sobel,
}

fn sobel_kernels<T: Real>() -> Tensor<T> {
    let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let data = kx.iter().chain(&ky).map(|&v| T::lit(v)).collect();
    Tensor::from_vec([2, 1, 3, 3], data).expect("static kernel")
}

/// Gradient field of a single-channel batch: channel 0 is the horizontal
/// component, channel 1 the vertical one.
pub fn image_gradient<T: Real>(img: &Tensor<T>, op: GradientOperator) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.shape();
    if c != 1 {
        return Err(FusionError::dim("image gradient expects single-channel input"));
    }
    match op {
        GradientOperator::ForwardDifference => Ok(Tensor::from_fn([n, 2, h, w], |[ni, k, i, j]| {
            if k == 0 {
                if j + 1 < w {
                    img.at(ni, 0, i, j + 1) - img.at(ni, 0, i, j)
                } else {
                    T::zero()
                }
            } else if i + 1 < h {
                img.at(ni, 0, i + 1, j) - img.at(ni, 0, i, j)
            } else {
                T::zero()
            }
        })),
        GradientOperator::Sobel => conv2d(img, &sobel_kernels(), None, 1, 1),
    }
}

/// Adjoint of [`image_gradient`]: maps a `N×2×H×W` field back to images.
pub fn image_gradient_adjoint<T: Real>(field: &Tensor<T>, op: GradientOperator) -> Result<Tensor<T>> {
    let [n, c, h, w] = field.shape();
    if c != 2 {
        return Err(FusionError::dim("gradient field must have two channels"));
    }
    match op {
        GradientOperator::ForwardDifference => Ok(Tensor::from_fn([n, 1, h, w], |[ni, _, i, j]| {
            let mut s = T::zero();
            // horizontal: d(i,j) = x(i,j+1) - x(i,j) for j < w-1
            if j + 1 < w {
                s -= field.at(ni, 0, i, j);
            }
            if j >= 1 {
                s += field.at(ni, 0, i, j - 1);
            }
            if i + 1 < h {
                s -= field.at(ni, 1, i, j);
            }
            if i >= 1 {
                s += field.at(ni, 1, i - 1, j);
            }
            s
        })),
        GradientOperator::Sobel => {
            let x = Tensor::zeros([n, 1, h, w]);
            let g = conv2d_backward(&x, &sobel_kernels(), field, 1, 1, true)?;
            Ok(g.input.expect("input gradient requested"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentConfig {
    pub intensity_weight: f64,
    pub gradient_weight: f64,
    pub gradient: GradientOperator,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            intensity_weight: 1.0,
            gradient_weight: 1.0,
            gradient: GradientOperator::ForwardDifference,
        }
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FusionError::dim(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Batch-mean content loss.
pub fn content_loss<T: Real>(
    fused: &Tensor<T>,
    ir: &Tensor<T>,
    vis: &Tensor<T>,
    cfg: &ContentConfig,
) -> Result<T> {
    Ok(content_loss_with_grad(fused, ir, vis, cfg)?.0)
}

/// Content loss and its gradient with respect to `fused`.
pub fn content_loss_with_grad<T: Real>(
    fused: &Tensor<T>,
    ir: &Tensor<T>,
    vis: &Tensor<T>,
    cfg: &ContentConfig,
) -> Result<(T, Tensor<T>)> {
    same_shape(fused, ir, "content loss")?;
    same_shape(fused, vis, "content loss")?;
    let [n, _, h, w] = fused.shape();
    if n == 0 {
        return Err(FusionError::Domain("content loss of an empty batch".into()));
    }
    let scale = T::one() / T::lit((n * h * w) as f64);
    let wi = T::lit(cfg.intensity_weight);
    let wg = T::lit(cfg.gradient_weight);

    let diff = fused.zip_map(ir, |a, b| a - b)?;
    let gf = image_gradient(fused, cfg.gradient)?;
    let gv = image_gradient(vis, cfg.gradient)?;
    let gdiff = gf.zip_map(&gv, |a, b| a - b)?;

    let loss = (wi * diff.sum_sq() + wg * gdiff.data().iter().map(|v| v.abs()).sum::<T>()) * scale;

    let two = T::lit(2.0);
    let sign = gdiff.map(|v| {
        if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    });
    let from_grad = image_gradient_adjoint(&sign, cfg.gradient)?;
    let grad = diff.zip_map(&from_grad, |d, s| (two * wi * d + wg * s) * scale)?;
    Ok((loss, grad))
}

/// `−mean(scores_ir) − mean(scores_vis)`.
pub fn generator_adversarial_loss<T: Real>(scores_ir: &[T], scores_vis: &[T]) -> Result<T> {
    if scores_ir.is_empty() || scores_vis.is_empty() {
        return Err(FusionError::Domain("adversarial loss of an empty batch".into()));
    }
    if scores_ir.len() != scores_vis.len() {
        return Err(FusionError::dim("critic score batches differ in size"));
    }
    let n = T::lit(scores_ir.len() as f64);
    let s_ir: T = scores_ir.iter().copied().sum();
    let s_vis: T = scores_vis.iter().copied().sum();
    Ok(-(s_ir / n) - s_vis / n)
}

/// Where the penalty's input gradient is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyPoint {
    /// Random convex combinations `ε·real + (1−ε)·fused`.
    #[default]
    Interpolate,
    /// The real samples themselves.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub point: PenaltyPoint,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            point: PenaltyPoint::Interpolate,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(FusionError::Config(format!(
                "penalty weight must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `x̂_n = ε_n·real_n + (1−ε_n)·fused_n`.
pub fn interpolate<T: Real>(real: &Tensor<T>, fused: &Tensor<T>, eps: &[T]) -> Result<Tensor<T>> {
    same_shape(real, fused, "interpolate")?;
    if eps.len() != real.batch() {
        return Err(FusionError::dim("one mixing weight per batch item required"));
    }
    let mut out = real.clone();
    for (n, &e) in eps.iter().enumerate() {
        for (o, &f) in out.item_mut(n).iter_mut().zip(fused.item(n)) {
            *o = e * *o + (T::one() - e) * f;
        }
    }
    Ok(out)
}

/// Selects the penalty evaluation point per `cfg.point`.
pub fn penalty_point<T: Real>(
    real: &Tensor<T>,
    fused: &Tensor<T>,
    eps: &[T],
    cfg: &PenaltyConfig,
) -> Result<Tensor<T>> {
    match cfg.point {
        PenaltyPoint::Interpolate => interpolate(real, fused, eps),
        PenaltyPoint::Real => Ok(real.clone()),
    }
}

/// `mean_n (1 − ‖∇_x critic(x̂_n)‖₂)²`.
pub fn gradient_penalty<T: Real, C: CriticFn<T> + ?Sized>(critic: &C, x_hat: &Tensor<T>) -> Result<T> {
    let n = x_hat.batch();
    if n == 0 {
        return Err(FusionError::Domain("gradient penalty of an empty batch".into()));
    }
    let g = critic.input_gradients(x_hat)?;
    if !g.all_finite() {
        return Err(FusionError::Numerical("non-finite critic input gradient".into()));
    }
    let inv = T::one() / T::lit(n as f64);
    Ok((0..n)
        .map(|i| {
            let norm = g.item(i).iter().map(|&v| v * v).sum::<T>().sqrt();
            (T::one() - norm) * (T::one() - norm) * inv
        })
        .sum())
}

/// `mean D(fused) − mean D(real) + λ·GP(x̂)`; `eps` is only read for the
/// interpolated penalty point.
pub fn critic_loss<T: Real, C: CriticFn<T> + ?Sized>(
    critic: &C,
    fused: &Tensor<T>,
    real: &Tensor<T>,
    eps: &[T],
    cfg: &PenaltyConfig,
) -> Result<T> {
    same_shape(fused, real, "critic loss")?;
    let n = fused.batch();
    if n == 0 {
        return Err(FusionError::Domain("critic loss of an empty batch".into()));
    }
    let inv = T::one() / T::lit(n as f64);
    let sf: T = critic.scores(fused)?.into_iter().sum();
    let sr: T = critic.scores(real)?.into_iter().sum();
    let x_hat = penalty_point(real, fused, eps, cfg)?;
    Ok((sf - sr) * inv + T::lit(cfg.lambda) * gradient_penalty(critic, &x_hat)?)
}

/// Critic loss with its parameter gradient.
pub struct CriticLossEval<T> {
    pub loss: T,
    pub penalty: T,
    pub grads: Params<T>,
}

/// [`critic_loss`] for a [`Critic`], together with `∂loss/∂params`.
pub fn critic_loss_with_grad<T: Real>(
    critic: &Critic<T>,
    fused: &Tensor<T>,
    real: &Tensor<T>,
    eps: &[T],
    cfg: &PenaltyConfig,
) -> Result<CriticLossEval<T>> {
    same_shape(fused, real, "critic loss")?;
    let n = fused.batch();
    if n == 0 {
        return Err(FusionError::Domain("critic loss of an empty batch".into()));
    }
    let x_hat = penalty_point(real, fused, eps, cfg)?;
    let inv = T::one() / T::lit(n as f64);
    let tf = critic.forward(fused)?;
    let tr = critic.forward(real)?;
    let (_, mut grads) = critic.backward(&tf, &vec![inv; n], false)?;
    let (_, gr) = critic.backward(&tr, &vec![-inv; n], false)?;
    grads.accumulate(&gr)?;
    let pen = critic.penalty(&x_hat)?;
    let lambda = T::lit(cfg.lambda);
    if cfg.lambda != 0.0 {
        grads.accumulate(&pen.grads.scaled(lambda))?;
    }
    let sf: T = tf.scores.iter().copied().sum();
    let sr: T = tr.scores.iter().copied().sum();
    Ok(CriticLossEval {
        loss: (sf - sr) * inv + lambda * pen.value,
        penalty: pen.value,
        grads,
    })
}

/// Generator adversarial loss and its gradient with respect to `fused`.
pub fn adversarial_loss_with_grad<T: Real>(
    critic_ir: &Critic<T>,
    critic_vis: &Critic<T>,
    fused: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let n = fused.batch();
    let w = vec![-(T::one() / T::lit(n.max(1) as f64)); n];
    let ti = critic_ir.forward(fused)?;
    let tv = critic_vis.forward(fused)?;
    let loss = generator_adversarial_loss(&ti.scores, &tv.scores)?;
    let (gi, _) = critic_ir.backward(&ti, &w, true)?;
    let (gv, _) = critic_vis.backward(&tv, &w, true)?;
    let mut g = gi.expect("input gradient requested");
    g.add_assign(&gv.expect("input gradient requested"));
    Ok((loss, g))
}

/// Per-step losses; all values are batch means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub l_g: f32,
    pub l_content: f32,
    pub l_adv: f32,
    pub l_d_ir: f32,
    pub l_d_vis: f32,
    pub gp_ir: f32,
    pub gp_vis: f32,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,l_g,l_content,l_adv,l_d_ir,l_d_vis,gp_ir,gp_vis";

    pub fn all_finite(&self) -> bool {
        [
            self.l_g,
            self.l_content,
            self.l_adv,
            self.l_d_ir,
            self.l_d_vis,
            self.gp_ir,
            self.gp_vis,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(FusionError::Data(format!("loss row needs 8 fields: `{line}`")));
        }
        let num = |i: usize| -> Result<f32> {
            f[i].parse()
                .map_err(|_| FusionError::Data(format!("bad number `{}` in loss row", f[i])))
        };
        Ok(Self {
            step: f[0]
                .parse()
                .map_err(|_| FusionError::Data(format!("bad step `{}`", f[0])))?,
            l_g: num(1)?,
            l_content: num(2)?,
            l_adv: num(3)?,
            l_d_ir: num(4)?,
            l_d_vis: num(5)?,
            gp_ir: num(6)?,
            gp_vis: num(7)?,
        })
    }
}

impl fmt::Display for LossBreakdown {
    /// CSV row matching [`LossBreakdown::CSV_HEADER`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.step, self.l_g, self.l_content, self.l_adv, self.l_d_ir, self.l_d_vis, self.gp_ir, self.gp_vis
        )
    }
}
