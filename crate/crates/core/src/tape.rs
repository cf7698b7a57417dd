//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use crate::conv;
use crate::error::{FusionError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    MulChannel {
        x: Var,
        gate: Var,
    },
    MulSpatial {
        x: Var,
        gate: Var,
    },
    Softmax2 {
        a: Var,
        b: Var,
    },
    Upsample2(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that takes no gradient (network inputs).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = conv::conv2d(self.value(x), self.value(w), bias.as_deref(), stride, pad)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// PReLU with a single learnable slope (`slope` holds one value).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(FusionError::dim("prelu slope must be a single value"));
        }
        let a = self.value(slope).data()[0];
        let out = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { a * v });
        let rg = self.rg(&[x, slope]);
        Ok(self.push(out, Op::Prelu { x, slope }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Mean over H×W, giving `N × C × 1 × 1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let inv = T::one() / T::lit((h * w) as f64);
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for ni in 0..n {
            for ci in 0..c {
                let s: T = plane(xv, ni, ci).iter().copied().sum();
                out.set(ni, ci, 0, 0, s * inv);
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    /// Max over H×W, giving `N × C × 1 × 1`.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        let mut out = Tensor::zeros([n, c, 1, 1]);
        let mut argmax = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                let (k, m) = arg_max(plane(xv, ni, ci));
                argmax.push(k);
                out.set(ni, ci, 0, 0, m);
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::GlobalMaxPool { x, argmax }, rg)
    }

    /// Mean across channels, giving `N × 1 × H × W`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let inv = T::one() / T::lit(c as f64);
        let out = Tensor::from_fn([n, 1, h, w], |[ni, _, hi, wi]| {
            let mut s = T::zero();
            for ci in 0..c {
                s += xv.at(ni, ci, hi, wi);
            }
            s * inv
        });
        let rg = self.rg(&[x]);
        self.push(out, Op::ChannelMean(x), rg)
    }

    /// Max across channels, giving `N × 1 × H × W`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let mut argmax = Vec::with_capacity(n * h * w);
        let out = Tensor::from_fn([n, 1, h, w], |[ni, _, hi, wi]| {
            let mut best = 0;
            let mut m = xv.at(ni, 0, hi, wi);
            for ci in 1..c {
                let v = xv.at(ni, ci, hi, wi);
                if v > m {
                    m = v;
                    best = ci;
                }
            }
            argmax.push(best);
            m
        });
        let rg = self.rg(&[x]);
        self.push(out, Op::ChannelMax { x, argmax }, rg)
    }

    /// `x ⊙ gate` with `gate` of shape `N × C × 1 × 1` broadcast over H×W.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gate);
        let [n, c, h, w] = xv.shape();
        gv.expect_shape([n, c, 1, 1], "channel gate")?;
        let out = Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| {
            xv.at(ni, ci, hi, wi) * gv.at(ni, ci, 0, 0)
        });
        let rg = self.rg(&[x, gate]);
        Ok(self.push(out, Op::MulChannel { x, gate }, rg))
    }

    /// `x ⊙ gate` with `gate` of shape `N × 1 × H × W` broadcast over channels.
    pub fn mul_spatial(&mut self, x: Var, gate: Var) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gate);
        let [n, c, h, w] = xv.shape();
        gv.expect_shape([n, 1, h, w], "spatial gate")?;
        let out = Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| {
            xv.at(ni, ci, hi, wi) * gv.at(ni, 0, hi, wi)
        });
        let rg = self.rg(&[x, gate]);
        Ok(self.push(out, Op::MulSpatial { x, gate }, rg))
    }

    /// Weight of `a` in the two-way softmax over `(a, b)`, elementwise.
    pub fn softmax2(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| softmax_pair(x, y).0)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Softmax2 { a, b }, rg))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let out = Tensor::from_fn([n, c, 2 * h, 2 * w], |[ni, ci, hi, wi]| {
            xv.at(ni, ci, hi / 2, wi / 2)
        });
        let rg = self.rg(&[x]);
        self.push(out, Op::Upsample2(x), rg)
    }

    /// Backpropagates `seed` (same shape as `root`) through the tape.
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        seed.expect_shape(self.value(root).shape(), "backward seed")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let mut acc = |v: Var, g: Tensor<T>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let need_x = self.nodes[x.0].requires_grad;
                    let cg = conv::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &gout,
                        *stride,
                        *pad,
                        need_x,
                    )?;
                    if let Some(dx) = cg.input {
                        acc(*x, dx);
                    }
                    acc(*w, cg.weight);
                    if let Some(b) = b {
                        let shape = self.value(*b).shape();
                        acc(*b, Tensor::from_vec(shape, cg.bias)?);
                    }
                }
                Op::Prelu { x, slope } => {
                    let xv = self.value(*x);
                    let a = self.value(*slope).data()[0];
                    let mut da = T::zero();
                    let mut dx = Tensor::zeros(xv.shape());
                    for ((d, &v), &g) in dx.data_mut().iter_mut().zip(xv.data()).zip(gout.data()) {
                        if v >= T::zero() {
                            *d = g;
                        } else {
                            *d = a * g;
                            da += v * g;
                        }
                    }
                    acc(*x, dx);
                    acc(*slope, Tensor::from_vec([1, 1, 1, 1], vec![da])?);
                }
                Op::Sigmoid(x) => {
                    let dx = node
                        .value
                        .zip_map(&gout, |s, g| g * s * (T::one() - s))?;
                    acc(*x, dx);
                }
                Op::Tanh(x) => {
                    let dx = node.value.zip_map(&gout, |t, g| g * (T::one() - t * t))?;
                    acc(*x, dx);
                }
                Op::Concat(parts) => {
                    let widths: Vec<usize> =
                        parts.iter().map(|p| self.value(*p).channels()).collect();
                    for (p, g) in parts.iter().zip(gout.split_channels(&widths)?) {
                        acc(*p, g);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let [n, c, h, w] = self.value(*x).shape();
                    let inv = T::one() / T::lit((h * w) as f64);
                    let dx = Tensor::from_fn([n, c, h, w], |[ni, ci, _, _]| {
                        gout.at(ni, ci, 0, 0) * inv
                    });
                    acc(*x, dx);
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let [n, c, h, w] = self.value(*x).shape();
                    let mut dx = Tensor::zeros([n, c, h, w]);
                    for ni in 0..n {
                        for ci in 0..c {
                            let k = argmax[ni * c + ci];
                            dx.set(ni, ci, k / w, k % w, gout.at(ni, ci, 0, 0));
                        }
                    }
                    acc(*x, dx);
                }
                Op::ChannelMean(x) => {
                    let [n, c, h, w] = self.value(*x).shape();
                    let inv = T::one() / T::lit(c as f64);
                    let dx = Tensor::from_fn([n, c, h, w], |[ni, _, hi, wi]| {
                        gout.at(ni, 0, hi, wi) * inv
                    });
                    acc(*x, dx);
                }
                Op::ChannelMax { x, argmax } => {
                    let [n, c, h, w] = self.value(*x).shape();
                    let mut dx = Tensor::zeros([n, c, h, w]);
                    for ni in 0..n {
                        for hi in 0..h {
                            for wi in 0..w {
                                let ci = argmax[(ni * h + hi) * w + wi];
                                dx.set(ni, ci, hi, wi, gout.at(ni, 0, hi, wi));
                            }
                        }
                    }
                    acc(*x, dx);
                }
                Op::MulChannel { x, gate } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gate);
                    let [n, c, h, w] = xv.shape();
                    let dx = Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| {
                        gout.at(ni, ci, hi, wi) * gv.at(ni, ci, 0, 0)
                    });
                    let mut dg = Tensor::zeros([n, c, 1, 1]);
                    for ni in 0..n {
                        for ci in 0..c {
                            let s: T = plane(xv, ni, ci)
                                .iter()
                                .zip(plane(&gout, ni, ci))
                                .map(|(&a, &b)| a * b)
                                .sum();
                            dg.set(ni, ci, 0, 0, s);
                        }
                    }
                    acc(*x, dx);
                    acc(*gate, dg);
                }
                Op::MulSpatial { x, gate } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gate);
                    let [n, c, h, w] = xv.shape();
                    let dx = Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| {
                        gout.at(ni, ci, hi, wi) * gv.at(ni, 0, hi, wi)
                    });
                    let dg = Tensor::from_fn([n, 1, h, w], |[ni, _, hi, wi]| {
                        let mut s = T::zero();
                        for ci in 0..c {
                            s += xv.at(ni, ci, hi, wi) * gout.at(ni, ci, hi, wi);
                        }
                        s
                    });
                    acc(*x, dx);
                    acc(*gate, dg);
                }
                Op::Softmax2 { a, b } => {
                    // p = e^a / (e^a + e^b): dp/da = p(1-p), dp/db = -p(1-p)
                    let da = node.value.zip_map(&gout, |p, g| g * p * (T::one() - p))?;
                    let db = da.map(|v| -v);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Upsample2(x) => {
                    let [n, c, h, w] = self.value(*x).shape();
                    let dx = Tensor::from_fn([n, c, h, w], |[ni, ci, hi, wi]| {
                        gout.at(ni, ci, 2 * hi, 2 * wi)
                            + gout.at(ni, ci, 2 * hi, 2 * wi + 1)
                            + gout.at(ni, ci, 2 * hi + 1, 2 * wi)
                            + gout.at(ni, ci, 2 * hi + 1, 2 * wi + 1)
                    });
                    acc(*x, dx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn plane<T: Real>(t: &Tensor<T>, n: usize, c: usize) -> &[T] {
    let hw = t.height() * t.width();
    let start = t.index(n, c, 0, 0);
    &t.data()[start..start + hw]
}

fn arg_max<T: Real>(xs: &[T]) -> (usize, T) {
    let mut best = 0;
    let mut m = xs[0];
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > m {
            m = v;
            best = i;
        }
    }
    (best, m)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Two-way softmax `(e^a, e^b) / (e^a + e^b)`, max-shifted before
/// exponentiation. Symmetric in its arguments bit-for-bit.
pub fn softmax_pair<T: Real>(a: T, b: T) -> (T, T) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let s = ea + eb;
    (ea / s, eb / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_pair_closed_forms() {
        assert_eq!(softmax_pair(0.3, 0.3), (0.5, 0.5));
        let (p, q) = softmax_pair(2f64.ln(), 0.0);
        assert!((p - 2.0 / 3.0).abs() < 1e-15 && (q - 1.0 / 3.0).abs() < 1e-15);
        let (p, q) = softmax_pair(800.0f64, 0.0);
        assert!(p.is_finite() && q.is_finite());
    }

    #[test]
    fn upsample_then_backward_sums_blocks() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 1, 2], &[1.0, 2.0]));
        let y = tape.upsample2(x);
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let seed = Tensor::from_fn([1, 1, 2, 4], |[_, _, h, w]| (h * 4 + w) as f64);
        let g = tape.backward(y, seed).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0 + 1.0 + 4.0 + 5.0, 2.0 + 3.0 + 6.0 + 7.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(t([1, 1, 1, 2], &[1.0, -2.0]));
        let s = tape.param(t([1, 1, 1, 1], &[0.25]));
        let y = tape.prelu(x, s).unwrap();
        let g = tape.backward(y, Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(s).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn max_pools_route_gradient_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 2, 1, 2], &[1.0, 5.0, 7.0, 3.0]));
        let gm = tape.global_max_pool(x);
        assert_eq!(tape.value(gm).data(), &[5.0, 7.0]);
        let g = tape.backward(gm, t([1, 2, 1, 1], &[1.0, 2.0])).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 2.0, 0.0]);

        let mut tape = Tape::new();
        let x = tape.param(t([1, 2, 1, 2], &[1.0, 5.0, 7.0, 3.0]));
        let cm = tape.channel_max(x);
        assert_eq!(tape.value(cm).data(), &[7.0, 5.0]);
        let g = tape.backward(cm, t([1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 2.0, 1.0, 0.0]);
    }
}
