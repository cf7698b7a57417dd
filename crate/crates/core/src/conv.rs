//! 2-D convolution kernels (zero padding, square kernels) via im2col + GEMM.
//!
//! Work is split across batch items; per-item weight gradients are reduced
//! in item order so results do not depend on the thread count.

use crate::error::{FusionError, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new<T: Real>(
        x: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [_, cin, h, w] = x.shape();
        let [cout, wcin, kh, kw] = weight.shape();
        if wcin != cin {
            return Err(FusionError::dim(format!(
                "conv expects {wcin} input channels, got {cin}"
            )));
        }
        if kh != kw {
            return Err(FusionError::dim("conv kernels must be square"));
        }
        if stride == 0 {
            return Err(FusionError::Config("conv stride must be positive".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(FusionError::dim(format!(
                "input {h}x{w} smaller than kernel {kh} with padding {pad}"
            )));
        }
        Ok(Self {
            in_channels: cin,
            out_channels: cout,
            kernel: kh,
            stride,
            pad,
            in_h: h,
            in_w: w,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let xc = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    dx.fill(T::zero());
    for c in 0..g.in_channels {
        let xc = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            xc[base + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `bias`, when given, has one entry per output channel.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.out_channels {
            return Err(FusionError::dim(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                g.out_channels
            )));
        }
    }
    let n = x.batch();
    let plane = g.out_plane();
    let item_out = g.out_channels * plane;
    let mut out = Tensor::zeros([n, g.out_channels, g.out_h, g.out_w]);
    let pl = g.patch_len();
    par::for_each_chunk_mut(out.data_mut(), item_out, |ni, dst| {
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                dst[co * plane..(co + 1) * plane].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let xi = x.item(ni);
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            xi
        } else {
            let mut c = vec![T::zero(); pl * plane];
            im2col(&g, xi, &mut c);
            owned = c;
            &owned
        };
        T::gemm(
            g.out_channels,
            pl,
            plane,
            T::one(),
            weight.data(),
            pl as isize,
            1,
            cols,
            plane as isize,
            1,
            beta,
            dst,
            plane as isize,
            1,
        );
    });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

/// Backward pass of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x, weight, stride, pad)?;
    let n = x.batch();
    grad_out.expect_shape([n, g.out_channels, g.out_h, g.out_w], "conv backward")?;
    let plane = g.out_plane();
    let pl = g.patch_len();
    let per_item = par::map_indexed(n, |ni| {
        let xi = x.item(ni);
        let go = grad_out.item(ni);
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            xi
        } else {
            let mut c = vec![T::zero(); pl * plane];
            im2col(&g, xi, &mut c);
            owned = c;
            &owned
        };
        // dW = gout (cout × plane) · cols^T (plane × pl)
        let mut dw = vec![T::zero(); g.out_channels * pl];
        T::gemm(
            g.out_channels,
            plane,
            pl,
            T::one(),
            go,
            plane as isize,
            1,
            cols,
            1,
            plane as isize,
            T::zero(),
            &mut dw,
            pl as isize,
            1,
        );
        let db: Vec<T> = (0..g.out_channels)
            .map(|co| go[co * plane..(co + 1) * plane].iter().copied().sum())
            .collect();
        let dx = need_input.then(|| {
            // dcols = W^T (pl × cout) · gout (cout × plane)
            let mut dcols = vec![T::zero(); pl * plane];
            T::gemm(
                pl,
                g.out_channels,
                plane,
                T::one(),
                weight.data(),
                1,
                pl as isize,
                go,
                plane as isize,
                1,
                T::zero(),
                &mut dcols,
                plane as isize,
                1,
            );
            if g.is_pointwise() {
                dcols
            } else {
                let mut dx = vec![T::zero(); g.in_channels * g.in_h * g.in_w];
                col2im(&g, &dcols, &mut dx);
                dx
            }
        });
        (dw, db, dx)
    });

    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = vec![T::zero(); g.out_channels];
    let mut dinput = need_input.then(|| Tensor::zeros(x.shape()));
    for (ni, (dw, db, dx)) in per_item.into_iter().enumerate() {
        for (a, b) in dweight.data_mut().iter_mut().zip(dw) {
            *a += b;
        }
        for (a, b) in dbias.iter_mut().zip(db) {
            *a += b;
        }
        if let (Some(dst), Some(src)) = (dinput.as_mut(), dx) {
            dst.item_mut(ni).copy_from_slice(&src);
        }
    }
    Ok(ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    })
}
