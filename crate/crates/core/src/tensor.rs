use crate::error::{FusionError, Result};
use crate::real::Real;

/// Dense batch of feature maps in `N × C × H × W` layout.
///
/// A single feature map (`H × W × C` activation volume) is a tensor with
/// `N = 1`; a single-channel image batch has `C = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

/// Alias used where a tensor is a feature volume flowing through the network.
pub type FeatureMap<T> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(FusionError::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f([ni, ci, hi, wi]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copies batch item `n` into a standalone tensor with `N = 1`.
    pub fn select(&self, n: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.item(n).to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| FusionError::dim("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return Err(FusionError::dim(format!(
                    "stack: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape, "zip_map")?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn expect_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(FusionError::dim(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| FusionError::dim("concat of zero tensors"))?;
        let [n, _, h, w] = first.shape;
        let mut c_total = 0;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(FusionError::dim(format!(
                    "concat: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            c_total += p.shape[1];
        }
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for ni in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(ni));
            }
        }
        Ok(Self {
            shape: [n, c_total, h, w],
            data,
        })
    }

    /// Splits along the channel axis into pieces of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Result<Vec<Self>> {
        let [n, c, h, w] = self.shape;
        if widths.iter().sum::<usize>() != c {
            return Err(FusionError::dim(format!(
                "split {widths:?} does not cover {c} channels"
            )));
        }
        let plane = h * w;
        let mut out: Vec<Self> = widths
            .iter()
            .map(|&cw| Self::zeros([n, cw, h, w]))
            .collect();
        for ni in 0..n {
            let src = self.item(ni);
            let mut off = 0;
            for (k, &cw) in widths.iter().enumerate() {
                out[k]
                    .item_mut(ni)
                    .copy_from_slice(&src[off * plane..(off + cw) * plane]);
                off += cw;
            }
        }
        Ok(out)
    }
}
