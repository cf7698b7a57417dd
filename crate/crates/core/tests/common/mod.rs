//! Loop-level reference implementations shared by the integration tests.
//! Everything here works on plain nested indexing, independent of the
//! im2col/GEMM and tape code paths under test.
#![allow(dead_code)]

pub mod fd;
pub mod metric_oracles;
pub mod networks;

use icafusion_core::params::Params;
use icafusion_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Vol = Vec<Vec<Vec<f64>>>; // [c][h][w]

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random::<f64>() * 2.0 - 1.0)
}

pub fn vol(t: &Tensor<f64>, n: usize) -> Vol {
    let [_, c, h, w] = t.shape();
    (0..c)
        .map(|ci| (0..h).map(|i| (0..w).map(|j| t.at(n, ci, i, j)).collect()).collect())
        .collect()
}

pub fn to_tensor(v: &Vol) -> Tensor<f64> {
    let (c, h, w) = (v.len(), v[0].len(), v[0][0].len());
    Tensor::from_fn([1, c, h, w], |[_, ci, i, j]| v[ci][i][j])
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn prelu(x: f64, a: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        a * x
    }
}

/// Direct convolution with zero padding.
pub fn conv(x: &Vol, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Vol {
    let [cout, cin, k, _] = w.shape();
    assert_eq!(cin, x.len());
    let (h, wd) = (x[0].len(), x[0][0].len());
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![vec![vec![0.0; ow]; oh]; cout];
    for (o, plane) in out.iter_mut().enumerate() {
        for (i, row) in plane.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut s = b.map_or(0.0, |b| b.data()[o]);
                for (c, xc) in x.iter().enumerate() {
                    for a in 0..k {
                        for bb in 0..k {
                            let ii = (i * stride + a) as isize - pad as isize;
                            let jj = (j * stride + bb) as isize - pad as isize;
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                s += w.at(o, c, a, bb) * xc[ii as usize][jj as usize];
                            }
                        }
                    }
                }
                *cell = s;
            }
        }
    }
    out
}

pub fn map(x: &Vol, f: impl Fn(f64) -> f64) -> Vol {
    x.iter()
        .map(|p| p.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect())
        .collect()
}

pub fn cat(parts: &[&Vol]) -> Vol {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

pub fn upsample(x: &Vol) -> Vol {
    x.iter()
        .map(|p| {
            (0..2 * p.len())
                .map(|i| (0..2 * p[0].len()).map(|j| p[i / 2][j / 2]).collect())
                .collect()
        })
        .collect()
}

pub fn scalar(p: &Params<f64>, name: &str) -> f64 {
    p.get(name).unwrap().data()[0]
}

/// Channel gate scores, one per channel (explicit loops).
pub fn channel_gate(x: &Vol, p: &Params<f64>, prefix: &str) -> Vec<f64> {
    let c = x.len();
    let (h, w) = (x[0].len(), x[0][0].len());
    let mut avg = vec![0.0; c];
    let mut max = vec![f64::NEG_INFINITY; c];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                avg[ch] += x[ch][i][j] / (h * w) as f64;
                max[ch] = max[ch].max(x[ch][i][j]);
            }
        }
    }
    let dense = |v: &[f64], name: &str| -> Vec<f64> {
        let wt = p.get(&format!("{prefix}{name}.weight")).unwrap();
        let b = p.get(&format!("{prefix}{name}.bias")).unwrap();
        let [o, ci, _, _] = wt.shape();
        (0..o)
            .map(|oo| b.data()[oo] + (0..ci).map(|cc| wt.at(oo, cc, 0, 0) * v[cc]).sum::<f64>())
            .collect()
    };
    let mut stacked = Vec::new();
    for (branch, pooled) in [("avg", &avg), ("max", &max)] {
        let slope = scalar(p, &format!("{prefix}ch.{branch}.slope"));
        let hdn: Vec<f64> = dense(pooled, &format!("ch.{branch}.fc1"))
            .into_iter()
            .map(|v| prelu(v, slope))
            .collect();
        stacked.extend(dense(&hdn, &format!("ch.{branch}.fc2")));
    }
    dense(&stacked, "ch.merge").into_iter().map(sigmoid).collect()
}

/// Spatial gate score map (explicit loops).
pub fn spatial_gate(x: &Vol, p: &Params<f64>, prefix: &str) -> Vec<Vec<f64>> {
    let c = x.len();
    let (h, w) = (x[0].len(), x[0][0].len());
    let mut mean = vec![vec![0.0; w]; h];
    let mut max = vec![vec![f64::NEG_INFINITY; w]; h];
    for i in 0..h {
        for j in 0..w {
            for ch in x {
                mean[i][j] += ch[i][j] / c as f64;
                max[i][j] = max[i][j].max(ch[i][j]);
            }
        }
    }
    let wt = p.get(&format!("{prefix}sp.merge.weight")).unwrap();
    let b = p.get(&format!("{prefix}sp.merge.bias")).unwrap().data()[0];
    let k = wt.width();
    let r = (k / 2) as isize;
    let mut out = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            let mut s = b;
            for a in 0..k {
                for bb in 0..k {
                    let ii = i as isize + a as isize - r;
                    let jj = j as isize + bb as isize - r;
                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                        let (ii, jj) = (ii as usize, jj as usize);
                        s += wt.at(0, 0, a, bb) * mean[ii][jj] + wt.at(0, 1, a, bb) * max[ii][jj];
                    }
                }
            }
            out[i][j] = sigmoid(s);
        }
    }
    out
}

pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    (ea / (ea + eb), eb / (ea + eb))
}

pub fn scale_channels(x: &Vol, s: &[f64]) -> Vol {
    x.iter()
        .zip(s)
        .map(|(p, &k)| p.iter().map(|r| r.iter().map(|v| v * k).collect()).collect())
        .collect()
}

pub fn scale_spatial(x: &Vol, s: &[Vec<f64>]) -> Vol {
    x.iter()
        .map(|p| {
            p.iter()
                .zip(s)
                .map(|(r, sr)| r.iter().zip(sr).map(|(v, k)| v * k).collect())
                .collect()
        })
        .collect()
}

pub struct Stages {
    pub channel: bool,
    pub spatial: bool,
}

pub const ALL_STAGES: Stages = Stages {
    channel: true,
    spatial: true,
};

pub fn interactive(m: &Vol, n: &Vol, p: &Params<f64>, pm: &str, pn: &str, st: &Stages) -> Vol {
    let (m_ca, n_ca) = if st.channel {
        let a = channel_gate(m, p, pm);
        let b = channel_gate(n, p, pn);
        let (bm, bn): (Vec<f64>, Vec<f64>) = a.iter().zip(&b).map(|(&x, &y)| softmax2(x, y)).unzip();
        (scale_channels(m, &bm), scale_channels(n, &bn))
    } else {
        (m.clone(), n.clone())
    };
    if !st.spatial {
        return cat(&[&m_ca, &n_ca]);
    }
    let a = spatial_gate(&m_ca, p, pm);
    let b = spatial_gate(&n_ca, p, pn);
    let mut bm = a.clone();
    let mut bn = b.clone();
    for i in 0..a.len() {
        for j in 0..a[0].len() {
            let (x, y) = softmax2(a[i][j], b[i][j]);
            bm[i][j] = x;
            bn[i][j] = y;
        }
    }
    cat(&[&scale_spatial(&m_ca, &bm), &scale_spatial(&n_ca, &bn)])
}

pub fn compensatory(x: &Vol, p: &Params<f64>, prefix: &str, st: &Stages) -> Vol {
    let x_ca = if st.channel {
        scale_channels(x, &channel_gate(x, p, prefix))
    } else {
        x.clone()
    };
    if st.spatial {
        scale_spatial(&x_ca, &spatial_gate(&x_ca, p, prefix))
    } else {
        x_ca
    }
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central finite difference of `f` w.r.t. every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut g = Tensor::zeros(x.shape());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let fp = f(&xp);
        xp.data_mut()[i] = orig - h;
        let fm = f(&xp);
        xp.data_mut()[i] = orig;
        g.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Max relative error `|a−n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
