//! Loop-level metric references: explicit histograms, windows and
//! eigenvalues, sharing no code with the metrics module.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use icafusion_core::data::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn noise(w: usize, h: usize, seed: u64) -> Raster {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Raster::from_fn(w, h, |_, _| r.random())
}

/// Smooth blobs plus a grating: structured content with real edges.
pub fn textured(size: usize) -> Raster {
    Raster::from_fn(size, size, |i, j| {
        let (x, y) = (i as f64, j as f64);
        let v = 128.0 + 60.0 * (x / 5.0).sin() * (y / 7.0).cos() + 40.0 * ((x + 2.0 * y) / 3.0).sin();
        v.round().clamp(0.0, 255.0) as u8
    })
}

pub fn px(r: &Raster, i: usize, j: usize) -> f64 {
    r.get(i, j) as f64
}

pub fn ag_oracle(f: &Raster) -> f64 {
    let (h, w) = (f.height(), f.width());
    let mut s = 0.0;
    let mut n = 0.0;
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let gx = px(f, i, j + 1) - px(f, i, j);
            let gy = px(f, i + 1, j) - px(f, i, j);
            s += (0.5 * gx * gx + 0.5 * gy * gy).sqrt();
            n += 1.0;
        }
    }
    s / n
}

pub fn counts<K: Ord>(keys: impl Iterator<Item = K>) -> BTreeMap<K, f64> {
    let mut m = BTreeMap::new();
    for k in keys {
        *m.entry(k).or_insert(0.0) += 1.0;
    }
    m
}

pub fn entropy_bits<K: Ord>(m: &BTreeMap<K, f64>, n: f64) -> f64 {
    m.values().map(|&c| -(c / n) * (c / n).log2()).sum()
}

pub fn en_oracle(f: &Raster) -> f64 {
    entropy_bits(&counts(f.data().iter()), f.data().len() as f64)
}

pub fn sd_oracle(f: &Raster) -> f64 {
    let n = f.data().len() as f64;
    let mean = f.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut v = 0.0;
    for &x in f.data() {
        v += (x as f64 - mean) * (x as f64 - mean);
    }
    (v / n).sqrt()
}

pub fn mi_pair_oracle(x: &Raster, y: &Raster) -> f64 {
    let n = x.data().len() as f64;
    let hx = entropy_bits(&counts(x.data().iter()), n);
    let hy = entropy_bits(&counts(y.data().iter()), n);
    let hxy = entropy_bits(&counts(x.data().iter().zip(y.data())), n);
    hx + hy - hxy
}

pub fn sf_oracle(f: &Raster) -> f64 {
    let (h, w) = (f.height(), f.width());
    let mut rf = Vec::new();
    let mut cf = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if j > 0 {
                rf.push(px(f, i, j) - px(f, i, j - 1));
            }
            if i > 0 {
                cf.push(px(f, i, j) - px(f, i - 1, j));
            }
        }
    }
    let ms = |v: &[f64]| v.iter().map(|d| d * d).sum::<f64>() / v.len() as f64;
    (ms(&rf) + ms(&cf)).sqrt()
}

pub fn rank_bin_oracle(x: &Raster) -> Vec<usize> {
    let d = x.data();
    let n = d.len();
    (0..n)
        .map(|i| {
            let rank = (0..n).filter(|&k| (d[k], k) < (d[i], i)).count();
            rank * 256 / n
        })
        .collect()
}

pub fn ncc_oracle(x: &Raster, y: &Raster) -> f64 {
    let (bx, by) = (rank_bin_oracle(x), rank_bin_oracle(y));
    let n = bx.len() as f64;
    (entropy_bits(&counts(bx.iter()), n) + entropy_bits(&counts(by.iter()), n)
        - entropy_bits(&counts(bx.iter().zip(&by)), n))
        / 8.0
}

/// Eigenvalues of a symmetric 3×3 matrix via the trigonometric solution.
pub fn sym3_eigen(m: [[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        return [m[0][0], m[1][1], m[2][2]];
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = m;
    for (k, row) in b.iter_mut().enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            *v = (m[k][l] - if k == l { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    [l1, 3.0 * q - l1 - l3, l3]
}

pub fn ncie_oracle(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    let (fa, fb, ab) = (ncc_oracle(f, a), ncc_oracle(f, b), ncc_oracle(a, b));
    let lam = sym3_eigen([[1.0, fa, fb], [fa, 1.0, ab], [fb, ab, 1.0]]);
    let mut s = 1.0;
    for l in lam {
        let p = l.max(0.0) / 3.0;
        if p > 0.0 {
            s += p * p.log(256.0);
        }
    }
    s.clamp(0.0, 1.0)
}

pub fn sobel_oracle(f: &Raster) -> Vec<(f64, f64)> {
    const SX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const SY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (h, w) = (f.height() as isize, f.width() as isize);
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for a in 0..3 {
                for b in 0..3 {
                    let ii = (i + a as isize - 1).max(0).min(h - 1) as usize;
                    let jj = (j + b as isize - 1).max(0).min(w - 1) as usize;
                    let v = px(f, ii, jj);
                    gx += SX[a][b] * v;
                    gy += SY[a][b] * v;
                }
            }
            let g = (gx * gx + gy * gy).sqrt();
            let alpha = if gx == 0.0 && gy == 0.0 {
                0.0
            } else if gx == 0.0 {
                gy.signum() * PI / 2.0
            } else {
                (gy / gx).atan()
            };
            out.push((g, alpha));
        }
    }
    out
}

pub fn qabf_oracle(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    let (ef, ea, eb) = (sobel_oracle(f), sobel_oracle(a), sobel_oracle(b));
    let q = |(gs, as_): (f64, f64), (gf, af): (f64, f64)| -> f64 {
        if gs == 0.0 || gf == 0.0 {
            return 0.0;
        }
        let g = gs.min(gf) / gs.max(gf);
        // Undirected orientations: fold the difference into [0, π/2].
        let d = (as_ - af).abs();
        let alpha = 1.0 - d.min(PI - d) / (PI / 2.0);
        let qg = 0.9994 / (1.0 + (-15.0 * (g - 0.5)).exp());
        let qa = 0.9879 / (1.0 + (-22.0 * (alpha - 0.8)).exp());
        qg * qa
    };
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..ef.len() {
        num += q(ea[k], ef[k]) * ea[k].0 + q(eb[k], ef[k]) * eb[k].0;
        den += ea[k].0 + eb[k].0;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub type Grid = Vec<Vec<f64>>;

pub fn grid(r: &Raster) -> Grid {
    (0..r.height()).map(|i| (0..r.width()).map(|j| px(r, i, j)).collect()).collect()
}

pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

pub fn filter2(g: &Grid, n: usize) -> Grid {
    let sigma = n as f64 / 5.0;
    let c = (n as f64 - 1.0) / 2.0;
    let mut win = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (a, row) in win.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = (-((a as f64 - c).powi(2) + (b as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (h, w) = (g.len(), g[0].len());
    let r = (n / 2) as isize;
    let mut out = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let ii = reflect(i as isize + a as isize - r, h);
                    let jj = reflect(j as isize + b as isize - r, w);
                    s += win[a][b] / total * g[ii][jj];
                }
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn vif_terms(r: &Grid, d: &Grid, n: usize) -> (f64, f64) {
    let prod = |x: &Grid, y: &Grid| -> Grid {
        x.iter().zip(y).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).collect()).collect()
    };
    let (mu1, mu2) = (filter2(r, n), filter2(d, n));
    let (e11, e22, e12) = (filter2(&prod(r, r), n), filter2(&prod(d, d), n), filter2(&prod(r, d), n));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..r.len() {
        for j in 0..r[0].len() {
            let (m1, m2) = (mu1[i][j], mu2[i][j]);
            let mut s1 = f64::max(e11[i][j] - m1 * m1, 0.0);
            let s2 = f64::max(e22[i][j] - m2 * m2, 0.0);
            let s12 = e12[i][j] - m1 * m2;
            let mut g = s12 / (s1 + 1e-10);
            let mut sv = s2 - g * s12;
            if s1 < 1e-10 {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < 1e-10 {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            sv = sv.max(1e-10);
            num += (1.0 + g * g * s1 / (sv + 2.0)).log10();
            den += (1.0 + s1 / 2.0).log10();
        }
    }
    (num, den)
}

pub fn vif_oracle(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    let (mut gf, mut ga, mut gb) = (grid(f), grid(a), grid(b));
    let mut vals = Vec::new();
    for s in 1..=4u32 {
        let n = 2usize.pow(5 - s) + 1;
        if s > 1 {
            let down = |g: &Grid| -> Grid {
                filter2(g, n).iter().step_by(2).map(|row| row.iter().step_by(2).copied().collect()).collect()
            };
            gf = down(&gf);
            ga = down(&ga);
            gb = down(&gb);
        }
        let (na, da) = vif_terms(&ga, &gf, n);
        let (nb, db) = vif_terms(&gb, &gf, n);
        if da + db > 0.0 {
            vals.push((na + nb) / (da + db));
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}
