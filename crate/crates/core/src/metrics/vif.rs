//! Multi-scale pixel-domain visual information fidelity, extended to two
//! sources.
//!
//! At scale `s = 1..4` the window is an `N×N` Gaussian with `N = 2^(5−s)+1`
//! and `σ = N/5`; from the second scale on, both images are low-passed with
//! that window and decimated by 2 first. Local moments use mirror-padded
//! filtering so small images keep every pixel. Each scale contributes
//! `(num_A + num_B) / (den_A + den_B)` and the result is the mean over
//! scales whose denominator is positive.

use crate::data::Raster;

pub const SCALES: usize = 4;
/// Variance of the additive visual noise.
pub const SIGMA_N_SQ: f64 = 2.0;
const EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
struct Plane {
    h: usize,
    w: usize,
    d: Vec<f64>,
}

impl Plane {
    fn from_raster(r: &Raster) -> Self {
        Self {
            h: r.height(),
            w: r.width(),
            d: r.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            d: self.d.iter().zip(&o.d).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn decimate(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut d = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                d.push(self.d[2 * i * self.w + 2 * j]);
            }
        }
        Plane { h, w, d }
    }
}

/// Half-sample symmetric reflection of `i` into `0..n`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

pub fn gaussian_window(n: usize) -> Vec<f64> {
    let sigma = n as f64 / 5.0;
    let c = (n as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filtering with the 1-D kernel `k`, mirror-padded, same size.
fn filter(p: &Plane, k: &[f64]) -> Plane {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; p.d.len()];
    for i in 0..p.h {
        for j in 0..p.w {
            let mut s = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                s += kv * p.d[i * p.w + mirror(j as isize + t as isize - r, p.w)];
            }
            tmp[i * p.w + j] = s;
        }
    }
    let mut out = vec![0.0; p.d.len()];
    for i in 0..p.h {
        for j in 0..p.w {
            let mut s = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                s += kv * tmp[mirror(i as isize + t as isize - r, p.h) * p.w + j];
            }
            out[i * p.w + j] = s;
        }
    }
    Plane { h: p.h, w: p.w, d: out }
}

/// `(num, den)` of one source/fused pair at one scale.
fn information(reference: &Plane, dist: &Plane, k: &[f64]) -> (f64, f64) {
    let mu1 = filter(reference, k);
    let mu2 = filter(dist, k);
    let e11 = filter(&reference.zip(reference, |a, b| a * b), k);
    let e22 = filter(&dist.zip(dist, |a, b| a * b), k);
    let e12 = filter(&reference.zip(dist, |a, b| a * b), k);
    let (mut num, mut den) = (0.0, 0.0);
    for idx in 0..reference.d.len() {
        let (m1, m2) = (mu1.d[idx], mu2.d[idx]);
        let mut s1 = (e11.d[idx] - m1 * m1).max(0.0);
        let s2 = (e22.d[idx] - m2 * m2).max(0.0);
        let s12 = e12.d[idx] - m1 * m2;

        let mut g = s12 / (s1 + EPS);
        let mut sv = s2 - g * s12;
        if s1 < EPS {
            g = 0.0;
            sv = s2;
            s1 = 0.0;
        }
        if s2 < EPS {
            g = 0.0;
            sv = 0.0;
        }
        if g < 0.0 {
            sv = s2;
            g = 0.0;
        }
        if sv <= EPS {
            sv = EPS;
        }
        num += (1.0 + g * g * s1 / (sv + SIGMA_N_SQ)).log10();
        den += (1.0 + s1 / SIGMA_N_SQ).log10();
    }
    (num, den)
}

pub fn vif(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    let mut pf = Plane::from_raster(f);
    let mut pa = Plane::from_raster(a);
    let mut pb = Plane::from_raster(b);
    let mut total = 0.0;
    let mut used = 0;
    for s in 1..=SCALES {
        let n = (1 << (SCALES - s + 1)) + 1;
        let k = gaussian_window(n);
        if s > 1 {
            pf = filter(&pf, &k).decimate();
            pa = filter(&pa, &k).decimate();
            pb = filter(&pb, &k).decimate();
        }
        let (na, da) = information(&pa, &pf, &k);
        let (nb, db) = information(&pb, &pf, &k);
        if da + db > 0.0 {
            total += (na + nb) / (da + db);
            used += 1;
        }
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}
