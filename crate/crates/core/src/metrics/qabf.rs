//! Xydeas–Petrović edge-preservation metric.

use std::f64::consts::FRAC_PI_2;

use crate::data::Raster;

pub const GAMMA_G: f64 = 0.9994;
pub const KAPPA_G: f64 = -15.0;
pub const SIGMA_G: f64 = 0.5;
pub const GAMMA_A: f64 = 0.9879;
pub const KAPPA_A: f64 = -22.0;
pub const SIGMA_A: f64 = 0.8;
/// Exponent of the edge-strength weights.
pub const L: f64 = 1.0;

/// Per-pixel Sobel magnitude and orientation (`atan(gy/gx)`; zero where
/// both responses vanish). Borders replicate the edge pixel, so a constant
/// image has no edges anywhere.
pub fn sobel_edges(f: &Raster) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (f.height(), f.width());
    let px = |i: isize, j: isize| -> f64 {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        f.get(i, j) as f64
    };
    let mut mag = Vec::with_capacity(h * w);
    let mut ang = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = (px(i - 1, j + 1) + 2.0 * px(i, j + 1) + px(i + 1, j + 1))
                - (px(i - 1, j - 1) + 2.0 * px(i, j - 1) + px(i + 1, j - 1));
            let gy = (px(i + 1, j - 1) + 2.0 * px(i + 1, j) + px(i + 1, j + 1))
                - (px(i - 1, j - 1) + 2.0 * px(i - 1, j) + px(i - 1, j + 1));
            mag.push((gx * gx + gy * gy).sqrt());
            ang.push(if gx == 0.0 {
                if gy == 0.0 {
                    0.0
                } else {
                    FRAC_PI_2.copysign(gy)
                }
            } else {
                (gy / gx).atan()
            });
        }
    }
    (mag, ang)
}

/// Edge preservation of a source edge `(g_s, α_s)` in the fused edge
/// `(g_f, α_f)`. Orientations are compared modulo π. Zero where either
/// edge is absent.
pub fn preservation(g_s: f64, a_s: f64, g_f: f64, a_f: f64) -> f64 {
    if g_s == 0.0 || g_f == 0.0 {
        return 0.0;
    }
    let g = if g_s > g_f { g_f / g_s } else { g_s / g_f };
    let a = ((a_s - a_f).abs() - FRAC_PI_2).abs() / FRAC_PI_2;
    let qg = GAMMA_G / (1.0 + (KAPPA_G * (g - SIGMA_G)).exp());
    let qa = GAMMA_A / (1.0 + (KAPPA_A * (a - SIGMA_A)).exp());
    qg * qa
}

pub fn qabf(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    let (gf, af) = sobel_edges(f);
    let (ga, aa) = sobel_edges(a);
    let (gb, ab) = sobel_edges(b);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..gf.len() {
        let (wa, wb) = (ga[k].powf(L), gb[k].powf(L));
        num += preservation(ga[k], aa[k], gf[k], af[k]) * wa + preservation(gb[k], ab[k], gf[k], af[k]) * wb;
        den += wa + wb;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}
