//! Histogram-based information measures: MI and NCIE.

use nalgebra::{Matrix3, SymmetricEigen};

use super::basic::histogram;
use crate::data::Raster;

/// Mutual information in bits from the 256×256 joint histogram.
pub fn mutual_information(x: &Raster, y: &Raster) -> f64 {
    let n = x.data().len();
    if n == 0 {
        return 0.0;
    }
    let mut joint = vec![0u32; 256 * 256];
    for (&a, &b) in x.data().iter().zip(y.data()) {
        joint[a as usize * 256 + b as usize] += 1;
    }
    let px = histogram(x);
    let py = histogram(y);
    let inv = 1.0 / n as f64;
    let mut mi = 0.0;
    for a in 0..256 {
        if px[a] == 0.0 {
            continue;
        }
        for b in 0..256 {
            let c = joint[a * 256 + b];
            if c > 0 {
                let p = c as f64 * inv;
                mi += p * (p / (px[a] * py[b])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// `MI(F, A) + MI(F, B)`.
pub fn mi(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    mutual_information(f, a) + mutual_information(f, b)
}

/// Number of rank bins used by [`ncc`].
pub const NCC_BINS: usize = 256;

/// Rank bin of every pixel: pixels are ordered by `(value, index)` and the
/// pixel at rank `r` falls in bin `⌊r·b/N⌋`, so each bin holds `N/b` pixels.
pub fn rank_bins(x: &Raster, bins: usize) -> Vec<usize> {
    let n = x.data().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (x.data()[i], i));
    let mut out = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        out[i] = r * bins / n;
    }
    out
}

fn entropy_base(counts: impl Iterator<Item = usize>, n: usize, base: f64) -> f64 {
    let inv = 1.0 / n as f64;
    -counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 * inv;
            p * p.ln()
        })
        .sum::<f64>()
        / base.ln()
}

/// Nonlinear correlation coefficient `H(X) + H(Y) − H(X,Y)` over
/// [`NCC_BINS`] equal-frequency rank bins, entropies in base `NCC_BINS`.
/// `ncc(X, X) = 1` whenever the pixel count is a multiple of the bin count.
pub fn ncc(x: &Raster, y: &Raster) -> f64 {
    let n = x.data().len();
    if n == 0 {
        return 0.0;
    }
    let b = NCC_BINS;
    let (rx, ry) = (rank_bins(x, b), rank_bins(y, b));
    let mut hx = vec![0usize; b];
    let mut hy = vec![0usize; b];
    let mut joint = vec![0usize; b * b];
    for (&i, &j) in rx.iter().zip(&ry) {
        hx[i] += 1;
        hy[j] += 1;
        joint[i * b + j] += 1;
    }
    let base = b as f64;
    let v = entropy_base(hx.into_iter(), n, base) + entropy_base(hy.into_iter(), n, base)
        - entropy_base(joint.into_iter(), n, base);
    v.max(0.0)
}

/// `1 + Σ (λ_i/3)·log₂₅₆(λ_i/3)` over the eigenvalues of the 3×3 NCC
/// matrix (unit diagonal). Negative eigenvalues from rounding are treated
/// as zero, and the result is clamped to `[0, 1]`.
pub fn ncie(f: &Raster, a: &Raster, b: &Raster) -> f64 {
    let (fa, fb, ab) = (ncc(f, a), ncc(f, b), ncc(a, b));
    ncie_from_matrix(&Matrix3::new(1.0, fa, fb, fa, 1.0, ab, fb, ab, 1.0))
}

pub fn ncie_from_matrix(r: &Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(*r).eigenvalues;
    let he: f64 = eig
        .iter()
        .map(|&l| {
            let p = l.max(0.0) / 3.0;
            if p > 0.0 {
                p * p.ln() / 256f64.ln()
            } else {
                0.0
            }
        })
        .sum();
    (1.0 + he).clamp(0.0, 1.0)
}
