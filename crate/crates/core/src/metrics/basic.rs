//! Single-image statistics: AG, EN, SD, SF.

use crate::data::Raster;

/// 256-bin histogram normalised to probabilities.
pub fn histogram(f: &Raster) -> [f64; 256] {
    let mut h = [0.0; 256];
    for &v in f.data() {
        h[v as usize] += 1.0;
    }
    let n = f.data().len().max(1) as f64;
    for x in &mut h {
        *x /= n;
    }
    h
}

/// Average gradient over the `(H−1)·(W−1)` pixels that have both forward
/// neighbours. With `halve` the squared magnitude is divided by 2.
pub fn ag_with(f: &Raster, halve: bool) -> f64 {
    let (h, w) = (f.height(), f.width());
    if h < 2 || w < 2 {
        return 0.0;
    }
    let div = if halve { 2.0 } else { 1.0 };
    let mut s = 0.0;
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let c = f.get(i, j) as f64;
            let dx = f.get(i, j + 1) as f64 - c;
            let dy = f.get(i + 1, j) as f64 - c;
            s += ((dx * dx + dy * dy) / div).sqrt();
        }
    }
    s / ((h - 1) * (w - 1)) as f64
}

pub fn ag(f: &Raster) -> f64 {
    ag_with(f, true)
}

/// Shannon entropy in bits.
pub fn en(f: &Raster) -> f64 {
    -histogram(f)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// Population standard deviation.
pub fn sd(f: &Raster) -> f64 {
    let n = f.data().len();
    if n == 0 {
        return 0.0;
    }
    let mean = f.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = f.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// `sqrt(RF² + CF²)`: RF is the RMS of differences along rows, CF along
/// columns.
pub fn sf(f: &Raster) -> f64 {
    let (h, w) = (f.height(), f.width());
    let mut rf = 0.0;
    if w > 1 {
        for i in 0..h {
            for j in 1..w {
                rf += (f.get(i, j) as f64 - f.get(i, j - 1) as f64).powi(2);
            }
        }
        rf /= (h * (w - 1)) as f64;
    }
    let mut cf = 0.0;
    if h > 1 {
        for i in 1..h {
            for j in 0..w {
                cf += (f.get(i, j) as f64 - f.get(i - 1, j) as f64).powi(2);
            }
        }
        cf /= ((h - 1) * w) as f64;
    }
    (rf + cf).sqrt()
}
