//! Synthetic infrared/visible pairs for smoke tests and the toy run:
//! infrared is a bright Gaussian blob on a dark background, visible is a
//! high-frequency grating with a little noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ImagePair, PatchSet, Raster};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPair {
    pub pair: ImagePair,
    pub blob_row: f64,
    pub blob_col: f64,
    pub blob_sigma: f64,
}

impl ToyPair {
    /// Pixels within one sigma of the blob centre.
    pub fn blob_mask(&self) -> Vec<bool> {
        let (h, w) = (self.pair.height(), self.pair.width());
        let mut m = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let d2 = (i as f64 - self.blob_row).powi(2) + (j as f64 - self.blob_col).powi(2);
                m.push(d2 <= self.blob_sigma * self.blob_sigma);
            }
        }
        m
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn toy_pair(size: usize, index: usize, rng: &mut impl Rng) -> ToyPair {
    let s = size as f64;
    let blob_row = rng.random_range(0.3 * s..0.7 * s);
    let blob_col = rng.random_range(0.3 * s..0.7 * s);
    let blob_sigma = rng.random_range(0.08 * s..0.13 * s);
    let background = rng.random_range(15.0..35.0);
    let peak = rng.random_range(200.0..235.0);
    let ir = Raster::from_fn(size, size, |i, j| {
        let d2 = (i as f64 - blob_row).powi(2) + (j as f64 - blob_col).powi(2);
        clamp_u8(background + (peak - background) * (-d2 / (2.0 * blob_sigma * blob_sigma)).exp())
    });

    let theta = rng.random_range(0.0..PI);
    let period = rng.random_range(3.0..5.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-6.0..6.0)).collect();
    let vis = Raster::from_fn(size, size, |i, j| {
        let t = 2.0 * PI * (j as f64 * theta.cos() + i as f64 * theta.sin()) / period + phase;
        clamp_u8(128.0 + 48.0 * t.sin() + noise[i * size + j])
    });

    ToyPair {
        pair: ImagePair::new(format!("toy_{index:03}"), ir, vis).expect("same size"),
        blob_row,
        blob_col,
        blob_sigma,
    }
}

pub fn toy_pairs(count: usize, size: usize, seed: u64) -> Vec<ToyPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| toy_pair(size, i, &mut rng)).collect()
}

/// One full-frame patch per pair, in generation order.
pub fn toy_patch_set(pairs: &[ToyPair]) -> PatchSet {
    let size = pairs.first().map_or(64, |p| p.pair.height());
    let mut set = PatchSet::empty(size, 12);
    for p in pairs {
        set.push_pair(p.pair.clone());
    }
    set
}

/// Writes `<id>_ir.png` / `<id>_vis.png` for every pair.
pub fn write_pairs(dir: &Path, pairs: &[ToyPair]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::FusionError::io(dir, e))?;
    for p in pairs {
        let id = &p.pair.identifier;
        p.pair.ir.save_png(&dir.join(format!("{id}_ir.png")))?;
        p.pair.vis.save_png(&dir.join(format!("{id}_vis.png")))?;
    }
    Ok(())
}
