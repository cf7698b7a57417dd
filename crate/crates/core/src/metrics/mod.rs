//! Fusion-quality metrics. Every metric reads 8-bit rasters: the fused
//! image `F` and the sources `A` (infrared) and `B` (visible).
//!
//! | metric | definition |
//! |--------|------------|
//! | AG   | mean of `sqrt((Δx² + Δy²)/2)` over pixels with both forward neighbours |
//! | EN   | Shannon entropy of the 256-bin histogram, bits |
//! | SD   | population standard deviation |
//! | MI   | `MI(F,A) + MI(F,B)` from 256×256 joint histograms, bits |
//! | SF   | `sqrt(RF² + CF²)`, RMS of horizontal / vertical first differences |
//! | NCIE | `1 + Σ (λ/3)·log₂₅₆(λ/3)` over eigenvalues of the rank-binned NCC matrix |
//! | Qabf | Sobel edge-preservation, strength-weighted over both sources |
//! | VIF  | four-scale pixel-domain VIF, both sources pooled per scale |

mod basic;
mod info;
mod qabf;
mod vif;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use basic::{ag, ag_with, en, histogram, sd, sf};
pub use info::{mi, mutual_information, ncc, ncie, ncie_from_matrix, rank_bins, NCC_BINS};
pub use qabf::{preservation, qabf, sobel_edges};
pub use vif::{gaussian_window, vif};

use crate::data::Raster;
use crate::error::{FusionError, Result};
use crate::par;

pub const METRIC_NAMES: [&str; 8] = ["AG", "EN", "SD", "MI", "SF", "NCIE", "Qabf", "VIF"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ag: f64,
    pub en: f64,
    pub sd: f64,
    pub mi: f64,
    pub sf: f64,
    pub ncie: f64,
    pub qabf: f64,
    pub vif: f64,
}

impl MetricReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 8] {
        [self.ag, self.en, self.sd, self.mi, self.sf, self.ncie, self.qabf, self.vif]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            ag: v[0],
            en: v[1],
            sd: v[2],
            mi: v[3],
            sf: v[4],
            ncie: v[5],
            qabf: v[6],
            vif: v[7],
        }
    }

    /// Element-wise mean.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(FusionError::Domain("mean of an empty metric set".into()));
        }
        let mut acc = [0.0; 8];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Ok(Self::from_values(acc.map(|a| a / reports.len() as f64)))
    }
}

pub fn evaluate(f: &Raster, a: &Raster, b: &Raster) -> Result<MetricReport> {
    for s in [a, b] {
        if (s.width(), s.height()) != (f.width(), f.height()) {
            return Err(FusionError::dim(format!(
                "fused image is {}x{} but a source is {}x{}",
                f.width(),
                f.height(),
                s.width(),
                s.height()
            )));
        }
    }
    Ok(MetricReport {
        ag: ag(f),
        en: en(f),
        sd: sd(f),
        mi: mi(f, a, b),
        sf: sf(f),
        ncie: ncie(f, a, b),
        qabf: qabf(f, a, b),
        vif: vif(f, a, b),
    })
}

/// Evaluates `(F, A, B)` triples in parallel, keeping input order.
pub fn evaluate_all(triples: &[(&Raster, &Raster, &Raster)]) -> Result<Vec<MetricReport>> {
    par::map_slice(triples, |(f, a, b)| evaluate(f, a, b))
        .into_iter()
        .collect()
}

/// Per-image rows plus a final `mean` row.
pub fn report_csv(rows: &[(String, MetricReport)]) -> Result<String> {
    let mean = MetricReport::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
    let mut s = format!("identifier,{}\n", METRIC_NAMES.join(","));
    for (id, r) in rows.iter().map(|(i, r)| (i.as_str(), r)).chain([("mean", &mean)]) {
        s.push_str(id);
        for v in r.values() {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}
