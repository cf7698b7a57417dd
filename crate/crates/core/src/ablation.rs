//! Trains and scores every generator variant under one configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{ImagePair, PatchSet, Raster};
use crate::discriminator::CriticSpec;
use crate::error::{FusionError, Result};
use crate::generator::{build_variant, Generator, GeneratorSpec, Variant};
use crate::metrics::{self, MetricReport, METRIC_NAMES};
use crate::trainer::{train, TrainConfig, TrainOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricReport,
    /// Per-image fused outputs, in evaluation order.
    pub fused: Vec<Raster>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// `variant,AG,…,VIF` with the table labels as row names.
    pub fn to_csv(&self) -> String {
        let mut s = format!("variant,{}\n", METRIC_NAMES.join(","));
        for r in &self.rows {
            s.push_str(r.variant.label());
            for v in r.report.values() {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Fuses every pair with `g` and returns the 8-bit outputs.
pub fn fuse_pairs(g: &Generator<f32>, pairs: &[ImagePair]) -> Result<Vec<Raster>> {
    pairs
        .iter()
        .map(|p| {
            let (ir, vis) = p.normalized::<f32>();
            Raster::from_tensor(&g.fuse(&ir, &vis)?, 0)
        })
        .collect()
}

/// Trains each variant from the same seed on `data`, fuses `eval` and
/// averages the metrics. With `out_dir`, each variant's losses, checkpoint
/// and fused PNGs go to `out_dir/<label>/`.
pub fn run_ablation(
    cfg: &TrainConfig,
    base: &GeneratorSpec,
    critic: &CriticSpec,
    data: &PatchSet,
    eval: &[ImagePair],
    variants: &[Variant],
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    if eval.is_empty() {
        return Err(FusionError::Data("ablation needs at least one evaluation pair".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let spec = build_variant(variant, base);
        let dir = out_dir.map(|d| d.join(variant.label()));
        log::info!("ablation: training {}", variant.label());
        let outcome = train(
            cfg,
            &spec,
            critic,
            data,
            &TrainOptions {
                out_dir: dir.clone(),
                resume: None,
            },
        )?;
        let fused = fuse_pairs(&outcome.state.generator, eval)?;
        let triples: Vec<_> = fused.iter().zip(eval).map(|(f, p)| (f, &p.ir, &p.vis)).collect();
        let report = MetricReport::mean(&metrics::evaluate_all(&triples)?)?;
        if let Some(d) = &dir {
            let fd = d.join("fused");
            fs::create_dir_all(&fd).map_err(|e| FusionError::io(&fd, e))?;
            for (f, p) in fused.iter().zip(eval) {
                f.save_png(&fd.join(format!("{}.png", p.identifier)))?;
            }
        }
        rows.push(AblationRow { variant, report, fused });
    }
    Ok(AblationTable { rows })
}
