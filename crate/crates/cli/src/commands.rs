//! The four subcommands as library functions; `main` maps their errors to
//! exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use icafusion_core::ablation::{fuse_pairs, run_ablation, AblationTable};
use icafusion_core::checkpoint::load_checkpoint;
use icafusion_core::data::{load_pair, load_raster, ImagePair, Raster, IMAGE_EXTENSIONS};
use icafusion_core::losses::LossBreakdown;
use icafusion_core::metrics::{self, MetricReport, METRIC_NAMES};
use icafusion_core::trainer::{train, TrainOptions, CHECKPOINT_FILE, LOSS_CSV};
use icafusion_core::FusionError;

use crate::config::{RunConfig, EFFECTIVE_CONFIG};
use crate::error::{CliError, CliResult};
use crate::plot::{save_panels, Panel};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LOSS_PLOT: &str = "losses.png";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_PLOT: &str = "ablation.png";

/// Refuses to touch existing outputs unless `overwrite`, in which case they
/// are removed first so reruns start from a clean slate.
fn claim(paths: &[PathBuf], overwrite: bool) -> CliResult {
    for p in paths {
        if !p.exists() {
            continue;
        }
        if !overwrite {
            return Err(CliError::config(format!(
                "{} already exists; pass --overwrite to replace it",
                p.display()
            )));
        }
        let removed = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
        removed.map_err(|e| CliError::from(FusionError::io(p, e)))?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e).into())
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| FusionError::io(path, e).into())
}

pub fn require_cpu(device: &str) -> CliResult {
    if device != "cpu" {
        return Err(CliError::config(format!("device `{device}` is not available (only `cpu`)")));
    }
    Ok(())
}

/// Plots are a convenience; failing to draw one never fails the command.
fn try_plot(path: &Path, x_label: &str, panels: &[Panel]) {
    if let Err(e) = save_panels(path, x_label, panels) {
        log::warn!("{e}");
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub param_hash: String,
}

pub fn cmd_train(cfg: &RunConfig, overwrite: bool, resume: Option<&Path>) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let out = &cfg.output.out_dir;
    if resume.is_none() {
        let artefacts = [EFFECTIVE_CONFIG, LOSS_CSV, CHECKPOINT_FILE, MANIFEST_FILE, LOSS_PLOT];
        claim(&artefacts.map(|a| out.join(a)), overwrite)?;
    }
    let data = cfg.load_data()?;
    log::info!("{} training patches of {}x{}", data.len(), data.size, data.size);
    create_dir(out)?;
    write_file(&out.join(EFFECTIVE_CONFIG), &cfg.to_toml())?;
    data.manifest().write(&out.join(MANIFEST_FILE))?;

    let outcome = train(
        &cfg.train,
        &cfg.generator_spec(),
        &cfg.critic_spec(),
        &data,
        &TrainOptions {
            out_dir: Some(out.clone()),
            resume: resume.map(Path::to_path_buf),
        },
    )?;
    if cfg.output.plots {
        plot_losses(&out.join(LOSS_CSV), &out.join(LOSS_PLOT))?;
    }
    Ok(TrainSummary {
        steps: outcome.state.step,
        checkpoint: outcome.checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE)),
        param_hash: outcome.state.param_hash(),
    })
}

fn plot_losses(csv: &Path, png: &Path) -> CliResult {
    let text = fs::read_to_string(csv).map_err(|e| FusionError::io(csv, e))?;
    let rows = text
        .lines()
        .skip(1)
        .map(LossBreakdown::parse_csv_row)
        .collect::<Result<Vec<_>, _>>()?;
    let series = |name: &str, f: fn(&LossBreakdown) -> f32| {
        Panel::new(name, rows.iter().map(|r| (r.step as f64, f64::from(f(r)))).collect())
    };
    try_plot(
        png,
        "step",
        &[
            series("L_G", |r| r.l_g),
            series("L_content", |r| r.l_content),
            series("L_adv", |r| r.l_adv),
            series("L_D_ir", |r| r.l_d_ir),
            series("L_D_vis", |r| r.l_d_vis),
            series("GP_ir", |r| r.gp_ir),
            series("GP_vis", |r| r.gp_vis),
        ],
    );
    Ok(())
}

/// Image files in `dir` keyed by identifier. When some stems end in
/// `_<role>`, only those are taken and the suffix is dropped; otherwise the
/// whole stem is the identifier.
pub fn index_images(dir: &Path, role: &str) -> CliResult<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::data(format!("{} is not a directory", dir.display())));
    }
    let mut all = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| FusionError::io(dir, e))? {
        let path = entry.map_err(|e| FusionError::io(dir, e))?.path();
        let is_image = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if let (true, Some(stem)) = (is_image, path.file_stem().and_then(|s| s.to_str())) {
            all.insert(stem.to_string(), path);
        }
    }
    let suffix = format!("_{role}");
    if all.keys().any(|k| k.ends_with(&suffix)) {
        all = all
            .into_iter()
            .filter_map(|(k, p)| k.strip_suffix(&suffix).map(|id| (id.to_string(), p)))
            .collect();
    }
    Ok(all)
}

/// Fuses one pair into `out`, or every matched pair when `ir` and `vis` are
/// directories (outputs go to `out/<id>.png`). Returns the written paths.
pub fn cmd_fuse(checkpoint: &Path, ir: &Path, vis: &Path, out: &Path, overwrite: bool) -> CliResult<Vec<PathBuf>> {
    let state = load_checkpoint(checkpoint)?;
    let g = &state.generator;
    let jobs: Vec<(PathBuf, PathBuf, PathBuf)> = if ir.is_dir() || vis.is_dir() {
        if !(ir.is_dir() && vis.is_dir()) {
            return Err(CliError::config("--ir and --vis must both be files or both be directories"));
        }
        let irs = index_images(ir, "ir")?;
        let mut viss = index_images(vis, "vis")?;
        let mut jobs = Vec::new();
        for (id, p) in irs {
            match viss.remove(&id) {
                Some(v) => jobs.push((p, v, out.join(format!("{id}.png")))),
                None => log::warn!("no visible image for `{id}`; skipped"),
            }
        }
        for id in viss.keys() {
            log::warn!("no infrared image for `{id}`; skipped");
        }
        if jobs.is_empty() {
            return Err(CliError::data("no matching infrared/visible pairs"));
        }
        create_dir(out)?;
        jobs
    } else {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        vec![(ir.to_path_buf(), vis.to_path_buf(), out.to_path_buf())]
    };
    claim(&jobs.iter().map(|j| j.2.clone()).collect::<Vec<_>>(), overwrite)?;
    for (i, v, o) in &jobs {
        let pair = load_pair(i, v)?;
        let fused = fuse_pairs(g, std::slice::from_ref(&pair))?.remove(0);
        fused.save_png(o)?;
        log::info!("wrote {}", o.display());
    }
    Ok(jobs.into_iter().map(|j| j.2).collect())
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub rows: Vec<(String, MetricReport)>,
    pub mean: MetricReport,
    /// Identifiers present in only some of the directories.
    pub skipped: Vec<String>,
}

/// Scores every identifier found in all three directories and writes the
/// per-image rows plus a `mean` row to `out_csv`.
pub fn cmd_eval(
    fused: &Path,
    ir: &Path,
    vis: &Path,
    out_csv: &Path,
    plots: bool,
    overwrite: bool,
) -> CliResult<EvalSummary> {
    let plot_path = out_csv.with_extension("png");
    let mut targets = vec![out_csv.to_path_buf()];
    if plots {
        targets.push(plot_path.clone());
    }
    claim(&targets, overwrite)?;
    let f = index_images(fused, "fused")?;
    let mut a = index_images(ir, "ir")?;
    let mut b = index_images(vis, "vis")?;
    let mut matched = Vec::new();
    let mut skipped = Vec::new();
    for (id, fp) in f {
        match (a.remove(&id), b.remove(&id)) {
            (Some(ap), Some(bp)) => matched.push((id, fp, ap, bp)),
            _ => skipped.push(id),
        }
    }
    skipped.extend(a.into_keys().chain(b.into_keys()));
    skipped.sort();
    skipped.dedup();
    for id in &skipped {
        log::warn!("`{id}` is missing from at least one directory; skipped");
    }
    if matched.is_empty() {
        return Err(CliError::data("no identifier is present in all three directories"));
    }

    let images = matched
        .iter()
        .map(|(_, fp, ap, bp)| Ok((load_raster(fp)?, ImagePair::new("", load_raster(ap)?, load_raster(bp)?)?)))
        .collect::<Result<Vec<(Raster, ImagePair)>, FusionError>>()?;
    let triples: Vec<_> = images.iter().map(|(f, p)| (f, &p.ir, &p.vis)).collect();
    let reports = metrics::evaluate_all(&triples)?;
    let rows: Vec<(String, MetricReport)> = matched.into_iter().map(|m| m.0).zip(reports).collect();
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(out_csv, &metrics::report_csv(&rows)?)?;
    if plots {
        try_plot(&plot_path, "image", &metric_panels(rows.iter().map(|r| &r.1)));
    }
    let mean = MetricReport::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
    Ok(EvalSummary { rows, mean, skipped })
}

fn metric_panels<'a>(reports: impl Iterator<Item = &'a MetricReport>) -> Vec<Panel> {
    let values: Vec<[f64; 8]> = reports.map(MetricReport::values).collect();
    METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| Panel::new(*name, values.iter().enumerate().map(|(i, v)| ((i + 1) as f64, v[k])).collect()))
        .collect()
}

/// Trains and scores every configured variant; writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, overwrite: bool) -> CliResult<AblationTable> {
    cfg.validate()?;
    if cfg.ablation.variants.is_empty() {
        return Err(CliError::config("ablation.variants is empty"));
    }
    let out = &cfg.output.out_dir;
    let mut targets: Vec<PathBuf> = [EFFECTIVE_CONFIG, ABLATION_CSV, ABLATION_PLOT, MANIFEST_FILE]
        .iter()
        .map(|a| out.join(a))
        .collect();
    targets.extend(cfg.ablation.variants.iter().map(|v| out.join(v.label())));
    claim(&targets, overwrite)?;
    let data = cfg.load_data()?;
    let eval = cfg.eval_pairs(&data)?;
    create_dir(out)?;
    write_file(&out.join(EFFECTIVE_CONFIG), &cfg.to_toml())?;
    data.manifest().write(&out.join(MANIFEST_FILE))?;

    let base = cfg.generator_spec();
    let table = run_ablation(
        &cfg.train,
        &base,
        &cfg.critic_spec(),
        &data,
        &eval,
        &cfg.ablation.variants,
        Some(out),
    )?;
    write_file(&out.join(ABLATION_CSV), &table.to_csv())?;
    if cfg.output.plots {
        try_plot(&out.join(ABLATION_PLOT), "variant", &metric_panels(table.rows.iter().map(|r| &r.report)));
    }
    Ok(table)
}
